//! Gumbel-Softmax categorical relaxation.

use rand::Rng;

use super::{Tape, Var};

/// Per-category Gumbel(0,1) noise values.
#[derive(Clone, Debug)]
pub struct GumbelNoise {
    values: Vec<f64>,
}

impl GumbelNoise {
    /// Samples `k` i.i.d. Gumbel(0,1) values. Uniform draws are clamped to
    /// [1e-12, 1-1e-12] before the double log so the result stays finite.
    pub fn sample<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Self {
        let values = (0..k)
            .map(|_| gumbel_sample(rng.random::<f64>().clamp(1e-12, 1.0 - 1e-12)))
            .collect();
        GumbelNoise { values }
    }

    pub fn from_uniforms(us: &[f64]) -> Self {
        GumbelNoise {
            values: us.iter().map(|&u| gumbel_sample(u)).collect(),
        }
    }

    /// Zero noise (every g_k = 0, i.e. u_k = 1/e); useful in tests.
    pub fn zeros(k: usize) -> Self {
        GumbelNoise {
            values: vec![0.0; k],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Transforms a uniform draw into a Gumbel(0,1) sample: -ln(-ln(u)).
pub fn gumbel_sample(u: f64) -> f64 {
    assert!(u > 0.0 && u < 1.0, "gumbel_sample: u must lie in (0,1)");
    -(-u.ln()).ln()
}

/// Temperature for the relaxation: a fixed constant or a learned scalar.
#[derive(Clone, Copy, Debug)]
pub enum Temperature {
    Const(f64),
    Learned(Var),
}

/// y_k = exp((logits_k + g_k)/T) / sum_j exp((logits_j + g_j)/T),
/// differentiable w.r.t. the logits (and the temperature when learned).
pub fn gumbel_softmax(
    tape: &mut Tape,
    logits: Var,
    temperature: Temperature,
    noise: &GumbelNoise,
) -> Var {
    let k = tape.shape(logits).len();
    assert!(k >= 2, "gumbel_softmax: need at least two categories");
    assert_eq!(noise.len(), k, "gumbel_softmax: noise arity mismatch");
    let z = tape.add_const(logits, noise.values());
    let zt = match temperature {
        Temperature::Const(t) => {
            assert!(t > 0.0, "gumbel_softmax: temperature must be positive");
            tape.scale(z, 1.0 / t)
        }
        Temperature::Learned(t) => {
            assert!(
                tape.value(t) > 0.0,
                "gumbel_softmax: temperature must be positive"
            );
            let r = tape.recip(t);
            tape.bmul(z, r)
        }
    };
    tape.softmax(zt)
}
