fn main() {
    std::process::exit(election_arena::cli::run_cli(std::env::args()));
}
