fn main() {
    std::process::exit(ssm_spaces::cli::run(std::env::args().collect()));
}
