fn main() {
    std::process::exit(fair_abstain_cli::run(std::env::args_os()));
}
