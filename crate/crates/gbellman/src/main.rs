fn main() {
    std::process::exit(gbellman::cli::run());
}
