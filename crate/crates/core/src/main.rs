fn main() {
    std::process::exit(skelforecast::cli::run());
}
