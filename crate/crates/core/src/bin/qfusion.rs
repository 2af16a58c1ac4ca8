fn main() {
    std::process::exit(qfusion::cli::run(std::env::args_os()));
}
