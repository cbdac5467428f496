fn main() {
    std::process::exit(dosekit::cli::run(std::env::args_os()));
}
