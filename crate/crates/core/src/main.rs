fn main() {
    std::process::exit(certbox::cli::run(std::env::args_os()));
}
