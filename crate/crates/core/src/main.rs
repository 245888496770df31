fn main() {
    std::process::exit(sdjn::cli::run(std::env::args_os()));
}
