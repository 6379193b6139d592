fn main() {
    std::process::exit(keytrack::cli::run(std::env::args_os()));
}
