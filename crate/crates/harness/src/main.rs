fn main() {
    std::process::exit(samlab::cli::run(std::env::args_os()));
}
