fn main() {
    std::process::exit(mmsa::cli::run(std::env::args_os()));
}
