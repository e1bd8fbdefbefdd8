fn main() {
    std::process::exit(bdnn::cli::run(std::env::args_os()));
}
