fn main() {
    std::process::exit(linepyr_cli::run(std::env::args_os()));
}
