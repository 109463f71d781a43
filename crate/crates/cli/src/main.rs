fn main() {
    std::process::exit(oddspot_cli::run(std::env::args_os()));
}
