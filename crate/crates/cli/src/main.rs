fn main() {
    std::process::exit(gaf_cli::run(std::env::args_os()));
}
