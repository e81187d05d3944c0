fn main() {
    std::process::exit(ramo_server::cli::run(std::env::args_os()));
}
