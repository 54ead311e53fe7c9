fn main() {
    std::process::exit(flocking_cli::run(std::env::args_os()));
}
