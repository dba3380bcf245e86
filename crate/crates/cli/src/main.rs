fn main() {
    std::process::exit(irmap_cli::run(std::env::args_os()));
}
