fn main() {
    std::process::exit(firecast_cli::run(std::env::args_os()));
}
