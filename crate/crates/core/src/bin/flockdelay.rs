fn main() {
    std::process::exit(flockdelay::cli_io::main_with_args(std::env::args_os()));
}
