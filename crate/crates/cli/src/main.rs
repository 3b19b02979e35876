fn main() {
    std::process::exit(hanger_cli::main_with_args(std::env::args_os()));
}
