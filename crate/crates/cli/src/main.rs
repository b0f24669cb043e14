fn main() {
    std::process::exit(tuber_cli::main_with_args(std::env::args_os()));
}
