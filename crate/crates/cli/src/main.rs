fn main() {
    std::process::exit(delaytherm_cli::app::main_with_args(std::env::args_os()));
}
