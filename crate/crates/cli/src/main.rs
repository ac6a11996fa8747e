fn main() {
    std::process::exit(dynunc_cli::commands::main_with_args(std::env::args_os()));
}
