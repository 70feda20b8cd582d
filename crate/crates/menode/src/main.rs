fn main() {
    std::process::exit(menode::cli::main_with_args(std::env::args_os()));
}
