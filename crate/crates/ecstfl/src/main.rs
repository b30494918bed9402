fn main() {
    std::process::exit(ecstfl::cli::main_with_args(std::env::args_os()));
}
