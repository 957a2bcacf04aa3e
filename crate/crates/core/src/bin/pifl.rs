fn main() {
    std::process::exit(pifl::cli::main_with_args(std::env::args_os()));
}
