fn main() {
    std::process::exit(schedgen::cli::main_with(std::env::args_os()));
}
