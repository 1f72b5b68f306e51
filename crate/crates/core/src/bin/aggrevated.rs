fn main() {
    std::process::exit(aggrevated::cli::main_with(std::env::args_os()));
}
