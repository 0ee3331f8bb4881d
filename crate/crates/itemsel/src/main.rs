fn main() {
    std::process::exit(itemsel::cli::main_with_args(std::env::args_os().collect()));
}
