fn main() {
    std::process::exit(schedq::cli::main_with_args(std::env::args_os()));
}
