fn main() {
    std::process::exit(kpo_aqec::cli::main_with_args(std::env::args_os()));
}
