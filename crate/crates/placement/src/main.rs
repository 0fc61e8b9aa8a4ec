fn main() {
    std::process::exit(placement::cli::main_with(std::env::args_os()));
}
