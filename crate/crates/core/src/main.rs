fn main() {
    std::process::exit(selfi::cli::main_with(std::env::args_os()));
}
