fn main() {
    std::process::exit(respec::cli::main_with(std::env::args_os()));
}
