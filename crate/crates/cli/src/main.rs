fn main() {
    std::process::exit(flashpip_cli::main_with(std::env::args_os()));
}
