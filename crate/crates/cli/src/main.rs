fn main() {
    std::process::exit(softseg_cli::run(std::env::args_os()));
}
