fn main() {
    std::process::exit(dept::cli::run_command(std::env::args_os()));
}
