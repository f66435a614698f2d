fn main() {
    std::process::exit(navbench_cli::run_command(std::env::args_os()));
}
