fn main() {
    std::process::exit(perron_lab::run_cli(std::env::args_os()));
}
