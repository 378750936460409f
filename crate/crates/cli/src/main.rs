fn main() {
    std::process::exit(regsdml_cli::run(std::env::args_os()));
}
