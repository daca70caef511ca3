fn main() {
    std::process::exit(smt_cli::run(std::env::args_os()));
}
