fn main() {
    std::process::exit(kanflow::cli::run_from(std::env::args_os()));
}
