fn main() {
    std::process::exit(span_rl::cli::run(std::env::args_os()));
}
