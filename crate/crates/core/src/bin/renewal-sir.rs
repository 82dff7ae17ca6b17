fn main() {
    std::process::exit(renewal_sir::cli::run(std::env::args_os()));
}
