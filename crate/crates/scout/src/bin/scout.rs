fn main() {
    std::process::exit(scout::cli::run(std::env::args_os()));
}
