fn main() {
    std::process::exit(corf::cli::run(std::env::args_os()));
}
