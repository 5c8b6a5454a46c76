fn main() {
    std::process::exit(gon::cli::run(std::env::args_os()));
}
