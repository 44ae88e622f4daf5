fn main() {
    std::process::exit(nirsnap::cli::run(std::env::args_os()));
}
