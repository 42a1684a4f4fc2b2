fn main() {
    std::process::exit(geoseg::cli::run(std::env::args_os()));
}
