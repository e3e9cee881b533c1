fn main() {
    std::process::exit(segvid::cli::run(std::env::args_os()));
}
