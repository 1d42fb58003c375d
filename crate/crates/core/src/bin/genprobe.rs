fn main() {
    std::process::exit(genprobe::cli::run(std::env::args_os()));
}
