fn main() {
    std::process::exit(strucgrad::cli::run(std::env::args_os()));
}
