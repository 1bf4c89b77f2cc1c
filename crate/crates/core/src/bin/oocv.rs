fn main() {
    std::process::exit(oocv::cli::run(std::env::args_os()));
}
