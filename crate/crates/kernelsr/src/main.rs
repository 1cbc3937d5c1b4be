fn main() {
    std::process::exit(kernelsr::cli::run_from(std::env::args_os()));
}
