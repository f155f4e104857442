fn main() {
    std::process::exit(halfspace_lab::cli::run(std::env::args_os()));
}
