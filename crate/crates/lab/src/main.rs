fn main() {
    std::process::exit(sgdpo_lab::cli::run(std::env::args_os()));
}
