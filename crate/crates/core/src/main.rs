fn main() {
    std::process::exit(cutoff_bias::cli::run(std::env::args_os()));
}
