fn main() {
    std::process::exit(hidden_crf::cli::run(std::env::args_os()));
}
