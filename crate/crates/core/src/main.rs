fn main() {
    std::process::exit(hopespeech::cli::run(std::env::args_os()));
}
