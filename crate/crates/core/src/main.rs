fn main() {
    std::process::exit(kmcsvm::cli::run(std::env::args_os()));
}
