fn main() {
    std::process::exit(hybrid_fts::cli::run(std::env::args_os()));
}
