fn main() {
    std::process::exit(nulledit::cli::run(std::env::args_os()));
}
