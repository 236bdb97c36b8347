fn main() {
    std::process::exit(moedep::cli::run(std::env::args_os()));
}
