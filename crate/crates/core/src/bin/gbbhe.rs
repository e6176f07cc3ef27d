fn main() {
    std::process::exit(gbbhe::cli::cli_main(std::env::args_os()));
}
