fn main() {
    std::process::exit(lambda_bbc::cli::cli_main(std::env::args_os()));
}
