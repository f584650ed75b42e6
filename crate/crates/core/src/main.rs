fn main() {
    std::process::exit(echo_lab::cli::dispatch(std::env::args_os()));
}
