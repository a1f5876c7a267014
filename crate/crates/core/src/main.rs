fn main() {
    std::process::exit(pamicnet::cli::dispatch(std::env::args_os()));
}
