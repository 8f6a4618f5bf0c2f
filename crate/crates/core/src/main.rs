fn main() {
    std::process::exit(fedchip::cli::dispatch(std::env::args_os()));
}
