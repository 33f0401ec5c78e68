fn main() {
    std::process::exit(wavecomm_cli::run_with_args(std::env::args_os()));
}
