fn main() {
    std::process::exit(dcstream_cli::run(std::env::args_os()));
}
