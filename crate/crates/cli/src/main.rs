fn main() {
    std::process::exit(hdgcn_cli::run(std::env::args_os()));
}
