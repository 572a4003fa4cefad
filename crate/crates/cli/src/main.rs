fn main() {
    std::process::exit(covslice_cli::run(std::env::args_os()));
}
