fn main() {
    std::process::exit(xvenue::cli::main(std::env::args_os()));
}
