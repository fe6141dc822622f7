fn main() {
    std::process::exit(nextlabel::cli::run(std::env::args_os()));
}
