fn main() {
    std::process::exit(ircoco::cli::run(std::env::args_os()));
}
