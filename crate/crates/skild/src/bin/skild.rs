fn main() {
    std::process::exit(skild::run(std::env::args_os()));
}
