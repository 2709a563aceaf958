fn main() {
    std::process::exit(chlab::io::run(std::env::args_os()));
}
