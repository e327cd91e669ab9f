fn main() {
    std::process::exit(glbulk::main_with(std::env::args_os()));
}
