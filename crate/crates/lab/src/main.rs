fn main() {
    std::process::exit(pencil_lab::app::run(std::env::args_os()));
}
