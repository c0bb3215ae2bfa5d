fn main() {
    std::process::exit(mtrl::harness::main_with_args(std::env::args_os()));
}
