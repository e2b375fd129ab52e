fn main() {
    std::process::exit(qnnv::cli::main_with_args(std::env::args_os()));
}
