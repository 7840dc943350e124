fn main() {
    std::process::exit(rwre_lab::harness::cli::main_with(std::env::args_os()));
}
