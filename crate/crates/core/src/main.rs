fn main() {
    std::process::exit(opus_core::cli::main_with(std::env::args_os()));
}
