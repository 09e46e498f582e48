fn main() {
    std::process::exit(hdr_nmt::cli::main_with_args(std::env::args_os()));
}
