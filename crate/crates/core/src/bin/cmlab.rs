fn main() {
    std::process::exit(cmlab::harness::cli_main(std::env::args_os()));
}
