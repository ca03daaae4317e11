fn main() {
    lfr_pino::par::init_from_env();
    std::process::exit(lfr_pino::cli::main_with_args(std::env::args_os()));
}
