fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("TUCKERDIFF_LOG", "info")).init();
    std::process::exit(tuckerdiff::cli::main_with_args(std::env::args_os()));
}
