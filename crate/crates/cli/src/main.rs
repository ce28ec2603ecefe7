fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MOESCALE_LOG", "warn")).init();
    std::process::exit(moescale_cli::run(std::env::args_os()));
}
