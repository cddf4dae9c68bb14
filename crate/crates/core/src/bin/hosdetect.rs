fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("HOSDETECT_LOG", "warn")).init();
    std::process::exit(hosdetect::cli::run(std::env::args_os()));
}
