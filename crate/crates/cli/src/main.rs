fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let out = std::env::var_os("SPATIO_OUT").map(std::path::PathBuf::from);
    std::process::exit(spatio_cli::run_cli(std::env::args_os(), out));
}
