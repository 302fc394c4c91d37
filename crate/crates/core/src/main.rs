fn main() {
    // Fixed level rather than RUST_LOG, so runs depend only on their flags.
    env_logger::Builder::new()
        .filter_level(log::LevelFilter::Info)
        .format_timestamp(None)
        .init();
    std::process::exit(safeor::cli::run(std::env::args_os()));
}
