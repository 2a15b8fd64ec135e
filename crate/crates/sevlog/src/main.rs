fn main() {
    if let Err(err) = sevlog::cli::run() {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}
