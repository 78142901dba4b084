fn main() {
    if let Err(e) = attn_supervise::cli::run(std::env::args_os()) {
        let (category, code) = e.category();
        eprintln!("error [{category}]: {e}");
        std::process::exit(code);
    }
}
