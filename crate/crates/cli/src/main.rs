fn main() {
    let args: Vec<String> = std::env::args().collect();
    std::process::exit(dair_cli::run(&args));
}
