fn main() {
    std::process::exit(xray_bovw::cli::run(std::env::args_os()));
}
