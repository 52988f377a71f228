fn main() {
    env_logger::init();
    let code = adpnet::cli::run(std::env::args_os());
    std::process::exit(code);
}
