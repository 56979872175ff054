fn main() {
    std::process::exit(gic::cli::run(std::env::args_os()));
}
