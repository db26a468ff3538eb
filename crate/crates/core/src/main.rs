fn main() {
    std::process::exit(lodpatch::cli::run(std::env::args_os().collect()));
}
