fn main() {
    std::process::exit(gmaflow::cli::run());
}
