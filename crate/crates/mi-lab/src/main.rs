fn main() {
    std::process::exit(mi_lab::cli::run());
}
