fn main() {
    std::process::exit(figcap_core::cli::main());
}
