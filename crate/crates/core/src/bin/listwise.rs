fn main() {
    std::process::exit(listwise_core::cli::main());
}
