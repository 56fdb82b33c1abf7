fn main() {
    std::process::exit(sparse_cf::cli::main());
}
