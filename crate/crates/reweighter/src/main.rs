fn main() {
    std::process::exit(reweighter::cli::main());
}
