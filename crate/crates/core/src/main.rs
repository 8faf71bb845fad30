fn main() {
    std::process::exit(cascade_qed::cli::main());
}
