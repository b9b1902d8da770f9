fn main() {
    std::process::exit(mmloc::cli::main());
}
