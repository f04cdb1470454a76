fn main() {
    std::process::exit(conductsim::cli::main());
}
