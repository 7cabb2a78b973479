fn main() {
    std::process::exit(fedpews::cli::main());
}
