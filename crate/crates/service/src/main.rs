fn main() {
    std::process::exit(capacity_service::cli::main());
}
