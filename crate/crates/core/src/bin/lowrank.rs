fn main() {
    std::process::exit(lowrank::cli::main());
}
