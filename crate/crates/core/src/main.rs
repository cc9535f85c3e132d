fn main() {
    std::process::exit(qutrit::cli::main());
}
