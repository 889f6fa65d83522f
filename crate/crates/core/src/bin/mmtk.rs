fn main() {
    std::process::exit(mmtk::cli::main_from_env());
}
