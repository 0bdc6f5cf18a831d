fn main() {
    std::process::exit(mmr_lab::cli::main_with(std::env::args()));
}
