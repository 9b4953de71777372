fn main() {
    std::process::exit(mott_vrh::cli::main_with(std::env::args_os()));
}
