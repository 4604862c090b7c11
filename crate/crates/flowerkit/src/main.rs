fn main() {
    std::process::exit(flowerkit::cli::main_with_env());
}
