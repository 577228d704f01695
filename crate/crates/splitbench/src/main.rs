fn main() {
    std::process::exit(splitbench::cli::run_cli());
}
