fn main() {
    std::process::exit(privrank::report::run_cli());
}
