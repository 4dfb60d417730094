fn main() {
    std::process::exit(hcn::cli::run());
}
