fn main() {
    std::process::exit(wdro_cli::run());
}
