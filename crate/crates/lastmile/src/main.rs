fn main() {
    std::process::exit(lastmile::cli::run());
}
