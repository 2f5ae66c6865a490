use pulsehr::cli;

fn main() {
    std::process::exit(cli::run());
}
