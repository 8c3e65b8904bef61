fn main() {
    std::process::exit(swarm_cli::commands::main_with(std::env::args()));
}
