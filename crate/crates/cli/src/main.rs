fn main() {
    std::process::exit(opinion_cli::main_entry());
}
