use clap::Parser;

fn main() {
    let cli = thespian_cli::Cli::parse();
    let stdin = std::io::stdin();
    let mut input = stdin.lock();
    let mut output = std::io::stdout();
    if let Err(e) = thespian_cli::run(cli, &mut input, &mut output) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
