use clap::Parser;
use sitescout_gateway::cli::{execute, Cli};

fn main() {
    let cli = Cli::parse();
    let code = match execute(cli, &mut std::io::stdout(), &mut std::io::stderr()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    };
    std::process::exit(code);
}
