use clap::Parser;

fn main() {
    let cli = fcna_cli::Cli::parse();
    match fcna_cli::run(cli) {
        Ok(msg) => {
            if !msg.is_empty() {
                println!("{msg}");
            }
        }
        Err(e) => {
            eprintln!("{e}");
            std::process::exit(e.exit_code());
        }
    }
}
