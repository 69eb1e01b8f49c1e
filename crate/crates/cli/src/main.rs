use clap::Parser;

fn main() {
    let cli = attrfield_cli::args::Cli::parse();
    let mut stdout = std::io::stdout();
    if let Err(e) = attrfield_cli::run(&cli, &mut stdout) {
        eprintln!("error: {e}");
        std::process::exit(e.code);
    }
}
