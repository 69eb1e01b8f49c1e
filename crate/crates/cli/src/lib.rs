//! Command-line entry points and the HTTP editing service.

pub mod args;
pub mod commands;
pub mod error;
pub mod server;

use std::io::Write;
use std::sync::Arc;

use attrfield::par;

use crate::args::{Cli, Command, ServeArgs};
use crate::error::{CliError, CliResult};

/// Run one parsed invocation, writing its report to `out`.
pub fn run(cli: &Cli, out: &mut (dyn Write + Send)) -> CliResult<()> {
    if let Command::Serve(args) = &cli.command {
        return serve(args, cli.threads);
    }
    match cli.threads {
        Some(0) => Err(CliError::usage("--threads must be at least 1")),
        Some(n) => par::with_threads(n, || dispatch(&cli.command, out)),
        None => dispatch(&cli.command, out),
    }
}

fn dispatch(command: &Command, out: &mut (dyn Write + Send)) -> CliResult<()> {
    match command {
        Command::GenOracle(a) => commands::gen_oracle(a, out),
        Command::Fit(a) => commands::fit(a, out),
        Command::Render(a) => commands::render(a, out),
        Command::Edit(a) => commands::edit(a, out),
        Command::Eval(a) => commands::eval(a, out),
        Command::Serve(_) => unreachable!("handled in run"),
    }
}

fn serve(args: &ServeArgs, threads: Option<usize>) -> CliResult<()> {
    if let Some(n) = threads {
        if n == 0 {
            return Err(CliError::usage("--threads must be at least 1"));
        }
        par::set_global_threads(n);
    }
    if !args.dir.is_dir() {
        return Err(CliError::usage(format!("{}: not a directory", args.dir.display())));
    }
    let state =
        server::AppState::load_dir(&args.dir).map_err(|e| CliError::usage(format!("{}: {e}", args.dir.display())))?;
    eprintln!("loaded scenes: {}", state.scene_ids().join(", "));
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(server::serve(Arc::new(state), &args.host, args.port))?;
    Ok(())
}
