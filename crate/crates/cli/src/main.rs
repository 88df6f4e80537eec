use std::io::Write;

use clap::Parser;

fn main() {
    let cli = bru_cli::cli::Cli::parse();
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    let code = match bru_cli::cli::dispatch(cli, &mut stdout.lock(), &mut stderr.lock()) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr.lock(), "error: {e}");
            e.code
        }
    };
    std::process::exit(code.code());
}
