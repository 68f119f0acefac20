use std::process::ExitCode;

use matrixinfo_cli::error::exit;

fn main() -> ExitCode {
    if let Ok(v) = std::env::var("MATRIXINFO_THREADS") {
        match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => {
                if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                    eprintln!("matrixinfo: cannot configure thread pool: {e}");
                }
            }
            _ => {
                eprintln!("matrixinfo: MATRIXINFO_THREADS must be a positive integer, got `{v}`");
                return ExitCode::from(exit::USAGE as u8);
            }
        }
    }
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    let code = matrixinfo_cli::run(std::env::args_os(), &mut stdout.lock(), &mut stderr.lock());
    ExitCode::from(code as u8)
}
