use std::io::Write;
use std::process::ExitCode;

fn main() -> ExitCode {
    let (out, dir) = qnet::cli::run_args(std::env::args_os());
    print!("{}", out.stdout);
    eprint!("{}", out.stderr);
    let _ = std::io::stdout().flush();
    if let Some(dir) = dir {
        if let Err(e) = out.write_files(&dir) {
            eprintln!("error: cannot write outputs to {}: {e}", dir.display());
            return ExitCode::from(qnet::cli::EXIT_INPUT as u8);
        }
    }
    ExitCode::from(out.code as u8)
}
