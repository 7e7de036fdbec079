use std::io::Write;
use std::process::ExitCode;

fn main() -> ExitCode {
    diffna::cli::init_threads();
    let outcome = diffna::cli::run_args(std::env::args_os());
    if !outcome.is_error {
        print!("{}", outcome.text);
        let _ = std::io::stdout().flush();
    } else {
        eprint!("{}", outcome.text);
    }
    ExitCode::from(outcome.code as u8)
}
