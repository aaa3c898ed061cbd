use std::process::ExitCode;

fn main() -> ExitCode {
    polysls::cli::init_threads();
    let stdout = std::io::stdout();
    match polysls::cli::run(std::env::args_os(), &mut stdout.lock()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
