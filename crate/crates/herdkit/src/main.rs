use std::process::ExitCode;

fn main() -> ExitCode {
    match herdkit::cli::run(std::env::args_os()) {
        Ok(out) => {
            print!("{out}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", herdkit::cli::error_line(&e));
            ExitCode::from(e.exit_code())
        }
    }
}
