use std::process::ExitCode;

fn main() -> ExitCode {
    dualhead::cli::main()
}
