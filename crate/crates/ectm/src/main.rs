use std::process::ExitCode;

fn main() -> ExitCode {
    ectm::cli::main()
}
