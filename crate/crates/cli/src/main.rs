use std::process::ExitCode;

fn main() -> ExitCode {
    pruner_zero_cli::app::main()
}
