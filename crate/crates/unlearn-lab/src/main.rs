use std::process::ExitCode;

fn main() -> ExitCode {
    unlearn_lab::cli::main_entry()
}
