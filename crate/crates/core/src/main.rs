use std::process::ExitCode;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let mut stdout = std::io::stdout().lock();
    let mut stderr = std::io::stderr().lock();
    ExitCode::from(dns_core::cli::run_from_args(
        std::env::args_os(),
        &mut stdout,
        &mut stderr,
    ))
}
