use clap::Parser;

fn main() {
    let cli = match mapt_cli::cli::Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // usage errors are config errors; --help and --version are not errors
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = mapt_cli::cli::run(cli) {
        eprintln!("mapt: {e}");
        std::process::exit(e.exit_code());
    }
}
