use std::io::Write;
use std::process::ExitCode;

use clap::Parser;
use radmap::cli::{Cli, Command};
use radmap::commands;
use radmap::error::{exit, Error};

fn write_out(path: Option<&std::path::Path>, text: &str) -> Result<(), Error> {
    if let Some(p) = path {
        std::fs::write(p, text).map_err(|e| Error::io(p, e))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<i32, Error> {
    match cli.command {
        Command::Synth(a) => {
            let s = a.resolve()?;
            let m = commands::synth(&s)?;
            eprintln!("synth: wrote {} files to {}", m.files.len() + 1, s.out.display());
        }
        Command::Fit(a) => {
            let s = a.resolve()?;
            let o = commands::fit(&s, true)?;
            match o.final_psnr() {
                Some(p) => eprintln!("fit: final test psnr {p:.3} dB; checkpoint {}", o.checkpoint.display()),
                None => eprintln!("fit: done; checkpoint {}", o.checkpoint.display()),
            }
        }
        Command::Render(a) => {
            let s = a.resolve()?;
            let written = commands::render(&s)?;
            eprintln!("render: wrote {} images to {}", written.len(), s.out.display());
        }
        Command::Eval(a) => {
            let s = a.resolve()?;
            let csv = commands::eval_csv(&commands::eval(&s)?);
            write_out(s.out.as_deref(), &csv)?;
            print!("{csv}");
        }
        Command::Bench(a) => {
            let s = a.resolve()?;
            let csv = commands::bench_csv(&commands::bench(&s)?);
            write_out(s.out.as_deref(), &csv)?;
            print!("{csv}");
        }
        Command::Gradcheck(a) => {
            let cfg = a.resolve()?;
            let outcomes = commands::gradcheck(&cfg);
            for o in &outcomes {
                println!("{}", commands::gradcheck_line(o));
                for f in o.failures.iter().take(3) {
                    eprintln!("  {f}");
                }
            }
            if !outcomes.iter().all(|o| o.passed()) {
                return Ok(exit::NUMERIC);
            }
        }
    }
    Ok(exit::OK)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    let _ = std::io::stdout().flush();
    ExitCode::from(code as u8)
}
