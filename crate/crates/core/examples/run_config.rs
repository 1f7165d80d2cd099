//! Drives an experiment from a configuration file, like the command-line tool.
//!
//! `cargo run --example run_config -- crates/core/configs/simulate.toml out/example`

use std::path::PathBuf;

use flockdelay::cli_io::{load_config, run, Experiment};

fn main() -> flockdelay::Result<()> {
    let mut args = std::env::args().skip(1);
    let path = PathBuf::from(
        args.next()
            .unwrap_or_else(|| "crates/core/configs/simulate.toml".into()),
    );
    let out = PathBuf::from(args.next().unwrap_or_else(|| "out/example".into()));
    let cfg = load_config(&path)?;
    let exp = cfg.experiment.unwrap_or(Experiment::Simulate);
    let report = run(&cfg, exp, &out)?;
    println!("{}: {:?}", exp.name(), report.outcome);
    for f in &report.files {
        println!("  {}", f.display());
    }
    Ok(())
}
