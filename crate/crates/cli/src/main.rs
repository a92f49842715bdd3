use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use nlchns_core::config::RunConfig;
use nlchns_core::run::{
    config_from_manifest, diagnose, eps_sweep, kernel_report, potential_table, run_ch_only, run_coupled, write_run,
    RunError, Setup,
};

#[derive(Parser)]
#[command(name = "nlchns", version, about = "Nonlocal Cahn-Hilliard-Navier-Stokes with a logarithmic potential")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Coupled CH + NS run.
    Run(Common),
    /// CH only, with the configured velocity held fixed.
    RunCh(Common),
    /// CH-only runs at every epsilon of the grid and at epsilon/2.
    EpsSweep(Common),
    /// Checks a stored run directory and writes diagnose.json into it.
    Diagnose {
        /// Run directory written by `run` or `run-ch`.
        dir: PathBuf,
    },
    /// a(x), beta, a_inf and the gradient L1 norm of the configured kernel.
    KernelReport(Common),
    /// F, F', F_eps, F_eps', F_eps'' on a grid inside (-1, 1).
    PotentialTable {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 2001)]
        points: usize,
    },
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` file, or a manifest.json from an earlier run.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

impl Common {
    fn load(&self) -> Result<RunConfig, RunError> {
        let mut cfg = match &self.preset {
            Some(p) => RunConfig::preset(p)?,
            None => RunConfig::default(),
        };
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path)?;
            cfg = if path.extension().is_some_and(|e| e == "json") {
                config_from_manifest(&text)?
            } else {
                cfg.apply_text(&text)?
            };
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        Ok(cfg)
    }
}

fn write_json(path: &Path, v: &serde_json::Value) -> Result<(), RunError> {
    std::fs::write(path, serde_json::to_string_pretty(v).expect("json"))?;
    Ok(())
}

fn execute(cli: Cli) -> Result<(), RunError> {
    match cli.command {
        Command::Run(c) => {
            let setup = Setup::new(&c.load()?)?;
            if setup.config.steps == 0 {
                return write_run(&c.out, &setup, None, "coupled");
            }
            let out = run_coupled(&setup)?;
            write_run(&c.out, &setup, Some(&out), "coupled")?;
            report_steps(&out);
            out.failure.map_or(Ok(()), Err)
        }
        Command::RunCh(c) => {
            let setup = Setup::new(&c.load()?)?;
            if setup.config.steps == 0 {
                return write_run(&c.out, &setup, None, "ch-only");
            }
            let out = run_ch_only(&setup)?;
            write_run(&c.out, &setup, Some(&out), "ch-only")?;
            report_steps(&out);
            out.failure.map_or(Ok(()), Err)
        }
        Command::EpsSweep(c) => {
            let cfg = c.load()?;
            let table = eps_sweep(&cfg)?;
            std::fs::create_dir_all(&c.out)?;
            table.series().write_csv(&c.out.join("eps_sweep.csv"))?;
            let v = serde_json::to_value(&table).expect("json");
            write_json(&c.out.join("eps_sweep.json"), &v)?;
            for r in &table.rows {
                println!("eps = {:.3e}  |phi_eps - phi_eps/2| = {:.6e}", r.epsilon, r.l2_diff);
            }
            println!("strictly decreasing: {}", table.strictly_decreasing);
            Ok(())
        }
        Command::Diagnose { dir } => {
            let v = diagnose(&dir)?;
            write_json(&dir.join("diagnose.json"), &v)?;
            println!("{}", serde_json::to_string_pretty(&v).expect("json"));
            Ok(())
        }
        Command::KernelReport(c) => {
            let v = kernel_report(&c.out, &c.load()?)?;
            println!("{}", serde_json::to_string_pretty(&v).expect("json"));
            Ok(())
        }
        Command::PotentialTable { common, points } => {
            let table = potential_table(&common.load()?, points)?;
            std::fs::create_dir_all(&common.out)?;
            table.write_csv(&common.out.join("potential_table.csv"))?;
            Ok(())
        }
    }
}

fn report_steps(out: &nlchns_core::run::RunOutput) {
    eprintln!("{} steps written", out.steps_done);
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
