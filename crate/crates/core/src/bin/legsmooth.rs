use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use legsmooth::config::Config;
use legsmooth::dataset::{fmt_f64, read_dataset, write_dataset};
use legsmooth::metrics::compute_cdf;
use legsmooth::pipeline::{pooled_medians, run, sweep, write_failure, write_outputs, RunPreset};
use legsmooth::sim::{emit_loop_closures, generate_truth, simulate};
use legsmooth::Error;

#[derive(Parser)]
#[command(name = "legsmooth", version, about = "Contact-aided smoothing for legged robots")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a walk and write a dataset file.
    Generate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the seed from the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Write the exact measurements without any noise.
        #[arg(long)]
        noiseless: bool,
    },
    /// Estimate a trajectory from a dataset file.
    Run {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// imu, imu_lc, imu_contact_fk or all; defaults to the config value.
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every preset on simulated walks over a range of seeds.
    Compare {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        #[arg(long, default_value_t = 0)]
        first_seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the default configuration as TOML.
    Config,
}

fn load_config(path: Option<&Path>) -> legsmooth::Result<Config> {
    path.map_or_else(|| Ok(Config::default()), Config::load)
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NotAnchored | Error::LinearSolveFailure(_) | Error::SingularCovariance | Error::AngleAtPi => 3,
        _ => 2,
    }
}

fn generate(config: Option<&Path>, out: &Path, seed: Option<u64>, noiseless: bool) -> legsmooth::Result<()> {
    let cfg = load_config(config)?;
    let mut sim = cfg.sim_config()?;
    if let Some(s) = seed {
        sim.seed = s;
    }
    let data = if noiseless {
        let mut d = generate_truth(&sim)?;
        d.loop_closures = emit_loop_closures(&d.truth, sim.lc_stride, &sim.noise.lc_covariance());
        d
    } else {
        simulate(&sim)?
    };
    if let Some(dir) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    write_dataset(out, &data)?;
    println!(
        "wrote {} ({} IMU samples, {} contact events, {} loop closures)",
        out.display(),
        data.imu.len(),
        data.contacts.len(),
        data.loop_closures.len()
    );
    Ok(())
}

fn run_cmd(dataset: &Path, config: Option<&Path>, preset: Option<&str>, out: &Path) -> legsmooth::Result<()> {
    let cfg = load_config(config)?;
    let preset = match preset {
        Some(p) => RunPreset::parse(p)?,
        None => cfg.preset()?,
    };
    let est = cfg.estimator_config()?;
    let data = read_dataset(dataset)?;
    let start = Instant::now();
    match run(&data, &est, preset) {
        Ok(output) => {
            write_outputs(out, &output)?;
            let r = &output.result;
            println!(
                "{preset}: {} nodes, cost {:.6e} -> {:.6e} in {} iterations ({:.3} s)",
                r.values.len(),
                r.initial_cost,
                r.final_cost,
                r.iterations.len(),
                start.elapsed().as_secs_f64()
            );
            if !output.errors.is_empty() {
                println!(
                    "median relative error: {:.4e} m, {:.4e} rad",
                    output.median_translation(),
                    output.median_rotation()
                );
            }
            Ok(())
        }
        Err(e) => {
            write_failure(out, preset, &e)?;
            Err(e)
        }
    }
}

fn compare(config: Option<&Path>, seeds: u64, first_seed: u64, out: &Path) -> legsmooth::Result<()> {
    let cfg = load_config(config)?;
    let sim = cfg.sim_config()?;
    let est = cfg.estimator_config()?;
    let seed_list: Vec<u64> = (first_seed..first_seed + seeds).collect();
    let start = Instant::now();
    let runs = sweep(&sim, &est, &seed_list, &RunPreset::EVERY)?;
    std::fs::create_dir_all(out)?;
    for r in &runs {
        write_outputs(
            &out.join(format!("seed_{:04}", r.seed)).join(r.output.preset.name()),
            &r.output,
        )?;
    }
    let mut table = String::from("# preset median_translation median_rotation\n");
    for p in RunPreset::EVERY {
        let errs: Vec<_> = runs
            .iter()
            .filter(|r| r.output.preset == p)
            .flat_map(|r| r.output.errors.iter())
            .collect();
        if errs.is_empty() {
            continue;
        }
        for (name, values) in [
            ("trans", errs.iter().map(|e| e.translation).collect::<Vec<_>>()),
            ("rot", errs.iter().map(|e| e.rotation).collect()),
        ] {
            let mut s = String::new();
            for (x, f) in compute_cdf(&values)? {
                let _ = writeln!(s, "{} {}", fmt_f64(x), fmt_f64(f));
            }
            std::fs::write(out.join(format!("cdf_{name}_{}.txt", p.name())), s)?;
        }
        if let Some((t, r)) = pooled_medians(&runs, p) {
            let _ = writeln!(table, "{} {} {}", p.name(), fmt_f64(t), fmt_f64(r));
            println!("{:>15}: median {:.4e} m  {:.4e} rad", p.name(), t, r);
        }
    }
    std::fs::write(out.join("medians.txt"), table)?;
    println!(
        "{} runs over {} seeds in {:.1} s",
        runs.len(),
        seeds,
        start.elapsed().as_secs_f64()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Generate {
            config,
            out,
            seed,
            noiseless,
        } => generate(config.as_deref(), out, *seed, *noiseless),
        Command::Run {
            dataset,
            config,
            preset,
            out,
        } => run_cmd(dataset, config.as_deref(), preset.as_deref(), out),
        Command::Compare {
            config,
            seeds,
            first_seed,
            out,
        } => compare(config.as_deref(), *seeds, *first_seed, out),
        Command::Config => {
            print!("{}", Config::default().to_toml_string());
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
