use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use specboot::bootstrap::{bootstrap_distribution, BootstrapConfig, BootstrapOptions, StatisticSpec};
use specboot::experiment::{reproduce_table, run_experiment, simulate, ExperimentConfig, LawTag};
use specboot::inference::{
    prepare, sphericity_test, stable_rank_ci_prepared, stable_rank_test_prepared, InferenceOptions, RankInferenceResult,
};
use specboot::mp::{esd_grid, EsdOptions};
use specboot::sampling::Dataset;
use specboot::spectra::{make_covariance_setting, Setting, SpectrumModel};

#[derive(Parser, Debug)]
#[command(name = "specboot", version, about = "Bootstrap inference for spectral statistics of elliptical data")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// JSON configuration; its schema depends on the subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the one in --config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "SPECBOOT_WORKERS")]
    workers: Option<usize>,
    /// Output file or directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a simulation experiment described by --config.
    Simulate,
    /// Draw one dataset from a named covariance setting and write it as CSV.
    Generate {
        #[arg(long, default_value = "S1")]
        setting: Setting,
        #[arg(long, default_value = "i")]
        law: LawTag,
        #[arg(long, default_value_t = 400)]
        n: usize,
        #[arg(long, default_value_t = 200)]
        p: usize,
        /// Use Haar eigenvectors instead of a diagonal covariance.
        #[arg(long)]
        rotate: bool,
    },
    /// Parametric bootstrap draws, from --config (bootstrap JSON) or from --data.
    Bootstrap {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long = "B", default_value_t = 250)]
        b: usize,
        /// Statistic labels, e.g. lss:square, largest_eig, eigen_gap.
        #[arg(long = "stat", default_value = "largest_eig")]
        stats: Vec<String>,
    },
    /// Bootstrap confidence interval for the stable rank.
    Ci {
        #[arg(long)]
        data: PathBuf,
        #[arg(long = "B", default_value_t = 250)]
        b: usize,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
    },
    /// Test whether the stable rank ratio exceeds epsilon0.
    TestRank {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        epsilon0: f64,
        #[arg(long = "B", default_value_t = 250)]
        b: usize,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
    },
    /// Test of a covariance proportional to the identity.
    TestSphericity {
        #[arg(long)]
        data: PathBuf,
        #[arg(long = "B", default_value_t = 250)]
        b: usize,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
    },
    /// Regenerate one of the simulation tables at a reduced trial count.
    ReproduceTable {
        #[arg(long)]
        table: usize,
        #[arg(long, default_value_t = 0.1)]
        scale: f64,
    },
    /// Tabulate the limiting sample spectrum for a population spectrum.
    MpDensity {
        /// Aspect ratio p/n.
        #[arg(long)]
        c: f64,
        /// Named setting used when --eigenvalues is absent.
        #[arg(long, default_value = "S1")]
        setting: Setting,
        #[arg(long, default_value_t = 200)]
        p: usize,
        /// JSON array of population eigenvalues.
        #[arg(long)]
        eigenvalues: Option<PathBuf>,
        #[arg(long, default_value_t = 2048)]
        grid_points: usize,
    },
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn inference_options(g: &Global) -> Result<InferenceOptions> {
    let mut opts = match &g.config {
        Some(path) => serde_json::from_str(&read_text(path)?).context("parsing inference options")?,
        None => InferenceOptions::default(),
    };
    if let Some(s) = g.seed {
        opts.seed = s;
    }
    if g.workers.is_some() {
        opts.workers = g.workers;
    }
    Ok(opts)
}

fn report(result: &RankInferenceResult, out: Option<&Path>) -> Result<()> {
    println!("{}", result.summary());
    if let Some(path) = out {
        fs::write(path, result.to_json()?).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn load_data(path: &Path) -> Result<Dataset> {
    Dataset::read_csv(path).with_context(|| format!("loading {}", path.display()))
}

fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    match cli.command {
        Command::Simulate => {
            let Some(path) = &g.config else { bail!("simulate needs --config <experiment.json>") };
            let mut cfg = ExperimentConfig::from_json(&read_text(path)?)?;
            if let Some(s) = g.seed {
                cfg.master_seed = s;
            }
            if let Some(dir) = &g.out {
                cfg.output_dir = dir.clone();
            }
            let out = run_experiment(&cfg, g.workers)?;
            println!(
                "{} trial rows, {} summary rows -> {}",
                out.rows.len(),
                out.summary.len(),
                out.summary_csv.display()
            );
        }
        Command::Generate { setting, law, n, p, rotate } => {
            let out = g.out.clone().unwrap_or_else(|| PathBuf::from("data.csv"));
            let x = simulate(setting, &law.law(), n, p, g.seed.unwrap_or(0), rotate)?;
            x.write_csv(&out)?;
            println!("{n}x{p} sample from {} / law {} -> {}", setting.label(), law.label(), out.display());
        }
        Command::Bootstrap { data, b, stats } => {
            let cfg = match (&g.config, data) {
                (Some(path), _) => {
                    let mut cfg = BootstrapConfig::from_json(&read_text(path)?)?;
                    if let Some(s) = g.seed {
                        cfg.master_seed = s;
                    }
                    cfg
                }
                (None, Some(path)) => {
                    let x = load_data(&path)?;
                    let opts = inference_options(g)?;
                    let prepared = prepare(&x, &opts.quest)?;
                    let statistics =
                        stats.iter().map(|s| StatisticSpec::from_label(s)).collect::<specboot::Result<Vec<_>>>()?;
                    BootstrapConfig {
                        b,
                        n: x.n(),
                        p: x.p(),
                        varsigma_sq_hat: prepared.bundle.varsigma_sq_hat,
                        spectrum_tilde: prepared.spectrum_tilde,
                        master_seed: opts.seed,
                        statistics,
                    }
                }
                (None, None) => bail!("bootstrap needs --config <bootstrap.json> or --data <file.csv>"),
            };
            let draws = bootstrap_distribution(&cfg, &BootstrapOptions { workers: g.workers, skip_failed: false })?;
            let out = g.out.clone().unwrap_or_else(|| PathBuf::from("bootstrap.csv"));
            draws.write_csv(&out)?;
            println!("{} replicates of [{}] -> {}", draws.len(), draws.labels.join(", "), out.display());
        }
        Command::Ci { data, b, alpha } => {
            let opts = inference_options(g)?;
            let prepared = prepare(&load_data(&data)?, &opts.quest)?;
            report(&stable_rank_ci_prepared(&prepared, b, alpha, &opts)?, g.out.as_deref())?;
        }
        Command::TestRank { data, epsilon0, b, alpha } => {
            let opts = inference_options(g)?;
            let prepared = prepare(&load_data(&data)?, &opts.quest)?;
            report(&stable_rank_test_prepared(&prepared, epsilon0, alpha, b, &opts)?, g.out.as_deref())?;
        }
        Command::TestSphericity { data, b, alpha } => {
            let opts = inference_options(g)?;
            report(&sphericity_test(&load_data(&data)?, alpha, b, &opts)?, g.out.as_deref())?;
        }
        Command::ReproduceTable { table, scale } => {
            let dir = g.out.clone().unwrap_or_else(|| PathBuf::from(format!("table{table}")));
            let out = reproduce_table(table, scale, dir, g.seed.unwrap_or(0), g.workers)?;
            print!("{}", fs::read_to_string(&out.table)?);
            println!("summary -> {}", out.summary_csv.display());
        }
        Command::MpDensity { c, setting, p, eigenvalues, grid_points } => {
            let h = match eigenvalues {
                Some(path) => {
                    let values: Vec<f64> = serde_json::from_str(&read_text(&path)?).context("parsing eigenvalues")?;
                    SpectrumModel::from_eigenvalues(&values)?
                }
                None => SpectrumModel::from_eigenvalues(make_covariance_setting(setting, p, None)?.eigenvalues())?,
            };
            let dist = esd_grid(&h, c, &EsdOptions { grid_points, ..EsdOptions::default() })?;
            let out = g.out.clone().unwrap_or_else(|| PathBuf::from("mp_density.csv"));
            dist.write_csv(&out)?;
            let support: Vec<String> =
                dist.support_intervals().iter().map(|s| format!("[{:.4}, {:.4}]", s.lo, s.hi)).collect();
            println!("c={c}: support {}, zero atom {:.4} -> {}", support.join(" "), dist.zero_atom(), out.display());
        }
    }
    Ok(())
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
