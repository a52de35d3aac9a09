use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use distinv_cli::config::{ExperimentConfig, MetricName};
use distinv_cli::error::{CliError, CliResult};
use distinv_cli::experiment::{
    compute_distance, run_batch, run_experiment, run_regularize_once, RegularizePair,
};
use distinv_cli::{io, plot};
use distinv_core::inversion::{
    direct_invert, stability_sweep, InvertOptions, PerturbationFamily, SweepMetric,
};
use distinv_core::divergences::FDivergenceSpec;
use distinv_core::maps::ForwardMap;

/// Stochastic inverse problems: direct inversion, regularized solvers, and
/// Wasserstein gradient flows over probability measures.
#[derive(Parser)]
#[command(name = "distinv", version, about)]
struct Cli {
    /// Seed for any sampling done during a run.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Suppress informational output.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Distance or divergence between two measure files.
    Distance {
        /// w2, w1, kl, or chi2.
        #[arg(long)]
        metric: String,
        #[arg(long)]
        mu: PathBuf,
        #[arg(long)]
        nu: PathBuf,
        /// Entropic regularization; switches particle W_p to Sinkhorn.
        #[arg(long)]
        sinkhorn_eps: Option<f64>,
    },
    /// Pre-image of a data measure under a linear map.
    Invert {
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Sample count for degenerate Gaussian pre-images.
        #[arg(long, default_value_t = 2000)]
        samples: usize,
    },
    /// Solution-set stability sweep over perturbation levels.
    Stability {
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// w2 or kl.
        #[arg(long)]
        metric: String,
        /// Comma-separated perturbation levels, e.g. 0.1,0.2,0.4.
        #[arg(long)]
        perturb: String,
        #[arg(long)]
        out: PathBuf,
        /// meanShift (default) or covarianceInflation.
        #[arg(long, default_value = "meanShift")]
        family: String,
    },
    /// One regularized solve (entropy-entropy or W2-Tikhonov pairing).
    Regularize {
        /// kl or w2.
        #[arg(long)]
        pair: String,
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        prior: Option<PathBuf>,
        #[arg(long)]
        alpha: f64,
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Known W2 noise level, enables the error bound report.
        #[arg(long)]
        noise_w2: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Tikhonov error sweep over a ladder of alphas (L-curve data).
    RegularizeSweep {
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// Comma-separated alphas.
        #[arg(long)]
        alphas: String,
        #[arg(long)]
        noise_w2: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Gradient-flow run described by a flowConvergence config.
    Flow {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run experiment configs with manifests and verdicts.
    Experiment {
        #[command(subcommand)]
        action: ExperimentAction,
    },
    /// Render a CSV artifact (or grid measure) as an SVG figure.
    Plot {
        #[arg(long)]
        input: PathBuf,
        /// decayCurve, lCurve, stabilityRatio, or densityHeatmap.
        #[arg(long)]
        kind: String,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum ExperimentAction {
    /// Run one config file.
    Run {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every *.json config in a directory.
    Batch {
        dir: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("{err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}

fn parse_metric(s: &str) -> CliResult<MetricName> {
    match s {
        "w2" => Ok(MetricName::W2),
        "w1" => Ok(MetricName::W1),
        "kl" => Ok(MetricName::Kl),
        "chi2" => Ok(MetricName::Chi2),
        other => Err(CliError::config(format!("unknown metric '{other}'"))),
    }
}

fn parse_levels(s: &str) -> CliResult<Vec<f64>> {
    let levels: Result<Vec<f64>, _> = s.split(',').map(|f| f.trim().parse::<f64>()).collect();
    let levels = levels.map_err(|e| CliError::config(format!("--perturb: {e}")))?;
    if levels.is_empty() {
        return Err(CliError::config("--perturb needs at least one level"));
    }
    Ok(levels)
}

fn run(cli: Cli) -> CliResult<u8> {
    match cli.command {
        Command::Distance {
            metric,
            mu,
            nu,
            sinkhorn_eps,
        } => {
            let metric = parse_metric(&metric)?;
            let mu = io::read_measure(&mu)?;
            let nu = io::read_measure(&nu)?;
            let record = compute_distance(metric, &mu, &nu, sinkhorn_eps)?;
            println!("{}", serde_json::to_string(&record)?);
            Ok(0)
        }
        Command::Invert {
            map,
            data,
            out,
            samples,
        } => {
            let linear = distinv_core::LinearForwardMap::new(io::read_matrix(&map)?)
                .map_err(|e| CliError::config(e.to_string()))?;
            let data = io::read_measure(&data)?;
            let opts = InvertOptions {
                gaussian_samples: samples,
                seed: cli.seed.unwrap_or(0),
            };
            let inverted = direct_invert(&ForwardMap::Linear(linear), &data, &opts)?;
            let path = io::write_measure(&out, &inverted)?;
            if !cli.quiet {
                println!("wrote {}", path.display());
            }
            Ok(0)
        }
        Command::Stability {
            map,
            data,
            metric,
            perturb,
            out,
            family,
        } => {
            let linear = distinv_core::LinearForwardMap::new(io::read_matrix(&map)?)
                .map_err(|e| CliError::config(e.to_string()))?;
            let measure = io::read_measure(&data)?;
            let gaussian = measure
                .as_gaussian()
                .ok_or_else(|| CliError::config("stability needs a Gaussian data measure"))?;
            let sweep_metric = match parse_metric(&metric)? {
                MetricName::W2 => SweepMetric::W2,
                MetricName::Kl => SweepMetric::F(FDivergenceSpec::kl()),
                _ => return Err(CliError::config("stability metric must be w2 or kl")),
            };
            let family = match family.as_str() {
                "meanShift" => PerturbationFamily::MeanShift { direction: None },
                "covarianceInflation" => PerturbationFamily::CovarianceInflation,
                other => {
                    return Err(CliError::config(format!(
                        "unknown perturbation family '{other}'"
                    )))
                }
            };
            let levels = parse_levels(&perturb)?;
            let reports = stability_sweep(&linear, gaussian, &levels, &sweep_metric, &family)?;
            let mut csv =
                String::from("perturbation,input_distance,output_distance,bound,satisfied\n");
            let mut all_satisfied = true;
            for (level, r) in levels.iter().zip(&reports) {
                csv.push_str(&format!(
                    "{},{},{},{},{}\n",
                    level, r.input_perturbation, r.output_distance, r.bound, r.satisfied
                ));
                all_satisfied &= r.satisfied;
            }
            io::write_atomic(&out, csv.as_bytes())?;
            if !cli.quiet {
                println!("wrote {}", out.display());
            }
            Ok(if all_satisfied { 0 } else { 1 })
        }
        Command::Regularize {
            pair,
            map,
            data,
            prior,
            alpha,
            truth,
            noise_w2,
            out,
        } => {
            let pair: RegularizePair = pair.parse()?;
            let linear = distinv_core::LinearForwardMap::new(io::read_matrix(&map)?)
                .map_err(|e| CliError::config(e.to_string()))?;
            let data = io::read_measure(&data)?;
            let prior = prior.map(|p| io::read_measure(&p)).transpose()?;
            let truth = truth.map(|p| io::read_measure(&p)).transpose()?;
            let artifacts = run_regularize_once(
                pair,
                &linear,
                &data,
                prior.as_ref(),
                alpha,
                truth.as_ref(),
                noise_w2,
                &out,
            )?;
            if !cli.quiet {
                for a in artifacts {
                    println!("wrote {}", a.display());
                }
            }
            Ok(0)
        }
        Command::RegularizeSweep {
            map,
            data,
            truth,
            alphas,
            noise_w2,
            out,
        } => {
            // delegate to the experiment runner for the CSV + verdicts
            let cfg = ExperimentConfig {
                name: "regularize-sweep".into(),
                seed: cli.seed.unwrap_or(0),
                output_dir: None,
                kind: distinv_cli::config::ExperimentKind::RegularizeSweep {
                    map: distinv_cli::config::MapSpec::File { file: map },
                    data: distinv_cli::config::MeasureSpec::File { file: data },
                    truth: distinv_cli::config::MeasureSpec::File { file: truth },
                    alphas: distinv_cli::config::AlphaList::Explicit(parse_levels(&alphas)?),
                    noise_w2,
                },
            };
            let manifest = run_experiment(&cfg, &std::env::current_dir()?, &out)?;
            if !cli.quiet {
                println!("wrote {}", out.join("sweep.csv").display());
            }
            Ok(if manifest.any_failed() { 1 } else { 0 })
        }
        Command::Flow { config, out } => {
            let cfg = ExperimentConfig::from_file(&config)?;
            if !matches!(
                cfg.kind,
                distinv_cli::config::ExperimentKind::FlowConvergence { .. }
            ) {
                return Err(CliError::config(
                    "the flow command needs a config with kind = flowConvergence",
                ));
            }
            let base = config
                .parent()
                .map(|p| p.to_path_buf())
                .unwrap_or_else(|| PathBuf::from("."));
            let manifest = run_experiment(&cfg, &base, &out)?;
            if !cli.quiet {
                println!(
                    "{} artifacts, {} verdicts",
                    manifest.artifacts.len(),
                    manifest.verdicts.len()
                );
            }
            Ok(if manifest.any_failed() { 1 } else { 0 })
        }
        Command::Experiment { action } => match action {
            ExperimentAction::Run { config, out } => {
                let mut cfg = ExperimentConfig::from_file(&config)?;
                if let Some(seed) = cli.seed {
                    cfg.seed = seed;
                }
                let base = config
                    .parent()
                    .map(|p| p.to_path_buf())
                    .unwrap_or_else(|| PathBuf::from("."));
                let out_dir = out
                    .or_else(|| cfg.output_dir.clone())
                    .unwrap_or_else(|| PathBuf::from(format!("out-{}", cfg.name)));
                let manifest = run_experiment(&cfg, &base, &out_dir)?;
                if !cli.quiet {
                    for v in &manifest.verdicts {
                        println!(
                            "{}: {}",
                            v.criterion,
                            if v.pass { "pass" } else { "FAIL" }
                        );
                    }
                }
                Ok(if manifest.any_failed() { 1 } else { 0 })
            }
            ExperimentAction::Batch { dir, jobs, out } => {
                let out_root = out.unwrap_or_else(|| dir.join("out"));
                let results = run_batch(&dir, &out_root, jobs)?;
                let mut worst = 0u8;
                for (path, result) in results {
                    match result {
                        Ok(manifest) => {
                            let failed = manifest.any_failed();
                            if !cli.quiet {
                                println!(
                                    "{}: {}",
                                    path.display(),
                                    if failed { "verdict FAIL" } else { "ok" }
                                );
                            }
                            if failed {
                                worst = worst.max(1);
                            }
                        }
                        Err(err) => {
                            eprintln!("{}: {err}", path.display());
                            worst = worst.max(err.exit_code() as u8);
                        }
                    }
                }
                Ok(worst)
            }
        },
        Command::Plot { input, kind, out } => {
            let kind: plot::PlotKind = kind.parse()?;
            let path = plot::emit_plot(&input, kind, &out)?;
            if !cli.quiet {
                println!("wrote {}", path.display());
            }
            Ok(0)
        }
    }
}
