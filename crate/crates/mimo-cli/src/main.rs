//! `mimo` — evaluate multi-organ segmentation outputs from the command
//! line: metric tables, bootstrap thresholds, prefix screening scores,
//! calibration, model comparison and the split-half robustness harness.

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use mimo_core::bootstrap::{self, BootstrapConfig, Statistic, ThresholdSet};
use mimo_core::calibration::{self, CalibrationLevel};
use mimo_core::metrics::{self, ConfidenceMode, MetricTable};
use mimo_core::mimo::{self, BoundMethod, CiPercentiles, Direction};
use mimo_core::robustness::{self, RobustnessConfig, ScoringParams};
use mimo_core::synth::{self, ConfidenceModel, OrganDistribution, OrganSpec, SynthSpec};

#[derive(Parser)]
#[command(name = "mimo", version, about = "Multi-indicator multi-organ segmentation evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct BootstrapArgs {
    /// Bootstrap resample count.
    #[arg(long, default_value_t = 1000)]
    bootstrap_samples: usize,
    /// Statistic evaluated on each resample.
    #[arg(long, default_value = "mean")]
    statistic: Statistic,
    /// Master seed; omitted means a fresh seed is drawn and printed.
    #[arg(long)]
    seed: Option<u64>,
    /// Replace every bootstrap with the empirical percentile (ablation).
    #[arg(long)]
    no_bootstrap: bool,
}

impl BootstrapArgs {
    fn resolve(&self) -> (BootstrapConfig, BoundMethod) {
        let seed = self.seed.unwrap_or_else(|| {
            let s: u64 = rand::random();
            eprintln!("seed: {s}");
            s
        });
        (
            BootstrapConfig {
                b: self.bootstrap_samples,
                statistic: self.statistic,
                seed,
                percentile: 50.0,
            },
            if self.no_bootstrap {
                BoundMethod::Empirical
            } else {
                BoundMethod::Bootstrap
            },
        )
    }
}

#[derive(Args, Clone)]
struct CiArgs {
    /// CI percentile for Dice prefix bounds (descending convention).
    #[arg(long, default_value_t = 95.0)]
    ci_dice: f64,
    /// CI percentile for Hausdorff prefix bounds (descending convention).
    #[arg(long, default_value_t = 5.0)]
    ci_hd: f64,
}

impl CiArgs {
    fn percentiles(&self) -> CiPercentiles {
        CiPercentiles {
            dice: self.ci_dice,
            hd: self.ci_hd,
        }
    }
}

#[derive(Args, Clone)]
struct ThresholdPercentileArgs {
    /// Threshold percentile for Dice columns.
    #[arg(long, default_value_t = 50.0)]
    dice_percentile: f64,
    /// Threshold percentile for Hausdorff columns.
    #[arg(long, default_value_t = 50.0)]
    hd_percentile: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
    Md,
}

#[derive(Subcommand)]
enum Command {
    /// Compute the per-sample per-organ metric table from a dataset manifest.
    ComputeMetrics {
        /// Dataset manifest (JSON).
        manifest: PathBuf,
        /// Output CSV path.
        #[arg(long, short)]
        out: PathBuf,
        /// How confidence is derived from probability volumes.
        #[arg(long, default_value = "predicted-voxels")]
        conf_mode: ConfidenceMode,
    },
    /// Generate per-organ thresholds from a metric table.
    Thresholds {
        /// Metric table CSV.
        table: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        #[command(flatten)]
        percentiles: ThresholdPercentileArgs,
        #[command(flatten)]
        bootstrap: BootstrapArgs,
        /// Comma-separated percentile sweep; emits a CSV of thresholds per
        /// percentile instead of a single JSON set.
        #[arg(long)]
        sweep: Option<String>,
    },
    /// Screen a metric table and report the usability-and-comprehensiveness score.
    Score {
        table: PathBuf,
        /// External threshold set JSON; omitted means thresholds are
        /// self-generated from this table.
        #[arg(long)]
        thresholds: Option<PathBuf>,
        /// Report JSON output path.
        #[arg(long, short)]
        out: PathBuf,
        /// Optional flat pass/fail CSV output path.
        #[arg(long)]
        pass_fail: Option<PathBuf>,
        #[command(flatten)]
        percentiles: ThresholdPercentileArgs,
        #[command(flatten)]
        ci: CiArgs,
        #[command(flatten)]
        bootstrap: BootstrapArgs,
        /// Comma-separated threshold-percentile grid; emits a CSV score
        /// surface over (dice percentile, hd percentile) instead of a report.
        #[arg(long)]
        sweep: Option<String>,
    },
    /// Usable-Region baseline for a single organ and indicator.
    Ure {
        table: PathBuf,
        /// Organ name as it appears in the table.
        #[arg(long)]
        organ: String,
        /// Which indicator column to screen.
        #[arg(long, value_parser = ["dice", "hd"])]
        indicator: String,
        /// Fixed requirement the CI bound must meet.
        #[arg(long)]
        requirement: f64,
        #[command(flatten)]
        ci: CiArgs,
        #[command(flatten)]
        bootstrap: BootstrapArgs,
    },
    /// Rank multiple models by score, calibration and mean metrics.
    Compare {
        /// One metric table CSV per model; the model name is the file stem.
        #[arg(required = true)]
        tables: Vec<PathBuf>,
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
        #[command(flatten)]
        percentiles: ThresholdPercentileArgs,
        #[command(flatten)]
        ci: CiArgs,
        #[command(flatten)]
        bootstrap: BootstrapArgs,
    },
    /// Split-half rank-stability experiment over two or more models.
    Robustness {
        #[arg(required = true)]
        tables: Vec<PathBuf>,
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
        #[arg(long, default_value_t = 100)]
        trials_inner: usize,
        #[arg(long, default_value_t = 20)]
        trials_outer: usize,
        #[arg(long, default_value_t = 0.5)]
        split_fraction: f64,
        #[command(flatten)]
        percentiles: ThresholdPercentileArgs,
        #[command(flatten)]
        ci: CiArgs,
        #[command(flatten)]
        bootstrap: BootstrapArgs,
    },
    /// Write a synthetic dataset (volumes + manifest) for pipeline testing.
    SynthDataset {
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        n: usize,
        #[arg(long, default_value_t = 3)]
        m: usize,
        /// Cubic volume side length.
        #[arg(long, default_value_t = 32)]
        side: usize,
        #[arg(long, default_value_t = 6)]
        organ_size: usize,
        /// Prediction perturbation radius in voxels.
        #[arg(long, default_value_t = 1)]
        radius: usize,
        #[arg(long, value_parser = ["calibrated", "overconfident", "underconfident"], default_value = "calibrated")]
        conf_model: String,
        /// Offset for the over/underconfident models.
        #[arg(long, default_value_t = 0.2)]
        offset: f64,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Sample a synthetic metric table directly, no volumes.
    SynthTable {
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        n: usize,
        #[arg(long, default_value_t = 5)]
        m: usize,
        #[arg(long, default_value_t = 0.8)]
        dice_mean: f64,
        #[arg(long, default_value_t = 0.1)]
        dice_spread: f64,
        #[arg(long, default_value_t = 5.0)]
        hd_mean: f64,
        #[arg(long, default_value_t = 2.0)]
        hd_spread: f64,
        #[arg(long, value_parser = ["calibrated", "overconfident", "underconfident"], default_value = "calibrated")]
        conf_model: String,
        #[arg(long, default_value_t = 0.2)]
        offset: f64,
        #[arg(long, default_value_t = 0.05)]
        conf_noise: f64,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::ComputeMetrics { manifest, out, conf_mode } => {
            let manifest = mimo_core::volume::load_manifest(&manifest)?;
            let table = metrics::build_metric_table(&manifest, conf_mode)?;
            let mut buf = Vec::new();
            metrics::write_metric_table_csv(&table, &mut buf)?;
            write_atomic(&out, &buf)?;
            print_table_summary(&table);
        }
        Command::Thresholds { table, out, percentiles, bootstrap: bs, sweep } => {
            let table = read_table(&table)?;
            let (config, method) = bs.resolve();
            match sweep {
                None => {
                    let set = thresholds_for(&table, percentiles.dice_percentile, percentiles.hd_percentile, &config, method)?;
                    write_atomic(&out, serde_json::to_string_pretty(&set.to_json())?.as_bytes())?;
                    println!("thresholds for {} organs written to {}", set.organs.len(), out.display());
                }
                Some(spec) => {
                    let grid = parse_grid(&spec)?;
                    let mut csv = String::from("percentile,organ,dice_threshold,hd_threshold\n");
                    for &p in &grid {
                        let set = thresholds_for(&table, p, p, &config, method)?;
                        for (j, organ) in set.organs.iter().enumerate() {
                            csv.push_str(&format!("{p},{organ},{},{}\n", set.dice[j], set.hd[j]));
                        }
                    }
                    write_atomic(&out, csv.as_bytes())?;
                    println!("threshold sweep over {} percentiles written to {}", grid.len(), out.display());
                }
            }
        }
        Command::Score { table, thresholds, out, pass_fail, percentiles, ci, bootstrap: bs, sweep } => {
            let table = read_table(&table)?;
            let (config, method) = bs.resolve();
            let ci = ci.percentiles();
            match sweep {
                None => {
                    let set = match &thresholds {
                        Some(path) => read_thresholds(path)?,
                        None => thresholds_for(&table, percentiles.dice_percentile, percentiles.hd_percentile, &config, method)?,
                    };
                    let report = mimo::mimo_score(&table, &set, ci, &config, method)?;
                    write_atomic(&out, serde_json::to_string_pretty(&report)?.as_bytes())?;
                    if let Some(pf) = pass_fail {
                        let mut buf = Vec::new();
                        mimo::write_pass_fail_csv(&report, &mut buf)?;
                        write_atomic(&pf, &buf)?;
                    }
                    println!(
                        "score {:.4} ({} of {} sample-organs qualified)",
                        report.score, report.qualified_count, report.total
                    );
                }
                Some(spec) => {
                    if thresholds.is_some() {
                        bail!("--sweep generates thresholds per grid point; drop --thresholds");
                    }
                    let grid = parse_grid(&spec)?;
                    let mut csv = String::from("dice_percentile,hd_percentile,score\n");
                    for &pd in &grid {
                        for &ph in &grid {
                            let set = thresholds_for(&table, pd, ph, &config, method)?;
                            let counts = mimo::mimo_qualified_counts(&table, &set, ci, &config, method)?;
                            let score = counts.iter().sum::<usize>() as f64 / (table.n() * table.m()) as f64;
                            csv.push_str(&format!("{pd},{ph},{score}\n"));
                        }
                    }
                    write_atomic(&out, csv.as_bytes())?;
                    println!("score surface over {}x{} grid written to {}", grid.len(), grid.len(), out.display());
                }
            }
        }
        Command::Ure { table, organ, indicator, requirement, ci, bootstrap: bs } => {
            let table = read_table(&table)?;
            let (config, method) = bs.resolve();
            let j = table
                .organs
                .iter()
                .position(|o| *o == organ)
                .with_context(|| format!("organ '{organ}' not present in table"))?;
            let (col, direction, percentile): (Vec<f64>, Direction, f64) = match indicator.as_str() {
                "dice" => (table.dice.column(j).to_vec(), Direction::HigherBetter, ci.ci_dice),
                _ => (table.hd.column(j).to_vec(), Direction::LowerBetter, ci.ci_hd),
            };
            let fraction = mimo::usable_region(
                &col,
                &table.conf.column(j).to_vec(),
                &table.sample_ids,
                requirement,
                direction,
                percentile,
                &config,
                method,
                j,
            )?;
            println!("usable region for {organ}/{indicator} at requirement {requirement}: {fraction}");
        }
        Command::Compare { tables, out, format, percentiles, ci, bootstrap: bs } => {
            let (config, method) = bs.resolve();
            let ci = ci.percentiles();
            let mut rows = Vec::new();
            for path in &tables {
                let name = model_name(path);
                let table = read_table(path)?;
                let set = thresholds_for(&table, percentiles.dice_percentile, percentiles.hd_percentile, &config, method)?;
                let counts = mimo::mimo_qualified_counts(&table, &set, ci, &config, method)?;
                let score = counts.iter().sum::<usize>() as f64 / (table.n() * table.m()) as f64;
                let cal = calibration::calibration_report(&table, CalibrationLevel::PerSample)?;
                let cells = (table.n() * table.m()) as f64;
                rows.push(LeaderboardRow {
                    model: name,
                    score,
                    ece: cal.ece,
                    mce: cal.mce,
                    mean_dice: table.dice.iter().sum::<f64>() / cells,
                    mean_hd: table.hd.iter().sum::<f64>() / cells,
                });
            }
            rows.sort_by(|a, b| {
                b.score
                    .partial_cmp(&a.score)
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then_with(|| a.model.cmp(&b.model))
            });
            write_atomic(&out, render_leaderboard(&rows, format).as_bytes())?;
            for r in &rows {
                println!("{}\t{:.4}", r.model, r.score);
            }
        }
        Command::Robustness { tables, out, format, trials_inner, trials_outer, split_fraction, percentiles, ci, bootstrap: bs } => {
            let (config, method) = bs.resolve();
            let models: Vec<(String, MetricTable)> = tables
                .iter()
                .map(|p| Ok((model_name(p), read_table(p)?)))
                .collect::<anyhow::Result<_>>()?;
            let params = ScoringParams {
                dice_percentile: percentiles.dice_percentile,
                hd_percentile: percentiles.hd_percentile,
                ci: ci.percentiles(),
                bootstrap: config,
            };
            let rc = RobustnessConfig {
                trials_inner,
                trials_outer,
                seed: config.seed,
                split_fraction,
                ablation: method == BoundMethod::Empirical,
            };
            let report = robustness::robustness_experiment(&models, &params, &rc)?;
            let rendered = match format {
                Format::Csv => {
                    let mut buf = Vec::new();
                    robustness::write_robustness_csv(&report, &mut buf)?;
                    buf
                }
                _ => serde_json::to_string_pretty(&report)?.into_bytes(),
            };
            write_atomic(&out, &rendered)?;
            for row in &report.per_model {
                println!("{}\t{:.2}% (±{:.2})", row.model, row.mean_pct, row.std_pct);
            }
        }
        Command::SynthDataset { out, n, m, side, organ_size, radius, conf_model, offset, seed } => {
            let seed = seed.unwrap_or_else(|| {
                let s: u64 = rand::random();
                eprintln!("seed: {s}");
                s
            });
            let confidence = parse_conf_model(&conf_model, offset);
            let spec = SynthSpec {
                n,
                shape: (side, side, side),
                spacing: [1.0, 1.0, 1.0],
                organ_size,
                organs: (0..m)
                    .map(|_| OrganSpec {
                        perturbation_radius: radius,
                        confidence,
                    })
                    .collect(),
                seed,
            };
            let manifest = synth::generate_dataset(&spec, &out)?;
            println!(
                "wrote {} samples x {} organs under {}",
                manifest.sample_count(),
                manifest.organ_count(),
                out.display()
            );
        }
        Command::SynthTable { out, n, m, dice_mean, dice_spread, hd_mean, hd_spread, conf_model, offset, conf_noise, seed } => {
            let seed = seed.unwrap_or_else(|| {
                let s: u64 = rand::random();
                eprintln!("seed: {s}");
                s
            });
            let confidence = parse_conf_model(&conf_model, offset);
            let organs = vec![
                OrganDistribution {
                    dice_mean,
                    dice_spread,
                    hd_mean,
                    hd_spread,
                    confidence,
                    conf_noise,
                };
                m
            ];
            let table = synth::generate_metric_table(n, &organs, seed)?;
            let mut buf = Vec::new();
            metrics::write_metric_table_csv(&table, &mut buf)?;
            write_atomic(&out, &buf)?;
            println!("wrote {n}x{m} table to {}", out.display());
        }
    }
    Ok(())
}

struct LeaderboardRow {
    model: String,
    score: f64,
    ece: f64,
    mce: f64,
    mean_dice: f64,
    mean_hd: f64,
}

fn render_leaderboard(rows: &[LeaderboardRow], format: Format) -> String {
    match format {
        Format::Csv => {
            let mut s = String::from("rank,model,score,ece,mce,mean_dice,mean_hd\n");
            for (i, r) in rows.iter().enumerate() {
                s.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    i + 1,
                    r.model,
                    r.score,
                    r.ece,
                    r.mce,
                    r.mean_dice,
                    r.mean_hd
                ));
            }
            s
        }
        Format::Md => {
            let mut s = String::from(
                "| Rank | Model | Score | ECE | MCE | Mean Dice | Mean HD |\n|---|---|---|---|---|---|---|\n",
            );
            for (i, r) in rows.iter().enumerate() {
                s.push_str(&format!(
                    "| {} | {} | {:.4} | {:.4} | {:.4} | {:.4} | {:.4} |\n",
                    i + 1,
                    r.model,
                    r.score,
                    r.ece,
                    r.mce,
                    r.mean_dice,
                    r.mean_hd
                ));
            }
            s
        }
        Format::Json => {
            let items: Vec<serde_json::Value> = rows
                .iter()
                .enumerate()
                .map(|(i, r)| {
                    serde_json::json!({
                        "rank": i + 1,
                        "model": r.model,
                        "score": r.score,
                        "ece": r.ece,
                        "mce": r.mce,
                        "mean_dice": r.mean_dice,
                        "mean_hd": r.mean_hd,
                    })
                })
                .collect();
            serde_json::to_string_pretty(&items).expect("leaderboard serializes")
        }
    }
}

fn thresholds_for(
    table: &MetricTable,
    dice_percentile: f64,
    hd_percentile: f64,
    config: &BootstrapConfig,
    method: BoundMethod,
) -> anyhow::Result<ThresholdSet> {
    Ok(match method {
        BoundMethod::Bootstrap => {
            bootstrap::generate_thresholds(table, dice_percentile, hd_percentile, config)?
        }
        BoundMethod::Empirical => {
            bootstrap::generate_thresholds_empirical(table, dice_percentile, hd_percentile, config)?
        }
    })
}

fn read_table(path: &Path) -> anyhow::Result<MetricTable> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(metrics::read_metric_table_csv(
        BufReader::new(file),
        &path.display().to_string(),
    )?)
}

fn read_thresholds(path: &Path) -> anyhow::Result<ThresholdSet> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    Ok(ThresholdSet::from_json(&value)?)
}

fn model_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn parse_conf_model(name: &str, offset: f64) -> ConfidenceModel {
    match name {
        "overconfident" => ConfidenceModel::Overconfident { offset },
        "underconfident" => ConfidenceModel::Underconfident { offset },
        _ => ConfidenceModel::Calibrated,
    }
}

fn parse_grid(spec: &str) -> anyhow::Result<Vec<f64>> {
    let grid: Vec<f64> = spec
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .context("sweep grid must be comma-separated percentiles")?;
    if grid.is_empty() {
        bail!("empty sweep grid");
    }
    Ok(grid)
}

fn print_table_summary(table: &MetricTable) {
    println!("{} samples x {} organs", table.n(), table.m());
    for (j, organ) in table.organs.iter().enumerate() {
        let n = table.n() as f64;
        let mean_dice = table.dice.column(j).sum() / n;
        let mean_hd = table.hd.column(j).iter().sum::<f64>() / n;
        println!("  {organ}: mean dice {mean_dice:.4}, mean hd {mean_hd:.4}");
    }
}

/// Writes via a sibling temp file and rename, so partial output never
/// lands under the target name.
fn write_atomic(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = dir {
        std::fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("tmp~");
    std::fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    std::fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}
