//! Command-line frontend for the map-geometry toolkit.
//!
//! Every command is deterministic: identical inputs (including seeds) produce
//! byte-identical outputs, so runs can be diffed and scripted. Exit codes:
//! 0 on success, 1 on usage or input errors, 2 when a computation failed
//! numerically (non-finite values).

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use mapgeom::attention::{AttentionMask, TokenLayout};
use mapgeom::evaluation::{map_score, EvalConfig};
use mapgeom::fit::{fit, gradcheck, FitConfig, GradCheckConfig};
use mapgeom::io::{map_from_json, map_to_json};
use mapgeom::losses::total_loss;
use mapgeom::matching::hungarian_match;
use mapgeom::render::render_svg;
use mapgeom::synth::{generate, perturb, ScenarioConfig, ScenarioKind};
use mapgeom::{LossWeightsF64, VectorMapF64};

#[derive(Parser)]
#[command(
    name = "mapgeom",
    version,
    about = "Deterministic geometry toolkit for vectorized road maps",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic map with exact geometric structure.
    Generate {
        /// Scene motif: parallel_lanes, crossing, rectangle, or mixed.
        #[arg(long, default_value = "parallel_lanes", value_parser = parse_kind)]
        kind: ScenarioKind,
        /// Number of instances.
        #[arg(long, default_value_t = 4)]
        instances: usize,
        /// Points per instance.
        #[arg(long, default_value_t = 8)]
        points: usize,
        /// Normalized gap between adjacent lanes.
        #[arg(long, default_value_t = 0.12)]
        lane_gap: f64,
        /// Nominal noise level recorded for downstream perturbation; the
        /// generated map itself is exact.
        #[arg(long, default_value_t = 0.02)]
        noise_sigma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output path (stdout when omitted).
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Add seeded Gaussian noise to every coordinate of a map.
    Perturb {
        /// Input map (JSON).
        input: PathBuf,
        /// Standard deviation of the per-coordinate noise.
        #[arg(long)]
        sigma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Match predicted instances to ground truth (order-agnostic Hungarian).
    Match {
        /// Predicted map (JSON).
        pred: PathBuf,
        /// Ground-truth map (JSON).
        gt: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Evaluate the composite loss of a prediction against ground truth.
    Loss {
        pred: PathBuf,
        gt: PathBuf,
        /// Loss-weight overrides (JSON; missing fields keep their defaults).
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Check analytic gradients against central differences of the loss.
    Gradcheck {
        pred: PathBuf,
        gt: PathBuf,
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Half-step of the central difference.
        #[arg(long, default_value_t = 1e-6)]
        fd_step: f64,
        /// Maximum allowed relative error.
        #[arg(long, default_value_t = 1e-5)]
        rel_tol: f64,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Fit a map toward ground truth by gradient descent.
    Fit {
        /// Initial map to optimize (JSON).
        init: PathBuf,
        /// Ground-truth map (JSON).
        gt: PathBuf,
        #[arg(long, default_value_t = 500)]
        iterations: usize,
        #[arg(long, default_value_t = 2e-4)]
        step_size: f64,
        /// Recompute the matching every N iterations (0 = match once).
        #[arg(long, default_value_t = 10)]
        rematch_every: usize,
        /// Record a trace row every N iterations.
        #[arg(long, default_value_t = 10)]
        record_every: usize,
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Write the loss/mAP trajectory as CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Output path of the fitted map (stdout when omitted).
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Score a predicted map against ground truth (Chamfer AP).
    Eval {
        pred: PathBuf,
        gt: PathBuf,
        /// Arc-length samples per polyline.
        #[arg(long, default_value_t = 100)]
        samples: usize,
        /// Distance thresholds in meters (comma separated).
        #[arg(long, value_delimiter = ',', default_values_t = [0.5, 1.0, 1.5])]
        thresholds: Vec<f64>,
        /// Fill in this confidence score for predictions that lack one
        /// (without it, score-less predictions are an error).
        #[arg(long)]
        default_score: Option<f64>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Print the geometry-decoupled attention masks for a token layout.
    Masks {
        /// Number of instances.
        #[arg(long)]
        instances: usize,
        /// Points per instance.
        #[arg(long)]
        points: usize,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Render a map as deterministic SVG.
    Render {
        input: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

fn parse_kind(s: &str) -> std::result::Result<ScenarioKind, mapgeom::Error> {
    ScenarioKind::from_str(s)
}

fn read_map(path: &Path) -> Result<VectorMapF64> {
    let json =
        fs::read_to_string(path).with_context(|| format!("reading map from {}", path.display()))?;
    map_from_json(&json).with_context(|| format!("parsing map {}", path.display()))
}

fn read_weights(path: Option<&PathBuf>) -> Result<LossWeightsF64> {
    let w: LossWeightsF64 = match path {
        None => LossWeightsF64::default(),
        Some(p) => {
            let json = fs::read_to_string(p)
                .with_context(|| format!("reading weights from {}", p.display()))?;
            serde_json::from_str(&json)
                .with_context(|| format!("parsing weights {}", p.display()))?
        }
    };
    w.validate()?;
    Ok(w)
}

fn write_output(path: Option<&PathBuf>, content: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, content).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

fn json_line<T: serde::Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

fn run() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::Generate {
            kind,
            instances,
            points,
            lane_gap,
            noise_sigma,
            seed,
            output,
        } => {
            let config = ScenarioConfig {
                kind,
                n_instances: instances,
                n_points: points,
                lane_gap,
                noise_sigma,
                seed,
            };
            let map = generate::<f64>(&config)?;
            write_output(output.as_ref(), &map_to_json(&map))
        }
        Cmd::Perturb {
            input,
            sigma,
            seed,
            output,
        } => {
            let map = read_map(&input)?;
            let noisy = perturb(&map, sigma, seed)?;
            write_output(output.as_ref(), &map_to_json(&noisy))
        }
        Cmd::Match { pred, gt, output } => {
            let pred = read_map(&pred)?;
            let gt = read_map(&gt)?;
            let result = hungarian_match(&pred, &gt)?;
            let payload = serde_json::json!({
                "pairs": result.pairs,
                "unmatched_preds": result.unmatched_preds,
                "total_cost": result.total_cost(),
            });
            write_output(output.as_ref(), &json_line(&payload)?)
        }
        Cmd::Loss {
            pred,
            gt,
            weights,
            output,
        } => {
            let pred = read_map(&pred)?;
            let gt = read_map(&gt)?;
            let w = read_weights(weights.as_ref())?;
            let m = hungarian_match(&pred, &gt)?;
            let breakdown = total_loss(&pred, &gt, &m, &w)?;
            write_output(output.as_ref(), &json_line(&breakdown)?)
        }
        Cmd::Gradcheck {
            pred,
            gt,
            weights,
            fd_step,
            rel_tol,
            output,
        } => {
            let pred = read_map(&pred)?;
            let gt = read_map(&gt)?;
            let w = read_weights(weights.as_ref())?;
            let config = GradCheckConfig {
                step: fd_step,
                rel_tol,
                ..GradCheckConfig::default()
            };
            let report = gradcheck(&pred, &gt, &w, &config)?;
            let passed = report.passed();
            let n_failures = report.failures.len();
            write_output(output.as_ref(), &json_line(&report)?)?;
            if !passed {
                bail!("gradient check failed at {n_failures} coordinates");
            }
            Ok(())
        }
        Cmd::Fit {
            init,
            gt,
            iterations,
            step_size,
            rematch_every,
            record_every,
            weights,
            trace,
            output,
        } => {
            let init = read_map(&init)?;
            let gt = read_map(&gt)?;
            let config = FitConfig {
                iterations,
                step_size,
                weights: read_weights(weights.as_ref())?,
                rematch_every,
                record_every,
                ..FitConfig::default()
            };
            let run = fit(&init, &gt, &config)?;
            if let Some(trace_path) = &trace {
                fs::write(trace_path, run.trace.to_csv())
                    .with_context(|| format!("writing trace {}", trace_path.display()))?;
            }
            write_output(output.as_ref(), &map_to_json(&run.final_map))?;
            if let (Some(first), Some(last)) = (run.trace.rows.first(), run.trace.rows.last()) {
                eprintln!(
                    "fit: total {} -> {}, mAP {} -> {}",
                    first.total, last.total, first.m_ap, last.m_ap
                );
            }
            if let Some(iter) = run.aborted_at {
                return Err(mapgeom::Error::NumericalFailure {
                    context: format!("fit aborted at iteration {iter}"),
                }
                .into());
            }
            Ok(())
        }
        Cmd::Eval {
            pred,
            gt,
            samples,
            thresholds,
            default_score,
            output,
        } => {
            let mut pred = read_map(&pred)?;
            if let Some(score) = default_score {
                pred = pred.with_default_scores(score)?;
            }
            let gt = read_map(&gt)?;
            let config = EvalConfig {
                n_samples: samples,
                thresholds_m: thresholds,
            };
            let result = map_score(&pred, &gt, &config)?;
            let per_class: serde_json::Map<String, serde_json::Value> = result
                .per_class
                .iter()
                .map(|(cat, cells)| {
                    let rows: Vec<_> = cells
                        .iter()
                        .map(|(thr, ap)| serde_json::json!({"threshold_m": thr, "ap": ap}))
                        .collect();
                    (cat.name().to_string(), serde_json::Value::Array(rows))
                })
                .collect();
            let payload = serde_json::json!({
                "per_class": per_class,
                "m_ap": result.m_ap,
            });
            write_output(output.as_ref(), &json_line(&payload)?)
        }
        Cmd::Masks {
            instances,
            points,
            output,
        } => {
            let layout = TokenLayout::new(instances, points)?;
            let shape = AttentionMask::shape_mask(layout);
            let relation = AttentionMask::relation_mask(layout);
            let rows = |mask: &AttentionMask| -> Vec<String> {
                (0..mask.num_tokens())
                    .map(|i| {
                        (0..mask.num_tokens())
                            .map(|j| if mask.is_allowed(i, j) { '1' } else { '0' })
                            .collect()
                    })
                    .collect()
            };
            let payload = serde_json::json!({
                "num_tokens": layout.num_tokens(),
                "points_per_instance": points,
                "shape": rows(&shape),
                "relation": rows(&relation),
            });
            write_output(output.as_ref(), &json_line(&payload)?)
        }
        Cmd::Render { input, output } => {
            let map = read_map(&input)?;
            write_output(output.as_ref(), &render_svg(&map))
        }
    }
}

fn main() {
    match run() {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e:#}");
            let numerical = e
                .downcast_ref::<mapgeom::Error>()
                .map(mapgeom::Error::is_numerical)
                .unwrap_or(false);
            std::process::exit(if numerical { 2 } else { 1 });
        }
    }
}
