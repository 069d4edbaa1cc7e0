use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use chrono::FixedOffset;
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use densim::aggregation::{self, LoadMode};
use densim::calibration::{self, ImageSet, MatchParams};
use densim::experiment::{self, SimConfig, SweepSpec};
use densim::sensing::read_phi_csv;
use densim::theory::{self, TheoryParams};

#[derive(Parser)]
#[command(name = "densim", version, about = "Density estimation from imperfect mobile sensors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one seeded simulation.
    Simulate {
        /// JSON configuration file.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the configuration seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sweep the sensing parameters over a (p, lambda) grid.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
        p: Vec<f64>,
        #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
        lambda: Vec<f64>,
        #[arg(long, default_value_t = 5)]
        runs: usize,
        /// Root seed; defaults to the configuration seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads (0 = all cores). Does not affect results.
        #[arg(long, default_value_t = 0)]
        threads: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate the closed-form error and bounds.
    Theory(TheoryArgs),
    /// Evaluate detections against ground truth.
    Evaluate {
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        ground_truth: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        iou: f64,
        #[arg(long, default_value_t = 120.0)]
        min_height: f64,
        #[arg(long, default_value_t = 0.7)]
        score_min: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit p and lambda from per-image counts.
    Calibrate {
        /// CSV of `true_count,measured_count`.
        #[arg(long, conflicts_with_all = ["detections", "ground_truth"])]
        pairs: Option<PathBuf>,
        #[arg(long, requires = "ground_truth")]
        detections: Option<PathBuf>,
        #[arg(long, requires = "detections")]
        ground_truth: Option<PathBuf>,
        #[arg(long, default_value_t = 120.0)]
        min_height: f64,
        #[arg(long, default_value_t = 0.7)]
        score_min: f64,
        /// Mean sensed density; defaults to the mean measured count.
        #[arg(long)]
        h_hat: Option<f64>,
    },
    /// Assign geotagged counts to street segments.
    Aggregate {
        #[arg(long)]
        records: PathBuf,
        /// GeoJSON (`.geojson`/`.json`) or CSV segments.
        #[arg(long)]
        segments: PathBuf,
        #[arg(long, default_value_t = aggregation::DEFAULT_SPACING_M)]
        spacing: f64,
        #[arg(long, default_value_t = aggregation::DEFAULT_MAX_DISTANCE_M)]
        max_distance: f64,
        /// Hours east of UTC used for the temporal histograms.
        #[arg(long, default_value_t = 0, allow_hyphen_values = true)]
        utc_offset_hours: i32,
        /// Skip invalid record rows instead of failing.
        #[arg(long)]
        lenient: bool,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct TheoryArgs {
    #[arg(long)]
    p: f64,
    #[arg(long)]
    lambda: f64,
    /// Mean true density.
    #[arg(long, required_unless_present = "phi")]
    h: Option<f64>,
    /// Shape parameter.
    #[arg(long, required_unless_present = "phi")]
    c: Option<f64>,
    /// Snapshot CSV whose `phi` column supplies h and c.
    #[arg(long, conflicts_with_all = ["h", "c"])]
    phi: Option<PathBuf>,
    /// Mean sensed density for the sampled-density bound.
    #[arg(long)]
    h_hat: Option<f64>,
}

fn open(path: &Path) -> anyhow::Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).with_context(|| format!("opening {}", path.display()))?,
    ))
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn load_config(path: Option<&Path>) -> anyhow::Result<SimConfig> {
    match path {
        Some(p) => SimConfig::load(p).with_context(|| format!("loading {}", p.display())),
        None => Ok(SimConfig::default()),
    }
}

fn write_json(path: &Path, value: &serde_json::Value) -> anyhow::Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Simulate { config, seed, out } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let result = experiment::run_simulation(&cfg)?;
            experiment::write_simulation_outputs(&cfg, &result, &out)?;
            let asym = experiment::asymptotic_error(&result.series, cfg.tail)?;
            log::info!("asymptotic error {asym:.6}; outputs in {}", out.display());
        }
        Command::Sweep {
            config,
            p,
            lambda,
            runs,
            seed,
            threads,
            out,
        } => {
            let cfg = load_config(config.as_deref())?;
            let spec = SweepSpec {
                p_values: p,
                lambda_values: lambda,
                runs,
                seed_root: seed.unwrap_or(cfg.seed),
            };
            let world = cfg.world.build()?;
            let table = experiment::sweep(&world, &cfg, &spec, threads)?;
            let Some(phi) = table.representative_phi() else {
                bail!("every sweep cell failed");
            };
            let report = experiment::compare_to_theory(&table, phi)?;
            experiment::write_sweep_outputs(&cfg, &spec, &table, &report, &out)?;
            for cell in &report.cells {
                if cell.exceeds_bound_loose {
                    log::warn!(
                        "p={} lambda={}: measured {:?} exceeds loose bound {:?}",
                        cell.p,
                        cell.lambda,
                        cell.measured,
                        cell.prediction.bound_loose
                    );
                }
            }
        }
        Command::Theory(args) => {
            let params = match &args.phi {
                Some(path) => TheoryParams::from_phi(args.p, args.lambda, &read_phi_csv(open(path)?)?)?,
                None => TheoryParams::new(
                    args.p,
                    args.lambda,
                    args.h.expect("required by clap"),
                    args.c.expect("required by clap"),
                )?,
            };
            let mut doc = json!({
                "p": params.p,
                "lambda": params.lambda,
                "h": params.h,
                "c": params.c,
                "closed_form": params.closed_form_error()?,
                "bound_tight": params.bound_tight()?,
                "bound_loose": params.bound_loose()?,
            });
            if let Some(h_hat) = args.h_hat {
                doc["h_hat"] = json!(h_hat);
                doc["unbiased_h"] = json!(theory::unbiased_h(h_hat, args.p, args.lambda)?);
                doc["bound_from_sampled_density"] =
                    json!(theory::bound_from_sampled_density(args.lambda, h_hat).ok());
            }
            println!("{}", serde_json::to_string_pretty(&doc)?);
        }
        Command::Evaluate {
            detections,
            ground_truth,
            iou,
            min_height,
            score_min,
            out,
        } => {
            let images = ImageSet {
                detections: calibration::read_detections(open(&detections)?)?,
                ground_truth: calibration::read_ground_truth(open(&ground_truth)?)?,
            };
            let params = MatchParams {
                iou_min: iou,
                min_height,
                score_min,
            };
            let counts = images.evaluate(&params);
            let curve =
                calibration::pr_curve(&images, &calibration::default_thresholds(), iou, min_height)?;
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            calibration::write_pr_csv(&curve, create(&out.join("pr.csv"))?)?;
            write_json(
                &out.join("report.json"),
                &json!({
                    "params": params,
                    "images": images.image_ids().len(),
                    "true_positives": counts.tp,
                    "false_positives": counts.fp,
                    "false_negatives": counts.fn_,
                    "precision": counts.precision(),
                    "recall": counts.recall(),
                    "pr_curve": curve,
                }),
            )?;
        }
        Command::Calibrate {
            pairs,
            detections,
            ground_truth,
            min_height,
            score_min,
            h_hat,
        } => {
            let pairs = match (pairs, detections, ground_truth) {
                (Some(p), _, _) => calibration::read_count_pairs(open(&p)?)?,
                (None, Some(d), Some(g)) => {
                    let images = ImageSet {
                        detections: calibration::read_detections(open(&d)?)?,
                        ground_truth: calibration::read_ground_truth(open(&g)?)?,
                    };
                    let params = MatchParams {
                        min_height,
                        score_min,
                        ..MatchParams::default()
                    };
                    calibration::count_pairs(&images, &params)
                }
                _ => bail!("pass --pairs or both --detections and --ground-truth"),
            };
            let fit = calibration::fit_sensing_params(&pairs)?;
            let h_hat = h_hat.unwrap_or_else(|| {
                pairs.iter().map(|&(_, m)| m).sum::<f64>() / pairs.len() as f64
            });
            let report = calibration::calibration_report(&fit, h_hat);
            if !report.bound_informative {
                log::warn!("h_hat {h_hat} does not exceed lambda {}; bound is uninformative", fit.lambda);
            }
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Aggregate {
            records,
            segments,
            spacing,
            max_distance,
            utc_offset_hours,
            lenient,
            out,
        } => {
            let mode = if lenient { LoadMode::Lenient } else { LoadMode::Strict };
            let loaded = aggregation::load_records(open(&records)?, mode)
                .with_context(|| format!("reading {}", records.display()))?;
            for r in &loaded.rejected {
                log::warn!("{}:{}: {}", records.display(), r.line, r.reason);
            }
            let is_geojson = matches!(
                segments.extension().and_then(|e| e.to_str()),
                Some("geojson" | "json")
            );
            let segs = if is_geojson {
                aggregation::read_segments_geojson(open(&segments)?)?
            } else {
                aggregation::read_segments_csv(open(&segments)?)?
            };
            let offset = FixedOffset::east_opt(utc_offset_hours * 3600)
                .context("UTC offset out of range")?;

            let index = aggregation::SegmentIndex::build(&segs, spacing)?;
            let agg = aggregation::aggregate(&loaded.records, &index, max_distance);
            let hist = aggregation::temporal_histograms(&loaded.records, offset);

            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            aggregation::write_heatmap_geojson(&agg.stats, &segs, create(&out.join("heatmap.geojson"))?)?;
            aggregation::write_stats_csv(&agg.stats, create(&out.join("segments.csv"))?)?;
            aggregation::write_temporal_csv(&hist, create(&out.join("temporal.csv"))?)?;
            write_json(
                &out.join("report.json"),
                &json!({
                    "records": loaded.records.len(),
                    "rejected_rows": loaded.rejected,
                    "segments": segs.len(),
                    "sample_points": index.sample_points().len(),
                    "projection_origin": [index.projection().lon0, index.projection().lat0],
                    "spacing_m": spacing,
                    "max_distance_m": max_distance,
                    "assigned": loaded.records.len() - agg.dropped.len(),
                    "dropped": agg.dropped,
                    "segments_with_records": agg.stats.len(),
                    "temporal": hist,
                }),
            )?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
