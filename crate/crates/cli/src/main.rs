use std::fs;
use std::path::Path;
use std::process::ExitCode;

use clap::Parser;
use serde::Serialize;
use synthcolon::dataset::{build_dataset, calibrate, dataset_stats, read_manifest, DatasetError};
use synthcolon::image::encode_rgb_png;
use synthcolon::losses::{check_all_losses, LOSS_NAMES};
use synthcolon::metrics::{evaluate_dataset, GroundTruth, MetricsError};
use synthcolon::toy::{ablation_dataset_size, single_reference_protocol, train_with_snapshots, ToyError};
use synthcolon_cli::{resolve, resolve_settings, write_run_json, Cli, Command, ConfigError, RunRecord, Settings};

/// Failure classes, each with its own exit code.
enum Failure {
    Usage(String),
    Data(String),
    Numerical(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Data(_) => 3,
            Failure::Numerical(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Numerical(m) => m,
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Usage(e.to_string())
    }
}

impl From<DatasetError> for Failure {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::InvalidConfig(m) => Failure::Usage(m),
            e => Failure::Data(e.to_string()),
        }
    }
}

impl From<MetricsError> for Failure {
    fn from(e: MetricsError) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Data(format!("i/o error: {e}"))
    }
}

impl From<ToyError> for Failure {
    fn from(e: ToyError) -> Self {
        match e {
            ToyError::InvalidConfig(m) => Failure::Usage(m),
            ToyError::NonFinite(_) => Failure::Numerical(e.to_string()),
            ToyError::Tensor(t) => Failure::Numerical(t.to_string()),
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Failure::Data(e.to_string()))?;
    bytes.push(b'\n');
    fs::write(path, bytes)?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Failure {
    Failure::Data(e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let (command, settings) = match &cli.command {
        Command::Rerun { run_json } => {
            let text = fs::read_to_string(run_json).map_err(|e| Failure::Usage(format!("{}: {e}", run_json.display())))?;
            let rec: RunRecord =
                serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("{}: {e}", run_json.display())))?;
            if rec.command == "rerun" {
                return Err(Failure::Usage("run.json records a rerun".into()));
            }
            let value = serde_json::to_value(&rec.settings).map_err(|e| Failure::Usage(e.to_string()))?;
            (rec.command, resolve_settings(Some(value), serde_json::json!({}))?)
        }
        other => (other.name().to_string(), resolve(&cli)?),
    };
    if let Some(j) = cli.jobs.or(settings.jobs) {
        rayon::ThreadPoolBuilder::new().num_threads(j).build_global().map_err(|e| Failure::Usage(e.to_string()))?;
    }
    log::info!("{command}: output in {}", settings.out.display());
    execute(&command, &settings)
}

fn execute(command: &str, s: &Settings) -> Result<(), Failure> {
    let out = &s.out;
    fs::create_dir_all(out)?;
    match command {
        "generate" => {
            let mut cfg = s.dataset.clone();
            cfg.output_dir = out.clone();
            write_run_json(out, command, s)?;
            let (_, stats) = build_dataset(&cfg)?;
            println!("{}", serde_json::to_string(&stats).expect("stats serialize"));
        }
        "stats" => {
            let dataset = s.stats.dataset.as_ref().ok_or_else(|| Failure::Usage("stats needs --dataset".into()))?;
            let manifest = if dataset.is_dir() { dataset.join("manifest.jsonl") } else { dataset.clone() };
            let (header, records) = read_manifest(&manifest)?;
            let mut stats = dataset_stats(&records);
            stats.attempts = header.attempts;
            stats.rejected = header.attempts.saturating_sub(records.len() as u64);
            write_run_json(out, command, s)?;
            write_json(&out.join("stats.json"), &stats)?;
            println!("{}", serde_json::to_string(&stats).expect("stats serialize"));
        }
        "calibrate" => {
            let c = &s.calibration;
            write_run_json(out, command, s)?;
            let result = calibrate(&s.dataset, c.target_mean, c.samples, c.resolution, c.iterations)?;
            write_json(&out.join("calibration.json"), &result)?;
            println!(
                "radius range ({:.4}, {:.4}) gives mean area {:.4} (target {})",
                result.radius_range.0, result.radius_range.1, result.mean, result.target_mean
            );
        }
        "evaluate" => {
            let e = &s.evaluate;
            let pred = e.predictions.as_ref().ok_or_else(|| Failure::Usage("evaluate needs --pred".into()))?;
            let gt = e.ground_truth.as_ref().ok_or_else(|| Failure::Usage("evaluate needs --gt".into()))?;
            let gt = if gt.is_dir() { GroundTruth::Directory(gt.clone()) } else { GroundTruth::Manifest(gt.clone()) };
            write_run_json(out, command, s)?;
            let report = evaluate_dataset(pred, &gt, e.threshold)?;
            report.write_csv(fs::File::create(out.join("eval.csv"))?)?;
            write_json(&out.join("eval.json"), &report)?;
            if !report.missing.is_empty() {
                log::warn!("{} ground-truth masks have no prediction", report.missing.len());
            }
            match (report.mean_dice, report.mean_iou) {
                (Some(d), Some(i)) => println!("mDice {d:.6} mIoU {i:.6} over {} images", report.evaluated),
                _ => return Err(Failure::Data("no prediction matched a ground-truth mask".into())),
            }
        }
        "gradcheck" => {
            let g = &s.gradcheck;
            write_run_json(out, command, s)?;
            let mut worst = vec![0.0f64; LOSS_NAMES.len()];
            let mut all = Vec::new();
            for seed in s.seed..s.seed + g.seeds {
                let checks = check_all_losses(seed, g.epsilon).map_err(|e| Failure::Numerical(e.to_string()))?;
                for (w, c) in worst.iter_mut().zip(&checks) {
                    *w = w.max(c.report.max_rel_error);
                }
                all.push((seed, checks));
            }
            write_json(&out.join("gradcheck.json"), &all)?;
            let mut failed = Vec::new();
            for (name, w) in LOSS_NAMES.iter().zip(&worst) {
                let ok = *w < g.tolerance;
                println!("{name}: max relative error {w:.3e} {}", if ok { "ok" } else { "FAILED" });
                if !ok {
                    failed.push(*name);
                }
            }
            if !failed.is_empty() {
                return Err(Failure::Numerical(format!("gradient check failed for {}", failed.join(", "))));
            }
        }
        "train-toy" => {
            write_run_json(out, command, s)?;
            let snapshots = out.join("snapshots");
            let every = s.train_toy.snapshot_every;
            if every > 0 {
                fs::create_dir_all(&snapshots)?;
            }
            let mut io_error = None;
            let result = train_with_snapshots(&s.toy, every, &mut |step, img| {
                let written = encode_rgb_png(&img.to_rgb())
                    .map_err(std::io::Error::other)
                    .and_then(|png| fs::write(snapshots.join(format!("step_{step:06}.png")), png));
                if let Err(e) = written {
                    io_error.get_or_insert(e);
                }
            });
            if let Some(e) = io_error {
                return Err(e.into());
            }
            let report = match result {
                Err(ToyError::NonFinite(dump)) => {
                    write_json(&out.join("dump.json"), &dump)?;
                    return Err(Failure::Numerical(format!(
                        "non-finite loss at step {}; state written to dump.json",
                        dump.step
                    )));
                }
                r => r?,
            };
            write_json(&out.join("report.json"), &report)?;
            report.write_losses_csv(fs::File::create(out.join("losses.csv"))?).map_err(csv_err)?;
            write_json(&out.join("timing.json"), &serde_json::json!({ "wall_clock_seconds": report.wall_clock_seconds }))?;
            println!(
                "validation mDice {:.4} (untrained {:.4}), mIoU {:.4}, {:.1}s",
                report.final_mdice, report.baseline_mdice, report.final_miou, report.wall_clock_seconds
            );
            if s.train_toy.repeats > 0 {
                let protocol = single_reference_protocol(&s.toy, 0, s.train_toy.repeats)?;
                write_json(&out.join("single_reference.json"), &protocol)?;
                println!(
                    "single reference over {} images: mDice mean {:.4} std {:.4}",
                    protocol.runs.len(),
                    protocol.mean_mdice,
                    protocol.std_mdice
                );
            }
        }
        "ablate" => {
            let a = &s.ablation;
            write_run_json(out, command, s)?;
            let report = ablation_dataset_size(&s.toy, &a.sizes, a.seeds)?;
            report.write_csv(fs::File::create(out.join("ablation.csv"))?).map_err(csv_err)?;
            write_json(&out.join("ablation.json"), &report)?;
            for r in &report.rows {
                println!("size {:>6}: mDice {:.4} +- {:.4}", r.size, r.mean_mdice, r.std_mdice);
            }
        }
        other => return Err(Failure::Usage(format!("unknown command {other:?}"))),
    }
    Ok(())
}
