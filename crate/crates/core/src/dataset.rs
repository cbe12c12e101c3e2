//! Dataset generation: scene sampling, rendering, the polyp-area filter and
//! the on-disk manifest.

use std::collections::VecDeque;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::{
    assemble_scene, generate_colon, generate_polyp, GeometryError, Placement, PlacementOptions, PolypSpec,
    Scene, ColonSpec,
};
use crate::image::{encode_gray16_png, encode_mask_png, encode_rgb_png, ImageError, Mask};
use crate::render::{export_obj, jitter_material, rasterize, render_from_buffer, Camera, LightRig, Material, RenderError, RenderOptions};
use crate::seed;

pub const MANIFEST_FORMAT: &str = "synthcolon-manifest";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("invalid dataset config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed manifest: {0}")]
    Manifest(String),
    #[error("{failures} of the last {window} attempts failed polyp placement; the polyp radius range is too large for the colon")]
    PlacementRate { failures: usize, window: usize },
    #[error("gave up after {attempts} attempts with {retained} samples retained; the area filter rejects nearly everything")]
    TooManyAttempts { attempts: u64, retained: usize },
}

/// Everything that determines a dataset. The output directory is not part
/// of the serialized form so that manifests do not depend on where they
/// were written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub sample_count: usize,
    pub resolution: (usize, usize),
    pub master_seed: u64,
    #[serde(skip)]
    pub output_dir: PathBuf,
    /// Polyp base radius is drawn uniformly from this range per sample.
    pub polyp_radius_range: (f64, f64),
    /// Probability that a polyp sits on the wall rather than in the lumen.
    pub wall_probability: f64,
    pub min_area_fraction: f64,
    pub colon: ColonSpec,
    pub polyp: PolypSpec,
    pub placement: PlacementOptions,
    pub lights: LightRig,
    pub material: Material,
    pub supersample: bool,
    /// Sliding window over which the placement-failure rate is checked.
    pub failure_window: usize,
}

/// Polyp radius range found by `calibrate` for a 5.87% mean polyp area.
pub const DEFAULT_RADIUS_RANGE: (f64, f64) = (0.307, 0.676);

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            sample_count: 20000,
            resolution: (500, 500),
            master_seed: 0,
            output_dir: PathBuf::from("synth-colon"),
            polyp_radius_range: DEFAULT_RADIUS_RANGE,
            wall_probability: 0.8,
            min_area_fraction: 0.026,
            colon: ColonSpec::default(),
            polyp: PolypSpec::default(),
            placement: PlacementOptions::default(),
            lights: LightRig::default(),
            material: Material::default(),
            supersample: false,
            failure_window: 20,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<(), DatasetError> {
        let bad = |m: String| Err(DatasetError::InvalidConfig(m));
        let (w, h) = self.resolution;
        if w < 16 || h < 16 {
            return bad(format!("resolution {w}x{h} is below 16x16"));
        }
        let (lo, hi) = self.polyp_radius_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return bad(format!("polyp radius range ({lo}, {hi}) must satisfy 0 < lo <= hi"));
        }
        if !(0.0..=1.0).contains(&self.wall_probability) {
            return bad(format!("wall probability {} outside [0, 1]", self.wall_probability));
        }
        if !(0.0..1.0).contains(&self.min_area_fraction) {
            return bad(format!("minimum area fraction {} outside [0, 1)", self.min_area_fraction));
        }
        if self.failure_window == 0 {
            return bad("failure window must be positive".into());
        }
        self.colon.validate()?;
        Ok(())
    }

    fn render_options(&self) -> RenderOptions {
        RenderOptions { width: self.resolution.0, height: self.resolution.1, supersample: self.supersample }
    }
}

/// One retained sample as listed in the manifest. Paths are relative to the
/// dataset root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: usize,
    pub seed: u64,
    pub attempt: u64,
    pub image: String,
    pub mask: String,
    pub depth: String,
    pub mesh: String,
    /// Slot for a translated, realistic-looking version of the image.
    pub realistic_image: Option<String>,
    pub polyp_area_fraction: f64,
    pub placement: Placement,
    pub polyp_radius: f64,
    pub base_color_used: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_width: f64,
    /// The last bin also collects everything above the covered range.
    pub counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub attempts: u64,
    pub retained: usize,
    /// Undersized renders plus placement failures.
    pub rejected: u64,
    pub rejected_small: u64,
    pub placement_failures: u64,
    /// `None` when nothing was retained.
    pub mean: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
    pub histogram: Histogram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub format: String,
    pub version: u32,
    pub sample_count: usize,
    pub master_seed: u64,
    pub attempts: u64,
    pub config: DatasetConfig,
}

/// Foreground pixels over all pixels.
pub fn polyp_area_fraction(mask: &Mask) -> f64 {
    if mask.is_empty() {
        return 0.0;
    }
    mask.foreground_count() as f64 / mask.len() as f64
}

const HIST_BINS: usize = 30;
const HIST_WIDTH: f64 = 0.01;

/// Aggregates over the records. Attempt counts are not recoverable from the
/// records alone, so `attempts` equals `retained` here.
pub fn dataset_stats(records: &[SampleRecord]) -> DatasetStats {
    let fractions: Vec<f64> = records.iter().map(|r| r.polyp_area_fraction).collect();
    let mut counts = vec![0; HIST_BINS];
    for &f in &fractions {
        counts[((f / HIST_WIDTH) as usize).min(HIST_BINS - 1)] += 1;
    }
    let n = fractions.len();
    DatasetStats {
        attempts: n as u64,
        retained: n,
        rejected: 0,
        rejected_small: 0,
        placement_failures: 0,
        mean: (n > 0).then(|| fractions.iter().sum::<f64>() / n as f64),
        min: fractions.iter().cloned().reduce(f64::min),
        max: fractions.iter().cloned().reduce(f64::max),
        histogram: Histogram { bin_width: HIST_WIDTH, counts },
    }
}

/// Scene drawn for one sample seed, before rendering.
pub struct SampledScene {
    pub scene: Scene,
    pub polyp_radius: f64,
}

/// Deterministic scene for `sample_seed`: colon, polyp size and placement.
pub fn sample_scene(config: &DatasetConfig, sample_seed: u64) -> Result<SampledScene, GeometryError> {
    let mut rng = seed::stream_rng(sample_seed, seed::Stream::Sample);
    let (lo, hi) = config.polyp_radius_range;
    let radius = if hi > lo { rng.random_range(lo..hi) } else { lo };
    let placement = if rng.random::<f64>() < config.wall_probability { Placement::Wall } else { Placement::Lumen };
    let colon = generate_colon(&config.colon, sample_seed)?;
    let spec = PolypSpec { base_radius: radius, placement, ..config.polyp.clone() };
    let polyp = generate_polyp(&spec, sample_seed)?;
    let scene = assemble_scene(&colon, &polyp, placement, sample_seed, &config.placement)?;
    Ok(SampledScene { scene, polyp_radius: radius })
}

/// Encoded files of one retained sample.
pub struct RenderedSample {
    pub seed: u64,
    pub attempt: u64,
    pub fraction: f64,
    pub placement: Placement,
    pub polyp_radius: f64,
    pub base_color: [f64; 3],
    pub image_png: Vec<u8>,
    pub mask_png: Vec<u8>,
    pub depth_png: Vec<u8>,
    pub obj: Vec<u8>,
}

pub enum Attempt {
    Retained(Box<RenderedSample>),
    TooSmall(f64),
    PlacementFailed,
}

/// Polyp area fraction of the scene for `sample_seed` from the visibility
/// pass alone; `None` when placement fails.
pub fn measure_fraction(config: &DatasetConfig, sample_seed: u64, resolution: (usize, usize)) -> Result<Option<f64>, DatasetError> {
    let sampled = match sample_scene(config, sample_seed) {
        Ok(s) => s,
        Err(GeometryError::PlacementFailed { .. }) => return Ok(None),
        Err(e) => return Err(e.into()),
    };
    let camera = Camera::at_entrance(&sampled.scene.colon);
    let gbuf = rasterize(&sampled.scene, &camera, resolution.0, resolution.1)?;
    Ok(Some(gbuf.polyp_pixels() as f64 / (resolution.0 * resolution.1) as f64))
}

/// Generates, filters and (if kept) fully renders and encodes one attempt.
pub fn run_attempt(config: &DatasetConfig, attempt: u64) -> Result<Attempt, DatasetError> {
    let sample_seed = seed::attempt_seed(config.master_seed, attempt);
    let sampled = match sample_scene(config, sample_seed) {
        Ok(s) => s,
        Err(GeometryError::PlacementFailed { .. }) => return Ok(Attempt::PlacementFailed),
        Err(e) => return Err(e.into()),
    };
    let scene = &sampled.scene;
    let opts = config.render_options();
    let camera = Camera::at_entrance(&scene.colon);
    let gbuf = rasterize(scene, &camera, opts.width, opts.height)?;
    let fraction = gbuf.polyp_pixels() as f64 / (opts.width * opts.height) as f64;
    if fraction < config.min_area_fraction {
        return Ok(Attempt::TooSmall(fraction));
    }
    let lights = config.lights.build(&scene.colon, &camera);
    let frame = render_from_buffer(scene, &camera, &lights, &config.material, &opts, sample_seed, &gbuf)?;
    debug_assert_eq!(frame.material, jitter_material(&config.material, sample_seed));
    let depth = frame.depth.quantize(frame.near, frame.far);
    let mut obj = Vec::new();
    export_obj(scene, &mut obj)?;
    Ok(Attempt::Retained(Box::new(RenderedSample {
        seed: sample_seed,
        attempt,
        fraction: polyp_area_fraction(&frame.mask),
        placement: scene.placement,
        polyp_radius: sampled.polyp_radius,
        base_color: frame.material.base_color,
        image_png: encode_rgb_png(&frame.rgb)?,
        mask_png: encode_mask_png(&frame.mask)?,
        depth_png: encode_gray16_png(&depth, opts.width, opts.height)?,
        obj,
    })))
}

/// Placement-failure tracking over a sliding window of attempts.
struct FailureWindow {
    recent: VecDeque<bool>,
    size: usize,
    failures: usize,
}

impl FailureWindow {
    fn new(size: usize) -> Self {
        FailureWindow { recent: VecDeque::with_capacity(size), size, failures: 0 }
    }

    fn push(&mut self, failed: bool) -> Result<(), DatasetError> {
        if self.recent.len() == self.size && self.recent.pop_front() == Some(true) {
            self.failures -= 1;
        }
        self.recent.push_back(failed);
        self.failures += failed as usize;
        if self.recent.len() == self.size && 2 * self.failures > self.size {
            return Err(DatasetError::PlacementRate { failures: self.failures, window: self.size });
        }
        Ok(())
    }
}

fn attempt_limit(count: usize) -> u64 {
    1000 + 100 * count as u64
}

/// Drives attempts `0, 1, 2, ...` in parallel batches and hands each result
/// to `consume` in attempt order until it returns `false`. Results past the
/// stopping point are discarded, so the outcome does not depend on the
/// batch size or thread count.
fn drive<T: Send>(
    produce: impl Fn(u64) -> Result<T, DatasetError> + Sync,
    mut consume: impl FnMut(u64, T) -> Result<bool, DatasetError>,
) -> Result<u64, DatasetError> {
    let batch = (2 * rayon::current_num_threads()).max(4) as u64;
    let mut next = 0u64;
    loop {
        let results: Vec<Result<T, DatasetError>> = (next..next + batch).into_par_iter().map(|a| produce(a)).collect();
        for (k, r) in results.into_iter().enumerate() {
            let attempt = next + k as u64;
            if !consume(attempt, r?)? {
                return Ok(attempt + 1);
            }
        }
        next += batch;
    }
}

const SUBDIRS: [&str; 4] = ["images", "masks", "depth", "meshes"];

/// Builds the dataset under `config.output_dir`: sample files, `manifest.jsonl`
/// and `stats.json`. Undersized renders and failed placements are replaced by
/// later attempts until `sample_count` samples are retained.
pub fn build_dataset(config: &DatasetConfig) -> Result<(Vec<SampleRecord>, DatasetStats), DatasetError> {
    config.validate()?;
    let root = &config.output_dir;
    fs::create_dir_all(root)?;
    for d in SUBDIRS {
        fs::create_dir_all(root.join(d))?;
    }

    let mut records = Vec::with_capacity(config.sample_count);
    let mut window = FailureWindow::new(config.failure_window);
    let (mut small, mut failed) = (0u64, 0u64);
    let limit = attempt_limit(config.sample_count);
    let attempts = if config.sample_count == 0 {
        0
    } else {
        drive(
            |a| run_attempt(config, a),
            |attempt, outcome| {
                window.push(matches!(outcome, Attempt::PlacementFailed))?;
                match outcome {
                    Attempt::PlacementFailed => failed += 1,
                    Attempt::TooSmall(_) => small += 1,
                    Attempt::Retained(s) => {
                        let record = write_sample(root, records.len(), &s)?;
                        records.push(record);
                        if records.len() % 100 == 0 {
                            log::info!("{} / {} samples ({} attempts)", records.len(), config.sample_count, attempt + 1);
                        }
                    }
                }
                if records.len() == config.sample_count {
                    return Ok(false);
                }
                if attempt + 1 >= limit {
                    return Err(DatasetError::TooManyAttempts { attempts: attempt + 1, retained: records.len() });
                }
                Ok(true)
            },
        )?
    };

    let mut stats = dataset_stats(&records);
    stats.attempts = attempts;
    stats.rejected_small = small;
    stats.placement_failures = failed;
    stats.rejected = small + failed;

    let header = ManifestHeader {
        format: MANIFEST_FORMAT.into(),
        version: MANIFEST_VERSION,
        sample_count: config.sample_count,
        master_seed: config.master_seed,
        attempts,
        config: config.clone(),
    };
    write_manifest(&root.join("manifest.jsonl"), &header, &records)?;
    fs::write(root.join("stats.json"), serde_json::to_vec_pretty(&stats).map_err(std::io::Error::other)?)?;
    Ok((records, stats))
}

fn write_sample(root: &Path, id: usize, s: &RenderedSample) -> Result<SampleRecord, DatasetError> {
    let name = format!("{id:06}");
    let record = SampleRecord {
        id,
        seed: s.seed,
        attempt: s.attempt,
        image: format!("images/{name}.png"),
        mask: format!("masks/{name}.png"),
        depth: format!("depth/{name}.png"),
        mesh: format!("meshes/{name}.obj"),
        realistic_image: None,
        polyp_area_fraction: s.fraction,
        placement: s.placement,
        polyp_radius: s.polyp_radius,
        base_color_used: s.base_color,
    };
    fs::write(root.join(&record.image), &s.image_png)?;
    fs::write(root.join(&record.mask), &s.mask_png)?;
    fs::write(root.join(&record.depth), &s.depth_png)?;
    fs::write(root.join(&record.mesh), &s.obj)?;
    Ok(record)
}

pub fn write_manifest(path: &Path, header: &ManifestHeader, records: &[SampleRecord]) -> Result<(), DatasetError> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    serde_json::to_writer(&mut out, header).map_err(std::io::Error::other)?;
    writeln!(out)?;
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(std::io::Error::other)?;
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a manifest: the header line followed by one record per line.
pub fn read_manifest(path: &Path) -> Result<(ManifestHeader, Vec<SampleRecord>), DatasetError> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut lines = reader.lines();
    let first = lines.next().ok_or_else(|| DatasetError::Manifest("empty file".into()))??;
    let header: ManifestHeader =
        serde_json::from_str(&first).map_err(|e| DatasetError::Manifest(format!("header: {e}")))?;
    if header.format != MANIFEST_FORMAT {
        return Err(DatasetError::Manifest(format!("unknown format {:?}", header.format)));
    }
    if header.version != MANIFEST_VERSION {
        return Err(DatasetError::Manifest(format!("unsupported version {}", header.version)));
    }
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r: SampleRecord =
            serde_json::from_str(&line).map_err(|e| DatasetError::Manifest(format!("line {}: {e}", i + 2)))?;
        records.push(r);
    }
    Ok((header, records))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationStep {
    pub scale: f64,
    pub radius_range: (f64, f64),
    /// `None` when placement failed too often at this scale.
    pub mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub target_mean: f64,
    pub radius_range: (f64, f64),
    pub mean: f64,
    pub samples: usize,
    pub steps: Vec<CalibrationStep>,
}

/// Mean retained polyp area over the first `samples` retained attempts,
/// measured from visibility passes at `resolution`.
pub fn retained_mean(config: &DatasetConfig, samples: usize, resolution: (usize, usize)) -> Result<f64, DatasetError> {
    config.validate()?;
    let mut window = FailureWindow::new(config.failure_window);
    let mut fractions = Vec::with_capacity(samples);
    let limit = attempt_limit(samples);
    drive(
        |a| measure_fraction(config, seed::attempt_seed(config.master_seed, a), resolution),
        |attempt, f| {
            window.push(f.is_none())?;
            if let Some(f) = f.filter(|&f| f >= config.min_area_fraction) {
                fractions.push(f);
            }
            if attempt + 1 >= limit {
                return Err(DatasetError::TooManyAttempts { attempts: attempt + 1, retained: fractions.len() });
            }
            Ok(fractions.len() < samples)
        },
    )?;
    Ok(fractions.iter().sum::<f64>() / samples.max(1) as f64)
}

/// Scales the polyp radius range so the retained mean area fraction hits
/// `target_mean`. Bisection on a log scale factor; the same attempt seeds are
/// reused at every step.
pub fn calibrate(
    config: &DatasetConfig,
    target_mean: f64,
    samples: usize,
    resolution: (usize, usize),
    iterations: usize,
) -> Result<CalibrationResult, DatasetError> {
    if !(target_mean > config.min_area_fraction && target_mean < 1.0) {
        return Err(DatasetError::InvalidConfig(format!(
            "target mean {target_mean} must lie in ({}, 1)",
            config.min_area_fraction
        )));
    }
    if samples == 0 {
        return Err(DatasetError::InvalidConfig("calibration needs at least one sample".into()));
    }
    let (lo0, hi0) = config.polyp_radius_range;
    let eval = |scale: f64| -> Result<CalibrationStep, DatasetError> {
        let mut c = config.clone();
        c.polyp_radius_range = (lo0 * scale, hi0 * scale);
        let mean = match retained_mean(&c, samples, resolution) {
            Ok(m) => Some(m),
            Err(DatasetError::PlacementRate { .. }) => None,
            Err(e) => return Err(e),
        };
        log::info!("scale {scale:.4}: mean area {mean:?}");
        Ok(CalibrationStep { scale, radius_range: c.polyp_radius_range, mean })
    };
    let (mut lo, mut hi) = (0.5f64.ln(), 2.0f64.ln());
    let mut steps = Vec::new();
    let mut best: Option<CalibrationStep> = None;
    for _ in 0..iterations.max(1) {
        let mid = 0.5 * (lo + hi);
        let step = eval(mid.exp())?;
        match step.mean {
            Some(m) if m < target_mean => lo = mid,
            _ => hi = mid,
        }
        if let Some(m) = step.mean {
            if best.as_ref().and_then(|b| b.mean).is_none_or(|bm| (m - target_mean).abs() < (bm - target_mean).abs()) {
                best = Some(step.clone());
            }
        }
        steps.push(step);
    }
    let best = best.ok_or_else(|| DatasetError::InvalidConfig("no calibration step placed polyps reliably".into()))?;
    Ok(CalibrationResult {
        target_mean,
        radius_range: best.radius_range,
        mean: best.mean.unwrap_or(f64::NAN),
        samples,
        steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config(dir: &Path, count: usize) -> DatasetConfig {
        DatasetConfig {
            sample_count: count,
            resolution: (64, 64),
            master_seed: 1,
            output_dir: dir.to_path_buf(),
            ..DatasetConfig::default()
        }
    }

    #[test]
    fn area_fraction_counts() {
        assert_eq!(polyp_area_fraction(&Mask::new(10, 10)), 0.0);
        let m = Mask::from_fn(500, 500, |x, y| y * 500 + x < 6500);
        assert_eq!(polyp_area_fraction(&m), 6500.0 / 250000.0);
        assert!((polyp_area_fraction(&m) - 0.026).abs() < 1e-15);
        assert_eq!(polyp_area_fraction(&Mask::from_fn(4, 4, |_, _| true)), 1.0);
    }

    fn record(f: f64) -> SampleRecord {
        SampleRecord {
            id: 0,
            seed: 0,
            attempt: 0,
            image: String::new(),
            mask: String::new(),
            depth: String::new(),
            mesh: String::new(),
            realistic_image: None,
            polyp_area_fraction: f,
            placement: Placement::Wall,
            polyp_radius: 0.3,
            base_color_used: [0.0; 3],
        }
    }

    #[test]
    fn stats_aggregate() {
        let s = dataset_stats(&[record(0.03), record(0.05)]);
        assert!((s.mean.unwrap() - 0.04).abs() < 1e-15);
        assert_eq!((s.min, s.max), (Some(0.03), Some(0.05)));
        assert_eq!(s.histogram.counts.iter().sum::<usize>(), 2);
        assert_eq!(dataset_stats(&[record(0.07)]).mean, Some(0.07));
        let empty = dataset_stats(&[]);
        assert_eq!(empty.mean, None);
        assert_eq!(empty.attempts, 0);
    }

    #[test]
    fn empty_build() {
        let dir = tempfile::tempdir().unwrap();
        let (records, stats) = build_dataset(&small_config(dir.path(), 0)).unwrap();
        assert!(records.is_empty());
        assert_eq!(stats.attempts, 0);
        let (header, back) = read_manifest(&dir.path().join("manifest.jsonl")).unwrap();
        assert_eq!(header.sample_count, 0);
        assert!(back.is_empty());
    }

    #[test]
    fn small_build_filters_and_is_reproducible() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let (records, stats) = build_dataset(&small_config(a.path(), 4)).unwrap();
        assert_eq!(records.len(), 4);
        assert_eq!(stats.retained as u64 + stats.rejected, stats.attempts);
        for r in &records {
            assert!(r.polyp_area_fraction >= 0.026);
            let mask = crate::image::read_mask(&a.path().join(&r.mask), 0.5).unwrap();
            assert_eq!(polyp_area_fraction(&mask), r.polyp_area_fraction);
        }
        build_dataset(&small_config(b.path(), 4)).unwrap();
        for f in ["manifest.jsonl", "stats.json", "images/000003.png", "meshes/000002.obj", "depth/000001.png"] {
            assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
        }
    }

    #[test]
    fn samples_depend_only_on_their_attempt() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let (three, _) = build_dataset(&small_config(a.path(), 3)).unwrap();
        let (two, _) = build_dataset(&small_config(b.path(), 2)).unwrap();
        assert_eq!(&three[..2], &two[..]);
        // Regenerating the last sample from its attempt index alone gives the
        // same bytes, whatever happened to earlier attempts.
        let cfg = small_config(a.path(), 3);
        let last = &three[2];
        match run_attempt(&cfg, last.attempt).unwrap() {
            Attempt::Retained(s) => {
                assert_eq!(s.image_png, fs::read(a.path().join(&last.image)).unwrap());
                assert_eq!(s.seed, last.seed);
            }
            _ => panic!("attempt {} should be retained", last.attempt),
        }
    }

    #[test]
    fn oversized_polyps_abort() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small_config(dir.path(), 3);
        cfg.polyp_radius_range = (2.0, 2.5);
        cfg.placement.max_attempts = 5;
        assert!(matches!(build_dataset(&cfg), Err(DatasetError::PlacementRate { .. })));
    }

    #[test]
    fn invalid_configs() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small_config(dir.path(), 1);
        cfg.resolution = (8, 8);
        assert!(cfg.validate().is_err());
        let mut cfg = small_config(dir.path(), 1);
        cfg.polyp_radius_range = (0.5, 0.1);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_config(dir.path(), 2);
        let (records, _) = build_dataset(&cfg).unwrap();
        let (header, back) = read_manifest(&dir.path().join("manifest.jsonl")).unwrap();
        assert_eq!(header.version, MANIFEST_VERSION);
        assert_eq!(header.config.resolution, (64, 64));
        assert_eq!(back, records);
    }
}
