//! Run configuration and the work behind each CLI subcommand.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{load_fixations, DatasetEntry, DatasetIndex};
use crate::error::{Error, Result};
use crate::imaging::{load_image, resize_bilinear, save_png, write_raw_f32, ScalarField};
use crate::localstats::StatStack;
use crate::metrics::{self, auc_judd, fixation_density, FixationRecord, MetricOptions, MetricReport, RocCounts};
use crate::pipeline::{compute_saliency, compute_saliency_traced, PipelineConfig, SaliencyMap, Trace};

/// Process exit statuses.
pub mod exit {
    pub const OK: u8 = 0;
    pub const USAGE: u8 = 1;
    pub const IO: u8 = 2;
    pub const PARTIAL: u8 = 3;
}

/// Exit status for an error that aborted a command.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::Argument(_) => exit::USAGE,
        _ => exit::IO,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DebugOptions {
    /// Directory receiving raw-float dumps of intermediate maps.
    pub dump_dir: Option<PathBuf>,
    /// Also dump the seven statistic maps of every channel.
    pub dump_stats: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Worker threads for batch runs; 0 uses every core.
    pub threads: usize,
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub pipeline: PipelineConfig,
    pub metrics: MetricOptions,
    pub debug: DebugOptions,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.pipeline.validate()?;
        let m = &self.metrics;
        if m.borji_splits == 0 {
            return Err(Error::Config("metrics.borji_splits must be >= 1".into()));
        }
        if m.density_sigma.is_nan() || m.density_sigma <= 0.0 || m.density_reference_width == 0 {
            return Err(Error::Config("density sigma and reference width must be positive".into()));
        }
        if m.roc_thresholds < 2 {
            return Err(Error::Config("metrics.roc_thresholds must be >= 2".into()));
        }
        Ok(())
    }

    /// Digest of everything that affects numeric output.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_string(&(&self.pipeline, &self.metrics)).expect("config serializes");
        hex::encode(&Sha256::digest(json.as_bytes())[..8])
    }

    /// One-line run banner: crate version, config hash and seed.
    pub fn banner(&self) -> String {
        format!(
            "kalsal {} config={} seed={} variant={}",
            env!("CARGO_PKG_VERSION"),
            self.hash(),
            self.pipeline.seed,
            self.pipeline.variant
        )
    }
}

/// Runs `f` on a pool of `threads` workers (0 = rayon default).
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot build thread pool: {e}")))?;
    Ok(pool.install(f))
}

#[derive(Debug, Clone)]
pub struct SaliencyOutcome {
    pub map: SaliencyMap,
    pub png: PathBuf,
    pub raw: PathBuf,
}

/// Computes one map and writes `<output>` as 8-bit PNG plus `<output>.f32` raw floats.
pub fn cmd_saliency(image: &Path, cfg: &RunConfig, output: &Path) -> Result<SaliencyOutcome> {
    cfg.validate()?;
    let img = load_image(image)?;
    let map = match &cfg.debug.dump_dir {
        Some(dir) => {
            let (map, trace) = compute_saliency_traced(&img, &cfg.pipeline)?;
            dump_trace(dir, &trace, cfg.debug.dump_stats)?;
            map
        }
        None => compute_saliency(&img, &cfg.pipeline)?,
    };
    if let Some(parent) = output.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let png = output.to_path_buf();
    let raw = raw_path(output);
    save_png(&map.map, &png)?;
    write_raw_f32(&map.map, &raw)?;
    Ok(SaliencyOutcome { map, png, raw })
}

fn raw_path(output: &Path) -> PathBuf {
    let mut name = output.file_stem().unwrap_or_default().to_os_string();
    name.push(".f32");
    output.with_file_name(name)
}

fn dump_trace(dir: &Path, trace: &Trace, stats: bool) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let put = |name: String, f: &ScalarField| write_raw_f32(f, dir.join(format!("{name}.f32")));
    for scale in &trace.scales {
        let d = scale.divisor;
        put(format!("s{d}_fused"), &scale.fused)?;
        put(format!("s{d}_scale_map"), &scale.upsampled)?;
        for ch in &scale.channels {
            let r = ch.role;
            put(format!("s{d}_{r}_channel"), &ch.channel)?;
            put(format!("s{d}_{r}_expected"), &ch.expected)?;
            put(format!("s{d}_{r}_surprise"), &ch.surprise)?;
            put(format!("s{d}_{r}_stretched"), &ch.stretched)?;
            if stats {
                for (label, m) in StatStack::labels().iter().zip(&ch.stats.maps) {
                    put(format!("s{d}_{r}_{label}"), m)?;
                }
            }
        }
    }
    Ok(())
}

/// Saliency map at the source image's resolution plus its fixations and density.
struct Prepared {
    map: ScalarField,
    fixations: FixationRecord,
}

fn prepare(entry: &DatasetEntry, cfg: &RunConfig) -> Result<Prepared> {
    let img = load_image(&entry.image)?;
    let (w, h) = (img.width(), img.height());
    let sal = compute_saliency(&img, &cfg.pipeline)?;
    let map = resize_bilinear(&sal.map, w, h)?;
    let mut fixations = load_fixations(&entry.fixations, (w, h))?;
    fixations.id = entry.id.clone();
    Ok(Prepared { map, fixations })
}

fn density_for(entry: &DatasetEntry, rec: &FixationRecord, opts: &MetricOptions) -> Result<ScalarField> {
    let (w, h) = rec.dims();
    match &entry.density {
        Some(p) => {
            let d = load_image(p)?.plane(0);
            resize_bilinear(&d, w, h)
        }
        None => fixation_density(rec, (w, h), opts.sigma_for_width(w)),
    }
}

fn score_entry(entry: &DatasetEntry, cfg: &RunConfig) -> Result<MetricReport> {
    let p = prepare(entry, cfg)?;
    let density = density_for(entry, &p.fixations, &cfg.metrics)?;
    metrics::evaluate(&p.map, &p.fixations, &density, &cfg.metrics, cfg.pipeline.seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageResult {
    pub id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scores: Option<MetricReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub variant: String,
    pub evaluated: usize,
    pub failed: usize,
    /// Means over successfully evaluated images.
    pub mean: Option<MetricReport>,
    pub images: Vec<ImageResult>,
}

impl EvaluationReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

/// Scores every entry; per-image failures are recorded, not fatal.
pub fn evaluate_index(index: &DatasetIndex, cfg: &RunConfig) -> Result<EvaluationReport> {
    cfg.validate()?;
    let results: Vec<ImageResult> = with_threads(cfg.threads, || {
        index
            .entries
            .par_iter()
            .map(|e| match score_entry(e, cfg) {
                Ok(s) => ImageResult {
                    id: e.id.clone(),
                    scores: Some(s),
                    error: None,
                },
                Err(err) => ImageResult {
                    id: e.id.clone(),
                    scores: None,
                    error: Some(err.to_string()),
                },
            })
            .collect()
    })?;
    let mean = MetricReport::mean(results.iter().filter_map(|r| r.scores.as_ref()));
    let failed = results.iter().filter(|r| r.error.is_some()).count();
    Ok(EvaluationReport {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: cfg.hash(),
        seed: cfg.pipeline.seed,
        variant: cfg.pipeline.variant.to_string(),
        evaluated: results.len() - failed,
        failed,
        mean,
        images: results,
    })
}

pub fn cmd_evaluate(index: &DatasetIndex, cfg: &RunConfig, report: &Path) -> Result<EvaluationReport> {
    let rep = evaluate_index(index, cfg)?;
    write_file(report, rep.to_json().as_bytes())?;
    Ok(rep)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone)]
pub struct RocOutcome {
    pub counts: RocCounts,
    /// Area under the pooled curve, including the (0,0) anchor.
    pub area: f64,
    /// Mean per-image AUC-Judd over the images that were pooled.
    pub mean_auc_judd: f64,
    pub failed: Vec<(String, String)>,
}

impl RocOutcome {
    /// `threshold,fpr,tpr` rows in ascending threshold order.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("threshold,fpr,tpr\n");
        for p in self.counts.sweep().iter().rev() {
            out.push_str(&format!("{},{},{}\n", p.threshold, p.fpr, p.tpr));
        }
        out
    }
}

/// Pools fixated and non-fixated pixels of every image into one ROC sweep.
pub fn roc_index(index: &DatasetIndex, cfg: &RunConfig) -> Result<RocOutcome> {
    cfg.validate()?;
    let prepared: Vec<Result<Prepared>> =
        with_threads(cfg.threads, || index.entries.par_iter().map(|e| prepare(e, cfg)).collect())?;
    let mut counts = RocCounts::new(cfg.metrics.roc_thresholds)?;
    let mut failed = Vec::new();
    let mut judd = Vec::new();
    for (entry, p) in index.entries.iter().zip(prepared) {
        let step = p.and_then(|p| {
            counts.add(&p.map, &p.fixations)?;
            auc_judd(&p.map, &p.fixations)
        });
        match step {
            Ok(a) => judd.push(a),
            Err(e) => failed.push((entry.id.clone(), e.to_string())),
        }
    }
    let mean_auc_judd = if judd.is_empty() {
        f64::NAN
    } else {
        judd.iter().sum::<f64>() / judd.len() as f64
    };
    Ok(RocOutcome {
        area: metrics::roc_area(&counts.curve()),
        counts,
        mean_auc_judd,
        failed,
    })
}

pub fn cmd_roc(index: &DatasetIndex, cfg: &RunConfig, csv: &Path) -> Result<RocOutcome> {
    let out = roc_index(index, cfg)?;
    write_file(csv, out.to_csv().as_bytes())?;
    Ok(out)
}
