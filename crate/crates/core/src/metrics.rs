//! Fixation-prediction metrics: AUC-Judd, AUC-Borji, CC, SIM and NSS, plus
//! fixation density maps and threshold-swept ROC curves.
//!
//! Location-based metrics (AUC, NSS) take a [`FixationRecord`] whose
//! dimensions must match the saliency map; distribution-based metrics (CC,
//! SIM) compare against a density field.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::ScalarField;

/// Pooled fixation points of one image, in pixel coordinates of the source image.
#[derive(Debug, Clone, PartialEq)]
pub struct FixationRecord {
    pub id: String,
    pub width: usize,
    pub height: usize,
    pub points: Vec<(usize, usize)>,
}

impl FixationRecord {
    pub fn new(id: impl Into<String>, width: usize, height: usize, points: Vec<(usize, usize)>) -> Result<Self> {
        if let Some(&(x, y)) = points.iter().find(|&&(x, y)| x >= width || y >= height) {
            return Err(Error::arg(format!("fixation ({x}, {y}) outside {width}x{height}")));
        }
        Ok(Self {
            id: id.into(),
            width,
            height,
            points,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    /// Row-major pixel indices of the distinct fixated pixels, sorted.
    pub fn unique_indices(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = self.points.iter().map(|&(x, y)| y * self.width + x).collect();
        idx.sort_unstable();
        idx.dedup();
        idx
    }

    fn check_map(&self, s: &ScalarField) -> Result<()> {
        if self.points.is_empty() {
            return Err(Error::arg(format!("fixation record `{}` is empty", self.id)));
        }
        if s.dims() != self.dims() {
            return Err(Error::arg(format!(
                "saliency map is {}x{} but fixations are for {}x{}",
                s.width(),
                s.height(),
                self.width,
                self.height
            )));
        }
        Ok(())
    }
}

/// Impulses at the fixations (rescaled to `dims`) blurred by an isotropic
/// Gaussian of `sigma` pixels, divided by its maximum.
pub fn fixation_density(rec: &FixationRecord, dims: (usize, usize), sigma: f64) -> Result<ScalarField> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::arg("density sigma must be positive"));
    }
    if rec.points.is_empty() {
        return Err(Error::arg(format!("fixation record `{}` is empty", rec.id)));
    }
    let (w, h) = dims;
    if w == 0 || h == 0 {
        return Err(Error::arg("density dimensions must be >= 1"));
    }
    let rescale = |v: usize, src: usize, dst: usize| {
        if src == dst {
            v
        } else {
            (((v as f64 + 0.5) * dst as f64 / src as f64) as usize).min(dst - 1)
        }
    };

    // exp(-r²/2σ²) < 1e-18 beyond this radius
    let radius = ((sigma * (2.0 * 18.0 * std::f64::consts::LN_10).sqrt()).ceil() as usize).min(w.max(h));
    let g: Vec<f64> = (0..=radius)
        .map(|d| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();

    // horizontal pass over the rows that hold fixations
    let mut rows: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for &(x, y) in &rec.points {
        let (px, py) = (rescale(x, rec.width, w), rescale(y, rec.height, h));
        let row = rows.entry(py).or_insert_with(|| vec![0.0; w]);
        let (lo, hi) = (px.saturating_sub(radius), (px + radius).min(w - 1));
        for (xx, v) in row.iter_mut().enumerate().take(hi + 1).skip(lo) {
            *v += g[xx.abs_diff(px)];
        }
    }

    let mut out = vec![0.0; w * h];
    for (&ry, row) in &rows {
        let (lo, hi) = (ry.saturating_sub(radius), (ry + radius).min(h - 1));
        for y in lo..=hi {
            let wy = g[y.abs_diff(ry)];
            for (o, v) in out[y * w..(y + 1) * w].iter_mut().zip(row) {
                *o += wy * v;
            }
        }
    }
    let max = out.iter().cloned().fold(0.0, f64::max);
    out.iter_mut().for_each(|v| *v /= max);
    ScalarField::new(w, h, out)
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.windows(2).all(|w| w[0] == w[1]) {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Pearson correlation between a saliency map and a fixation density map.
pub fn cc(s: &ScalarField, f: &ScalarField) -> Result<f64> {
    s.ensure_same_dims(f, "cc")?;
    let (ms, ss) = mean_std(s.data());
    let (mf, sf) = mean_std(f.data());
    if !(ss > 0.0 && sf > 0.0) {
        return Err(Error::UndefinedMetric("cc of a constant map".into()));
    }
    let cov = s
        .data()
        .iter()
        .zip(f.data())
        .map(|(a, b)| (a - ms) * (b - mf))
        .sum::<f64>()
        / s.len() as f64;
    Ok((cov / (ss * sf)).clamp(-1.0, 1.0))
}

/// Histogram intersection of the two maps after each is scaled to unit sum.
pub fn sim(s: &ScalarField, f: &ScalarField) -> Result<f64> {
    s.ensure_same_dims(f, "sim")?;
    if s.data().iter().chain(f.data()).any(|&v| v < 0.0) {
        return Err(Error::arg("sim requires non-negative maps"));
    }
    let (ts, tf) = (s.sum(), f.sum());
    if !(ts > 0.0 && tf > 0.0) {
        return Err(Error::UndefinedMetric("sim of a zero-mass map".into()));
    }
    Ok(s.data()
        .iter()
        .zip(f.data())
        .map(|(a, b)| (a / ts).min(b / tf))
        .sum())
}

/// Mean of the z-scored saliency map over all fixation points (duplicates count).
pub fn nss(s: &ScalarField, rec: &FixationRecord) -> Result<f64> {
    rec.check_map(s)?;
    let (mean, std) = mean_std(s.data());
    if std.is_nan() || std <= 0.0 {
        return Err(Error::UndefinedMetric("nss of a constant map".into()));
    }
    let total: f64 = rec.points.iter().map(|&(x, y)| (s.get(x, y) - mean) / std).sum();
    Ok(total / rec.points.len() as f64)
}

/// ROC area with thresholds at the distinct positive scores: each threshold
/// counts scores `>= t` as positive. The curve is closed with (0,0) and (1,1).
pub fn roc_area_at_positive_thresholds(positives: &[f64], negatives: &[f64]) -> Result<f64> {
    if positives.is_empty() || negatives.is_empty() {
        return Err(Error::UndefinedMetric("ROC area needs positives and negatives".into()));
    }
    let mut pos = positives.to_vec();
    pos.sort_by(|a, b| b.total_cmp(a));
    let mut neg = negatives.to_vec();
    neg.sort_by(f64::total_cmp);
    let (np, nn) = (pos.len() as f64, neg.len() as f64);

    let mut area = 0.0;
    let (mut fpr0, mut tpr0) = (0.0, 0.0);
    let mut i = 0;
    while i < pos.len() {
        let t = pos[i];
        while i < pos.len() && pos[i] >= t {
            i += 1;
        }
        let tpr = i as f64 / np;
        let fpr = (neg.len() - neg.partition_point(|&v| v < t)) as f64 / nn;
        area += (fpr - fpr0) * (tpr + tpr0) / 2.0;
        (fpr0, tpr0) = (fpr, tpr);
    }
    area += (1.0 - fpr0) * (1.0 + tpr0) / 2.0;
    Ok(area)
}

/// Positives are the distinct fixated pixels, negatives every other pixel.
pub fn auc_judd(s: &ScalarField, rec: &FixationRecord) -> Result<f64> {
    rec.check_map(s)?;
    let fix = rec.unique_indices();
    let positives: Vec<f64> = fix.iter().map(|&i| s.data()[i]).collect();
    let negatives = non_fixation_indices(s.len(), &fix)
        .into_iter()
        .map(|i| s.data()[i])
        .collect::<Vec<_>>();
    roc_area_at_positive_thresholds(&positives, &negatives)
}

fn non_fixation_indices(n: usize, sorted_fix: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(n - sorted_fix.len());
    let mut it = sorted_fix.iter().peekable();
    for i in 0..n {
        if it.peek() == Some(&&i) {
            it.next();
        } else {
            out.push(i);
        }
    }
    out
}

/// The negative pixel indices drawn for every AUC-Borji split: uniform
/// sampling without replacement among non-fixated pixels.
pub fn borji_negative_samples(
    s: &ScalarField,
    rec: &FixationRecord,
    n_splits: usize,
    samples_per_split: Option<usize>,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    rec.check_map(s)?;
    if n_splits == 0 {
        return Err(Error::arg("auc_borji needs at least one split"));
    }
    let fix = rec.unique_indices();
    let pool = non_fixation_indices(s.len(), &fix);
    let k = samples_per_split.unwrap_or(fix.len()).min(pool.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n_splits)
        .map(|_| {
            rand::seq::index::sample(&mut rng, pool.len(), k)
                .into_iter()
                .map(|j| pool[j])
                .collect()
        })
        .collect())
}

/// Mean ROC area over `n_splits` random negative sets.
pub fn auc_borji(
    s: &ScalarField,
    rec: &FixationRecord,
    n_splits: usize,
    samples_per_split: Option<usize>,
    seed: u64,
) -> Result<f64> {
    let splits = borji_negative_samples(s, rec, n_splits, samples_per_split, seed)?;
    let positives: Vec<f64> = rec.unique_indices().iter().map(|&i| s.data()[i]).collect();
    let mut total = 0.0;
    for split in &splits {
        let negatives: Vec<f64> = split.iter().map(|&i| s.data()[i]).collect();
        total += roc_area_at_positive_thresholds(&positives, &negatives)?;
    }
    Ok(total / splits.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// Pixel counts at or above each threshold of a fixed descending sweep over
/// `[0, 1]`, accumulated over one or more images.
#[derive(Debug, Clone, PartialEq)]
pub struct RocCounts {
    thresholds: Vec<f64>,
    tp: Vec<u64>,
    fp: Vec<u64>,
    positives: u64,
    negatives: u64,
}

impl RocCounts {
    pub fn new(n_thresholds: usize) -> Result<Self> {
        if n_thresholds < 2 {
            return Err(Error::arg("ROC sweep needs at least 2 thresholds"));
        }
        let last = (n_thresholds - 1) as f64;
        Ok(Self {
            thresholds: (0..n_thresholds).map(|i| 1.0 - i as f64 / last).collect(),
            tp: vec![0; n_thresholds],
            fp: vec![0; n_thresholds],
            positives: 0,
            negatives: 0,
        })
    }

    /// Adds one image; positives are its distinct fixated pixels.
    pub fn add(&mut self, s: &ScalarField, rec: &FixationRecord) -> Result<()> {
        rec.check_map(s)?;
        let fix = rec.unique_indices();
        let mut pos: Vec<f64> = fix.iter().map(|&i| s.data()[i]).collect();
        let mut neg: Vec<f64> = non_fixation_indices(s.len(), &fix)
            .into_iter()
            .map(|i| s.data()[i])
            .collect();
        pos.sort_by(f64::total_cmp);
        neg.sort_by(f64::total_cmp);
        for (i, &t) in self.thresholds.iter().enumerate() {
            self.tp[i] += (pos.len() - pos.partition_point(|&v| v < t)) as u64;
            self.fp[i] += (neg.len() - neg.partition_point(|&v| v < t)) as u64;
        }
        self.positives += pos.len() as u64;
        self.negatives += neg.len() as u64;
        Ok(())
    }

    /// The sweep in descending threshold order, without the (0,0) anchor.
    pub fn sweep(&self) -> Vec<RocPoint> {
        let rate = |c: u64, n: u64| if n == 0 { 0.0 } else { c as f64 / n as f64 };
        self.thresholds
            .iter()
            .zip(self.tp.iter().zip(&self.fp))
            .map(|(&threshold, (&tp, &fp))| RocPoint {
                threshold,
                fpr: rate(fp, self.negatives),
                tpr: rate(tp, self.positives),
            })
            .collect()
    }

    /// The full curve: an anchor at (0,0) (threshold `+inf`) followed by the sweep.
    pub fn curve(&self) -> Vec<RocPoint> {
        let mut out = vec![RocPoint {
            threshold: f64::INFINITY,
            fpr: 0.0,
            tpr: 0.0,
        }];
        out.extend(self.sweep());
        out
    }
}

/// ROC curve of one map over `n_thresholds` evenly spaced thresholds from 1 down to 0,
/// preceded by the (0,0) anchor. The last point (threshold 0) is (1,1) for maps in `[0, 1]`.
pub fn roc_curve(s: &ScalarField, rec: &FixationRecord, n_thresholds: usize) -> Result<Vec<RocPoint>> {
    let mut counts = RocCounts::new(n_thresholds)?;
    counts.add(s, rec)?;
    Ok(counts.curve())
}

/// Trapezoidal area under a curve given in order of increasing FPR.
pub fn roc_area(curve: &[RocPoint]) -> f64 {
    curve
        .windows(2)
        .map(|p| (p[1].fpr - p[0].fpr) * (p[1].tpr + p[0].tpr) / 2.0)
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricOptions {
    pub borji_splits: usize,
    /// Negatives per split; `None` uses the number of fixated pixels.
    pub borji_samples: Option<usize>,
    /// Density sigma in pixels at `density_reference_width`; scaled with image width.
    pub density_sigma: f64,
    pub density_reference_width: usize,
    pub roc_thresholds: usize,
}

impl Default for MetricOptions {
    fn default() -> Self {
        Self {
            borji_splits: 100,
            borji_samples: None,
            density_sigma: 25.0,
            density_reference_width: 681,
            roc_thresholds: 256,
        }
    }
}

impl MetricOptions {
    pub fn sigma_for_width(&self, width: usize) -> f64 {
        self.density_sigma * width as f64 / self.density_reference_width as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub auc_judd: f64,
    pub auc_borji: f64,
    pub cc: f64,
    pub sim: f64,
    pub nss: f64,
}

impl MetricReport {
    /// Arithmetic mean of each score, in the given order.
    pub fn mean<'a>(reports: impl IntoIterator<Item = &'a MetricReport>) -> Option<MetricReport> {
        let mut n = 0usize;
        let mut acc = [0.0; 5];
        for r in reports {
            for (a, v) in acc.iter_mut().zip([r.auc_judd, r.auc_borji, r.cc, r.sim, r.nss]) {
                *a += v;
            }
            n += 1;
        }
        (n > 0).then(|| {
            let [auc_judd, auc_borji, cc, sim, nss] = acc.map(|a| a / n as f64);
            MetricReport {
                auc_judd,
                auc_borji,
                cc,
                sim,
                nss,
            }
        })
    }
}

/// All five scores for one image. `density` must match the record's dimensions.
pub fn evaluate(
    s: &ScalarField,
    rec: &FixationRecord,
    density: &ScalarField,
    opts: &MetricOptions,
    seed: u64,
) -> Result<MetricReport> {
    Ok(MetricReport {
        auc_judd: auc_judd(s, rec)?,
        auc_borji: auc_borji(s, rec, opts.borji_splits, opts.borji_samples, seed)?,
        cc: cc(s, density)?,
        sim: sim(s, density)?,
        nss: nss(s, rec)?,
    })
}
