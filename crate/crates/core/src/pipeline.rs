//! End-to-end saliency: per scale, extract channels, run one Kalman traversal
//! per channel to build its expected image, take the absolute surprise,
//! contrast-stretch, fuse channels, apply centre bias; then fuse the scales.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channels::{extract, ChannelConfig, ChannelRole, Variant};
use crate::error::{Error, Result};
use crate::imaging::{normalize_minmax, resize_bilinear, resize_rgb, RgbImage, ScalarField};
use crate::kalman::{prediction, select_regime, step, KalmanParams};
use crate::localstats::{block_measurements, partition_blocks, BlockGrid, StatStack, DEFAULT_ENTROPY_BINS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub variant: Variant,
    pub working_width: usize,
    pub working_height: usize,
    pub block_width: usize,
    pub block_height: usize,
    /// Traversal seed.
    pub seed: u64,
    /// Resolution divisors relative to the working size.
    pub scales: Vec<usize>,
    /// Centre-bias Gaussian sigma as a fraction of the image diagonal.
    pub center_bias_sigma: f64,
    /// Apply centre bias to every scale before fusion (otherwise once, after).
    pub center_bias_per_scale: bool,
    /// Contrast-stretch percentiles.
    pub stretch_low: f64,
    pub stretch_high: f64,
    pub entropy_bins: usize,
    pub kalman: KalmanParams,
    pub channels: ChannelConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Ks7,
            working_width: 400,
            working_height: 300,
            block_width: 25,
            block_height: 25,
            seed: 0,
            scales: vec![1, 2, 4],
            center_bias_sigma: 0.35,
            center_bias_per_scale: true,
            stretch_low: 1.0,
            stretch_high: 99.0,
            entropy_bins: DEFAULT_ENTROPY_BINS,
            kalman: KalmanParams::default(),
            channels: ChannelConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.working_width == 0 || self.working_height == 0 {
            return bad("working dimensions must be >= 1");
        }
        if self.block_width == 0 || self.block_height == 0 {
            return bad("block dimensions must be >= 1");
        }
        if self.scales.is_empty() || self.scales.contains(&0) {
            return bad("scales must be a non-empty list of divisors >= 1");
        }
        if !(0.0 <= self.stretch_low && self.stretch_low < self.stretch_high && self.stretch_high <= 100.0) {
            return bad("stretch percentiles must satisfy 0 <= low < high <= 100");
        }
        if !(self.center_bias_sigma > 0.0 && self.center_bias_sigma.is_finite()) {
            return bad("center_bias_sigma must be positive");
        }
        if self.entropy_bins < 2 {
            return bad("entropy_bins must be >= 2");
        }
        let g = self.channels.gabor_size;
        if g < 3 || g.is_multiple_of(2) {
            return bad("gabor_size must be odd and >= 3");
        }
        if !(self.channels.gabor_sigma > 0.0 && self.channels.gabor_wavelength > 0.0) {
            return bad("gabor sigma and wavelength must be positive");
        }
        self.kalman.validate()
    }

    /// Short stable digest of every setting.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(&Sha256::digest(json.as_bytes())[..8])
    }

    fn scale_dims(&self, divisor: usize) -> (usize, usize) {
        let div = |n: usize| ((n + divisor / 2) / divisor).max(1);
        (div(self.working_width), div(self.working_height))
    }
}

/// Final map in `[0, 1]` at the working resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    pub map: ScalarField,
    pub config_hash: String,
    pub seed: u64,
}

/// A uniformly random permutation of all block indices, fixed by `seed`.
pub fn traversal_order(grid: &BlockGrid, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..grid.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order
}

fn scale_seed(seed: u64, scale_index: usize) -> u64 {
    seed ^ (scale_index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn check_permutation(order: &[usize], n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    for &k in order {
        if k >= n || std::mem::replace(&mut seen[k], true) {
            return Err(Error::arg("traversal order is not a permutation of the block indices"));
        }
    }
    if order.len() != n {
        return Err(Error::arg("traversal order does not visit every block"));
    }
    Ok(())
}

/// Expected image of `channel`: one Kalman pass over the blocks in `order`,
/// each block filled with its pre-update prediction clamped to `[0, 1]`.
pub fn expected_channel(
    channel: &ScalarField,
    grid: &BlockGrid,
    order: &[usize],
    cfg: &PipelineConfig,
) -> Result<ScalarField> {
    let stats = StatStack::compute(channel, cfg.entropy_bins)?;
    expected_from_stats(channel, &stats, grid, order, &cfg.kalman)
}

pub fn expected_from_stats(
    channel: &ScalarField,
    stats: &StatStack,
    grid: &BlockGrid,
    order: &[usize],
    params: &KalmanParams,
) -> Result<ScalarField> {
    check_permutation(order, grid.len())?;
    let measurements = block_measurements(stats, channel, grid)?;
    let (w, _) = channel.dims();
    let mut out = vec![0.0; channel.len()];
    let mut state = params.initial_state();
    let mut prev = None;
    for &k in order {
        let m = &measurements[k];
        let error = (prediction(&state, m) - m.z_mean).abs();
        let decision = select_regime(error, params.error_threshold, prev, k, grid);
        let next = step(&state, m, &params.noise(decision.regime))?;
        let value = next.predicted.clamp(0.0, 1.0);
        let b = grid.blocks()[k];
        for y in b.y0..b.y0 + b.height {
            out[y * w + b.x0..y * w + b.x0 + b.width].fill(value);
        }
        state = next.state;
        prev = Some(k);
    }
    ScalarField::new(w, channel.height(), out)
}

/// Pointwise `|channel - expected|`.
pub fn channel_saliency(channel: &ScalarField, expected: &ScalarField) -> Result<ScalarField> {
    channel.ensure_same_dims(expected, "channel_saliency")?;
    let data = channel
        .data()
        .iter()
        .zip(expected.data())
        .map(|(a, b)| (a - b).abs())
        .collect();
    ScalarField::new(channel.width(), channel.height(), data)
}

/// Percentile of already-sorted values with linear interpolation between
/// order statistics (rank `p/100 * (n-1)`).
pub fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    let rank = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (rank - lo as f64)
}

/// Maps the `p_low` percentile to 0 and `p_high` to 1, clamping outside.
/// When the two percentiles coincide the full min-max range is used instead;
/// a constant map becomes all zeros.
pub fn contrast_stretch(map: &ScalarField, p_low: f64, p_high: f64) -> Result<ScalarField> {
    if !(0.0 <= p_low && p_low < p_high && p_high <= 100.0) {
        return Err(Error::arg(format!("invalid stretch percentiles ({p_low}, {p_high})")));
    }
    if map.is_empty() {
        return Ok(map.clone());
    }
    let mut sorted = map.data().to_vec();
    sorted.sort_by(f64::total_cmp);
    let (mut lo, mut hi) = (percentile_sorted(&sorted, p_low), percentile_sorted(&sorted, p_high));
    if hi <= lo {
        (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
    }
    if hi <= lo {
        return Ok(ScalarField::zeros(map.width(), map.height()));
    }
    let span = hi - lo;
    Ok(map.map(|v| ((v - lo) / span).clamp(0.0, 1.0)))
}

/// Pointwise mean of equally sized maps, min-max normalized.
pub fn combine_channels(maps: &[ScalarField]) -> Result<ScalarField> {
    let first = maps.first().ok_or_else(|| Error::arg("no maps to combine"))?;
    let mut acc = vec![0.0; first.len()];
    for m in maps {
        first.ensure_same_dims(m, "combine_channels")?;
        for (a, v) in acc.iter_mut().zip(m.data()) {
            *a += v;
        }
    }
    let n = maps.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(normalize_minmax(&ScalarField::new(first.width(), first.height(), acc)?))
}

/// Isotropic Gaussian weights with peak 1 at the image centre and
/// `sigma = sigma_fraction * sqrt(w² + h²)`.
pub fn center_bias_weights(width: usize, height: usize, sigma_fraction: f64) -> ScalarField {
    let sigma = sigma_fraction * ((width * width + height * height) as f64).sqrt();
    let (cx, cy) = ((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0);
    let denom = 2.0 * sigma * sigma;
    ScalarField::from_fn(width, height, |x, y| {
        let (dx, dy) = (x as f64 - cx, y as f64 - cy);
        (-(dx * dx + dy * dy) / denom).exp()
    })
}

pub fn apply_center_bias(map: &ScalarField, sigma_fraction: f64) -> Result<ScalarField> {
    if sigma_fraction.is_nan() || sigma_fraction <= 0.0 {
        return Err(Error::arg("center bias sigma fraction must be positive"));
    }
    let weights = center_bias_weights(map.width(), map.height(), sigma_fraction);
    let data = map.data().iter().zip(weights.data()).map(|(m, w)| m * w).collect();
    Ok(normalize_minmax(&ScalarField::new(map.width(), map.height(), data)?))
}

/// Intermediates of one channel at one scale.
#[derive(Debug, Clone)]
pub struct ChannelTrace {
    pub role: ChannelRole,
    pub channel: ScalarField,
    pub stats: StatStack,
    pub expected: ScalarField,
    pub surprise: ScalarField,
    pub stretched: ScalarField,
}

#[derive(Debug, Clone)]
pub struct ScaleTrace {
    pub divisor: usize,
    pub channels: Vec<ChannelTrace>,
    pub fused: ScalarField,
    /// Scale map after optional centre bias, upsampled to working size.
    pub upsampled: ScalarField,
}

#[derive(Debug, Clone, Default)]
pub struct Trace {
    pub scales: Vec<ScaleTrace>,
}

pub fn compute_saliency(img: &RgbImage, cfg: &PipelineConfig) -> Result<SaliencyMap> {
    run(img, cfg, false).map(|(m, _)| m)
}

/// Like [`compute_saliency`] but also returns every intermediate map.
pub fn compute_saliency_traced(img: &RgbImage, cfg: &PipelineConfig) -> Result<(SaliencyMap, Trace)> {
    run(img, cfg, true)
}

fn run(img: &RgbImage, cfg: &PipelineConfig, keep: bool) -> Result<(SaliencyMap, Trace)> {
    cfg.validate()?;
    if img.width() == 0 || img.height() == 0 {
        return Err(Error::arg("empty image"));
    }
    let (ww, wh) = (cfg.working_width, cfg.working_height);
    let base = resize_rgb(img, ww, wh)?;

    let scales: Vec<ScaleTrace> = cfg
        .scales
        .par_iter()
        .enumerate()
        .map(|(i, &divisor)| run_scale(&base, divisor, scale_seed(cfg.seed, i), cfg, keep))
        .collect::<Result<_>>()?;

    let upsampled: Vec<ScalarField> = scales.iter().map(|s| s.upsampled.clone()).collect();
    let mut map = combine_channels(&upsampled)?;
    if !cfg.center_bias_per_scale {
        map = apply_center_bias(&map, cfg.center_bias_sigma)?;
    }
    let trace = Trace {
        scales: if keep { scales } else { Vec::new() },
    };
    Ok((
        SaliencyMap {
            map,
            config_hash: cfg.hash(),
            seed: cfg.seed,
        },
        trace,
    ))
}

fn run_scale(base: &RgbImage, divisor: usize, seed: u64, cfg: &PipelineConfig, keep: bool) -> Result<ScaleTrace> {
    let (sw, sh) = cfg.scale_dims(divisor);
    let img = resize_rgb(base, sw, sh)?;
    let set = extract(&img, cfg.variant, &cfg.channels)?;
    let grid = partition_blocks(sw, sh, cfg.block_width, cfg.block_height)?;
    let order = traversal_order(&grid, seed);

    let channels: Vec<ChannelTrace> = set
        .channels
        .into_par_iter()
        .map(|(role, channel)| -> Result<ChannelTrace> {
            let stats = StatStack::compute(&channel, cfg.entropy_bins)?;
            let expected = expected_from_stats(&channel, &stats, &grid, &order, &cfg.kalman)?;
            let surprise = channel_saliency(&channel, &expected)?;
            let stretched = contrast_stretch(&surprise, cfg.stretch_low, cfg.stretch_high)?;
            Ok(ChannelTrace {
                role,
                channel,
                stats,
                expected,
                surprise,
                stretched,
            })
        })
        .collect::<Result<_>>()?;

    let stretched: Vec<ScalarField> = channels.iter().map(|c| c.stretched.clone()).collect();
    let fused = combine_channels(&stretched)?;
    let biased = if cfg.center_bias_per_scale {
        apply_center_bias(&fused, cfg.center_bias_sigma)?
    } else {
        fused.clone()
    };
    let upsampled = resize_bilinear(&biased, cfg.working_width, cfg.working_height)?;
    Ok(ScaleTrace {
        divisor,
        channels: if keep { channels } else { Vec::new() },
        fused,
        upsampled,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> PipelineConfig {
        PipelineConfig {
            working_width: 64,
            working_height: 48,
            block_width: 8,
            block_height: 8,
            ..Default::default()
        }
    }

    #[test]
    fn traversal_examples() {
        let g = partition_blocks(10, 10, 25, 25).unwrap();
        assert_eq!(traversal_order(&g, 7), vec![0]);
        let g = partition_blocks(400, 300, 25, 25).unwrap();
        let a = traversal_order(&g, 42);
        assert_eq!(a, traversal_order(&g, 42));
        assert_ne!(a, traversal_order(&g, 43));
        let mut sorted = a.clone();
        sorted.sort();
        assert_eq!(sorted, (0..192).collect::<Vec<_>>());
    }

    #[test]
    fn expected_of_constant_channel() {
        let c = 0.63;
        let ch = ScalarField::filled(100, 75, c);
        let g = partition_blocks(100, 75, 25, 25).unwrap();
        let order = traversal_order(&g, 5);
        let e = expected_channel(&ch, &g, &order, &PipelineConfig::default()).unwrap();
        let first = g.blocks()[order[0]];
        for y in 0..75 {
            for x in 0..100 {
                let in_first = (first.x0..first.x0 + first.width).contains(&x)
                    && (first.y0..first.y0 + first.height).contains(&y);
                if in_first {
                    assert_eq!(e.get(x, y), 0.0);
                } else {
                    assert!((e.get(x, y) - c).abs() < 1e-3);
                }
            }
        }
    }

    #[test]
    fn expected_is_piecewise_constant() {
        let ch = ScalarField::from_fn(53, 41, |x, y| (((x * 31) ^ (y * 17)) % 23) as f64 / 22.0);
        let g = partition_blocks(53, 41, 10, 9).unwrap();
        let e = expected_channel(&ch, &g, &traversal_order(&g, 1), &PipelineConfig::default()).unwrap();
        for b in g.blocks() {
            let v = e.get(b.x0, b.y0);
            for y in b.y0..b.y0 + b.height {
                for x in b.x0..b.x0 + b.width {
                    assert_eq!(e.get(x, y), v);
                }
            }
            assert!((0.0..=1.0).contains(&v));
        }
        assert!(expected_channel(&ch, &g, &[0, 1], &PipelineConfig::default()).is_err());
    }

    #[test]
    fn saliency_examples() {
        let a = ScalarField::from_fn(5, 4, |x, y| (x + y) as f64 / 7.0);
        assert!(channel_saliency(&a, &a).unwrap().data().iter().all(|&v| v == 0.0));
        let one = ScalarField::filled(1, 1, 1.0);
        assert_eq!(channel_saliency(&one, &ScalarField::zeros(1, 1)).unwrap().get(0, 0), 1.0);
        let b = a.map(|v| 1.0 - v * v);
        let s = channel_saliency(&a, &b).unwrap();
        for i in 0..a.len() {
            assert_eq!(s.data()[i], (a.data()[i] - b.data()[i]).abs());
        }
        assert!(channel_saliency(&a, &one).is_err());
    }

    #[test]
    fn stretch_examples() {
        let f = ScalarField::new(5, 1, vec![0.0, 0.25, 0.5, 0.75, 1.0]).unwrap();
        assert_eq!(contrast_stretch(&f, 0.0, 100.0).unwrap(), f);
        let c = ScalarField::filled(3, 3, 0.4);
        assert!(contrast_stretch(&c, 1.0, 99.0).unwrap().data().iter().all(|&v| v == 0.0));
        assert!(contrast_stretch(&f, 50.0, 50.0).is_err());

        // 1st/99th percentile of 0..=100 are 1 and 99
        let r = ScalarField::from_fn(101, 1, |x, _| x as f64);
        let s = contrast_stretch(&r, 1.0, 99.0).unwrap();
        assert_eq!(s.get(0, 0), 0.0);
        assert_eq!(s.get(1, 0), 0.0);
        assert!((s.get(50, 0) - 0.5).abs() < 1e-15);
        assert_eq!(s.get(100, 0), 1.0);

        // sparse map whose percentiles coincide falls back to min-max
        let mut sparse = ScalarField::zeros(20, 20);
        sparse.set(3, 3, 0.8);
        let s = contrast_stretch(&sparse, 1.0, 99.0).unwrap();
        assert_eq!(s.get(3, 3), 1.0);
    }

    #[test]
    fn combine_examples() {
        let a = ScalarField::from_fn(4, 3, |x, y| (x * y) as f64 / 6.0);
        assert_eq!(combine_channels(&[a.clone(), a.clone()]).unwrap(), normalize_minmax(&a));
        let z = combine_channels(&[ScalarField::zeros(3, 3), ScalarField::filled(3, 3, 1.0)]).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
        let b = a.map(|v| (v * 3.0).sin().abs());
        let c = a.map(|v| 1.0 - v);
        let got = combine_channels(&[a.clone(), b.clone(), c.clone()]).unwrap();
        let mean: Vec<f64> = (0..a.len())
            .map(|i| (a.data()[i] + b.data()[i] + c.data()[i]) / 3.0)
            .collect();
        let expect = normalize_minmax(&ScalarField::new(4, 3, mean).unwrap());
        for (g, e) in got.data().iter().zip(expect.data()) {
            assert!((g - e).abs() < 1e-12);
        }
        assert!(combine_channels(&[a, ScalarField::zeros(2, 2)]).is_err());
        assert!(combine_channels(&[]).is_err());
    }

    #[test]
    fn center_bias_examples() {
        let (w, h) = (41usize, 31usize);
        let wts = center_bias_weights(w, h, 0.35);
        assert_eq!(wts.get(20, 15), 1.0);
        let sigma = 0.35 * ((w * w + h * h) as f64).sqrt();
        let half_diag = (20.0f64.powi(2) + 15.0f64.powi(2)).sqrt();
        let corner = (-half_diag * half_diag / (2.0 * sigma * sigma)).exp();
        assert!((wts.get(0, 0) - corner).abs() < 1e-15);
        assert!((wts.get(w - 1, h - 1) - corner).abs() < 1e-15);

        let m = ScalarField::from_fn(w, h, |x, y| ((x * 7 + y * 3) % 11) as f64 / 10.0);
        let flat = apply_center_bias(&m, 1e3).unwrap();
        for (a, b) in flat.data().iter().zip(m.data()) {
            assert!((a - b).abs() < 1e-6);
        }
        assert!(apply_center_bias(&m, 0.0).is_err());
    }

    #[test]
    fn constant_image_gives_quiet_map() {
        let img = RgbImage::from_fn(80, 60, |_, _| [0.3, 0.6, 0.2]).unwrap();
        let cfg = small_cfg();
        let s = compute_saliency(&img, &cfg).unwrap();
        let below = s.map.data().iter().filter(|&&v| v < 0.2).count();
        assert!(below as f64 >= 0.99 * s.map.len() as f64);
    }

    #[test]
    fn saliency_is_deterministic_and_in_range() {
        let img = RgbImage::from_fn(70, 50, |x, y| {
            [(x as f64 / 69.0), (y as f64 / 49.0), (((x ^ y) % 5) as f64 / 4.0)]
        })
        .unwrap();
        let cfg = small_cfg();
        let a = compute_saliency(&img, &cfg).unwrap();
        let b = compute_saliency(&img, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.map.dims(), (64, 48));
        assert!(a.map.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(a.config_hash.len(), 16);

        let (c, trace) = compute_saliency_traced(&img, &cfg).unwrap();
        assert_eq!(a, c);
        assert_eq!(trace.scales.len(), 3);
        assert_eq!(trace.scales[0].channels.len(), 7);
        for sc in &trace.scales {
            for ch in &sc.channels {
                for f in [&ch.channel, &ch.expected, &ch.stretched] {
                    assert!(f.data().iter().all(|v| (0.0..=1.0).contains(v)));
                }
            }
        }
    }

    #[test]
    fn scale_fusion_is_order_invariant() {
        let maps: Vec<ScalarField> = (0..3)
            .map(|k| ScalarField::from_fn(9, 7, |x, y| ((x * (k + 2) + y * (k + 5)) % 13) as f64 / 12.0))
            .collect();
        let a = combine_channels(&maps).unwrap();
        let b = combine_channels(&[maps[2].clone(), maps[0].clone(), maps[1].clone()]).unwrap();
        for (p, q) in a.data().iter().zip(b.data()) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn config_validation() {
        PipelineConfig::default().validate().unwrap();
        let bad = PipelineConfig { scales: vec![], ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = PipelineConfig { stretch_low: 99.0, stretch_high: 1.0, ..Default::default() };
        assert!(bad.validate().is_err());
        assert_ne!(PipelineConfig::default().hash(), PipelineConfig { seed: 1, ..Default::default() }.hash());
    }
}
