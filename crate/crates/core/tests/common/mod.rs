//! Reference implementations written without reusing library internals,
//! plus synthetic fixtures shared by the integration tests.
#![allow(dead_code)]

use kalsal::{RgbImage, ScalarField};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Mat = Vec<Vec<f64>>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------- dense Kalman

pub fn identity(n: usize) -> Mat {
    (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect()
}

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    let (n, m, p) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; p]; n];
    for i in 0..n {
        for j in 0..p {
            let mut s = 0.0;
            for k in 0..m {
                s += a[i][k] * b[k][j];
            }
            out[i][j] = s;
        }
    }
    out
}

pub fn transpose(a: &Mat) -> Mat {
    (0..a[0].len()).map(|j| a.iter().map(|row| row[j]).collect()).collect()
}

pub fn add(a: &Mat, b: &Mat) -> Mat {
    a.iter().zip(b).map(|(r, s)| r.iter().zip(s).map(|(x, y)| x + y).collect()).collect()
}

pub fn sub(a: &Mat, b: &Mat) -> Mat {
    a.iter().zip(b).map(|(r, s)| r.iter().zip(s).map(|(x, y)| x - y).collect()).collect()
}

pub fn scale(a: &Mat, k: f64) -> Mat {
    a.iter().map(|r| r.iter().map(|x| x * k).collect()).collect()
}

/// Textbook filter with an explicit transition matrix `F = I` and a 1×n
/// measurement matrix `H = hᵀ`, every product spelled out as a matrix product.
pub struct DenseKalman {
    pub x: Mat, // n×1
    pub p: Mat, // n×n
}

impl DenseKalman {
    pub fn new(n: usize, x0: f64, p0: f64) -> Self {
        Self {
            x: vec![vec![x0]; n],
            p: scale(&identity(n), p0),
        }
    }

    /// Returns the pre-update prediction `H x⁻`.
    pub fn step(&mut self, h: &[f64], z: f64, q: f64, r: f64) -> f64 {
        let n = h.len();
        let f = identity(n);
        let hm: Mat = vec![h.to_vec()];
        let x_minus = matmul(&f, &self.x);
        let p_minus = add(&matmul(&matmul(&f, &self.p), &transpose(&f)), &scale(&identity(n), q));
        let s = matmul(&matmul(&hm, &p_minus), &transpose(&hm))[0][0] + r;
        let k = scale(&matmul(&p_minus, &transpose(&hm)), 1.0 / s);
        let predicted = matmul(&hm, &x_minus)[0][0];
        let innovation = z - predicted;
        self.x = add(&x_minus, &scale(&k, innovation));
        let p = matmul(&sub(&identity(n), &matmul(&k, &hm)), &p_minus);
        self.p = scale(&add(&p, &transpose(&p)), 0.5);
        predicted
    }
}

// ---------------------------------------------------------------- metrics

pub fn brute_cc(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for i in 0..a.len() {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    sab / (saa * sbb).sqrt()
}

pub fn brute_sim(a: &[f64], b: &[f64]) -> f64 {
    let sa: f64 = a.iter().sum();
    let sb: f64 = b.iter().sum();
    a.iter().zip(b).map(|(x, y)| f64::min(x / sa, y / sb)).sum()
}

pub fn brute_nss(s: &[f64], width: usize, points: &[(usize, usize)]) -> f64 {
    let n = s.len() as f64;
    let m = s.iter().sum::<f64>() / n;
    let sd = (s.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt();
    points.iter().map(|&(x, y)| (s[y * width + x] - m) / sd).sum::<f64>() / points.len() as f64
}

/// ROC area by explicit enumeration: for each distinct positive score taken
/// as a threshold (descending), count by scanning every sample.
pub fn brute_roc_area(pos: &[f64], neg: &[f64]) -> f64 {
    let mut ts: Vec<f64> = pos.to_vec();
    ts.sort_by(|a, b| b.partial_cmp(a).unwrap());
    ts.dedup();
    let mut pts = vec![(0.0, 0.0)];
    for &t in &ts {
        let tp = pos.iter().filter(|&&v| v >= t).count() as f64 / pos.len() as f64;
        let fp = neg.iter().filter(|&&v| v >= t).count() as f64 / neg.len() as f64;
        pts.push((fp, tp));
    }
    pts.push((1.0, 1.0));
    pts.windows(2).map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0).sum()
}

/// Splits a map into (distinct fixated, non-fixated) scores.
pub fn split_scores(s: &[f64], width: usize, points: &[(usize, usize)]) -> (Vec<f64>, Vec<f64>) {
    let mut fixated = vec![false; s.len()];
    for &(x, y) in points {
        fixated[y * width + x] = true;
    }
    let pos = (0..s.len()).filter(|&i| fixated[i]).map(|i| s[i]).collect();
    let neg = (0..s.len()).filter(|&i| !fixated[i]).map(|i| s[i]).collect();
    (pos, neg)
}

// ---------------------------------------------------------------- local statistics

/// Window values around (x, y) with coordinates clamped to the field.
pub fn window_values(f: &ScalarField, x: usize, y: usize, win: usize) -> Vec<f64> {
    let r = (win / 2) as isize;
    let (w, h) = (f.width() as isize, f.height() as isize);
    let mut out = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            let xx = (x as isize + dx).clamp(0, w - 1) as usize;
            let yy = (y as isize + dy).clamp(0, h - 1) as usize;
            out.push(f.get(xx, yy));
        }
    }
    out
}

pub fn naive_mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn naive_std(v: &[f64]) -> f64 {
    let m = naive_mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
}

/// Entropy in bits over `bins` equal bins of `[0, 1]`, the value 1 falling in the top bin.
pub fn naive_entropy(v: &[f64], bins: usize) -> f64 {
    let mut counts = std::collections::BTreeMap::new();
    for &x in v {
        let b = ((x * bins as f64).floor() as usize).min(bins - 1);
        *counts.entry(b).or_insert(0usize) += 1;
    }
    let n = v.len() as f64;
    counts.values().map(|&c| c as f64 / n).map(|p| -p * p.log2()).sum()
}

// ---------------------------------------------------------------- fixtures

pub fn random_field(w: usize, h: usize, seed: u64) -> ScalarField {
    let mut r = rng(seed);
    ScalarField::from_fn(w, h, |_, _| r.random::<f64>())
}

pub fn random_rgb(w: usize, h: usize, seed: u64) -> RgbImage {
    let mut r = rng(seed);
    RgbImage::from_fn(w, h, |_, _| [r.random(), r.random(), r.random()]).unwrap()
}

/// Uniform grey background with one bright square.
pub fn square_fixture(w: usize, h: usize, x0: usize, y0: usize, side: usize) -> RgbImage {
    RgbImage::from_fn(w, h, |x, y| {
        let inside = (x0..x0 + side).contains(&x) && (y0..y0 + side).contains(&y);
        if inside { [0.9; 3] } else { [0.2; 3] }
    })
    .unwrap()
}

/// Smooth colour gradients with a few saturated blobs; has structure in
/// every opponent channel so KS-3 and KS-7 disagree on it.
pub fn colorful(w: usize, h: usize) -> RgbImage {
    let blobs = [
        (0.25, 0.3, [1.0, 0.1, 0.1]),
        (0.7, 0.6, [0.1, 0.2, 1.0]),
        (0.5, 0.8, [0.95, 0.9, 0.1]),
    ];
    RgbImage::from_fn(w, h, |x, y| {
        let (u, v) = (x as f64 / w as f64, y as f64 / h as f64);
        let mut c = [0.35 + 0.3 * u, 0.4 + 0.2 * v, 0.5 - 0.25 * u * v];
        for &(bx, by, col) in &blobs {
            let d2 = ((u - bx).powi(2) + (v - by).powi(2)) / 0.006;
            let wgt = (-d2).exp();
            for k in 0..3 {
                c[k] = c[k] * (1.0 - wgt) + col[k] * wgt;
            }
        }
        let stripe = if (x / 4 + y / 9) % 2 == 0 { 0.04 } else { -0.04 };
        c.map(|v| (v + stripe).clamp(0.0, 1.0))
    })
    .unwrap()
}

pub fn mean_inside_outside(map: &ScalarField, x0: usize, y0: usize, side: usize) -> (f64, f64) {
    let (mut si, mut ni, mut so, mut no) = (0.0, 0usize, 0.0, 0usize);
    for y in 0..map.height() {
        for x in 0..map.width() {
            let v = map.get(x, y);
            if (x0..x0 + side).contains(&x) && (y0..y0 + side).contains(&y) {
                si += v;
                ni += 1;
            } else {
                so += v;
                no += 1;
            }
        }
    }
    (si / ni as f64, so / no as f64)
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}
