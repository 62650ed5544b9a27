//! Feature-channel decomposition: three opponent colour channels (KS-3) or
//! intensity, two colour opponencies and four Gabor orientations (KS-7).

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{normalize_minmax, RgbImage, ScalarField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Ks3,
    Ks7,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Ks3 => "ks3",
            Variant::Ks7 => "ks7",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ChannelRole {
    /// KS-3 opponent axis 1..=3.
    Opponent(u8),
    Intensity,
    RedGreen,
    BlueYellow,
    /// Orientation in degrees.
    Orientation(u16),
}

impl fmt::Display for ChannelRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ChannelRole::Opponent(i) => write!(f, "opponent-{i}"),
            ChannelRole::Intensity => f.write_str("intensity"),
            ChannelRole::RedGreen => f.write_str("red-green"),
            ChannelRole::BlueYellow => f.write_str("blue-yellow"),
            ChannelRole::Orientation(t) => write!(f, "orientation-{t}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelConfig {
    pub gabor_wavelength: f64,
    pub gabor_sigma: f64,
    /// Odd kernel side length.
    pub gabor_size: usize,
    /// Colour opponency is zeroed where intensity falls below this.
    pub dark_threshold: f64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            gabor_wavelength: 8.0,
            gabor_sigma: 3.2,
            gabor_size: 19,
            dark_threshold: 0.1,
        }
    }
}

pub const ORIENTATIONS: [u16; 4] = [0, 45, 90, 135];

/// Channels of one image, each min-max normalized to `[0, 1]`.
#[derive(Debug, Clone)]
pub struct ChannelSet {
    pub variant: Variant,
    pub channels: Vec<(ChannelRole, ScalarField)>,
}

impl ChannelSet {
    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }

    pub fn fields(&self) -> impl Iterator<Item = &ScalarField> {
        self.channels.iter().map(|(_, f)| f)
    }

    fn normalized(variant: Variant, raw: Vec<(ChannelRole, ScalarField)>) -> Self {
        let channels = raw
            .into_iter()
            .map(|(role, f)| (role, normalize_minmax(&f)))
            .collect();
        Self { variant, channels }
    }
}

pub fn extract(img: &RgbImage, variant: Variant, cfg: &ChannelConfig) -> Result<ChannelSet> {
    match variant {
        Variant::Ks3 => extract_ks3(img),
        Variant::Ks7 => extract_ks7(img, cfg),
    }
}

fn ensure_non_empty(img: &RgbImage) -> Result<()> {
    if img.width() == 0 || img.height() == 0 {
        return Err(Error::arg("empty image"));
    }
    Ok(())
}

/// Orthonormal opponent transform before normalization:
/// `O1 = (R-G)/sqrt2`, `O2 = (R+G-2B)/sqrt6`, `O3 = (R+G+B)/sqrt3`.
pub fn ks3_raw(img: &RgbImage) -> [ScalarField; 3] {
    let (w, h) = (img.width(), img.height());
    let plane = |f: fn([f64; 3]) -> f64| {
        ScalarField::from_vec_unchecked(w, h, img.pixels().iter().map(|&p| f(p)).collect())
    };
    [
        plane(|[r, g, _]| (r - g) / 2f64.sqrt()),
        plane(|[r, g, b]| (r + g - 2.0 * b) / 6f64.sqrt()),
        plane(|[r, g, b]| (r + g + b) / 3f64.sqrt()),
    ]
}

pub fn extract_ks3(img: &RgbImage) -> Result<ChannelSet> {
    ensure_non_empty(img)?;
    let raw = ks3_raw(img)
        .into_iter()
        .enumerate()
        .map(|(i, f)| (ChannelRole::Opponent(i as u8 + 1), f))
        .collect();
    Ok(ChannelSet::normalized(Variant::Ks3, raw))
}

/// Intensity, RG, BY and the four Gabor magnitudes before normalization.
pub fn ks7_raw(img: &RgbImage, cfg: &ChannelConfig) -> Result<Vec<(ChannelRole, ScalarField)>> {
    let (w, h) = (img.width(), img.height());
    let px = img.pixels();
    let intensity: Vec<f64> = px.iter().map(|[r, g, b]| (r + g + b) / 3.0).collect();
    let opponency = |f: fn([f64; 3]) -> f64| -> Vec<f64> {
        px.iter()
            .zip(&intensity)
            .map(|(&p, &i)| if i < cfg.dark_threshold { 0.0 } else { f(p) })
            .collect()
    };
    let rg = opponency(|[r, g, _]| r - g);
    let by = opponency(|[r, g, b]| b - (r + g) / 2.0);
    let intensity = ScalarField::from_vec_unchecked(w, h, intensity);

    let mut out = vec![
        (ChannelRole::Intensity, intensity.clone()),
        (ChannelRole::RedGreen, ScalarField::from_vec_unchecked(w, h, rg)),
        (ChannelRole::BlueYellow, ScalarField::from_vec_unchecked(w, h, by)),
    ];
    for theta in ORIENTATIONS {
        let kernel = gabor_kernel(theta as f64, cfg.gabor_wavelength, cfg.gabor_sigma, cfg.gabor_size)?;
        let response = convolve_replicate(&intensity, &kernel)?;
        out.push((ChannelRole::Orientation(theta), response.map(f64::abs)));
    }
    Ok(out)
}

pub fn extract_ks7(img: &RgbImage, cfg: &ChannelConfig) -> Result<ChannelSet> {
    ensure_non_empty(img)?;
    Ok(ChannelSet::normalized(Variant::Ks7, ks7_raw(img, cfg)?))
}

/// Cosine-phase Gabor kernel with unit aspect ratio, mean removed so it sums to zero.
///
/// `theta = 0` modulates along x, so it responds to vertical structure.
/// Image y grows downward.
pub fn gabor_kernel(theta_deg: f64, wavelength: f64, sigma: f64, size: usize) -> Result<ScalarField> {
    if size < 3 || size.is_multiple_of(2) {
        return Err(Error::arg(format!("gabor kernel size must be odd and >= 3, got {size}")));
    }
    if !(wavelength > 0.0 && sigma > 0.0) {
        return Err(Error::arg("gabor wavelength and sigma must be positive"));
    }
    let half = (size / 2) as f64;
    let (sin_t, cos_t) = theta_deg.to_radians().sin_cos();
    let mut k = ScalarField::from_fn(size, size, |i, j| {
        let (x, y) = (i as f64 - half, j as f64 - half);
        let xr = x * cos_t + y * sin_t;
        let yr = -x * sin_t + y * cos_t;
        (-(xr * xr + yr * yr) / (2.0 * sigma * sigma)).exp() * (2.0 * PI * xr / wavelength).cos()
    });
    let dc = k.mean();
    k = k.map(|v| v - dc);
    Ok(k)
}

/// Replicates edge pixels outward by `rx` columns and `ry` rows.
pub(crate) fn pad_replicate(field: &ScalarField, rx: usize, ry: usize) -> (Vec<f64>, usize) {
    let (w, h) = field.dims();
    let pw = w + 2 * rx;
    let mut out = Vec::with_capacity(pw * (h + 2 * ry));
    for py in 0..h + 2 * ry {
        let y = py.saturating_sub(ry).min(h - 1);
        let row = &field.data()[y * w..(y + 1) * w];
        out.extend(std::iter::repeat_n(row[0], rx));
        out.extend_from_slice(row);
        out.extend(std::iter::repeat_n(row[w - 1], rx));
    }
    (out, pw)
}

/// 2-D correlation with an odd-sized kernel and replicate-edge padding.
pub fn convolve_replicate(field: &ScalarField, kernel: &ScalarField) -> Result<ScalarField> {
    let (kw, kh) = kernel.dims();
    if kw % 2 == 0 || kh % 2 == 0 {
        return Err(Error::arg("kernel dimensions must be odd"));
    }
    if field.is_empty() {
        return Err(Error::arg("cannot convolve an empty field"));
    }
    let (w, h) = field.dims();
    let (rx, ry) = (kw / 2, kh / 2);
    let (padded, pw) = pad_replicate(field, rx, ry);
    let kdata = kernel.data();
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        let dst = &mut out[y * w..(y + 1) * w];
        for j in 0..kh {
            let krow = &kdata[j * kw..(j + 1) * kw];
            let src = &padded[(y + j) * pw..(y + j + 1) * pw];
            for (i, &kv) in krow.iter().enumerate() {
                if kv == 0.0 {
                    continue;
                }
                for (d, &s) in dst.iter_mut().zip(&src[i..i + w]) {
                    *d += kv * s;
                }
            }
        }
    }
    Ok(ScalarField::from_vec_unchecked(w, h, out))
}
