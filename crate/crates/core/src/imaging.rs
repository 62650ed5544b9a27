//! Raster I/O, the two image carriers and a few resampling primitives.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use image::{DynamicImage, GrayImage, ImageError, Luma, Rgb};

use crate::error::{Error, Result};

/// A 2-D grid of finite reals, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl ScalarField {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::arg(format!(
                "field data has {} values, expected {}x{}={}",
                data.len(),
                width,
                height,
                width * height
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite value at ({}, {})",
                i % width.max(1),
                i / width.max(1)
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        assert!(value.is_finite());
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    /// Builds a field by evaluating `f(x, y)` at every pixel.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        debug_assert!(data.iter().all(|v| v.is_finite()));
        Self {
            width,
            height,
            data,
        }
    }

    pub(crate) fn from_vec_unchecked(width: usize, height: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), width * height);
        debug_assert!(data.iter().all(|v| v.is_finite()));
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: f64) {
        self.data[y * self.width + x] = value;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_vec_unchecked(self.width, self.height, self.data.iter().map(|&v| f(v)).collect())
    }

    /// Returns `(min, max)`, or `None` for an empty field.
    pub fn min_max(&self) -> Option<(f64, f64)> {
        let mut it = self.data.iter().copied();
        let first = it.next()?;
        Some(it.fold((first, first), |(lo, hi), v| (lo.min(v), hi.max(v))))
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            0.0
        } else {
            self.sum() / self.data.len() as f64
        }
    }

    pub(crate) fn ensure_same_dims(&self, other: &ScalarField, what: &str) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::arg(format!(
                "{what}: dimension mismatch {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }
}

/// An RGB image with every component in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<[f64; 3]>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<[f64; 3]>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::arg(format!(
                "image data has {} pixels, expected {}",
                data.len(),
                width * height
            )));
        }
        if data
            .iter()
            .flatten()
            .any(|c| !(0.0..=1.0).contains(c))
        {
            return Err(Error::arg("image component outside [0, 1]"));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    /// Stacks three `[0, 1]` fields into an image.
    pub fn from_planes(r: &ScalarField, g: &ScalarField, b: &ScalarField) -> Result<Self> {
        r.ensure_same_dims(g, "from_planes")?;
        r.ensure_same_dims(b, "from_planes")?;
        let data = r
            .data()
            .iter()
            .zip(g.data())
            .zip(b.data())
            .map(|((&r, &g), &b)| [r, g, b])
            .collect();
        Self::new(r.width(), r.height(), data)
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        self.data[y * self.width + x]
    }

    pub fn pixels(&self) -> &[[f64; 3]] {
        &self.data
    }

    /// One component plane (0 = red, 1 = green, 2 = blue).
    pub fn plane(&self, component: usize) -> ScalarField {
        ScalarField::from_vec_unchecked(
            self.width,
            self.height,
            self.data.iter().map(|p| p[component]).collect(),
        )
    }
}

/// Loads a PNG, JPEG or PNM raster; components are scaled to `[0, 1]`.
/// Grayscale inputs are replicated into all three components.
pub fn load_image(path: impl AsRef<Path>) -> Result<RgbImage> {
    let path = path.as_ref();
    let img = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| match e {
            ImageError::IoError(io) => Error::io(path, io),
            other => Error::Format {
                path: path.to_path_buf(),
                message: other.to_string(),
            },
        })?;
    Ok(from_dynamic(&img))
}

fn from_dynamic(img: &DynamicImage) -> RgbImage {
    let (width, height) = (img.width() as usize, img.height() as usize);
    let data = if img.color().bytes_per_pixel() / img.color().channel_count() > 1 {
        img.to_rgb16()
            .pixels()
            .map(|p| p.0.map(|c| c as f64 / 65535.0))
            .collect()
    } else {
        img.to_rgb8()
            .pixels()
            .map(|p| p.0.map(|c| c as f64 / 255.0))
            .collect()
    };
    RgbImage {
        width,
        height,
        data,
    }
}

#[inline]
fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn encode_error(path: &Path, e: ImageError) -> Error {
    match e {
        ImageError::IoError(io) => Error::io(path, io),
        other => Error::Format {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    }
}

/// Writes an 8-bit grayscale PNG with value `round(v * 255)` (clamped).
pub fn save_png(field: &ScalarField, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let buf = GrayImage::from_fn(field.width() as u32, field.height() as u32, |x, y| {
        Luma([quantize(field.get(x as usize, y as usize))])
    });
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| encode_error(path, e))
}

/// Writes an 8-bit RGB PNG.
pub fn save_rgb_png(img: &RgbImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let buf = image::RgbImage::from_fn(img.width() as u32, img.height() as u32, |x, y| {
        Rgb(img.get(x as usize, y as usize).map(quantize))
    });
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| encode_error(path, e))
}

/// Raw float export: `width: u32 LE`, `height: u32 LE`, then `width * height`
/// little-endian `f32` values in row-major order.
pub fn encode_raw_f32(field: &ScalarField) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 * field.len());
    out.extend_from_slice(&(field.width() as u32).to_le_bytes());
    out.extend_from_slice(&(field.height() as u32).to_le_bytes());
    for &v in field.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_raw_f32(bytes: &[u8]) -> Result<ScalarField> {
    if bytes.len() < 8 {
        return Err(Error::arg("raw float buffer shorter than its header"));
    }
    let width = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
    let height = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let body = &bytes[8..];
    if body.len() != 4 * width * height {
        return Err(Error::arg(format!(
            "raw float body has {} bytes, expected {} for {}x{}",
            body.len(),
            4 * width * height,
            width,
            height
        )));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    ScalarField::new(width, height, data)
}

pub fn write_raw_f32(field: &ScalarField, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&encode_raw_f32(field))
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn read_raw_f32(path: impl AsRef<Path>) -> Result<ScalarField> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_raw_f32(&bytes)
}

/// Source coordinate and blend weight along one axis, pixel-centre aligned.
#[inline]
fn sample_axis(dst: usize, dst_len: usize, src_len: usize) -> (usize, usize, f64) {
    let scale = src_len as f64 / dst_len as f64;
    let pos = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (src_len - 1) as f64);
    let i0 = pos.floor() as usize;
    let i1 = (i0 + 1).min(src_len - 1);
    (i0, i1, pos - i0 as f64)
}

/// Bilinear resampling with pixel-centre alignment and edge clamping.
pub fn resize_bilinear(field: &ScalarField, new_width: usize, new_height: usize) -> Result<ScalarField> {
    if new_width == 0 || new_height == 0 {
        return Err(Error::arg("resize target has a zero dimension"));
    }
    if field.is_empty() {
        return Err(Error::arg("cannot resize an empty field"));
    }
    if field.dims() == (new_width, new_height) {
        return Ok(field.clone());
    }
    let cols: Vec<_> = (0..new_width)
        .map(|x| sample_axis(x, new_width, field.width()))
        .collect();
    let mut data = Vec::with_capacity(new_width * new_height);
    for y in 0..new_height {
        let (y0, y1, ty) = sample_axis(y, new_height, field.height());
        for &(x0, x1, tx) in &cols {
            let top = lerp(field.get(x0, y0), field.get(x1, y0), tx);
            let bottom = lerp(field.get(x0, y1), field.get(x1, y1), tx);
            data.push(lerp(top, bottom, ty));
        }
    }
    Ok(ScalarField::from_vec_unchecked(new_width, new_height, data))
}

// `a + (b - a) t` keeps constants exact.
#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

pub fn resize_rgb(img: &RgbImage, new_width: usize, new_height: usize) -> Result<RgbImage> {
    if (img.width(), img.height()) == (new_width, new_height) {
        return Ok(img.clone());
    }
    let planes: Vec<ScalarField> = (0..3)
        .map(|c| resize_bilinear(&img.plane(c), new_width, new_height))
        .collect::<Result<_>>()?;
    let data = (0..new_width * new_height)
        .map(|i| [0, 1, 2].map(|c| planes[c].data()[i].clamp(0.0, 1.0)))
        .collect();
    Ok(RgbImage {
        width: new_width,
        height: new_height,
        data,
    })
}

/// Affine map onto `[0, 1]`; a constant field maps to all zeros.
pub fn normalize_minmax(field: &ScalarField) -> ScalarField {
    match field.min_max() {
        Some((lo, hi)) if hi > lo => {
            let span = hi - lo;
            field.map(|v| (v - lo) / span)
        }
        _ => ScalarField::zeros(field.width(), field.height()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_scaling_and_grayscale_replication() {
        let dir = tempfile::tempdir().unwrap();
        let ppm = dir.path().join("red.ppm");
        let mut bytes = b"P6\n2 2\n255\n".to_vec();
        bytes.extend_from_slice(&[255, 0, 0, 0, 255, 0, 0, 0, 255, 128, 128, 128]);
        fs::write(&ppm, bytes).unwrap();
        let img = load_image(&ppm).unwrap();
        assert_eq!((img.width(), img.height()), (2, 2));
        assert_eq!(img.get(0, 0), [1.0, 0.0, 0.0]);
        assert_eq!(img.get(1, 1), [128.0 / 255.0; 3]);

        let pgm = dir.path().join("gray.pgm");
        let mut bytes = b"P5\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[51, 204]);
        fs::write(&pgm, bytes).unwrap();
        let img = load_image(&pgm).unwrap();
        for p in img.pixels() {
            assert_eq!(p[0], p[1]);
            assert_eq!(p[1], p[2]);
        }
        assert_eq!(img.get(0, 0)[0], 0.2);
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = load_image("/definitely/not/here.png").unwrap_err();
        assert!(matches!(err, Error::Io { .. }), "{err:?}");
    }

    #[test]
    fn garbage_file_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("junk.png");
        fs::write(&p, b"this is not an image at all").unwrap();
        assert!(matches!(load_image(&p).unwrap_err(), Error::Format { .. }));
    }

    #[test]
    fn rgb_png_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let img = RgbImage::from_fn(7, 5, |x, y| {
            [(x * 30 % 256) as f64 / 255.0, (y * 50) as f64 / 255.0, ((x + y) * 17) as f64 / 255.0]
        })
        .unwrap();
        let a = dir.path().join("a.png");
        let b = dir.path().join("b.png");
        save_rgb_png(&img, &a).unwrap();
        let once = load_image(&a).unwrap();
        assert_eq!(once, img);
        save_rgb_png(&once, &b).unwrap();
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    }

    #[test]
    fn gray_png_uses_rounding() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.png");
        let f = ScalarField::new(3, 1, vec![0.0, 0.5, 1.0]).unwrap();
        save_png(&f, &p).unwrap();
        let back = image::open(&p).unwrap();
        assert_eq!(back.color(), image::ColorType::L8);
        assert_eq!(back.to_luma8().into_raw(), vec![0, 128, 255]);
    }

    #[test]
    fn raw_float_layout() {
        let f = ScalarField::new(2, 1, vec![1.5, -2.0]).unwrap();
        let bytes = encode_raw_f32(&f);
        assert_eq!(&bytes[..8], &[2, 0, 0, 0, 1, 0, 0, 0]);
        assert_eq!(&bytes[8..12], &1.5f32.to_le_bytes());
        assert_eq!(decode_raw_f32(&bytes).unwrap(), f);
        assert!(decode_raw_f32(&bytes[..10]).is_err());
    }

    #[test]
    fn resize_two_to_three() {
        let f = ScalarField::new(2, 1, vec![0.0, 1.0]).unwrap();
        let r = resize_bilinear(&f, 3, 1).unwrap();
        assert_eq!(r.data(), &[0.0, 0.5, 1.0]);
    }

    #[test]
    fn resize_constant_and_identity() {
        let c = ScalarField::filled(13, 7, 0.5);
        for (w, h) in [(1, 1), (5, 3), (40, 21), (13, 7)] {
            let r = resize_bilinear(&c, w, h).unwrap();
            assert!(r.data().iter().all(|&v| v == 0.5));
        }
        let f = ScalarField::from_fn(9, 4, |x, y| (x * y) as f64 * 0.1);
        assert_eq!(resize_bilinear(&f, 9, 4).unwrap(), f);
        assert!(resize_bilinear(&f, 0, 4).is_err());
    }

    #[test]
    fn minmax_examples() {
        let f = ScalarField::new(3, 1, vec![2.0, 4.0, 6.0]).unwrap();
        assert_eq!(normalize_minmax(&f).data(), &[0.0, 0.5, 1.0]);
        let f = ScalarField::new(3, 1, vec![-1.0, 0.0, 1.0]).unwrap();
        assert_eq!(normalize_minmax(&f).data(), &[0.0, 0.5, 1.0]);
        let c = ScalarField::filled(4, 4, 3.0);
        assert!(normalize_minmax(&c).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_bad_construction() {
        assert!(ScalarField::new(2, 2, vec![0.0; 3]).is_err());
        assert!(ScalarField::new(1, 1, vec![f64::NAN]).is_err());
        assert!(RgbImage::new(1, 1, vec![[0.0, 1.2, 0.0]]).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn field() -> impl Strategy<Value = ScalarField> {
            (1usize..12, 1usize..12).prop_flat_map(|(w, h)| {
                prop::collection::vec(-5.0f64..5.0, w * h)
                    .prop_map(move |d| ScalarField::new(w, h, d).unwrap())
            })
        }

        proptest! {
            #[test]
            fn identity_resize_is_exact(f in field()) {
                prop_assert_eq!(resize_bilinear(&f, f.width(), f.height()).unwrap(), f);
            }

            #[test]
            fn minmax_spans_unit_interval(f in field()) {
                let n = normalize_minmax(&f);
                let (lo, hi) = f.min_max().unwrap();
                let (nlo, nhi) = n.min_max().unwrap();
                if hi > lo {
                    prop_assert_eq!((nlo, nhi), (0.0, 1.0));
                } else {
                    prop_assert_eq!((nlo, nhi), (0.0, 0.0));
                }
            }

            #[test]
            fn resize_stays_within_input_range(f in field(), w in 1usize..30, h in 1usize..30) {
                let (lo, hi) = f.min_max().unwrap();
                let r = resize_bilinear(&f, w, h).unwrap();
                for &v in r.data() {
                    prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
                }
            }
        }
    }
}
