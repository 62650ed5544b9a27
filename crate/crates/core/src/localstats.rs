//! Windowed local statistics, the block partition and per-block measurement vectors.
//!
//! All windowed operators use replicate-edge padding. Windows are square with
//! an odd side length centred on the output pixel.

use crate::channels::pad_replicate;
use crate::error::{Error, Result};
use crate::imaging::ScalarField;

pub const ENTROPY_WINDOWS: [usize; 3] = [5, 7, 9];
pub const MEAN_WINDOWS: [usize; 2] = [3, 5];
pub const STD_WINDOWS: [usize; 2] = [3, 5];
pub const DEFAULT_ENTROPY_BINS: usize = 64;

/// Number of local statistics per block (and Kalman state dimension).
pub const STAT_COUNT: usize = 7;

fn check_window(window: usize) -> Result<usize> {
    if window == 0 || window.is_multiple_of(2) {
        return Err(Error::arg(format!("window must be odd and >= 1, got {window}")));
    }
    Ok(window / 2)
}

/// Applies `f` to each pixel's window, gathered row by row into a reused buffer.
fn for_each_window(
    field: &ScalarField,
    window: usize,
    mut f: impl FnMut(&[f64]) -> f64,
) -> Result<ScalarField> {
    let r = check_window(window)?;
    if field.is_empty() {
        return Err(Error::arg("empty field"));
    }
    let (w, h) = field.dims();
    let (padded, pw) = pad_replicate(field, r, r);
    let mut buf = Vec::with_capacity(window * window);
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            buf.clear();
            for j in 0..window {
                let start = (y + j) * pw + x;
                buf.extend_from_slice(&padded[start..start + window]);
            }
            out.push(f(&buf));
        }
    }
    Ok(ScalarField::from_vec_unchecked(w, h, out))
}

pub fn local_mean(field: &ScalarField, window: usize) -> Result<ScalarField> {
    for_each_window(field, window, |v| v.iter().sum::<f64>() / v.len() as f64)
}

/// Population standard deviation (divides by the window count).
pub fn local_std(field: &ScalarField, window: usize) -> Result<ScalarField> {
    for_each_window(field, window, population_std)
}

#[inline]
pub(crate) fn bin_of(v: f64, bins: usize) -> usize {
    ((v * bins as f64) as usize).min(bins - 1)
}

/// Population standard deviation of a set of values.
pub fn population_std(values: &[f64]) -> f64 {
    // a rounded mean would leave a tiny residue on constant input
    if values.windows(2).all(|w| w[0] == w[1]) {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt()
}

/// Shannon entropy in bits of `values` binned into `bins` uniform bins on `[0, 1]`.
pub fn histogram_entropy(values: &[f64], bins: usize) -> f64 {
    let mut hist = vec![0usize; bins];
    for &v in values {
        hist[bin_of(v, bins)] += 1;
    }
    let n = values.len() as f64;
    hist.iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum()
}

/// Shannon entropy in bits of each window's histogram over `bins` uniform bins on `[0, 1]`.
pub fn local_entropy(field: &ScalarField, window: usize, bins: usize) -> Result<ScalarField> {
    let r = check_window(window)?;
    if bins < 2 {
        return Err(Error::arg("entropy needs at least 2 bins"));
    }
    if field.is_empty() {
        return Err(Error::arg("empty field"));
    }
    if let Some(v) = field.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::arg(format!("entropy input {v} outside [0, 1]")));
    }
    let (w, h) = field.dims();
    let (padded, pw) = pad_replicate(field, r, r);
    let idx: Vec<u16> = padded.iter().map(|&v| bin_of(v, bins) as u16).collect();

    let n = window * window;
    // -(c/n) log2(c/n) for every possible count
    let term: Vec<f64> = (0..=n)
        .map(|c| {
            if c == 0 {
                0.0
            } else {
                let p = c as f64 / n as f64;
                -p * p.log2()
            }
        })
        .collect();

    let mut hist = vec![0usize; bins];
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        hist.iter_mut().for_each(|c| *c = 0);
        for j in 0..window {
            for i in 0..window {
                hist[idx[(y + j) * pw + i] as usize] += 1;
            }
        }
        for x in 0..w {
            if x > 0 {
                for j in 0..window {
                    let row = (y + j) * pw;
                    hist[idx[row + x - 1] as usize] -= 1;
                    hist[idx[row + x + window - 1] as usize] += 1;
                }
            }
            out.push(hist.iter().map(|&c| term[c]).sum());
        }
    }
    Ok(ScalarField::from_vec_unchecked(w, h, out))
}

/// The seven statistic maps of one channel, in measurement order:
/// entropy 5/7/9, mean 3/5, std 3/5.
#[derive(Debug, Clone)]
pub struct StatStack {
    pub maps: [ScalarField; STAT_COUNT],
}

impl StatStack {
    pub fn compute(channel: &ScalarField, entropy_bins: usize) -> Result<Self> {
        let [e1, e2, e3] = ENTROPY_WINDOWS;
        let [m1, m2] = MEAN_WINDOWS;
        let [s1, s2] = STD_WINDOWS;
        Ok(Self {
            maps: [
                local_entropy(channel, e1, entropy_bins)?,
                local_entropy(channel, e2, entropy_bins)?,
                local_entropy(channel, e3, entropy_bins)?,
                local_mean(channel, m1)?,
                local_mean(channel, m2)?,
                local_std(channel, s1)?,
                local_std(channel, s2)?,
            ],
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.maps[0].dims()
    }

    pub fn labels() -> [&'static str; STAT_COUNT] {
        ["entropy5", "entropy7", "entropy9", "mean3", "mean5", "std3", "std5"]
    }
}

/// One rectangular block of the partition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Block {
    pub col: usize,
    pub row: usize,
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
}

/// Row-major tiling of a field into `m x n` blocks; trailing blocks are truncated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockGrid {
    pub block_width: usize,
    pub block_height: usize,
    pub cols: usize,
    pub rows: usize,
    pub field_width: usize,
    pub field_height: usize,
    blocks: Vec<Block>,
}

pub fn partition_blocks(width: usize, height: usize, m: usize, n: usize) -> Result<BlockGrid> {
    if m == 0 || n == 0 {
        return Err(Error::arg("block dimensions must be >= 1"));
    }
    if width == 0 || height == 0 {
        return Err(Error::arg("cannot partition an empty field"));
    }
    let cols = width.div_ceil(m);
    let rows = height.div_ceil(n);
    let mut blocks = Vec::with_capacity(cols * rows);
    for row in 0..rows {
        for col in 0..cols {
            let (x0, y0) = (col * m, row * n);
            blocks.push(Block {
                col,
                row,
                x0,
                y0,
                width: m.min(width - x0),
                height: n.min(height - y0),
            });
        }
    }
    Ok(BlockGrid {
        block_width: m,
        block_height: n,
        cols,
        rows,
        field_width: width,
        field_height: height,
        blocks,
    })
}

impl BlockGrid {
    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn block(&self, k: usize) -> Result<&Block> {
        self.blocks
            .get(k)
            .ok_or_else(|| Error::arg(format!("block index {k} out of range ({} blocks)", self.len())))
    }

    pub fn index_of(&self, col: usize, row: usize) -> usize {
        row * self.cols + col
    }

    /// 4-connected neighbours of block `k`.
    pub fn neighbors(&self, k: usize) -> Vec<usize> {
        let Block { col, row, .. } = self.blocks[k];
        let mut out = Vec::with_capacity(4);
        if row > 0 {
            out.push(self.index_of(col, row - 1));
        }
        if col > 0 {
            out.push(self.index_of(col - 1, row));
        }
        if col + 1 < self.cols {
            out.push(self.index_of(col + 1, row));
        }
        if row + 1 < self.rows {
            out.push(self.index_of(col, row + 1));
        }
        out
    }

    pub fn are_adjacent(&self, a: usize, b: usize) -> bool {
        let (pa, pb) = (&self.blocks[a], &self.blocks[b]);
        pa.col.abs_diff(pb.col) + pa.row.abs_diff(pb.row) == 1
    }

    /// Block containing pixel `(x, y)`.
    pub fn block_at(&self, x: usize, y: usize) -> usize {
        self.index_of(x / self.block_width, y / self.block_height)
    }
}

/// Measurement row `h` (block means of the seven statistics) and the block's channel mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    pub block: usize,
    pub h: [f64; STAT_COUNT],
    pub z_mean: f64,
}

fn block_mean(field: &ScalarField, b: &Block) -> f64 {
    let w = field.width();
    let mut sum = 0.0;
    for y in b.y0..b.y0 + b.height {
        sum += field.data()[y * w + b.x0..y * w + b.x0 + b.width].iter().sum::<f64>();
    }
    sum / (b.width * b.height) as f64
}

pub fn block_measurement(
    stack: &StatStack,
    channel: &ScalarField,
    grid: &BlockGrid,
    k: usize,
) -> Result<Measurement> {
    if stack.dims() != channel.dims() {
        return Err(Error::arg("statistic stack and channel dimensions differ"));
    }
    if (grid.field_width, grid.field_height) != channel.dims() {
        return Err(Error::arg("block grid does not match channel dimensions"));
    }
    let b = grid.block(k)?;
    Ok(Measurement {
        block: k,
        h: std::array::from_fn(|i| block_mean(&stack.maps[i], b)),
        z_mean: block_mean(channel, b),
    })
}

/// Measurements for every block, indexed by block.
pub fn block_measurements(stack: &StatStack, channel: &ScalarField, grid: &BlockGrid) -> Result<Vec<Measurement>> {
    (0..grid.len())
        .map(|k| block_measurement(stack, channel, grid, k))
        .collect()
}
