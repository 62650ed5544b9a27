//! Seven-state Kalman filter over the coefficients of the block prediction
//! `M_k = h_k · x`, with a scalar measurement (the block mean) and two noise
//! regimes selected per block.
//!
//! The transition matrix is the identity, so prediction only inflates the
//! covariance. Set I (large Q, tiny R) makes the filter follow the measurement
//! almost exactly; set II (tiny Q, large R) makes it hold on to its prior.

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::localstats::{BlockGrid, Measurement, STAT_COUNT};

pub type StateVector = SVector<f64, STAT_COUNT>;
pub type Covariance = SMatrix<f64, STAT_COUNT, STAT_COUNT>;

/// Coefficient estimate and its error covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub x_hat: StateVector,
    pub p: Covariance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseParams {
    pub q: Covariance,
    pub r: f64,
}

impl NoiseParams {
    /// `Q = q * I`, `R = r`.
    pub fn scaled(q: f64, r: f64) -> Self {
        Self {
            q: Covariance::identity() * q,
            r,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Regime {
    /// Trust the measurement: large Q, tiny R.
    SetI,
    /// Trust the prior: tiny Q, large R.
    SetII,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RegimeCause {
    HighError,
    /// Also used for the first block of a traversal, which has no predecessor.
    NonAdjacentJump,
    Default,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RegimeDecision {
    pub regime: Regime,
    pub cause: RegimeCause,
}

/// Filter initialisation, both noise sets and the error threshold that
/// switches between them. Covariances are multiples of the identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KalmanParams {
    /// `P0 = p0 * I`
    pub p0: f64,
    /// Every component of `x0`.
    pub x0: f64,
    pub q1: f64,
    pub r1: f64,
    pub q2: f64,
    pub r2: f64,
    /// Prediction error (normalized channel units) above which set I is used.
    pub error_threshold: f64,
}

impl Default for KalmanParams {
    fn default() -> Self {
        Self {
            p0: 1.0,
            x0: 0.0,
            q1: 0.1,
            r1: 1e-10,
            q2: 1e-10,
            r2: 0.1,
            error_threshold: 0.1,
        }
    }
}

impl KalmanParams {
    pub fn initial_state(&self) -> FilterState {
        FilterState {
            x_hat: StateVector::repeat(self.x0),
            p: Covariance::identity() * self.p0,
        }
    }

    pub fn noise(&self, regime: Regime) -> NoiseParams {
        match regime {
            Regime::SetI => NoiseParams::scaled(self.q1, self.r1),
            Regime::SetII => NoiseParams::scaled(self.q2, self.r2),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.p0, self.x0, self.q1, self.r1, self.q2, self.r2, self.error_threshold];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("kalman parameters must be finite".into()));
        }
        if self.p0 < 0.0 || self.q1 < 0.0 || self.q2 < 0.0 {
            return Err(Error::Config("kalman covariances must be non-negative".into()));
        }
        if self.r1 <= 0.0 || self.r2 <= 0.0 {
            return Err(Error::Config("kalman measurement variances must be positive".into()));
        }
        if self.error_threshold <= 0.0 {
            return Err(Error::Config("error_threshold must be positive".into()));
        }
        Ok(())
    }
}

/// Time update with `F = I`: the mean is carried over and `P- = P + Q`.
pub fn predict(state: &FilterState, noise: &NoiseParams) -> FilterState {
    FilterState {
        x_hat: state.x_hat,
        p: state.p + noise.q,
    }
}

/// `K = P- hᵀ / (h P- hᵀ + R)`; the innovation variance is a scalar.
pub fn gain(p_minus: &Covariance, h: &StateVector, r: f64) -> Result<StateVector> {
    let ph = p_minus * h;
    let innovation_var = h.dot(&ph) + r;
    if !(innovation_var > 0.0 && innovation_var.is_finite()) {
        return Err(Error::Numeric(format!(
            "innovation variance {innovation_var} is not positive"
        )));
    }
    Ok(ph / innovation_var)
}

/// Measurement update against the block mean: `x = x- + K (z - h x-)`,
/// `P = (I - K h) P-`, followed by symmetrisation of `P`.
pub fn update(state_minus: &FilterState, k: &StateVector, h: &StateVector, z_mean: f64) -> FilterState {
    let innovation = z_mean - h.dot(&state_minus.x_hat);
    let x_hat = state_minus.x_hat + k * innovation;
    let p = (Covariance::identity() - k * h.transpose()) * state_minus.p;
    FilterState {
        x_hat,
        p: (p + p.transpose()) * 0.5,
    }
}

/// Set I when the prediction error exceeds `threshold` or the traversal jumps
/// to a block that is not 4-adjacent to the previous one; set II otherwise.
pub fn select_regime(
    error_k: f64,
    threshold: f64,
    prev_block: Option<usize>,
    cur_block: usize,
    grid: &BlockGrid,
) -> RegimeDecision {
    let cause = if error_k > threshold {
        RegimeCause::HighError
    } else if !prev_block.is_some_and(|p| grid.are_adjacent(p, cur_block)) {
        RegimeCause::NonAdjacentJump
    } else {
        RegimeCause::Default
    };
    let regime = match cause {
        RegimeCause::Default => Regime::SetII,
        _ => Regime::SetI,
    };
    RegimeDecision { regime, cause }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub state: FilterState,
    /// `h · x-`, the block value expected before the block is seen.
    pub predicted: f64,
    /// `|predicted - z_mean|`
    pub error: f64,
}

/// The block's expected value under the current state, before any update.
pub fn prediction(state: &FilterState, meas: &Measurement) -> f64 {
    StateVector::from(meas.h).dot(&state.x_hat)
}

pub fn step(state: &FilterState, meas: &Measurement, noise: &NoiseParams) -> Result<StepOutput> {
    let h = StateVector::from(meas.h);
    let prior = predict(state, noise);
    let predicted = h.dot(&prior.x_hat);
    let k = gain(&prior.p, &h, noise.r)?;
    Ok(StepOutput {
        state: update(&prior, &k, &h, meas.z_mean),
        predicted,
        error: (predicted - meas.z_mean).abs(),
    })
}
