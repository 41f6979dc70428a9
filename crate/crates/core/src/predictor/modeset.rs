use crate::error::{Error, Result};
use crate::objective::Covariance2D;
use crate::scalar::{softmax, Scalar};

/// Number of modes at every external boundary.
pub const NUM_MODES: usize = 6;

/// `M` hypothesized trajectories with per-step covariance parameters and a
/// probability per mode.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeSet<S> {
    /// `M × T` positions in meters.
    pub trajectories: Vec<Vec<[S; 2]>>,
    /// `M × T` unconstrained covariance parameters, see [`Covariance2D::from_raw`].
    pub cov_raw: Vec<Vec<[S; 3]>>,
    pub logits: Vec<S>,
    /// Softmax of `logits`.
    pub probabilities: Vec<S>,
}

impl<S: Scalar> ModeSet<S> {
    pub fn new(trajectories: Vec<Vec<[S; 2]>>, cov_raw: Vec<Vec<[S; 3]>>, logits: Vec<S>) -> Result<Self> {
        let m = logits.len();
        if m == 0 {
            return Err(Error::arg("mode set needs at least one mode"));
        }
        if trajectories.len() != m {
            return Err(Error::DimensionMismatch { context: "mode trajectories", expected: m, found: trajectories.len() });
        }
        if cov_raw.len() != m {
            return Err(Error::DimensionMismatch { context: "mode covariances", expected: m, found: cov_raw.len() });
        }
        let t = trajectories[0].len();
        for (tr, cv) in trajectories.iter().zip(&cov_raw) {
            if tr.len() != t || cv.len() != t {
                return Err(Error::DimensionMismatch {
                    context: "mode horizon",
                    expected: t,
                    found: if tr.len() != t { tr.len() } else { cv.len() },
                });
            }
        }
        let probabilities = softmax(&logits);
        Ok(Self { trajectories, cov_raw, logits, probabilities })
    }

    /// Builds a mode set from row-major buffers: `traj` is `M × 2T`
    /// (interleaved x, y), `cov` is `M × 3T`, `logits` is `M`.
    pub fn from_flat(modes: usize, horizon: usize, traj: &[S], cov: &[S], logits: &[S]) -> Result<Self> {
        if traj.len() != modes * horizon * 2 || cov.len() != modes * horizon * 3 || logits.len() != modes {
            return Err(Error::arg("flat mode buffers do not match the requested shape"));
        }
        let trajectories = traj
            .chunks(horizon * 2)
            .map(|row| row.chunks(2).map(|p| [p[0], p[1]]).collect())
            .collect();
        let cov_raw = cov
            .chunks(horizon * 3)
            .map(|row| row.chunks(3).map(|c| [c[0], c[1], c[2]]).collect())
            .collect();
        Self::new(trajectories, cov_raw, logits.to_vec())
    }

    pub fn num_modes(&self) -> usize {
        self.logits.len()
    }

    pub fn horizon(&self) -> usize {
        self.trajectories.first().map_or(0, Vec::len)
    }

    pub fn covariance(&self, mode: usize, step: usize) -> Covariance2D<S> {
        Covariance2D::from_raw(self.cov_raw[mode][step])
    }

    /// Checks the probability simplex and finiteness.
    pub fn validate(&self) -> Result<()> {
        let sum: S = self.probabilities.iter().copied().sum();
        if (sum.as_f64() - 1.0).abs() > 1e-6 {
            return Err(Error::arg(format!("mode probabilities sum to {sum}")));
        }
        if self.probabilities.iter().any(|p| !(p.as_f64() >= 0.0 && p.as_f64() <= 1.0)) {
            return Err(Error::arg("mode probability outside [0, 1]"));
        }
        let finite = self.trajectories.iter().flatten().flatten().all(|v| v.is_finite())
            && self.cov_raw.iter().flatten().flatten().all(|v| v.is_finite())
            && self.logits.iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::arg("mode set contains non-finite values"));
        }
        Ok(())
    }

    pub fn cast<T: Scalar>(&self) -> ModeSet<T> {
        let c = |v: S| T::lit(v.as_f64());
        ModeSet {
            trajectories: self.trajectories.iter().map(|m| m.iter().map(|p| [c(p[0]), c(p[1])]).collect()).collect(),
            cov_raw: self.cov_raw.iter().map(|m| m.iter().map(|r| [c(r[0]), c(r[1]), c(r[2])]).collect()).collect(),
            logits: self.logits.iter().map(|&v| c(v)).collect(),
            probabilities: self.probabilities.iter().map(|&v| c(v)).collect(),
        }
    }
}
