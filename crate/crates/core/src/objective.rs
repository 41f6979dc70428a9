//! Gaussian-mixture negative log-likelihood over predicted trajectories.
//!
//! For modes `m` with probabilities `c_m = softmax(logits)_m` and per-step
//! bivariate normals `N(μ_gt^t − μ_m^t; Σ_m^t)`, the loss is
//!
//! ```text
//! NLL = −log Σ_m exp( log c_m + Σ_{t valid} log N(μ_gt^t − μ_m^t; Σ_m^t) )
//! ```
//!
//! evaluated with log-sum-exp. Gradients are analytic.

use crate::error::{Error, Result};
use crate::predictor::ModeSet;
use crate::scalar::{log_sum_exp, Scalar};

/// Floor added to each standard deviation (meters).
pub const SIGMA_EPS: f64 = 1e-3;
/// Bound on the absolute correlation coefficient.
pub const RHO_MAX: f64 = 0.99;

/// Positive-definite 2×2 covariance in `(σ_x, σ_y, ρ)` form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Covariance2D<S> {
    pub sigma_x: S,
    pub sigma_y: S,
    pub rho: S,
}

impl<S: Scalar> Covariance2D<S> {
    /// `σ_x = softplus(a) + ε`, `σ_y = softplus(b) + ε`, `ρ = ρ_max·tanh(r)`.
    pub fn from_raw(raw: [S; 3]) -> Self {
        let eps = S::lit(SIGMA_EPS);
        Self { sigma_x: raw[0].softplus() + eps, sigma_y: raw[1].softplus() + eps, rho: S::lit(RHO_MAX) * raw[2].tanh() }
    }

    pub fn identity() -> Self {
        Self { sigma_x: S::one(), sigma_y: S::one(), rho: S::zero() }
    }

    pub fn matrix(&self) -> [[S; 2]; 2] {
        let off = self.rho * self.sigma_x * self.sigma_y;
        [[self.sigma_x * self.sigma_x, off], [off, self.sigma_y * self.sigma_y]]
    }

    pub fn determinant(&self) -> S {
        let (sx, sy) = (self.sigma_x, self.sigma_y);
        sx * sx * sy * sy * (S::one() - self.rho * self.rho)
    }
}

/// Log density and its partials with respect to the residual and the
/// `(σ_x, σ_y, ρ)` parameters.
struct StepTerms<S> {
    log_density: S,
    d_residual: [S; 2],
    d_sigma: [S; 2],
    d_rho: S,
}

fn step_terms<S: Scalar>(residual: [S; 2], cov: &Covariance2D<S>) -> StepTerms<S> {
    let one = S::one();
    let half = S::lit(0.5);
    let (sx, sy, rho) = (cov.sigma_x, cov.sigma_y, cov.rho);
    let u = residual[0] / sx;
    let v = residual[1] / sy;
    let k = one - rho * rho;
    let q = u * u - (rho + rho) * u * v + v * v;
    let log_2pi = (S::PI() + S::PI()).ln();
    let log_density = -log_2pi - sx.ln() - sy.ln() - half * k.ln() - q / (k + k);
    StepTerms {
        log_density,
        d_residual: [-(u - rho * v) / (k * sx), -(v - rho * u) / (k * sy)],
        d_sigma: [-one / sx + (u * u - rho * u * v) / (k * sx), -one / sy + (v * v - rho * u * v) / (k * sy)],
        d_rho: rho / k + u * v / k - q * rho / (k * k),
    }
}

/// Log of the bivariate normal density at `residual`.
pub fn log_gaussian_2d<S: Scalar>(residual: [S; 2], cov: &Covariance2D<S>) -> Result<S> {
    let values = [residual[0], residual[1], cov.sigma_x, cov.sigma_y, cov.rho];
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::arg("log_gaussian_2d: non-finite input"));
    }
    if !(cov.sigma_x > S::zero() && cov.sigma_y > S::zero() && cov.rho.abs() < S::one()) {
        return Err(Error::arg("log_gaussian_2d: covariance is not positive definite"));
    }
    Ok(step_terms(residual, cov).log_density)
}

/// Gradient of the mixture NLL, laid out like the [`ModeSet`] it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct NllGradient<S> {
    pub trajectories: Vec<Vec<[S; 2]>>,
    pub cov_raw: Vec<Vec<[S; 3]>>,
    pub logits: Vec<S>,
}

fn check_inputs<S: Scalar>(pred: &ModeSet<S>, gt: &[[S; 2]], gt_valid: &[bool]) -> Result<()> {
    let t = pred.horizon();
    if gt.len() != t {
        return Err(Error::DimensionMismatch { context: "ground-truth length", expected: t, found: gt.len() });
    }
    if gt_valid.len() != t {
        return Err(Error::DimensionMismatch { context: "ground-truth validity", expected: t, found: gt_valid.len() });
    }
    if !gt_valid.iter().any(|&v| v) {
        return Err(Error::arg("mixture_nll: ground truth has no valid step"));
    }
    Ok(())
}

/// Mixture negative log-likelihood; invalid ground-truth steps are skipped.
pub fn mixture_nll<S: Scalar>(pred: &ModeSet<S>, gt: &[[S; 2]], gt_valid: &[bool]) -> Result<S> {
    check_inputs(pred, gt, gt_valid)?;
    let log_prior = log_softmax(&pred.logits);
    let scores: Vec<S> = (0..pred.num_modes())
        .map(|m| {
            let mut s = log_prior[m];
            for (t, (&g, _)) in gt.iter().zip(gt_valid).enumerate().filter(|(_, (_, &ok))| ok) {
                let mu = pred.trajectories[m][t];
                s += step_terms([g[0] - mu[0], g[1] - mu[1]], &pred.covariance(m, t)).log_density;
            }
            s
        })
        .collect();
    Ok(-log_sum_exp(&scores))
}

/// Mixture NLL together with its gradient with respect to every output of
/// the predictor (positions, raw covariance parameters, logits).
pub fn mixture_nll_with_grad<S: Scalar>(
    pred: &ModeSet<S>,
    gt: &[[S; 2]],
    gt_valid: &[bool],
) -> Result<(S, NllGradient<S>)> {
    check_inputs(pred, gt, gt_valid)?;
    let (m_count, t_count) = (pred.num_modes(), pred.horizon());
    let log_prior = log_softmax(&pred.logits);
    let zero = S::zero();
    let mut grad = NllGradient {
        trajectories: vec![vec![[zero; 2]; t_count]; m_count],
        cov_raw: vec![vec![[zero; 3]; t_count]; m_count],
        logits: vec![zero; m_count],
    };
    let mut scores = log_prior.clone();
    // Per-step gradients of each mode's log-likelihood; scaled by the
    // posterior responsibility once all scores are known.
    for m in 0..m_count {
        for t in (0..t_count).filter(|&t| gt_valid[t]) {
            let raw = pred.cov_raw[m][t];
            let cov = Covariance2D::from_raw(raw);
            let mu = pred.trajectories[m][t];
            let terms = step_terms([gt[t][0] - mu[0], gt[t][1] - mu[1]], &cov);
            scores[m] += terms.log_density;
            // d residual / d mu = -1
            grad.trajectories[m][t] = [-terms.d_residual[0], -terms.d_residual[1]];
            let tanh = raw[2].tanh();
            grad.cov_raw[m][t] = [
                terms.d_sigma[0] * raw[0].sigmoid(),
                terms.d_sigma[1] * raw[1].sigmoid(),
                terms.d_rho * S::lit(RHO_MAX) * (S::one() - tanh * tanh),
            ];
        }
    }
    let lse = log_sum_exp(&scores);
    let posterior: Vec<S> = scores.iter().map(|&s| (s - lse).exp()).collect();
    for m in 0..m_count {
        // d NLL / d score_m = -posterior_m
        let w = -posterior[m];
        for t in 0..t_count {
            for g in grad.trajectories[m][t].iter_mut() {
                *g *= w;
            }
            for g in grad.cov_raw[m][t].iter_mut() {
                *g *= w;
            }
        }
        grad.logits[m] = log_prior[m].exp() - posterior[m];
    }
    Ok((-lse, grad))
}

fn log_softmax<S: Scalar>(logits: &[S]) -> Vec<S> {
    let lse = log_sum_exp(logits);
    logits.iter().map(|&l| l - lse).collect()
}
