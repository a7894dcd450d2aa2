//! Numerical laboratory for the variance theory behind decoupled momentum.
//!
//! The lab studies the alternating two-loss heavy-ball scheme on quadratic
//! objectives with controlled gradient noise. Two momentum layouts are
//! compared:
//!
//! - **shared**: one momentum buffer is threaded through both phases, so a
//!   forget update pushes its history into the retain update and vice versa;
//! - **decoupled**: each phase integrates only its own gradients.
//!
//! Three kinds of evidence are produced:
//!
//! - [`bound_recursion`] evaluates the closed-form worst-case variance
//!   recursions for both layouts, and [`verify_theorem`] checks the claimed
//!   ordering (decoupled never exceeds shared) point by point;
//! - [`simulate_scheme`] Monte-Carlos the actual trajectories under a
//!   configurable noise model (persistent, cross-phase, and white
//!   components) and reports per-step parameter variance;
//! - [`verify_lemma`] checks the smoothness bound
//!   `Var(grad L(theta)) <= L^2 * Var(theta)` on random quadratics, where
//!   both sides are total (trace) variances `E || v - E v ||^2`.
//!
//! All randomness flows from explicit seeds through [`SplitMix64`]; the
//! draw order is fixed (per trajectory: persistent forget then retain
//! vectors; per step: common, white-forget, white-retain) so results are
//! bit-reproducible.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, SplitMix64};
use crate::tensor::Tensor;

/// Relative tolerance for symmetry validation of objective matrices.
const SYMMETRY_TOL: f64 = 1e-9;

/// A quadratic objective `L(theta) = 0.5 * (theta - a)' A (theta - a)`
/// with symmetric positive-definite `A`.
#[derive(Debug, Clone)]
pub struct QuadraticObjective {
    matrix: Tensor,
    center: Vec<f64>,
}

impl QuadraticObjective {
    /// Build from an explicit symmetric matrix and center.
    pub fn new(matrix: Tensor, center: Vec<f64>) -> Result<QuadraticObjective> {
        if matrix.shape().len() != 2 {
            return Err(Error::Dimension(format!(
                "objective matrix must be 2-D, got shape {:?}",
                matrix.shape()
            )));
        }
        let (n, m) = (matrix.rows(), matrix.cols());
        if n != m {
            return Err(Error::Dimension(format!(
                "objective matrix must be square, got {n}x{m}"
            )));
        }
        if center.len() != n {
            return Err(Error::Dimension(format!(
                "center has {} coordinates but the matrix is {n}x{n}",
                center.len()
            )));
        }
        let scale = matrix.data().iter().fold(0.0f64, |a, &v| a.max(v.abs()));
        for i in 0..n {
            for j in (i + 1)..n {
                let a = matrix.get(i, j);
                let b = matrix.get(j, i);
                if (a - b).abs() > SYMMETRY_TOL * (1.0 + scale) {
                    return Err(Error::Input(format!(
                        "objective matrix is not symmetric: [{i}][{j}] = {a} vs [{j}][{i}] = {b}"
                    )));
                }
            }
        }
        Ok(QuadraticObjective { matrix, center })
    }

    /// Build `A = Q diag(eigenvalues) Q'` with a seeded random orthogonal
    /// `Q` (QR of a Gaussian matrix). Eigenvalues must be positive.
    pub fn from_spectrum(
        eigenvalues: &[f64],
        center: &[f64],
        seed: u64,
    ) -> Result<QuadraticObjective> {
        let d = eigenvalues.len();
        if d == 0 {
            return Err(Error::Input("spectrum must be non-empty".into()));
        }
        if eigenvalues.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
            return Err(Error::Input(format!(
                "spectrum must be positive and finite, got {eigenvalues:?}"
            )));
        }
        if center.len() != d {
            return Err(Error::Dimension(format!(
                "center has {} coordinates but the spectrum has {d}",
                center.len()
            )));
        }
        let mut rng = SplitMix64::new(seed);
        let q = random_orthogonal(d, &mut rng)?;
        // A = Q diag(lambda) Q', assembled column by column.
        let mut a = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                let mut s = 0.0;
                for k in 0..d {
                    s += q[i * d + k] * eigenvalues[k] * q[j * d + k];
                }
                a[i * d + j] = s;
            }
        }
        // Kill round-off asymmetry so `new` always accepts the result.
        for i in 0..d {
            for j in (i + 1)..d {
                let m = 0.5 * (a[i * d + j] + a[j * d + i]);
                a[i * d + j] = m;
                a[j * d + i] = m;
            }
        }
        QuadraticObjective::new(Tensor::from_vec(&[d, d], a)?, center.to_vec())
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn matrix(&self) -> &Tensor {
        &self.matrix
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn loss(&self, theta: &[f64]) -> Result<f64> {
        let g = self.residual_product(theta)?;
        let mut s = 0.0;
        for i in 0..self.dim() {
            s += (theta[i] - self.center[i]) * g[i];
        }
        Ok(0.5 * s)
    }

    /// `grad L(theta) = A (theta - a)`.
    pub fn grad(&self, theta: &[f64]) -> Result<Vec<f64>> {
        self.residual_product(theta)
    }

    fn residual_product(&self, theta: &[f64]) -> Result<Vec<f64>> {
        let d = self.dim();
        if theta.len() != d {
            return Err(Error::Dimension(format!(
                "objective is {d}-dimensional but theta has {} coordinates",
                theta.len()
            )));
        }
        let m = self.matrix.data();
        let mut out = vec![0.0; d];
        for i in 0..d {
            let mut s = 0.0;
            for j in 0..d {
                s += m[i * d + j] * (theta[j] - self.center[j]);
            }
            out[i] = s;
        }
        Ok(out)
    }

    /// Eigenvalues of `A`, ascending.
    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        symmetric_eigenvalues(&self.matrix)
    }

    /// Gradient smoothness constant: the spectral radius of `A`.
    pub fn lipschitz(&self) -> Result<f64> {
        let eigs = self.eigenvalues()?;
        Ok(eigs.iter().fold(0.0f64, |a, &l| a.max(l.abs())))
    }

    /// Exact total gradient variance under `theta ~ N(mu, s^2 I)`:
    /// `s^2 * sum_i lambda_i^2`, independent of the mean.
    pub fn exact_gradient_variance(&self, coord_std: f64) -> Result<f64> {
        let eigs = self.eigenvalues()?;
        Ok(coord_std * coord_std * eigs.iter().map(|l| l * l).sum::<f64>())
    }
}

/// Seeded random orthogonal matrix via modified Gram-Schmidt on a Gaussian
/// matrix, rows-major `d x d`, columns orthonormal.
fn random_orthogonal(d: usize, rng: &mut SplitMix64) -> Result<Vec<f64>> {
    let mut q: Vec<f64> = (0..d * d).map(|_| rng.next_gaussian()).collect();
    for col in 0..d {
        for prev in 0..col {
            let mut dot = 0.0;
            for i in 0..d {
                dot += q[i * d + col] * q[i * d + prev];
            }
            for i in 0..d {
                q[i * d + col] -= dot * q[i * d + prev];
            }
        }
        let norm = (0..d).map(|i| q[i * d + col] * q[i * d + col]).sum::<f64>().sqrt();
        if norm < 1e-12 {
            return Err(Error::Input(
                "degenerate Gaussian draw while orthogonalizing a random basis".into(),
            ));
        }
        for i in 0..d {
            q[i * d + col] /= norm;
        }
    }
    Ok(q)
}

/// Eigenvalues of a symmetric matrix via cyclic Jacobi rotations, ascending.
pub fn symmetric_eigenvalues(matrix: &Tensor) -> Result<Vec<f64>> {
    if matrix.shape().len() != 2 || matrix.rows() != matrix.cols() {
        return Err(Error::Dimension(format!(
            "eigenvalues need a square matrix, got shape {:?}",
            matrix.shape()
        )));
    }
    let n = matrix.rows();
    let mut a = matrix.data().to_vec();
    let scale = a.iter().fold(0.0f64, |acc, &v| acc.max(v.abs())).max(1.0);
    let tol = 1e-14 * scale;
    const MAX_SWEEPS: usize = 100;
    for _ in 0..MAX_SWEEPS {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in (p + 1)..n {
                off = off.max(a[p * n + q].abs());
            }
        }
        if off <= tol {
            let mut eigs: Vec<f64> = (0..n).map(|i| a[i * n + i]).collect();
            eigs.sort_by(|x, y| x.partial_cmp(y).expect("finite eigenvalues"));
            return Ok(eigs);
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq.abs() <= tol * 1e-2 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                // tan of the rotation angle, the root smaller in magnitude.
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                a[p * n + p] = app - t * apq;
                a[q * n + q] = aqq + t * apq;
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;
                for k in 0..n {
                    if k == p || k == q {
                        continue;
                    }
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                    a[p * n + k] = a[k * n + p];
                    a[q * n + k] = a[k * n + q];
                }
            }
        }
    }
    Err(Error::Divergence(format!(
        "symmetric eigensolver did not converge within {MAX_SWEEPS} sweeps"
    )))
}

/// Gradient-noise model for the simulator. Per step and phase the injected
/// noise is a mixture of three unit-variance building blocks, each with
/// per-coordinate variance `sigma^2 / d` (so the total injected variance
/// per draw is `sigma^2`):
///
/// ```text
/// eps_f,t = sqrt(tau) p_f + sqrt(|rho|) c_t + sqrt(1 - tau - |rho|) w_f,t
/// eps_r,t = sqrt(tau) p_r - sqrt(|rho|) c_t + sqrt(1 - tau - |rho|) w_r,t
/// ```
///
/// `p_f`, `p_r` persist for a whole trajectory (temporal correlation
/// `tau` within each phase), `c_t` is shared with opposite signs (cross
/// correlation `-|rho|` between phases at the same step), and `w` is
/// fresh white noise.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    /// Total standard deviation of each injected noise vector.
    pub sigma: f64,
    /// Within-phase temporal correlation, in `[0, 1]`.
    #[serde(default)]
    pub temporal_corr: f64,
    /// Cross-phase correlation at equal steps, in `[-1, 0]`.
    #[serde(default)]
    pub cross_corr: f64,
}

impl NoiseSpec {
    pub fn white(sigma: f64) -> NoiseSpec {
        NoiseSpec { sigma, temporal_corr: 0.0, cross_corr: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(Error::Config(format!(
                "noise sigma must be positive and finite, got {}",
                self.sigma
            )));
        }
        if !(0.0..=1.0).contains(&self.temporal_corr) {
            return Err(Error::Config(format!(
                "temporal_corr must lie in [0, 1], got {}",
                self.temporal_corr
            )));
        }
        if !(-1.0..=0.0).contains(&self.cross_corr) {
            return Err(Error::Config(format!(
                "cross_corr must lie in [-1, 0], got {}",
                self.cross_corr
            )));
        }
        if self.temporal_corr + self.cross_corr.abs() > 1.0 + 1e-12 {
            return Err(Error::Config(format!(
                "temporal_corr + |cross_corr| must not exceed 1, got {} + {}",
                self.temporal_corr,
                self.cross_corr.abs()
            )));
        }
        Ok(())
    }
}

/// Per-trajectory noise source implementing [`NoiseSpec`]'s mixture.
struct NoiseSampler {
    p_f: Vec<f64>,
    p_r: Vec<f64>,
    w_tau: f64,
    w_rho: f64,
    w_white: f64,
    coord_std: f64,
}

impl NoiseSampler {
    /// Draw order: the persistent vectors `p_f` then `p_r`, coordinate by
    /// coordinate. They are drawn even at `tau = 0` so the stream layout
    /// does not depend on the correlation parameters.
    fn new(spec: &NoiseSpec, dim: usize, rng: &mut SplitMix64) -> NoiseSampler {
        let coord_std = spec.sigma / (dim as f64).sqrt();
        let p_f: Vec<f64> = (0..dim).map(|_| rng.next_gaussian() * coord_std).collect();
        let p_r: Vec<f64> = (0..dim).map(|_| rng.next_gaussian() * coord_std).collect();
        NoiseSampler {
            p_f,
            p_r,
            w_tau: spec.temporal_corr.sqrt(),
            w_rho: spec.cross_corr.abs().sqrt(),
            w_white: (1.0 - spec.temporal_corr - spec.cross_corr.abs()).max(0.0).sqrt(),
            coord_std,
        }
    }

    /// Draw order per step: common vector `c`, white forget, white retain.
    fn step(&self, rng: &mut SplitMix64) -> (Vec<f64>, Vec<f64>) {
        let d = self.p_f.len();
        let c: Vec<f64> = (0..d).map(|_| rng.next_gaussian() * self.coord_std).collect();
        let wf: Vec<f64> = (0..d).map(|_| rng.next_gaussian() * self.coord_std).collect();
        let wr: Vec<f64> = (0..d).map(|_| rng.next_gaussian() * self.coord_std).collect();
        let mut ef = vec![0.0; d];
        let mut er = vec![0.0; d];
        for i in 0..d {
            ef[i] = self.w_tau * self.p_f[i] + self.w_rho * c[i] + self.w_white * wf[i];
            er[i] = self.w_tau * self.p_r[i] - self.w_rho * c[i] + self.w_white * wr[i];
        }
        (ef, er)
    }
}

/// Momentum layout of the alternating scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeKind {
    /// One momentum buffer threaded through both phases.
    Shared,
    /// Independent momentum per phase.
    Decoupled,
}

/// Alternating heavy-ball scheme configuration.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeConfig {
    pub kind: SchemeKind,
    /// Momentum coefficient, in `[0, 1)`.
    pub alpha: f64,
    /// Step size, positive.
    pub eta: f64,
    /// Outer iterations (each runs one forget and one retain update).
    pub t_steps: usize,
}

impl SchemeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(Error::Config(format!(
                "alpha must lie in [0, 1), got {}",
                self.alpha
            )));
        }
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return Err(Error::Config(format!(
                "eta must be positive and finite, got {}",
                self.eta
            )));
        }
        if self.t_steps == 0 {
            return Err(Error::Config("t_steps must be >= 1".into()));
        }
        Ok(())
    }
}

/// Per-step parameter variances across simulated trajectories.
///
/// `var_f[t]` / `var_r[t]` are total (trace) variances
/// `E || theta - E theta ||^2` of the forget- and retain-phase iterates
/// after outer iteration `t`, plug-in normalized (divide by the trial
/// count).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryStats {
    pub var_f: Vec<f64>,
    pub var_r: Vec<f64>,
    pub n_trials: usize,
}

/// Total (trace) variance of `n` vectors of dimension `d`, flattened
/// row-major into `rows`; plug-in (1/n) normalization, two-pass.
pub fn vector_variance(rows: &[f64], n: usize, d: usize) -> Result<f64> {
    if n == 0 || rows.len() != n * d {
        return Err(Error::Dimension(format!(
            "vector_variance wants n*d = {} values, got {}",
            n * d,
            rows.len()
        )));
    }
    let mut mean = vec![0.0; d];
    for row in rows.chunks_exact(d) {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut total = 0.0;
    for row in rows.chunks_exact(d) {
        for (m, &v) in mean.iter().zip(row) {
            let dv = v - m;
            total += dv * dv;
        }
    }
    Ok(total / n as f64)
}

/// Monte-Carlo the alternating scheme on a pair of quadratics.
///
/// Every outer iteration evaluates the forget gradient at the previous
/// retain iterate plus noise, updates, then evaluates the retain gradient
/// at the fresh forget iterate plus noise, and updates again. All
/// trajectories start at `theta0` with zero momentum.
pub fn simulate_scheme(
    loss_forget: &QuadraticObjective,
    loss_retain: &QuadraticObjective,
    theta0: &[f64],
    noise: &NoiseSpec,
    scheme: &SchemeConfig,
    n_trials: usize,
    seed: u64,
) -> Result<TrajectoryStats> {
    noise.validate()?;
    scheme.validate()?;
    let d = loss_forget.dim();
    if loss_retain.dim() != d {
        return Err(Error::Dimension(format!(
            "forget objective is {d}-dimensional but retain is {}-dimensional",
            loss_retain.dim()
        )));
    }
    if theta0.len() != d {
        return Err(Error::Dimension(format!(
            "theta0 has {} coordinates but the objectives are {d}-dimensional",
            theta0.len()
        )));
    }
    if n_trials < 2 {
        return Err(Error::Config("simulation needs at least 2 trials".into()));
    }

    let t_steps = scheme.t_steps;
    let shared = scheme.kind == SchemeKind::Shared;
    // Flat [trial][coord] storage per step index.
    let mut all_f = vec![vec![0.0f64; n_trials * d]; t_steps];
    let mut all_r = vec![vec![0.0f64; n_trials * d]; t_steps];

    for trial in 0..n_trials {
        let mut rng = SplitMix64::new(derive_seed(seed, &format!("trial-{trial}")));
        let sampler = NoiseSampler::new(noise, d, &mut rng);
        let mut theta_r = theta0.to_vec();
        let mut theta_f = vec![0.0; d];
        let mut m_f = vec![0.0; d];
        let mut m_r = vec![0.0; d];
        for t in 0..t_steps {
            let (eps_f, eps_r) = sampler.step(&mut rng);
            let g = loss_forget.grad(&theta_r)?;
            for i in 0..d {
                m_f[i] = scheme.alpha * m_f[i] + g[i] + eps_f[i];
                theta_f[i] = theta_r[i] - scheme.eta * m_f[i];
            }
            if shared {
                m_r.copy_from_slice(&m_f);
            }
            let g = loss_retain.grad(&theta_f)?;
            for i in 0..d {
                m_r[i] = scheme.alpha * m_r[i] + g[i] + eps_r[i];
                theta_r[i] = theta_f[i] - scheme.eta * m_r[i];
            }
            if shared {
                m_f.copy_from_slice(&m_r);
            }
            if theta_f.iter().chain(theta_r.iter()).any(|v| !v.is_finite()) {
                return Err(Error::Divergence(format!(
                    "trajectory diverged at trial {trial}, outer step {t}"
                )));
            }
            all_f[t][trial * d..(trial + 1) * d].copy_from_slice(&theta_f);
            all_r[t][trial * d..(trial + 1) * d].copy_from_slice(&theta_r);
        }
    }

    let mut var_f = Vec::with_capacity(t_steps);
    let mut var_r = Vec::with_capacity(t_steps);
    for t in 0..t_steps {
        var_f.push(vector_variance(&all_f[t], n_trials, d)?);
        var_r.push(vector_variance(&all_r[t], n_trials, d)?);
    }
    Ok(TrajectoryStats { var_f, var_r, n_trials })
}

/// Worst-case variance bounds for both layouts, one entry per outer step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundTable {
    pub shared_f: Vec<f64>,
    pub shared_r: Vec<f64>,
    pub decoupled_f: Vec<f64>,
    pub decoupled_r: Vec<f64>,
}

/// Accumulated-momentum weight `A_k = (1 - alpha^(k+1)) / (1 - alpha)`:
/// the total coefficient a single gradient contributes to the parameter
/// displacement after being carried through `k` further momentum updates.
fn momentum_weight(alpha: f64, k: usize) -> f64 {
    if alpha == 0.0 {
        1.0
    } else {
        (1.0 - alpha.powi(k as i32 + 1)) / (1.0 - alpha)
    }
}

/// Evaluate the worst-case variance recursions for the shared and
/// decoupled layouts.
///
/// Each bound unrolls the scheme into per-gradient displacement weights
/// and bounds every stochastic gradient's variance by
/// `sigma^2 + L^2 * Var(iterate it was evaluated at)`, with the iterate
/// variances substituted recursively (the pre-run iterate has variance 0).
/// In the shared layout a gradient from `i` outer steps back has passed
/// through roughly twice as many momentum updates as in the decoupled
/// layout, which is where the two tables diverge. The `1 + t * tau`
/// factor inflates the independent-draw bound to cover noise whose
/// within-phase correlation is `tau` (adversarially aligned draws).
///
/// Step sizes are normalized out (`eta = 1`); `sigma` is the per-draw
/// noise scale and `lipschitz` the gradient smoothness constant.
pub fn bound_recursion(
    alpha: f64,
    tau: f64,
    lipschitz: f64,
    sigma: f64,
    t_steps: usize,
) -> Result<BoundTable> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::Config(format!("alpha must lie in [0, 1), got {alpha}")));
    }
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::Config(format!("tau must lie in [0, 1], got {tau}")));
    }
    if !(lipschitz >= 0.0) || !lipschitz.is_finite() {
        return Err(Error::Config(format!(
            "lipschitz must be non-negative and finite, got {lipschitz}"
        )));
    }
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::Config(format!(
            "sigma must be non-negative and finite, got {sigma}"
        )));
    }
    if t_steps == 0 {
        return Err(Error::Config("t_steps must be >= 1".into()));
    }

    let s2 = sigma * sigma;
    let l2 = lipschitz * lipschitz;
    let aw = |k: usize| momentum_weight(alpha, k);
    // var_r_prev(i) = Var(retain iterate before outer step i): 0 at i = 0.
    let mut sf: Vec<f64> = Vec::with_capacity(t_steps);
    let mut sr: Vec<f64> = Vec::with_capacity(t_steps);
    let mut df: Vec<f64> = Vec::with_capacity(t_steps);
    let mut dr: Vec<f64> = Vec::with_capacity(t_steps);

    for t in 0..t_steps {
        let tf = t as f64;
        let infl_t = 1.0 + tf * tau;
        let infl_tm1 = 1.0 + (tf - 1.0) * tau;

        // Shared layout: a forget gradient from step i has been carried
        // through 2(t - i) further updates by forget time t; a retain
        // gradient through 2(t - i) - 1.
        let mut v = 0.0;
        for i in 0..=t {
            let prev_r = if i == 0 { 0.0 } else { sr[i - 1] };
            let w = aw(2 * (t - i));
            v += infl_t * w * w * (s2 + l2 * prev_r);
        }
        for i in 0..t {
            let w = aw(2 * (t - i) - 1);
            v += infl_tm1 * w * w * (s2 + l2 * sf[i]);
        }
        sf.push(v);

        // Shared retain at t: forget gradients carried through 2(t-i),
        // retain gradients through 2(t-i) + 1.
        let mut v = 0.0;
        for i in 0..=t {
            let prev_r = if i == 0 { 0.0 } else { sr[i - 1] };
            let w = aw(2 * (t - i) + 1);
            v += infl_t * w * w * (s2 + l2 * prev_r);
        }
        for i in 0..=t {
            let w = aw(2 * (t - i));
            v += infl_t * w * w * (s2 + l2 * sf[i]);
        }
        sr.push(v);

        // Decoupled layout: each phase only re-integrates its own
        // gradients, so the carry count is t - i regardless of phase.
        let mut v = 0.0;
        for i in 0..=t {
            let prev_r = if i == 0 { 0.0 } else { dr[i - 1] };
            let w = aw(t - i);
            v += infl_t * w * w * (s2 + l2 * prev_r);
        }
        for i in 0..t {
            let w = aw(t - i - 1);
            v += infl_tm1 * w * w * (s2 + l2 * df[i]);
        }
        df.push(v);

        let mut v = 0.0;
        for i in 0..=t {
            let prev_r = if i == 0 { 0.0 } else { dr[i - 1] };
            let w = aw(t - i);
            v += infl_t * w * w * (s2 + l2 * prev_r);
        }
        for i in 0..=t {
            let w = aw(t - i);
            v += infl_t * w * w * (s2 + l2 * df[i]);
        }
        dr.push(v);

        let newest = [sf[t], sr[t], df[t], dr[t]];
        if newest.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence(format!(
                "variance bound overflowed at outer step {t} (alpha={alpha}, tau={tau}, L={lipschitz})"
            )));
        }
    }

    Ok(BoundTable { shared_f: sf, shared_r: sr, decoupled_f: df, decoupled_r: dr })
}

/// Outcome of comparing the two bound tables pointwise.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TheoremCheck {
    /// True iff the decoupled bound never exceeds the shared bound, at
    /// every step and for both phases, under exact comparison.
    pub holds: bool,
    /// Minimum of `shared_f[t] - decoupled_f[t]` over steps.
    pub margin_f: f64,
    /// Minimum of `shared_r[t] - decoupled_r[t]` over steps.
    pub margin_r: f64,
}

/// Check the variance-ordering claim for one parameter point.
pub fn verify_theorem(
    alpha: f64,
    tau: f64,
    lipschitz: f64,
    sigma: f64,
    t_steps: usize,
) -> Result<TheoremCheck> {
    let b = bound_recursion(alpha, tau, lipschitz, sigma, t_steps)?;
    let mut margin_f = f64::INFINITY;
    let mut margin_r = f64::INFINITY;
    let mut holds = true;
    for t in 0..t_steps {
        margin_f = margin_f.min(b.shared_f[t] - b.decoupled_f[t]);
        margin_r = margin_r.min(b.shared_r[t] - b.decoupled_r[t]);
        if b.decoupled_f[t] > b.shared_f[t] || b.decoupled_r[t] > b.shared_r[t] {
            holds = false;
        }
    }
    Ok(TheoremCheck { holds, margin_f, margin_r })
}

/// Momentum grid for the standard verification sweep.
pub const GRID_ALPHAS: [f64; 3] = [0.5, 0.9, 0.99];
/// Temporal-correlation grid for the standard verification sweep.
pub const GRID_TAUS: [f64; 3] = [0.0, 0.1, 0.5];
/// Smoothness grid for the standard verification sweep.
pub const GRID_LIPSCHITZ: [f64; 2] = [0.1, 1.0];

/// One grid point of the standard sweep.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GridPoint {
    pub alpha: f64,
    pub tau: f64,
    pub lipschitz: f64,
    pub check: TheoremCheck,
}

/// The standard sweep over all grid combinations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridReport {
    pub points: Vec<GridPoint>,
    pub all_hold: bool,
}

/// Run [`verify_theorem`] over the full `alpha x tau x L` grid.
pub fn verify_theorem_grid(sigma: f64, t_steps: usize) -> Result<GridReport> {
    let mut points = Vec::new();
    let mut all_hold = true;
    for &alpha in &GRID_ALPHAS {
        for &tau in &GRID_TAUS {
            for &lipschitz in &GRID_LIPSCHITZ {
                let check = verify_theorem(alpha, tau, lipschitz, sigma, t_steps)?;
                all_hold &= check.holds;
                points.push(GridPoint { alpha, tau, lipschitz, check });
            }
        }
    }
    Ok(GridReport { points, all_hold })
}

/// Empirical vs. bound gradient variance for a random quadratic.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LemmaReport {
    /// Plug-in total variance of sampled gradients.
    pub empirical: f64,
    /// Smoothness bound `L^2 * d * coord_std^2`.
    pub bound: f64,
    /// Closed form `coord_std^2 * sum_i lambda_i^2`.
    pub exact: f64,
}

/// Monte-Carlo check of `Var(grad L(theta)) <= L^2 * Var(theta)` with
/// `theta ~ N(mean, coord_std^2 I)`. Both sides are total variances;
/// `Var(theta) = d * coord_std^2` exactly by construction.
pub fn verify_lemma(
    objective: &QuadraticObjective,
    mean: &[f64],
    coord_std: f64,
    n_samples: usize,
    seed: u64,
) -> Result<LemmaReport> {
    let d = objective.dim();
    if mean.len() != d {
        return Err(Error::Dimension(format!(
            "mean has {} coordinates but the objective is {d}-dimensional",
            mean.len()
        )));
    }
    if !(coord_std > 0.0) || !coord_std.is_finite() {
        return Err(Error::Config(format!(
            "coord_std must be positive and finite, got {coord_std}"
        )));
    }
    if n_samples < 2 {
        return Err(Error::Config("lemma check needs at least 2 samples".into()));
    }
    let mut rng = SplitMix64::new(seed);
    let mut grads = vec![0.0f64; n_samples * d];
    let mut theta = vec![0.0f64; d];
    for k in 0..n_samples {
        for (t, &m) in theta.iter_mut().zip(mean) {
            *t = m + coord_std * rng.next_gaussian();
        }
        let g = objective.grad(&theta)?;
        grads[k * d..(k + 1) * d].copy_from_slice(&g);
    }
    let empirical = vector_variance(&grads, n_samples, d)?;
    let l = objective.lipschitz()?;
    let bound = l * l * d as f64 * coord_std * coord_std;
    let exact = objective.exact_gradient_variance(coord_std)?;
    Ok(LemmaReport { empirical, bound, exact })
}

/// Maximum absolute empirical correlations in the injected noise streams.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CorrelationReport {
    /// Across distinct steps within the forget stream.
    pub same_loss_forget_max: f64,
    /// Across distinct steps within the retain stream.
    pub same_loss_retain_max: f64,
    /// Across all forget/retain step pairs.
    pub cross_max: f64,
}

/// Correlation between two vector-valued draws across trials:
/// `E <X - EX, Y - EY> / sqrt(Var X * Var Y)` with plug-in moments.
fn stream_correlation(xs: &[f64], ys: &[f64], n: usize, d: usize) -> Result<f64> {
    let mut mx = vec![0.0; d];
    let mut my = vec![0.0; d];
    for k in 0..n {
        for i in 0..d {
            mx[i] += xs[k * d + i];
            my[i] += ys[k * d + i];
        }
    }
    for i in 0..d {
        mx[i] /= n as f64;
        my[i] /= n as f64;
    }
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for k in 0..n {
        for i in 0..d {
            let dx = xs[k * d + i] - mx[i];
            let dy = ys[k * d + i] - my[i];
            cov += dx * dy;
            vx += dx * dx;
            vy += dy * dy;
        }
    }
    if vx <= 0.0 || vy <= 0.0 {
        return Err(Error::UndefinedCorrelation(
            "a noise stream has zero variance across trials".into(),
        ));
    }
    Ok(cov / (vx * vy).sqrt())
}

/// Estimate the empirical correlation structure of the noise model itself
/// by sampling `n_trials` independent noise trajectories of `t_steps`
/// steps (no dynamics involved).
pub fn measure_correlation(
    noise: &NoiseSpec,
    dim: usize,
    t_steps: usize,
    n_trials: usize,
    seed: u64,
) -> Result<CorrelationReport> {
    noise.validate()?;
    if dim == 0 {
        return Err(Error::Config("noise dimension must be >= 1".into()));
    }
    if t_steps < 2 {
        return Err(Error::Config(
            "correlation probe needs t_steps >= 2 for same-stream pairs".into(),
        ));
    }
    if n_trials < 2 {
        return Err(Error::Config("correlation probe needs at least 2 trials".into()));
    }
    // streams_f[t] is the flat [trial][coord] block of forget noise at t.
    let mut streams_f = vec![vec![0.0f64; n_trials * dim]; t_steps];
    let mut streams_r = vec![vec![0.0f64; n_trials * dim]; t_steps];
    for trial in 0..n_trials {
        let mut rng = SplitMix64::new(derive_seed(seed, &format!("trial-{trial}")));
        let sampler = NoiseSampler::new(noise, dim, &mut rng);
        for t in 0..t_steps {
            let (ef, er) = sampler.step(&mut rng);
            streams_f[t][trial * dim..(trial + 1) * dim].copy_from_slice(&ef);
            streams_r[t][trial * dim..(trial + 1) * dim].copy_from_slice(&er);
        }
    }
    let mut same_f = 0.0f64;
    let mut same_r = 0.0f64;
    let mut cross = 0.0f64;
    for s in 0..t_steps {
        for t in (s + 1)..t_steps {
            same_f = same_f
                .max(stream_correlation(&streams_f[s], &streams_f[t], n_trials, dim)?.abs());
            same_r = same_r
                .max(stream_correlation(&streams_r[s], &streams_r[t], n_trials, dim)?.abs());
        }
    }
    for s in 0..t_steps {
        for t in 0..t_steps {
            cross = cross
                .max(stream_correlation(&streams_f[s], &streams_r[t], n_trials, dim)?.abs());
        }
    }
    Ok(CorrelationReport {
        same_loss_forget_max: same_f,
        same_loss_retain_max: same_r,
        cross_max: cross,
    })
}
