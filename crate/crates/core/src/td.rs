//! TD(0) with polynomially decaying stepsizes and Polyak-Ruppert averaging,
//! plus the finite-sample covariance diagnostics built from the `Q_t` matrices.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{SampleTuple, StationaryDistribution, TabularMdp, TransitionSampler};
use crate::numkit::{seeded_rng, Matrix, Vector};

/// `η_t = η₀ t^{-α}` for 1-based `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSchedule {
    pub eta0: f64,
    pub alpha: f64,
}

impl StepSchedule {
    /// Accepts `α ∈ [1/2, 1)`. The boundary `α = 1/2` is outside the range
    /// covered by the averaging guarantees but is kept for comparison runs.
    pub fn new(eta0: f64, alpha: f64) -> Result<Self> {
        if !(eta0 > 0.0 && eta0.is_finite()) {
            return Err(Error::Domain(format!("eta0 {eta0} must be positive")));
        }
        if !(0.5..1.0).contains(&alpha) {
            return Err(Error::Domain(format!("alpha {alpha} is outside [1/2, 1)")));
        }
        Ok(StepSchedule { eta0, alpha })
    }

    pub fn stepsize(&self, t: u64) -> Result<f64> {
        if t == 0 {
            return Err(Error::Domain("iterations are 1-based; t = 0 has no stepsize".into()));
        }
        Ok(self.eta(t))
    }

    #[inline]
    pub(crate) fn eta(&self, t: u64) -> f64 {
        self.eta0 * (t as f64).powf(-self.alpha)
    }
}

/// Current iterate `θ_t`, running average `θ̄_t` and the step counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TdState {
    pub t: u64,
    pub theta: Vector,
    pub theta_bar: Vector,
}

impl TdState {
    /// Starts at `θ₀`; the average is empty until the first step.
    pub fn new(theta0: Vector) -> Self {
        let d = theta0.len();
        TdState { t: 0, theta: theta0, theta_bar: Vector::zeros(d) }
    }

    pub fn zeros(d: usize) -> Self {
        Self::new(Vector::zeros(d))
    }

    /// `θ_t = θ_{t-1} - η_t (A_t θ_{t-1} - b_t)` followed by the incremental
    /// mean update of `θ̄`.
    pub fn step(&mut self, sample: &SampleTuple, schedule: &StepSchedule) -> Result<()> {
        let d = self.theta.len();
        if sample.dim() != d {
            return Err(Error::Shape(format!(
                "sample has dimension {}, state has {d}",
                sample.dim()
            )));
        }
        let t = self.t + 1;
        let eta = schedule.eta(t);
        let a = sample.a.as_slice();
        let mut next = [0.0f64; 16];
        let mut heap;
        let next: &mut [f64] = if d <= next.len() {
            &mut next[..d]
        } else {
            heap = vec![0.0; d];
            &mut heap
        };
        for (i, n) in next.iter_mut().enumerate() {
            let row = &a[i * d..(i + 1) * d];
            let resid: f64 =
                row.iter().zip(self.theta.iter()).map(|(x, y)| x * y).sum::<f64>() - sample.b[i];
            *n = self.theta[i] - eta * resid;
        }
        if next.iter().any(|x| !x.is_finite()) {
            return Err(Error::Diverged { t });
        }
        self.theta.copy_from_slice(next);
        let w = 1.0 / t as f64;
        for (m, x) in self.theta_bar.iter_mut().zip(self.theta.iter()) {
            *m += (x - *m) * w;
        }
        self.t = t;
        Ok(())
    }
}

/// Functional form of [`TdState::step`].
pub fn td_step(state: &TdState, sample: &SampleTuple, schedule: &StepSchedule) -> Result<TdState> {
    let mut next = state.clone();
    next.step(sample, schedule)?;
    Ok(next)
}

/// A snapshot of the averaged iterate at step `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub t: u64,
    pub theta_bar: Vector,
    pub theta: Option<Vector>,
}

/// Iterations at which results are recorded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckpointGrid {
    /// Every `k` iterations.
    Every(u64),
    /// `round(10^{j/n})` for `j = 0, 1, ...`.
    PerDecade(u32),
}

impl CheckpointGrid {
    /// Sorted, distinct checkpoints in `[1, horizon]`; the horizon itself is
    /// always included.
    pub fn points(&self, horizon: u64) -> Result<Vec<u64>> {
        if horizon == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        let mut pts = match *self {
            CheckpointGrid::Every(k) => {
                if k == 0 {
                    return Err(Error::Config("checkpoint spacing must be positive".into()));
                }
                (1..=horizon / k).map(|j| j * k).collect::<Vec<_>>()
            }
            CheckpointGrid::PerDecade(n) => {
                if n == 0 {
                    return Err(Error::Config("checkpoints per decade must be positive".into()));
                }
                let mut v = Vec::new();
                for j in 0.. {
                    let t = 10f64.powf(j as f64 / n as f64).round() as u64;
                    if t > horizon {
                        break;
                    }
                    if v.last() != Some(&t) {
                        v.push(t);
                    }
                }
                v
            }
        };
        if pts.last() != Some(&horizon) {
            pts.push(horizon);
        }
        Ok(pts)
    }
}

fn validate_checkpoints(checkpoints: &[u64], horizon: u64) -> Result<()> {
    if checkpoints.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("checkpoints must be strictly increasing".into()));
    }
    if checkpoints.first().is_some_and(|&t| t == 0) || checkpoints.last().is_some_and(|&t| t > horizon) {
        return Err(Error::Config(format!("checkpoints must lie in [1, {horizon}]")));
    }
    Ok(())
}

/// Runs `horizon` TD steps on samples from `stream(t)` starting at `θ₀`,
/// recording `θ̄_t` (and `θ_t`) at each checkpoint.
pub fn run_td_stream(
    theta0: Vector,
    mut stream: impl FnMut(u64) -> SampleTuple,
    schedule: &StepSchedule,
    horizon: u64,
    checkpoints: &[u64],
) -> Result<Vec<Checkpoint>> {
    drive(theta0, |t, buf| *buf = stream(t), schedule, horizon, checkpoints)
}

fn drive(
    theta0: Vector,
    mut fill: impl FnMut(u64, &mut SampleTuple),
    schedule: &StepSchedule,
    horizon: u64,
    checkpoints: &[u64],
) -> Result<Vec<Checkpoint>> {
    validate_checkpoints(checkpoints, horizon)?;
    let d = theta0.len();
    let mut state = TdState::new(theta0);
    let mut buf = SampleTuple {
        s: 0,
        s_next: 0,
        reward: 0.0,
        a: Matrix::zeros(d, d),
        b: Vector::zeros(d),
    };
    let mut out = Vec::with_capacity(checkpoints.len());
    let mut next_cp = checkpoints.iter().peekable();
    for t in 1..=horizon {
        fill(t, &mut buf);
        state.step(&buf, schedule)?;
        if next_cp.next_if_eq(&&t).is_some() {
            out.push(Checkpoint {
                t,
                theta_bar: state.theta_bar.clone(),
                theta: Some(state.theta.clone()),
            });
        }
    }
    Ok(out)
}

/// TD on i.i.d. samples from `μ ⊗ P`, from `θ₀ = 0`, seeded for reproducibility.
pub fn run_td(
    mdp: &TabularMdp,
    mu: &StationaryDistribution,
    schedule: &StepSchedule,
    horizon: u64,
    seed: u64,
    checkpoints: &[u64],
) -> Result<Vec<Checkpoint>> {
    let sampler = TransitionSampler::new(mdp, mu)?;
    let mut rng = seeded_rng(seed);
    run_td_with_rng(&sampler, &mut rng, Vector::zeros(mdp.dim()), schedule, horizon, checkpoints)
}

pub fn run_td_with_rng<R: Rng + ?Sized>(
    sampler: &TransitionSampler<'_>,
    rng: &mut R,
    theta0: Vector,
    schedule: &StepSchedule,
    horizon: u64,
    checkpoints: &[u64],
) -> Result<Vec<Checkpoint>> {
    if theta0.len() != sampler.mdp().dim() {
        return Err(Error::Shape("θ₀ does not match the feature dimension".into()));
    }
    drive(theta0, |_, buf| sampler.sample_into(rng, buf), schedule, horizon, checkpoints)
}

/// `Q_t = η_t Σ_{j=t}^{T} Π_{k=t+1}^{j} (I - η_k A)`.
pub fn compute_q(t: u64, horizon: u64, schedule: &StepSchedule, a: &Matrix) -> Result<Matrix> {
    if t == 0 || t > horizon {
        return Err(Error::Domain(format!("Q_t needs 1 ≤ t ≤ T, got t={t}, T={horizon}")));
    }
    let mut q = Matrix::zeros(0, 0);
    for_each_q(horizon, schedule, a, |s, qs| {
        if s == t {
            q = qs.clone();
        }
    })?;
    Ok(q)
}

/// Visits `Q_T, Q_{T-1}, ..., Q_1` using
/// `Q_t = η_t I + (η_t/η_{t+1}) (I - η_{t+1} A) Q_{t+1}`.
fn for_each_q(
    horizon: u64,
    schedule: &StepSchedule,
    a: &Matrix,
    mut visit: impl FnMut(u64, &Matrix),
) -> Result<()> {
    if !a.is_square() {
        return Err(Error::Shape("A must be square".into()));
    }
    let d = a.rows();
    let eye = Matrix::identity(d);
    let mut q = eye.scale(schedule.eta(horizon));
    visit(horizon, &q);
    for t in (1..horizon).rev() {
        let eta_t = schedule.eta(t);
        let eta_next = schedule.eta(t + 1);
        let contraction = eye.sub(&a.scale(eta_next));
        q = eye.scale(eta_t).add(&contraction.matmul(&q).scale(eta_t / eta_next));
        visit(t, &q);
    }
    Ok(())
}

/// `Λ̄_T = (1/T) Σ_t Q_t Γ Q_tᵀ`.
pub fn lambda_bar(horizon: u64, schedule: &StepSchedule, a: &Matrix, gamma: &Matrix) -> Result<Matrix> {
    if horizon == 0 {
        return Err(Error::Domain("horizon must be at least 1".into()));
    }
    let d = a.rows();
    if gamma.rows() != d || gamma.cols() != d {
        return Err(Error::Shape("Γ must match the shape of A".into()));
    }
    let mut acc = Matrix::zeros(d, d);
    for_each_q(horizon, schedule, a, |_, q| {
        acc = acc.add(&q.matmul(gamma).matmul(&q.transpose()));
    })?;
    Ok(acc.scale(1.0 / horizon as f64).symmetrize())
}
