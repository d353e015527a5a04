//! Tabular MDPs under a fixed policy, i.i.d. transition sampling, and exact
//! ground-truth quantities by enumeration.
//!
//! States are indexed from 0 in code. The hard family is described with
//! 1-based states `s ∈ {1..n}`, so state `s` lives at index `s - 1`.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{invert, operator_norm, sym_eig, Matrix, Vector};

const ROW_SUM_TOL: f64 = 1e-12;
const STATIONARY_TOL: f64 = 1e-12;
const STATIONARY_MAX_ITERS: usize = 1_000_000;

/// A finite-state Markov reward process with linear features: the
/// policy-induced kernel `P`, rewards `r`, discount `γ` and feature rows `φ(s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MdpDocument", into = "MdpDocument")]
pub struct TabularMdp {
    gamma: f64,
    kernel: Matrix,
    rewards: Vector,
    features: Matrix,
}

/// On-disk JSON layout of a [`TabularMdp`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MdpDocument {
    pub n_states: usize,
    pub gamma: f64,
    pub kernel: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub features: Vec<Vec<f64>>,
}

impl TryFrom<MdpDocument> for TabularMdp {
    type Error = Error;

    fn try_from(doc: MdpDocument) -> Result<Self> {
        let mdp = TabularMdp::new(
            doc.gamma,
            Matrix::from_rows(&doc.kernel)?,
            Vector::new(doc.rewards)?,
            Matrix::from_rows(&doc.features)?,
        )?;
        if mdp.n_states() != doc.n_states {
            return Err(Error::Construction(format!(
                "n_states is {} but the kernel has {} rows",
                doc.n_states,
                mdp.n_states()
            )));
        }
        Ok(mdp)
    }
}

impl From<TabularMdp> for MdpDocument {
    fn from(mdp: TabularMdp) -> Self {
        MdpDocument {
            n_states: mdp.n_states(),
            gamma: mdp.gamma,
            kernel: mdp.kernel.to_rows(),
            rewards: mdp.rewards.into_vec(),
            features: mdp.features.to_rows(),
        }
    }
}

impl TabularMdp {
    pub fn new(gamma: f64, kernel: Matrix, rewards: Vector, features: Matrix) -> Result<Self> {
        let n = kernel.rows();
        if n == 0 || !kernel.is_square() {
            return Err(Error::Construction(format!(
                "kernel must be a non-empty square matrix, got {}x{}",
                kernel.rows(),
                kernel.cols()
            )));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::Construction(format!("discount {gamma} is outside [0, 1)")));
        }
        for s in 0..n {
            let row = kernel.row(s);
            if let Some(p) = row.iter().find(|&&p| p < 0.0) {
                return Err(Error::Construction(format!("kernel row {s} has negative entry {p}")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::Construction(format!("kernel row {s} sums to {sum}")));
            }
        }
        if rewards.len() != n {
            return Err(Error::Construction(format!(
                "{} rewards for {n} states",
                rewards.len()
            )));
        }
        if let Some(r) = rewards.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return Err(Error::Construction(format!("reward {r} is outside [0, 1]")));
        }
        if features.rows() != n || features.cols() == 0 {
            return Err(Error::Construction(format!(
                "feature matrix is {}x{}, expected {n} rows and at least one column",
                features.rows(),
                features.cols()
            )));
        }
        for s in 0..n {
            let norm = features.row(s).iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1.0 + 1e-12 {
                return Err(Error::Construction(format!("feature row {s} has norm {norm} > 1")));
            }
        }
        Ok(TabularMdp { gamma, kernel, rewards, features })
    }

    pub fn n_states(&self) -> usize {
        self.kernel.rows()
    }

    /// Feature dimension d.
    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn kernel(&self) -> &Matrix {
        &self.kernel
    }

    pub fn rewards(&self) -> &Vector {
        &self.rewards
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn feature(&self, s: usize) -> &[f64] {
        self.features.row(s)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| Error::Io { path: path.display().to_string(), source })?;
        Self::from_json(&text)
    }
}

/// Parameters of the hard MDP family with indicator features.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HardMdpParams {
    pub n_states: usize,
    pub dim: usize,
    pub gamma: f64,
    pub eps: f64,
}

impl HardMdpParams {
    pub fn new(n_states: usize, dim: usize, gamma: f64, eps: f64) -> Self {
        HardMdpParams { n_states, dim, gamma, eps }
    }

    pub fn q_plus(&self) -> f64 {
        self.gamma + (1.0 - self.gamma).powi(2) * self.eps
    }

    pub fn q_minus(&self) -> f64 {
        self.gamma - (1.0 - self.gamma).powi(2) * self.eps
    }

    /// Self-loop probabilities of states `1..d-1`: the first half take `q₊`,
    /// the second half `q₋`.
    pub fn q_vector(&self) -> Vec<f64> {
        let half = (self.dim - 1) / 2;
        (0..self.dim - 1)
            .map(|i| if i < half { self.q_plus() } else { self.q_minus() })
            .collect()
    }

    fn validate(&self) -> Result<()> {
        let d = self.dim;
        if d < 3 || d.is_multiple_of(2) {
            return Err(Error::Construction(format!("dimension {d} must be odd and at least 3")));
        }
        if d > self.n_states {
            return Err(Error::Construction(format!(
                "dimension {d} exceeds the number of states {}",
                self.n_states
            )));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Construction(format!("discount {} is outside (0, 1)", self.gamma)));
        }
        for q in [self.q_plus(), self.q_minus()] {
            if !(q > 0.0 && q < 1.0) {
                return Err(Error::Construction(format!(
                    "self-loop probability {q} is outside (0, 1); reduce eps"
                )));
            }
        }
        Ok(())
    }

    /// Closed-form stationary distribution: `1/(2(d-1))` on the first `d-1`
    /// states and `1/(2(n-d+1))` on the rest.
    pub fn stationary_closed_form(&self) -> Vector {
        let (n, d) = (self.n_states, self.dim);
        Vector::from_vec_unchecked(
            (0..n)
                .map(|k| {
                    if k + 1 < d {
                        1.0 / (2.0 * (d - 1) as f64)
                    } else {
                        1.0 / (2.0 * (n - d + 1) as f64)
                    }
                })
                .collect(),
        )
    }
}

/// Builds the hard MDP: states `s < d` self-loop with probability `q_s` and
/// otherwise jump uniformly into the absorbing block `s ≥ d`; states in that
/// block move within it with total mass `γ` and to each `s' < d` with mass
/// `(1 - q_{s'})/(d-1)`. Rewards are `1(s ≥ d)`, features `φ(s) = e_{min(s,d)}`.
pub fn build_hard_mdp(params: &HardMdpParams) -> Result<TabularMdp> {
    params.validate()?;
    let HardMdpParams { n_states: n, dim: d, gamma, .. } = *params;
    let q = params.q_vector();
    let block = (n - d + 1) as f64;

    let mut kernel = Matrix::zeros(n, n);
    for k in 0..n {
        if k + 1 < d {
            kernel[(k, k)] += q[k];
            for j in (d - 1)..n {
                kernel[(k, j)] += (1.0 - q[k]) / block;
            }
        } else {
            for j in 0..n {
                kernel[(k, j)] = if j + 1 < d {
                    (1.0 - q[j]) / (d - 1) as f64
                } else {
                    gamma / block
                };
            }
            // The balanced q-vector makes this row sum to 1 up to rounding.
            let sum: f64 = kernel.row(k).iter().sum();
            for j in 0..n {
                kernel[(k, j)] /= sum;
            }
        }
    }

    let rewards = Vector::from_vec_unchecked(
        (0..n).map(|k| if k + 1 >= d { 1.0 } else { 0.0 }).collect(),
    );
    let mut features = Matrix::zeros(n, d);
    for k in 0..n {
        features[(k, k.min(d - 1))] = 1.0;
    }
    TabularMdp::new(gamma, kernel, rewards, features)
}

/// The three-state, one-feature MDP on which averaged TD can blow up under
/// an adversarial (but positive-probability) sample path.
pub fn build_divergence_mdp() -> TabularMdp {
    let row = [0.1, 0.1, 0.8];
    TabularMdp::new(
        0.9,
        Matrix::from_rows(&[row, row, row]).expect("static kernel"),
        Vector::new(vec![0.1, 0.1, 1.0]).expect("static rewards"),
        Matrix::from_rows(&[[-0.5], [-1.0], [1.0]]).expect("static features"),
    )
    .expect("divergence MDP is valid")
}

/// Stationary distribution `μ` of a kernel, `μᵀP = μᵀ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StationaryDistribution(Vector);

impl StationaryDistribution {
    pub fn probs(&self) -> &Vector {
        &self.0
    }
}

/// Left fixed point of `P` by power iteration from the uniform distribution.
pub fn stationary_distribution(kernel: &Matrix) -> Result<StationaryDistribution> {
    let n = kernel.rows();
    if n == 0 || !kernel.is_square() {
        return Err(Error::Shape("kernel must be a non-empty square matrix".into()));
    }
    let mut mu = vec![1.0 / n as f64; n];
    let mut next = vec![0.0; n];
    for _ in 0..STATIONARY_MAX_ITERS {
        next.iter_mut().for_each(|x| *x = 0.0);
        for (s, &m) in mu.iter().enumerate() {
            for (x, p) in next.iter_mut().zip(kernel.row(s)) {
                *x += m * p;
            }
        }
        let total: f64 = next.iter().sum();
        next.iter_mut().for_each(|x| *x /= total);
        let gap: f64 = mu.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut mu, &mut next);
        if gap <= STATIONARY_TOL {
            return Ok(StationaryDistribution(Vector::from_vec_unchecked(mu)));
        }
    }
    Err(Error::Convergence(format!(
        "power iteration did not reach the fixed point in {STATIONARY_MAX_ITERS} iterations"
    )))
}

/// Exact population quantities of TD on an MDP.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruth {
    /// `E[φ(s)(φ(s) - γφ(s'))ᵀ]`
    pub a: Matrix,
    /// `E[r(s)φ(s)]`
    pub b: Vector,
    /// Feature covariance `E[φ(s)φ(s)ᵀ]`.
    pub sigma: Matrix,
    pub theta_star: Vector,
    /// Noise covariance `E[(A_t θ* - b_t)(A_t θ* - b_t)ᵀ]`.
    pub gamma_noise: Matrix,
    /// Asymptotic covariance `A⁻¹ Γ A⁻ᵀ`.
    pub lambda_star: Matrix,
    pub lambda0: f64,
    pub lambda_sigma: f64,
    pub mu: StationaryDistribution,
}

fn pair_weights<'a>(mdp: &'a TabularMdp, mu: &'a [f64]) -> impl Iterator<Item = (usize, usize, f64)> + 'a {
    let n = mdp.n_states();
    let mu = mu.to_vec();
    (0..n).flat_map(move |s| {
        let ms = mu[s];
        (0..n).filter_map(move |sp| {
            let w = ms * mdp.kernel[(s, sp)];
            (w != 0.0).then_some((s, sp, w))
        })
    })
}

fn td_direction(mdp: &TabularMdp, s: usize, sp: usize) -> Vec<f64> {
    mdp.feature(s)
        .iter()
        .zip(mdp.feature(sp))
        .map(|(f, g)| f - mdp.gamma * g)
        .collect()
}

/// Computes every ground-truth quantity by enumerating `(s, s')` pairs with
/// weight `μ(s) P(s'|s)`.
pub fn ground_truth(mdp: &TabularMdp) -> Result<GroundTruth> {
    let mu = stationary_distribution(&mdp.kernel)?;
    let d = mdp.dim();
    let mut a = Matrix::zeros(d, d);
    let mut b = vec![0.0; d];
    let mut sigma = Matrix::zeros(d, d);

    for (s, &m) in mu.probs().iter().enumerate() {
        let phi = mdp.feature(s);
        for i in 0..d {
            b[i] += m * mdp.rewards[s] * phi[i];
            for j in 0..d {
                sigma[(i, j)] += m * phi[i] * phi[j];
            }
        }
    }
    for (s, sp, w) in pair_weights(mdp, mu.probs()) {
        let phi = mdp.feature(s);
        let dir = td_direction(mdp, s, sp);
        for i in 0..d {
            for j in 0..d {
                a[(i, j)] += w * phi[i] * dir[j];
            }
        }
    }

    let b = Vector::from_vec_unchecked(b);
    let a_inv = invert(&a)?;
    let theta_star = a_inv.matvec(&b);

    // A_t θ* - b_t = φ(s) · ((φ(s) - γφ(s'))ᵀθ* - r(s))
    let mut gamma_noise = Matrix::zeros(d, d);
    for (s, sp, w) in pair_weights(mdp, mu.probs()) {
        let phi = mdp.feature(s);
        let dir = td_direction(mdp, s, sp);
        let resid: f64 =
            dir.iter().zip(theta_star.iter()).map(|(x, t)| x * t).sum::<f64>() - mdp.rewards[s];
        for i in 0..d {
            for j in 0..d {
                gamma_noise[(i, j)] += w * resid * resid * phi[i] * phi[j];
            }
        }
    }
    let gamma_noise = gamma_noise.symmetrize();
    let lambda_star = a_inv.matmul(&gamma_noise).matmul(&a_inv.transpose()).symmetrize();
    let sigma_eig = sym_eig(&sigma)?;

    Ok(GroundTruth {
        a,
        b,
        sigma,
        theta_star,
        gamma_noise,
        lambda_star,
        lambda0: sigma_eig.min(),
        lambda_sigma: sigma_eig.max(),
        mu,
    })
}

/// Closed-form `θ*` of the hard family for an arbitrary q-vector of length `d - 1`.
pub fn closed_form_theta_star(params: &HardMdpParams, q: &[f64]) -> Result<Vector> {
    let d = params.dim;
    let gamma = params.gamma;
    if d < 2 || q.len() != d - 1 {
        return Err(Error::Shape(format!("q-vector has length {}, expected {}", q.len(), d - 1)));
    }
    let tail: f64 = q
        .iter()
        .map(|&qi| gamma * gamma * (1.0 - qi).powi(2) / ((d - 1) as f64 * (1.0 - gamma * qi)))
        .sum();
    let denom = 1.0 - gamma * gamma - tail;
    if denom <= 0.0 || !denom.is_finite() {
        return Err(Error::Domain(format!("closed-form denominator {denom} is not positive")));
    }
    let v_block = 1.0 / denom;
    let mut theta: Vec<f64> =
        q.iter().map(|&qi| gamma * (1.0 - qi) / (1.0 - gamma * qi) * v_block).collect();
    theta.push(v_block);
    Vector::new(theta)
}

/// One i.i.d. observation: `s ~ μ`, `s' ~ P(·|s)` and the TD pair
/// `A_t = φ(s)(φ(s) - γφ(s'))ᵀ`, `b_t = r(s)φ(s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleTuple {
    pub s: usize,
    pub s_next: usize,
    pub reward: f64,
    pub a: Matrix,
    pub b: Vector,
}

impl SampleTuple {
    pub fn from_transition(mdp: &TabularMdp, s: usize, s_next: usize) -> Self {
        let d = mdp.dim();
        let mut t = SampleTuple {
            s,
            s_next,
            reward: 0.0,
            a: Matrix::zeros(d, d),
            b: Vector::zeros(d),
        };
        t.fill(mdp, s, s_next);
        t
    }

    fn fill(&mut self, mdp: &TabularMdp, s: usize, s_next: usize) {
        let phi = mdp.feature(s);
        let phi_next = mdp.feature(s_next);
        let d = phi.len();
        let reward = mdp.rewards[s];
        self.s = s;
        self.s_next = s_next;
        self.reward = reward;
        let a = self.a.as_mut_slice();
        for i in 0..d {
            for j in 0..d {
                a[i * d + j] = phi[i] * (phi[j] - mdp.gamma * phi_next[j]);
            }
            self.b[i] = reward * phi[i];
        }
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }
}

fn cumulative(weights: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    weights
        .iter()
        .map(|w| {
            acc += w;
            acc
        })
        .collect()
}

fn inverse_cdf(cdf: &[f64], u: f64) -> usize {
    let total = *cdf.last().expect("non-empty cdf");
    cdf.partition_point(|&c| c <= u * total).min(cdf.len() - 1)
}

/// Draws transitions by inverse-CDF lookups on precomputed cumulative rows.
#[derive(Debug, Clone)]
pub struct TransitionSampler<'a> {
    mdp: &'a TabularMdp,
    state_cdf: Vec<f64>,
    row_cdfs: Vec<Vec<f64>>,
}

impl<'a> TransitionSampler<'a> {
    pub fn new(mdp: &'a TabularMdp, mu: &StationaryDistribution) -> Result<Self> {
        if mu.probs().len() != mdp.n_states() {
            return Err(Error::Shape(format!(
                "stationary distribution has {} entries for {} states",
                mu.probs().len(),
                mdp.n_states()
            )));
        }
        Ok(TransitionSampler {
            mdp,
            state_cdf: cumulative(mu.probs()),
            row_cdfs: (0..mdp.n_states()).map(|s| cumulative(mdp.kernel.row(s))).collect(),
        })
    }

    pub fn mdp(&self) -> &TabularMdp {
        self.mdp
    }

    pub fn draw_transition<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, usize) {
        let s = inverse_cdf(&self.state_cdf, rng.random::<f64>());
        let sp = inverse_cdf(&self.row_cdfs[s], rng.random::<f64>());
        (s, sp)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> SampleTuple {
        let (s, sp) = self.draw_transition(rng);
        SampleTuple::from_transition(self.mdp, s, sp)
    }

    /// Like [`Self::sample`] but overwrites an existing tuple in place.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut SampleTuple) {
        let (s, sp) = self.draw_transition(rng);
        out.fill(self.mdp, s, sp);
    }
}

/// One-off draw. Prefer [`TransitionSampler`] for repeated sampling.
pub fn sample_tuple<R: Rng + ?Sized>(
    mdp: &TabularMdp,
    mu: &StationaryDistribution,
    rng: &mut R,
) -> Result<SampleTuple> {
    Ok(TransitionSampler::new(mdp, mu)?.sample(rng))
}

/// The adversarial path on the divergence MDP: every sample is the
/// transition from state 1 to state 2, giving `A_t = -0.2` and `b_t = -0.05`.
pub fn adversarial_stream(_t: u64) -> SampleTuple {
    thread_local! {
        static MDP: TabularMdp = build_divergence_mdp();
    }
    MDP.with(|mdp| SampleTuple::from_transition(mdp, 0, 1))
}

/// Slack in each structural inequality relating `A`, `Σ` and `γ`. A
/// non-negative margin means the inequality holds.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct LemmaMargins {
    /// `λmin((A+Aᵀ) - 2(1-γ)Σ)`
    pub sym_part_lower: f64,
    /// `-λmax((A+Aᵀ) - 2(1+γ)Σ)`
    pub sym_part_upper: f64,
    /// `λmin((A+Aᵀ)/2) - (1-γ)λ0`
    pub min_eigen: f64,
    /// `-λmax(E[A_tᵀA_t] - (A+Aᵀ))`
    pub second_moment: f64,
    /// `1 - (1-γ)λ0η/2 - ‖I - ηA‖` at `η = 1/(4λΣ)`
    pub contraction: f64,
    /// `1/(λ0(1-γ)) - ‖A⁻¹‖`
    pub inverse_norm: f64,
}

impl LemmaMargins {
    pub fn all_hold(&self) -> bool {
        self.sym_part_lower >= -1e-10
            && self.sym_part_upper >= -1e-10
            && self.min_eigen >= -1e-10
            && self.second_moment >= -1e-10
            && self.contraction >= -1e-10
            && self.inverse_norm >= -1e-8
    }
}

/// Evaluates the structural inequalities on `A` for an MDP with `‖φ(s)‖ ≤ 1`.
pub fn check_matrix_lemmas(mdp: &TabularMdp, gt: &GroundTruth) -> Result<LemmaMargins> {
    let d = mdp.dim();
    let gamma = mdp.gamma;
    let sym2 = gt.a.add(&gt.a.transpose());

    let lower = sym_eig(&sym2.sub(&gt.sigma.scale(2.0 * (1.0 - gamma))))?.min();
    let upper = sym_eig(&sym2.sub(&gt.sigma.scale(2.0 * (1.0 + gamma))))?.max();
    let min_eigen = sym_eig(&sym2.scale(0.5))?.min() - (1.0 - gamma) * gt.lambda0;

    let mut ata = Matrix::zeros(d, d);
    for (s, sp, w) in pair_weights(mdp, gt.mu.probs()) {
        let sq_norm: f64 = mdp.feature(s).iter().map(|x| x * x).sum();
        let dir = td_direction(mdp, s, sp);
        for i in 0..d {
            for j in 0..d {
                ata[(i, j)] += w * sq_norm * dir[i] * dir[j];
            }
        }
    }
    let second_moment = -sym_eig(&ata.sub(&sym2))?.max();

    let eta = 1.0 / (4.0 * gt.lambda_sigma);
    let contraction = 1.0 - (1.0 - gamma) * gt.lambda0 * eta / 2.0
        - operator_norm(&Matrix::identity(d).sub(&gt.a.scale(eta)));
    let inverse_norm = 1.0 / (gt.lambda0 * (1.0 - gamma)) - operator_norm(&invert(&gt.a)?);

    Ok(LemmaMargins {
        sym_part_lower: lower,
        sym_part_upper: -upper,
        min_eigen,
        second_moment,
        contraction,
        inverse_norm,
    })
}
