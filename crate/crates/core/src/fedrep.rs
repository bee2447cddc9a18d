//! Federated alternating minimization-descent for a shared linear
//! representation.
//!
//! Each round the server samples `⌈r·n⌉` clients. A sampled client solves for
//! its head on a batch (or on its population loss), then takes one gradient
//! step on the shared representation `B`. The server averages the resulting
//! representations, which is the same as stepping `B` along the mean client
//! gradient. Heads of clients that were not sampled are carried over.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, OrthonormalBasis, Vector};
use crate::rng::{self, Stream};
use crate::synthetic::{self, GroundTruth, SampleBatch, SpectralBounds};
use crate::table::Table;

/// Distances at or below this are roundoff; ratios starting there are not
/// measured.
pub const RATIO_FLOOR: f64 = 1e-12;

/// Batch counter reserved for the initialization batches in fresh-data mode.
const INIT_COUNTER: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataMode {
    /// New batch for every participation.
    Fresh,
    /// The same `m` samples for the whole run.
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GradMode {
    Empirical,
    /// Batch losses replaced by their expectations `½‖Bw − B*w_i*‖²`.
    Population,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitMode {
    Random,
    /// Projected gradient descent on the unfactorized objective, then SVD.
    Spectral,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FedConfig {
    pub n: usize,
    pub d: usize,
    pub k: usize,
    /// Samples per client per round.
    pub m: usize,
    /// Participation rate in `(0, 1]`.
    pub r: f64,
    /// Representation step size; `None` means `1 / (4 σ̄²_max)`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    pub rounds: usize,
    /// Set by the caller per replicate; not part of the config file.
    #[serde(skip)]
    pub seed: u64,
    pub noise_var: f64,
    /// Orthonormalize `B` after every aggregation.
    pub ortho: bool,
    pub data_mode: DataMode,
    pub grad_mode: GradMode,
    pub init: InitMode,
    /// Projected gradient steps for spectral initialization.
    pub init_steps: usize,
}

impl Default for FedConfig {
    fn default() -> Self {
        Self {
            n: 100,
            d: 10,
            k: 2,
            m: 5,
            r: 0.1,
            eta: None,
            rounds: 500,
            seed: 0,
            noise_var: 1e-3,
            ortho: false,
            data_mode: DataMode::Fresh,
            grad_mode: GradMode::Empirical,
            init: InitMode::Random,
            init_steps: 10,
        }
    }
}

impl FedConfig {
    /// `⌈r·n⌉`.
    pub fn participants(&self) -> usize {
        ((self.r * self.n as f64) - 1e-9).ceil().max(0.0) as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r > 0.0 && self.r <= 1.0) {
            return Err(Error::config("r", format!("{} is not in (0, 1]", self.r)));
        }
        if self.participants() < 1 {
            return Err(Error::config("r", "ceil(r * n) must be at least 1"));
        }
        if self.k == 0 || self.k >= self.n.min(self.d) {
            return Err(Error::config(
                "k",
                format!(
                    "need 1 <= k < min(n, d), got n={} d={} k={}",
                    self.n, self.d, self.k
                ),
            ));
        }
        if self.m == 0 {
            return Err(Error::config("m", "batch size must be >= 1"));
        }
        if let Some(eta) = self.eta {
            if !(eta > 0.0) || !eta.is_finite() {
                return Err(Error::config(
                    "eta",
                    format!("{eta} must be positive and finite"),
                ));
            }
        }
        if !(self.noise_var >= 0.0) || !self.noise_var.is_finite() {
            return Err(Error::config(
                "noise_var",
                format!("{} is invalid", self.noise_var),
            ));
        }
        Ok(())
    }

    fn check_against(&self, gt: &GroundTruth) -> Result<()> {
        self.validate()?;
        if (self.n, self.d, self.k) != (gt.n(), gt.d(), gt.k()) {
            return Err(Error::DimensionMismatch(format!(
                "config (n, d, k) = ({}, {}, {}) but ground truth is ({}, {}, {})",
                self.n,
                self.d,
                self.k,
                gt.n(),
                gt.d(),
                gt.k()
            )));
        }
        Ok(())
    }

    fn batch_counter(&self, round: usize) -> u64 {
        match self.data_mode {
            DataMode::Fresh => round as u64,
            DataMode::Fixed => 0,
        }
    }
}

/// Largest step size covered by the linear convergence guarantee.
pub fn max_step_size(bounds: &SpectralBounds) -> f64 {
    1.0 / (4.0 * bounds.sigma_max * bounds.sigma_max)
}

/// How a sampled client updates its head before the representation step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HeadRule {
    /// Exact minimization of the client loss.
    Exact,
    /// `tau` gradient steps from the carried head; `alpha = None` uses `1/L`.
    Gradient { tau: usize, alpha: Option<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FedState {
    /// `d × k` shared representation.
    pub b: Matrix,
    /// One head per client, zero until the client is first sampled.
    pub heads: Vec<Vector>,
    pub round: usize,
}

impl FedState {
    pub fn new(b: Matrix, n: usize) -> Self {
        let k = b.ncols();
        Self {
            b,
            heads: vec![Vector::zeros(k); n],
            round: 0,
        }
    }

    /// `n × k` matrix of all heads.
    pub fn heads_matrix(&self) -> Matrix {
        let k = self.b.ncols();
        let mut w = Matrix::zeros(self.heads.len(), k);
        for (i, h) in self.heads.iter().enumerate() {
            w.set_row(i, &h.transpose());
        }
        w
    }
}

/// `(1/2m) Σ_j (y_j − wᵀbᵀx_j)²`.
pub fn batch_loss(b: &Matrix, w: &Vector, batch: &SampleBatch) -> f64 {
    let r = &batch.y - &batch.x * (b * w);
    0.5 * r.norm_squared() / batch.len() as f64
}

/// `∇_w` of [`batch_loss`].
pub fn head_gradient(b: &Matrix, w: &Vector, batch: &SampleBatch) -> Vector {
    let xb = &batch.x * b;
    let r = &batch.y - &xb * w;
    -(xb.transpose() * r) / batch.len() as f64
}

/// Exact head `argmin_w (1/2m) Σ_j (y_j − wᵀbᵀx_j)²` by least squares on `X·b`.
pub fn client_head_update(b: &Matrix, batch: &SampleBatch) -> Result<Vector> {
    if batch.len() < b.ncols() {
        return Err(Error::rank_deficient(format!(
            "client {}: {} samples for a {}-dimensional head",
            batch.client_id,
            batch.len(),
            b.ncols()
        )));
    }
    linalg::least_squares_vec(&(&batch.x * b), &batch.y).map_err(|e| match e {
        Error::RankDeficient { .. } => {
            Error::rank_deficient(format!("client {}: X·B is rank deficient", batch.client_id))
        }
        other => other,
    })
}

/// `∇_B (1/2m) Σ_j (y_j − wᵀbᵀx_j)² = −(1/m) Σ_j r_j x_j wᵀ`.
pub fn client_rep_gradient(b: &Matrix, w: &Vector, batch: &SampleBatch) -> Matrix {
    let r = &batch.y - &batch.x * (b * w);
    -(batch.x.transpose() * r) * w.transpose() / batch.len() as f64
}

/// Population head `(bᵀb)⁻¹bᵀB*w_i*` and gradient `(bw − B*w_i*)wᵀ`.
pub fn population_head_and_gradient(
    b: &Matrix,
    gt: &GroundTruth,
    client_id: usize,
) -> Result<(Vector, Matrix)> {
    let theta = gt.regressor(client_id);
    let w = linalg::least_squares_vec(b, &theta)?;
    let grad = population_gradient(b, &w, &theta);
    Ok((w, grad))
}

fn population_gradient(b: &Matrix, w: &Vector, theta: &Vector) -> Matrix {
    (b * w - theta) * w.transpose()
}

/// `½‖bw − B*w_i*‖²`.
pub fn population_client_loss(b: &Matrix, w: &Vector, gt: &GroundTruth, client_id: usize) -> f64 {
    0.5 * (b * w - gt.regressor(client_id)).norm_squared()
}

/// `(1/2n) Σ_i ‖B w_i − B* w_i*‖²` over all clients with their current heads.
pub fn population_loss(b: &Matrix, heads: &[Vector], gt: &GroundTruth) -> f64 {
    let total: f64 = heads
        .iter()
        .enumerate()
        .map(|(i, w)| (b * w - gt.regressor(i)).norm_squared())
        .sum();
    0.5 * total / heads.len() as f64
}

/// `‖W − W*_S B*ᵀ B̂‖_F`, where the rows of `heads` are the heads of the
/// clients in `subset` expressed against the orthonormal basis `b_hat`.
pub fn residual_f_diagnostic(
    b_hat: &OrthonormalBasis,
    heads: &Matrix,
    gt: &GroundTruth,
    subset: &[usize],
) -> f64 {
    let mut target = Matrix::zeros(subset.len(), gt.k());
    for (r, &i) in subset.iter().enumerate() {
        target.set_row(r, &gt.w_star.row(i));
    }
    let projected = target * gt.b_star.matrix().transpose() * b_hat.matrix();
    (heads - projected).norm()
}

/// Uniform sample of `count` distinct clients by partial Fisher–Yates.
pub fn sample_clients(n: usize, count: usize, seed: u64, round: usize) -> Vec<usize> {
    use rand::Rng;
    let count = count.min(n);
    let mut rng = rng::substream(seed, Stream::ClientSampling, &[round as u64]);
    let mut ids: Vec<usize> = (0..n).collect();
    for i in 0..count {
        let j = rng.random_range(i..n);
        ids.swap(i, j);
    }
    ids.truncate(count);
    ids
}

/// Top-`k` right singular vectors of `m`.
fn top_right_singular_vectors(m: &Matrix, k: usize) -> Result<Matrix> {
    let svd = m.clone().svd(false, true);
    let vt = svd.v_t.expect("v requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    if order.len() < k {
        return Err(Error::rank_deficient(
            "spectral init: fewer singular vectors than k",
        ));
    }
    let mut out = Matrix::zeros(m.ncols(), k);
    for (j, &i) in order.iter().take(k).enumerate() {
        out.set_column(j, &vt.row(i).transpose());
    }
    Ok(out)
}

/// Best rank-`k` approximation.
fn truncate_rank(m: &Matrix, k: usize) -> Matrix {
    let svd = m.clone().svd(true, true);
    let (u, vt) = (svd.u.expect("u requested"), svd.v_t.expect("v requested"));
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let mut out = Matrix::zeros(m.nrows(), m.ncols());
    for &i in order.iter().take(k) {
        out += u.column(i) * vt.row(i) * svd.singular_values[i];
    }
    out
}

/// Initial representation `B⁰`.
///
/// Random mode orthonormalizes a Gaussian `d × k` draw. Spectral mode runs
/// `init_steps` of projected gradient descent (unit step, rank-`k` SVD
/// projection) on `½ Σ_i (1/m) Σ_j (y_i^j − ⟨e_i x_jᵀ, M⟩)²` starting from
/// `M = 0`, using one batch per client, and returns the top-`k` right singular
/// vectors of the result.
pub fn init_representation(gt: &GroundTruth, config: &FedConfig) -> Result<Matrix> {
    let (n, d, k) = (gt.n(), gt.d(), gt.k());
    match config.init {
        InitMode::Random => {
            let mut rng = rng::substream(config.seed, Stream::Init, &[]);
            Ok(linalg::orthonormalize(&rng::gaussian_matrix(&mut rng, d, k))?.into_matrix())
        }
        InitMode::Spectral => {
            let counter = match config.data_mode {
                DataMode::Fresh => INIT_COUNTER,
                DataMode::Fixed => 0,
            };
            let batches: Vec<SampleBatch> = (0..n)
                .map(|i| {
                    synthetic::sample_batch(gt, i, config.m, config.noise_var, config.seed, counter)
                })
                .collect::<Result<_>>()?;
            let mut m_est = Matrix::zeros(n, d);
            for _ in 0..config.init_steps.max(1) {
                for (i, batch) in batches.iter().enumerate() {
                    let row = m_est.row(i).transpose();
                    let resid = &batch.y - &batch.x * &row;
                    let step = batch.x.transpose() * resid / batch.len() as f64;
                    m_est.set_row(i, &(row + step).transpose());
                }
                m_est = truncate_rank(&m_est, k);
                if m_est.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Diverged {
                        round: 0,
                        reason: "spectral initialization produced non-finite values".into(),
                    });
                }
            }
            top_right_singular_vectors(&m_est, k)
        }
    }
}

/// What one sampled client sends back.
#[derive(Debug, Clone)]
struct ClientUpdate {
    head: Vector,
    grad: Matrix,
    loss: f64,
    head_grad_norm: f64,
}

fn gradient_head_steps(
    w0: &Vector,
    tau: usize,
    alpha: Option<f64>,
    lipschitz: f64,
    grad: impl Fn(&Vector) -> Vector,
) -> Vector {
    let alpha = alpha.unwrap_or(if lipschitz > 0.0 {
        1.0 / lipschitz
    } else {
        0.0
    });
    let mut w = w0.clone();
    for _ in 0..tau {
        let g = grad(&w);
        w -= g * alpha;
    }
    w
}

fn client_update(
    state: &FedState,
    gt: &GroundTruth,
    config: &FedConfig,
    rule: HeadRule,
    client: usize,
) -> Result<ClientUpdate> {
    let b = &state.b;
    match config.grad_mode {
        GradMode::Empirical => {
            let batch = synthetic::sample_batch(
                gt,
                client,
                config.m,
                config.noise_var,
                config.seed,
                config.batch_counter(state.round),
            )?;
            let head = match rule {
                HeadRule::Exact => client_head_update(b, &batch)?,
                HeadRule::Gradient { tau, alpha } => {
                    let xb = &batch.x * b;
                    let lip = linalg::spectral_norm(&xb).powi(2) / batch.len() as f64;
                    gradient_head_steps(&state.heads[client], tau, alpha, lip, |w| {
                        head_gradient(b, w, &batch)
                    })
                }
            };
            Ok(ClientUpdate {
                grad: client_rep_gradient(b, &head, &batch),
                loss: batch_loss(b, &head, &batch),
                head_grad_norm: head_gradient(b, &head, &batch).norm(),
                head,
            })
        }
        GradMode::Population => {
            let theta = gt.regressor(client);
            let head = match rule {
                HeadRule::Exact => linalg::least_squares_vec(b, &theta)?,
                HeadRule::Gradient { tau, alpha } => {
                    let lip = linalg::spectral_norm(b).powi(2);
                    gradient_head_steps(&state.heads[client], tau, alpha, lip, |w| {
                        b.transpose() * (b * w - &theta)
                    })
                }
            };
            let head_grad = b.transpose() * (b * &head - &theta);
            Ok(ClientUpdate {
                grad: population_gradient(b, &head, &theta),
                loss: population_client_loss(b, &head, gt, client),
                head_grad_norm: head_grad.norm(),
                head,
            })
        }
    }
}

/// Per-round diagnostics produced alongside the new state.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundReport {
    pub participants: Vec<usize>,
    /// Mean client loss at the updated heads and the pre-step representation.
    pub emp_loss: f64,
    pub f_norm: f64,
    pub sigma_min_sub: f64,
    pub sigma_max_sub: f64,
    /// Largest `‖∇_w‖` over participants after their head update.
    pub max_head_grad: f64,
}

/// Step size from the config, or the default `1/(4σ̄²_max)`.
pub fn resolve_eta(gt: &GroundTruth, config: &FedConfig) -> f64 {
    config
        .eta
        .unwrap_or_else(|| max_step_size(&synthetic::spectral_bounds(gt, config.participants())))
}

/// One communication round with exact head minimization.
pub fn server_round(
    state: &FedState,
    gt: &GroundTruth,
    config: &FedConfig,
) -> Result<(FedState, RoundReport)> {
    round_with_rule(state, gt, config, HeadRule::Exact)
}

/// One communication round with an arbitrary head rule.
pub fn round_with_rule(
    state: &FedState,
    gt: &GroundTruth,
    config: &FedConfig,
    rule: HeadRule,
) -> Result<(FedState, RoundReport)> {
    let eta = resolve_eta(gt, config);
    let participants = sample_clients(gt.n(), config.participants(), config.seed, state.round);
    let updates: Vec<ClientUpdate> = participants
        .par_iter()
        .map(|&i| client_update(state, gt, config, rule, i))
        .collect::<Result<_>>()?;

    let rn = participants.len() as f64;
    let mut grad_sum = Matrix::zeros(state.b.nrows(), state.b.ncols());
    let mut loss_sum = 0.0;
    let mut max_head_grad = 0.0_f64;
    let mut heads = state.heads.clone();
    for (&i, u) in participants.iter().zip(&updates) {
        grad_sum += &u.grad;
        loss_sum += u.loss;
        max_head_grad = max_head_grad.max(u.head_grad_norm);
        heads[i] = u.head.clone();
    }

    let mut b_next = &state.b - grad_sum * (eta / rn);
    if b_next.iter().any(|v| !v.is_finite()) {
        return Err(Error::Diverged {
            round: state.round,
            reason: "non-finite representation".into(),
        });
    }
    if config.ortho {
        b_next = linalg::orthonormalize(&b_next)?.into_matrix();
    }

    // heads against B^t re-expressed in its orthonormal basis: B w = B̂ (R w)
    let qr = linalg::qr_decompose(&state.b)?;
    let mut sub_heads = Matrix::zeros(participants.len(), gt.k());
    for (r, u) in updates.iter().enumerate() {
        sub_heads.set_row(r, &(&qr.r * &u.head).transpose());
    }
    let f_norm = residual_f_diagnostic(&qr.q, &sub_heads, gt, &participants);
    let (sigma_min_sub, sigma_max_sub) = synthetic::subset_singular_values(gt, &participants);

    let next = FedState {
        b: b_next,
        heads,
        round: state.round + 1,
    };
    Ok((
        next,
        RoundReport {
            participants,
            emp_loss: loss_sum / rn,
            f_norm,
            sigma_min_sub,
            sigma_max_sub,
            max_head_grad,
        },
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FedRecord {
    pub round: usize,
    /// `dist(B^t, B*)`.
    pub dist: f64,
    pub pop_loss: f64,
    pub emp_loss: Option<f64>,
    pub sigma_min_sub: Option<f64>,
    pub sigma_max_sub: Option<f64>,
    /// `√(1 − η E₀ σ̄²_min / 2)`.
    pub rate_bound: f64,
    pub f_norm: Option<f64>,
    pub participants: usize,
    pub max_head_grad: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FedTrace {
    pub eta: f64,
    /// `1 − dist²(B⁰, B*)`.
    pub e0: f64,
    pub bounds: SpectralBounds,
    /// Record 0 is the initial state; record `t` follows round `t`.
    pub records: Vec<FedRecord>,
    pub warnings: Vec<String>,
    pub final_state: FedState,
}

impl FedTrace {
    pub fn final_dist(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| r.dist)
    }

    pub fn rate_bound(&self) -> f64 {
        self.records.first().map_or(f64::NAN, |r| r.rate_bound)
    }

    /// `(round, dist_{t+1} / dist_t)` for rounds starting above [`RATIO_FLOOR`].
    pub fn contraction_ratios(&self) -> Vec<(usize, f64)> {
        self.records
            .windows(2)
            .filter(|w| w[0].dist > RATIO_FLOOR)
            .map(|w| (w[1].round, w[1].dist / w[0].dist))
            .collect()
    }

    pub fn max_contraction_ratio(&self) -> f64 {
        self.contraction_ratios()
            .into_iter()
            .map(|(_, r)| r)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Every measured ratio is within `tol` of the per-round bound.
    pub fn contraction_holds(&self, tol: f64) -> bool {
        self.contraction_ratios()
            .iter()
            .all(|&(_, r)| r <= self.rate_bound() + tol)
    }

    /// First round whose distance is below `threshold`.
    pub fn rounds_to(&self, threshold: f64) -> Option<usize> {
        self.records
            .iter()
            .find(|r| r.dist < threshold)
            .map(|r| r.round)
    }

    /// One row per record.
    pub fn table(&self) -> Table {
        let mut t = Table::new(vec![
            "round",
            "dist",
            "pop_loss",
            "emp_loss",
            "sigma_min_sub",
            "sigma_max_sub",
            "rate_bound",
            "f_norm",
            "participants",
        ]);
        for r in &self.records {
            t.push(vec![
                Some(r.round as f64),
                Some(r.dist),
                Some(r.pop_loss),
                r.emp_loss,
                r.sigma_min_sub,
                r.sigma_max_sub,
                Some(r.rate_bound),
                r.f_norm,
                Some(r.participants as f64),
            ]);
        }
        t
    }
}

/// Runs `config.rounds` rounds of FedRep from [`init_representation`].
pub fn run_fedrep(gt: &GroundTruth, config: &FedConfig) -> Result<FedTrace> {
    run_with_rule(gt, config, HeadRule::Exact)
}

/// Same loop as [`run_fedrep`] with a configurable head rule.
pub fn run_with_rule(gt: &GroundTruth, config: &FedConfig, rule: HeadRule) -> Result<FedTrace> {
    config.check_against(gt)?;
    let bounds = synthetic::spectral_bounds(gt, config.participants());
    let eta_max = max_step_size(&bounds);
    let eta = config.eta.unwrap_or(eta_max);
    let mut warnings = Vec::new();
    if eta > eta_max * (1.0 + 1e-12) {
        let msg = format!(
            "step size {eta} exceeds 1/(4 sigma_max^2) = {eta_max}; the linear rate is not guaranteed"
        );
        log::warn!("{msg}");
        warnings.push(msg);
    }
    let mut cfg = config.clone();
    cfg.eta = Some(eta);

    let b0 = init_representation(gt, &cfg)?;
    let dist0 = linalg::principal_angle_distance(&b0, gt.b_star.matrix())?;
    let e0 = 1.0 - dist0 * dist0;
    let rate_bound = (1.0 - eta * e0 * bounds.sigma_min.powi(2) / 2.0)
        .max(0.0)
        .sqrt();

    let mut state = FedState::new(b0, gt.n());
    let mut records = Vec::with_capacity(cfg.rounds + 1);
    records.push(FedRecord {
        round: 0,
        dist: dist0,
        pop_loss: population_loss(&state.b, &state.heads, gt),
        emp_loss: None,
        sigma_min_sub: None,
        sigma_max_sub: None,
        rate_bound,
        f_norm: None,
        participants: 0,
        max_head_grad: None,
    });
    for _ in 0..cfg.rounds {
        let (next, report) = round_with_rule(&state, gt, &cfg, rule)?;
        state = next;
        let dist =
            linalg::principal_angle_distance(&state.b, gt.b_star.matrix()).map_err(
                |e| match e {
                    Error::RankDeficient { .. } => Error::Diverged {
                        round: state.round,
                        reason: "representation lost rank".into(),
                    },
                    other => other,
                },
            )?;
        records.push(FedRecord {
            round: state.round,
            dist,
            pop_loss: population_loss(&state.b, &state.heads, gt),
            emp_loss: Some(report.emp_loss),
            sigma_min_sub: Some(report.sigma_min_sub),
            sigma_max_sub: Some(report.sigma_max_sub),
            rate_bound,
            f_norm: Some(report.f_norm),
            participants: report.participants.len(),
            max_head_grad: Some(report.max_head_grad),
        });
    }
    Ok(FedTrace {
        eta,
        e0,
        bounds,
        records,
        warnings,
        final_state: state,
    })
}
