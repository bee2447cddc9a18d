//! Comparison methods: alternating gradient heads (GD-GD), local-only
//! regression, the single shared model, and new-client fine-tuning.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fedrep::{self, FedConfig, FedState, FedTrace, HeadRule, RoundReport};
use crate::linalg::{self, Matrix, Vector};
use crate::rng::{self, Stream};
use crate::synthetic::{self, GroundTruth, SampleBatch};

/// Default held-out set size for new-client evaluation.
pub const DEFAULT_TEST_SIZE: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "tag")]
pub enum BaselineKind {
    /// `tau` head gradient steps per round instead of the exact argmin.
    Gdgd {
        tau: usize,
    },
    LocalOnly,
    GlobalModel,
}

impl BaselineKind {
    pub fn validate(&self) -> Result<()> {
        match self {
            BaselineKind::Gdgd { tau: 0 } => Err(Error::config("tau", "must be >= 1")),
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> String {
        match self {
            BaselineKind::Gdgd { tau: 1 } => "gdgd".into(),
            BaselineKind::Gdgd { tau } => format!("{tau}gd-gd"),
            BaselineKind::LocalOnly => "local".into(),
            BaselineKind::GlobalModel => "global".into(),
        }
    }
}

fn head_rule(tau: usize, alpha: Option<f64>) -> Result<HeadRule> {
    if tau == 0 {
        return Err(Error::config("tau", "must be >= 1"));
    }
    if let Some(a) = alpha {
        if !(a >= 0.0) || !a.is_finite() {
            return Err(Error::config(
                "alpha",
                format!("{a} must be finite and >= 0"),
            ));
        }
    }
    Ok(HeadRule::Gradient { tau, alpha })
}

/// One round where each sampled client takes `tau` gradient steps on its head
/// from the carried value, then the usual representation step. `alpha = None`
/// uses `1/L` with `L` the largest eigenvalue of `(1/m)(Xb)ᵀ(Xb)`.
pub fn gdgd_round(
    state: &FedState,
    gt: &GroundTruth,
    config: &FedConfig,
    tau: usize,
    alpha: Option<f64>,
) -> Result<(FedState, RoundReport)> {
    fedrep::round_with_rule(state, gt, config, head_rule(tau, alpha)?)
}

pub fn run_gdgd(
    gt: &GroundTruth,
    config: &FedConfig,
    tau: usize,
    alpha: Option<f64>,
) -> Result<FedTrace> {
    fedrep::run_with_rule(gt, config, head_rule(tau, alpha)?)
}

fn stack_batches(batches: &[SampleBatch]) -> Result<(Matrix, Vector)> {
    let first = batches
        .first()
        .ok_or_else(|| Error::Dimension("local-only fit needs at least one batch".into()))?;
    let d = first.x.ncols();
    let rows: usize = batches.iter().map(|b| b.len()).sum();
    if rows == 0 {
        return Err(Error::Dimension(
            "local-only fit needs at least one sample".into(),
        ));
    }
    let mut x = Matrix::zeros(rows, d);
    let mut y = Vector::zeros(rows);
    let mut at = 0;
    for b in batches {
        if b.x.ncols() != d {
            return Err(Error::DimensionMismatch("batches disagree on d".into()));
        }
        x.rows_mut(at, b.len()).copy_from(&b.x);
        y.rows_mut(at, b.len()).copy_from(&b.y);
        at += b.len();
    }
    Ok((x, y))
}

/// Minimum-norm least-squares regressor on all samples of one client.
pub fn local_only_fit(batches: &[SampleBatch]) -> Result<Vector> {
    let (x, y) = stack_batches(batches)?;
    Ok(linalg::min_norm_least_squares(&x, &y))
}

/// `w̄* = (1/n) Σ_i w_i*`.
pub fn mean_head(gt: &GroundTruth) -> Vector {
    let mut w = Vector::zeros(gt.k());
    for i in 0..gt.n() {
        w += gt.head(i);
    }
    w / gt.n() as f64
}

/// Canonical minimizer `(B*, w̄*)` of `min_{B,w} (1/2n) Σ_i ‖Bw − B*w_i*‖²`.
pub fn global_model_fit(gt: &GroundTruth) -> (Matrix, Vector) {
    (gt.b_star.matrix().clone(), mean_head(gt))
}

/// `(1/2n) Σ_i ‖(1/n) B* Σ_{i'} (w_{i'}* − w_i*)‖²`.
pub fn global_model_error(gt: &GroundTruth) -> f64 {
    let n = gt.n();
    let b = gt.b_star.matrix();
    let mut total = 0.0;
    for i in 0..n {
        let wi = gt.head(i);
        let mut diff = Vector::zeros(gt.k());
        for j in 0..n {
            diff += gt.head(j) - &wi;
        }
        total += (b * diff / n as f64).norm_squared();
    }
    total / (2.0 * n as f64)
}

/// Test-set mean squared errors for a freshly drawn client.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NewClientReport {
    pub m_new: usize,
    pub mse_fedrep: f64,
    pub mse_fedavg_style: f64,
    pub mse_local: f64,
}

impl NewClientReport {
    pub fn csv_header() -> &'static str {
        "m_new,mse_fedrep,mse_fedavg_style,mse_local"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{}",
            self.m_new, self.mse_fedrep, self.mse_fedavg_style, self.mse_local
        )
    }
}

fn head_on_basis(b: &Matrix, x: &Matrix, y: &Vector) -> Result<Vector> {
    let xb = x * b;
    if xb.nrows() >= xb.ncols() {
        match linalg::least_squares_vec(&xb, y) {
            Ok(w) => return Ok(w),
            Err(Error::RankDeficient { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(linalg::min_norm_least_squares(&xb, y))
}

/// Draws a new client sharing `B*` with a fresh head of norm `√k`, fits a head
/// against `b_learned` and a local-only regressor on `m_new` noisy samples, and
/// scores both plus the shared-model product `B*w̄*` on a noiseless test set.
pub fn new_client_eval(
    gt: &GroundTruth,
    b_learned: &Matrix,
    m_new: usize,
    noise_var: f64,
    seed: u64,
    test_size: usize,
) -> Result<NewClientReport> {
    if m_new == 0 || test_size == 0 {
        return Err(Error::Dimension("m_new and test_size must be >= 1".into()));
    }
    if b_learned.shape() != (gt.d(), gt.k()) {
        return Err(Error::DimensionMismatch(format!(
            "b_learned is {:?}, expected ({}, {})",
            b_learned.shape(),
            gt.d(),
            gt.k()
        )));
    }
    let d = gt.d();
    let w_new =
        synthetic::normalized_head(&mut rng::substream(seed, Stream::NewClient, &[]), gt.k());
    let theta = gt.b_star.matrix() * &w_new;

    let mut train_rng = rng::substream(seed, Stream::NewClientTrain, &[]);
    let x = rng::gaussian_matrix(&mut train_rng, m_new, d);
    let noise = rng::gaussian_vector(&mut train_rng, m_new);
    let y = &x * &theta + noise * noise_var.sqrt();

    let x_test = rng::gaussian_matrix(
        &mut rng::substream(seed, Stream::NewClientTest, &[]),
        test_size,
        d,
    );
    let y_test = &x_test * &theta;
    let mse = |pred: &Vector| (&x_test * pred - &y_test).norm_squared() / test_size as f64;

    let head = head_on_basis(b_learned, &x, &y)?;
    let local = linalg::min_norm_least_squares(&x, &y);
    let (b_glob, w_glob) = global_model_fit(gt);
    Ok(NewClientReport {
        m_new,
        mse_fedrep: mse(&(b_learned * head)),
        mse_fedavg_style: mse(&(b_glob * w_glob)),
        mse_local: mse(&local),
    })
}
