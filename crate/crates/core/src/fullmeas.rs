//! Alternating minimization-descent on `F(Û, V̂) = ½‖ÛV̂ᵀ − M‖_F²` with the
//! full matrix `M` observed.
//!
//! Each iteration solves exactly for `Û` given `V̂`, then takes one gradient
//! step on `V̂`. The trace records the quantities the convergence argument
//! tracks: the QR factor `R_t` of `V̂_t`, the gradient `S_t`, and the principal
//! angle distance to the true right singular subspace.

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, OrthonormalBasis};
use crate::rng::{self, Stream};
use crate::table::Table;

/// Loss above `DIVERGENCE_FACTOR × initial loss` aborts a run.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

/// Rank-`k` target `M = U* diag(σ*) V*ᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct FullMeasProblem {
    pub m_target: Matrix,
    pub u_star: OrthonormalBasis,
    /// Descending, all positive.
    pub sigma_star: Vec<f64>,
    pub v_star: OrthonormalBasis,
}

impl FullMeasProblem {
    pub fn from_factors(
        u_star: OrthonormalBasis,
        sigma_star: Vec<f64>,
        v_star: OrthonormalBasis,
    ) -> Result<Self> {
        let k = sigma_star.len();
        if u_star.rank() != k || v_star.rank() != k {
            return Err(Error::DimensionMismatch(format!(
                "factor ranks {} / {} do not match {k} singular values",
                u_star.rank(),
                v_star.rank()
            )));
        }
        if sigma_star.iter().any(|s| !(*s > 0.0) || !s.is_finite())
            || sigma_star.windows(2).any(|w| w[0] < w[1])
        {
            return Err(Error::Dimension(
                "singular values must be positive and descending".into(),
            ));
        }
        let sigma = Matrix::from_diagonal(&nalgebra::DVector::from_vec(sigma_star.clone()));
        let m_target = u_star.matrix() * sigma * v_star.matrix().transpose();
        Ok(Self {
            m_target,
            u_star,
            sigma_star,
            v_star,
        })
    }

    /// Factors a matrix of exact rank `k` through its SVD.
    pub fn from_matrix(m: Matrix, k: usize) -> Result<Self> {
        let (n, d) = m.shape();
        if k == 0 || k > n.min(d) {
            return Err(Error::Dimension(format!("rank {k} invalid for {n}x{d}")));
        }
        let svd = m.clone().svd(true, true);
        let (u, vt) = (svd.u.expect("u requested"), svd.v_t.expect("v requested"));
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
        let top = svd.singular_values[order[0]];
        if !(top > 0.0) {
            return Err(Error::rank_deficient("from_matrix: zero matrix"));
        }
        if order
            .get(k)
            .is_some_and(|&i| svd.singular_values[i] > 1e-10 * top)
        {
            return Err(Error::Dimension(format!(
                "matrix has rank greater than {k}"
            )));
        }
        if svd.singular_values[order[k - 1]] <= linalg::RANK_TOL * top {
            return Err(Error::rank_deficient(format!("matrix has rank below {k}")));
        }
        let mut u_star = Matrix::zeros(n, k);
        let mut v_star = Matrix::zeros(d, k);
        let mut sigma_star = Vec::with_capacity(k);
        for (j, &i) in order.iter().take(k).enumerate() {
            u_star.set_column(j, &u.column(i));
            v_star.set_column(j, &vt.row(i).transpose());
            sigma_star.push(svd.singular_values[i]);
        }
        Ok(Self {
            m_target: m,
            u_star: OrthonormalBasis::from_trusted(u_star),
            sigma_star,
            v_star: OrthonormalBasis::from_trusted(v_star),
        })
    }

    /// Product of two Gaussian factors, `n × k` times `k × d`.
    pub fn random(n: usize, d: usize, k: usize, seed: u64) -> Result<Self> {
        let mut rng = rng::substream(seed, Stream::FullMeas, &[0]);
        let left = rng::gaussian_matrix(&mut rng, n, k);
        let right = rng::gaussian_matrix(&mut rng, k, d);
        Self::from_matrix(left * right, k)
    }

    /// `M = I_n`.
    pub fn identity(n: usize) -> Self {
        let eye = OrthonormalBasis::from_trusted(Matrix::identity(n, n));
        Self::from_factors(eye.clone(), vec![1.0; n], eye).expect("identity factors are valid")
    }

    pub fn rank(&self) -> usize {
        self.sigma_star.len()
    }

    pub fn sigma_min(&self) -> f64 {
        *self.sigma_star.last().expect("rank >= 1")
    }

    pub fn sigma_max(&self) -> f64 {
        self.sigma_star[0]
    }

    /// `‖M − ÛV̂ᵀ‖_F²`, twice the objective.
    pub fn loss(&self, u_hat: &Matrix, v_hat: &Matrix) -> f64 {
        (&self.m_target - u_hat * v_hat.transpose()).norm_squared()
    }

    /// `F(Û, V̂) = ½‖ÛV̂ᵀ − M‖_F²`.
    pub fn objective(&self, u_hat: &Matrix, v_hat: &Matrix) -> f64 {
        0.5 * self.loss(u_hat, v_hat)
    }

    /// Principal angle distance between `span(v_hat)` and `span(V*)`.
    pub fn distance(&self, v_hat: &Matrix) -> Result<f64> {
        linalg::principal_angle_distance(v_hat, self.v_star.matrix())
    }
}

/// `Û = M V̂ (V̂ᵀV̂)⁻¹`, the exact minimizer of `F(·, V̂)`.
pub fn minimize_u(problem: &FullMeasProblem, v_hat: &Matrix) -> Result<Matrix> {
    if v_hat.nrows() != problem.m_target.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "v_hat has {} rows, M has {} columns",
            v_hat.nrows(),
            problem.m_target.ncols()
        )));
    }
    let ut = linalg::least_squares(v_hat, &problem.m_target.transpose())?;
    Ok(ut.transpose())
}

/// `∇_V̂ F(Û, V̂) = (ÛV̂ᵀ − M)ᵀ Û`.
pub fn gradient_v(problem: &FullMeasProblem, u_hat: &Matrix, v_hat: &Matrix) -> Matrix {
    (u_hat * v_hat.transpose() - &problem.m_target).transpose() * u_hat
}

pub fn gradient_step_v(
    problem: &FullMeasProblem,
    u_hat: &Matrix,
    v_hat: &Matrix,
    eta: f64,
) -> Matrix {
    v_hat - gradient_v(problem, u_hat, v_hat) * eta
}

/// Largest step size covered by the convergence guarantee:
/// `½ · σ_min³(R₀)/σ_max(R₀) · σ*_min² / σ*_max⁴`.
pub fn theorem_step_size(problem: &FullMeasProblem, r0: &Matrix) -> Result<f64> {
    let (lo, hi) = linalg::extreme_singular_values(r0);
    if !(lo > linalg::RANK_TOL * hi) {
        return Err(Error::rank_deficient("theorem_step_size: R0 is singular"));
    }
    let (smin, smax) = (problem.sigma_min(), problem.sigma_max());
    Ok(0.5 * lo.powi(3) / hi * smin * smin / smax.powi(4))
}

/// Per-round contraction factor `1 − η σ*_min² / (2 σ_max²(R₀))`.
pub fn theorem_rate(problem: &FullMeasProblem, r0: &Matrix, eta: f64) -> f64 {
    let hi = linalg::spectral_norm(r0);
    1.0 - eta * problem.sigma_min().powi(2) / (2.0 * hi * hi)
}

/// Bound on `‖M − Û_{T+1}V̂_Tᵀ‖_F²` after `rounds` iterations.
pub fn theorem_loss_bound(problem: &FullMeasProblem, r0: &Matrix, eta: f64, rounds: usize) -> f64 {
    let (lo, hi) = linalg::extreme_singular_values(r0);
    theorem_rate(problem, r0, eta).powi(rounds as i32) * problem.m_target.norm_squared() * hi / lo
}

/// Iterate state `(Û_t, V̂_t, R_t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FullMeasState {
    pub u_hat: Option<Matrix>,
    pub v_hat: Matrix,
    pub round: usize,
    /// QR factor of `v_hat`: upper triangular, nonnegative diagonal.
    pub r_t: Matrix,
}

impl FullMeasState {
    pub fn new(v0: Matrix) -> Result<Self> {
        let qr = linalg::qr_decompose(&v0)?;
        Ok(Self {
            u_hat: None,
            v_hat: v0,
            round: 0,
            r_t: qr.r,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FullMeasRecord {
    pub round: usize,
    /// `‖M − Û_{t+1}V̂_tᵀ‖_F²`.
    pub loss: f64,
    /// `dist(V̂_t, V*)`.
    pub dist: f64,
    /// `‖V*⊥ᵀ V̂_t‖₂`, the unnormalized misalignment the per-round contraction
    /// argument acts on.
    pub misalignment: f64,
    pub sigma_min_r: f64,
    pub sigma_max_r: f64,
    /// `‖S_t‖₂` for the gradient at `(Û_{t+1}, V̂_t)`.
    pub grad_norm: f64,
    /// `dist_t / dist_{t−1}`; absent for the first record or a zero denominator.
    pub contraction_ratio: Option<f64>,
    pub rate_bound: f64,
    pub r_t: Matrix,
    /// `‖R_{t+1}ᵀR_{t+1} − R_tᵀR_t − η²S_tᵀS_t‖_max`; absent on the last record.
    pub r_recursion_residual: Option<f64>,
    /// `‖V̂_{t+1}ᵀV̂_{t+1} − V̂_tᵀV̂_t − η²S_tᵀS_t‖_max`; absent on the last record.
    pub cross_term_residual: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FullMeasTrace {
    pub eta: f64,
    pub r0: Matrix,
    pub m_fro_sq: f64,
    pub sigma_star_min: f64,
    pub sigma_star_max: f64,
    /// Records `0..=T`; the last one carries the final half-iteration loss.
    pub records: Vec<FullMeasRecord>,
}

/// Outcome of every convergence-argument check on a trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TheoremChecks {
    pub r_recursion: bool,
    pub monotone_spectrum: bool,
    pub norm_cap: bool,
    pub contraction: bool,
    pub cross_term: bool,
    pub loss_bound: bool,
    /// Per-round contraction of `‖V*⊥ᵀ V̂_t‖₂` by the alignment-weighted rate
    /// `1 − η σ*_min² (1 − dist_t²) / (2 σ_max²(R₀))`.
    pub misalignment_contraction: bool,
}

impl TheoremChecks {
    pub fn all(&self) -> bool {
        self.r_recursion
            && self.monotone_spectrum
            && self.norm_cap
            && self.contraction
            && self.cross_term
            && self.loss_bound
            && self.misalignment_contraction
    }

    pub fn named(&self) -> [(&'static str, bool); 7] {
        [
            ("r_recursion", self.r_recursion),
            ("monotone_spectrum", self.monotone_spectrum),
            ("norm_cap", self.norm_cap),
            ("contraction", self.contraction),
            ("cross_term", self.cross_term),
            ("loss_bound", self.loss_bound),
            ("misalignment_contraction", self.misalignment_contraction),
        ]
    }
}

impl FullMeasTrace {
    pub fn rounds(&self) -> usize {
        self.records.len().saturating_sub(1)
    }

    pub fn final_loss(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| r.loss)
    }

    pub fn rate(&self) -> f64 {
        let hi = linalg::spectral_norm(&self.r0);
        1.0 - self.eta * self.sigma_star_min.powi(2) / (2.0 * hi * hi)
    }

    pub fn loss_bound(&self) -> f64 {
        let (lo, hi) = linalg::extreme_singular_values(&self.r0);
        self.rate().powi(self.rounds() as i32) * self.m_fro_sq * hi / lo
    }

    pub fn check_theorem(&self) -> TheoremChecks {
        let recs = &self.records;
        let r_recursion = recs
            .iter()
            .filter_map(|r| r.r_recursion_residual)
            .all(|res| res <= 1e-9);
        let cross_term = recs
            .iter()
            .filter_map(|r| r.cross_term_residual)
            .all(|res| res <= 1e-9);
        let monotone_spectrum = recs.windows(2).all(|w| {
            w[1].sigma_min_r >= w[0].sigma_min_r - 1e-10
                && w[1].sigma_max_r >= w[0].sigma_max_r - 1e-10
        });
        let cap = 2.0 * linalg::spectral_norm(&self.r0).powi(2) + 1e-8;
        let norm_cap = recs.iter().all(|r| r.sigma_max_r.powi(2) <= cap);
        let rate = self.rate();
        let contraction = recs
            .windows(2)
            .all(|w| w[1].dist <= rate * w[0].dist + 1e-9);
        let loss_bound = self.final_loss() <= self.loss_bound() * 1.05;
        let misalignment_contraction = recs.windows(2).all(|w| {
            let weighted = 1.0 - (1.0 - rate) * (1.0 - w[0].dist * w[0].dist);
            w[1].misalignment <= weighted * w[0].misalignment + 1e-9
        });
        TheoremChecks {
            misalignment_contraction,
            r_recursion,
            monotone_spectrum,
            norm_cap,
            contraction,
            cross_term,
            loss_bound,
        }
    }

    /// One row per record.
    pub fn table(&self) -> Table {
        let mut t = Table::new(vec![
            "round",
            "loss",
            "dist",
            "sigma_min_r",
            "sigma_max_r",
            "grad_norm",
            "contraction_ratio",
            "rate_bound",
        ]);
        for r in &self.records {
            t.push(vec![
                Some(r.round as f64),
                Some(r.loss),
                Some(r.dist),
                Some(r.sigma_min_r),
                Some(r.sigma_max_r),
                Some(r.grad_norm),
                r.contraction_ratio,
                Some(r.rate_bound),
            ]);
        }
        t
    }
}

/// `‖(I − V*V*ᵀ) V̂‖₂`, equal to `‖V*⊥ᵀ V̂‖₂` for any orthonormal complement.
pub fn misalignment(problem: &FullMeasProblem, v_hat: &Matrix) -> f64 {
    let v_star = problem.v_star.matrix();
    linalg::spectral_norm(&(v_hat - v_star * (v_star.transpose() * v_hat)))
}

/// Runs `rounds` (U-minimization, V-step) pairs followed by one final
/// U-minimization, recording `rounds + 1` records.
pub fn run_fullmeas(
    problem: &FullMeasProblem,
    v0: &Matrix,
    eta: f64,
    rounds: usize,
) -> Result<FullMeasTrace> {
    if !(eta >= 0.0) || !eta.is_finite() {
        return Err(Error::Dimension(format!("step size {eta} is invalid")));
    }
    let mut state = FullMeasState::new(v0.clone())?;
    let r0 = state.r_t.clone();
    let rate_bound = theorem_rate(problem, &r0, eta);
    let m_fro_sq = problem.m_target.norm_squared();
    let mut records: Vec<FullMeasRecord> = Vec::with_capacity(rounds + 1);
    let mut guard: Option<f64> = None;

    loop {
        let t = state.round;
        let u = minimize_u(problem, &state.v_hat)?;
        let loss = problem.loss(&u, &state.v_hat);
        let threshold = *guard.get_or_insert_with(|| {
            DIVERGENCE_FACTOR * loss.max(f64::EPSILON * m_fro_sq.max(f64::MIN_POSITIVE))
        });
        if !loss.is_finite() || loss > threshold {
            return Err(Error::Diverged {
                round: t,
                reason: format!("loss {loss:e} exceeds divergence threshold {threshold:e}"),
            });
        }
        let dist = problem.distance(&state.v_hat)?;
        let s = gradient_v(problem, &u, &state.v_hat);
        let (sigma_min_r, sigma_max_r) = linalg::extreme_singular_values(&state.r_t);
        let contraction_ratio = records
            .last()
            .filter(|prev| prev.dist > 0.0)
            .map(|prev| dist / prev.dist);
        let mut record = FullMeasRecord {
            round: t,
            loss,
            dist,
            misalignment: misalignment(problem, &state.v_hat),
            sigma_min_r,
            sigma_max_r,
            grad_norm: linalg::spectral_norm(&s),
            contraction_ratio,
            rate_bound,
            r_t: state.r_t.clone(),
            r_recursion_residual: None,
            cross_term_residual: None,
        };
        if t == rounds {
            state.u_hat = Some(u);
            records.push(record);
            break;
        }

        let v_next = &state.v_hat - &s * eta;
        if v_next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged {
                round: t,
                reason: "non-finite representation iterate".into(),
            });
        }
        let next = linalg::qr_decompose(&v_next).map_err(|e| match e {
            Error::RankDeficient { .. } => {
                Error::rank_deficient(format!("V_hat at round {}", t + 1))
            }
            other => other,
        })?;
        let sts = s.transpose() * &s * (eta * eta);
        let r_lhs = next.r.transpose() * &next.r;
        let r_rhs = state.r_t.transpose() * &state.r_t + &sts;
        record.r_recursion_residual = Some(linalg::max_abs(&(r_lhs - r_rhs)));
        let gram_next = v_next.transpose() * &v_next;
        let gram = state.v_hat.transpose() * &state.v_hat;
        record.cross_term_residual = Some(linalg::max_abs(&(gram_next - gram - sts)));
        records.push(record);

        state.u_hat = Some(u);
        state.v_hat = v_next;
        state.r_t = next.r;
        state.round += 1;
    }

    Ok(FullMeasTrace {
        eta,
        r0,
        m_fro_sq,
        sigma_star_min: problem.sigma_min(),
        sigma_star_max: problem.sigma_max(),
        records,
    })
}

/// Random Gaussian `d × k` start, orthonormalized so that `R₀ = I`.
pub fn random_orthonormal_start(d: usize, k: usize, seed: u64) -> Result<Matrix> {
    let mut rng = rng::substream(seed, Stream::FullMeas, &[1]);
    Ok(linalg::orthonormalize(&rng::gaussian_matrix(&mut rng, d, k))?.into_matrix())
}
