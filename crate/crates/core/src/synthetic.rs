//! Planted ground truth and per-client sample batches.
//!
//! Client `i` draws `x ~ N(0, I_d)` and observes `y = w_iᵀ Bᵀ x + ε` with
//! `ε ~ N(0, noise_var)`. Heads are normalized to `‖w_i‖ = √k` and `B` has
//! orthonormal columns.

use std::fmt::Write as _;
use std::path::Path;

use itertools::Itertools;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, OrthonormalBasis, Vector};
use crate::rng::{self, Stream};

/// Subset-enumeration budget for [`spectral_bounds`].
pub const EXACT_SUBSET_BUDGET: u128 = 10_000;

const GT_MAGIC: &str = "fedrep-ground-truth 1";

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// `n × k`, row `i` is `w_i*ᵀ`.
    pub w_star: Matrix,
    pub b_star: OrthonormalBasis,
    pub seed: u64,
}

impl GroundTruth {
    /// Validates and assembles a ground truth from explicit factors.
    pub fn from_parts(w_star: Matrix, b_star: OrthonormalBasis, seed: u64) -> Result<Self> {
        let (n, k) = w_star.shape();
        let (d, kb) = b_star.matrix().shape();
        if k != kb {
            return Err(Error::DimensionMismatch(format!(
                "w_star has {k} columns, b_star has {kb}"
            )));
        }
        if k == 0 || k >= n.min(d) {
            return Err(Error::Dimension(format!(
                "need 1 <= k < min(n, d), got n={n} d={d} k={k}"
            )));
        }
        let target = (k as f64).sqrt();
        for (i, row) in w_star.row_iter().enumerate() {
            if (row.norm() - target).abs() > 1e-10 {
                return Err(Error::Dimension(format!(
                    "row {i} of w_star has norm {} (expected sqrt(k) = {target})",
                    row.norm()
                )));
            }
        }
        Ok(Self {
            w_star,
            b_star,
            seed,
        })
    }

    pub fn n(&self) -> usize {
        self.w_star.nrows()
    }

    pub fn d(&self) -> usize {
        self.b_star.ambient_dim()
    }

    pub fn k(&self) -> usize {
        self.w_star.ncols()
    }

    /// `w_i*` as a column vector.
    pub fn head(&self, client: usize) -> Vector {
        self.w_star.row(client).transpose()
    }

    /// Full-dimensional regressor `B* w_i*`.
    pub fn regressor(&self, client: usize) -> Vector {
        self.b_star.matrix() * self.head(client)
    }

    /// `W* B*ᵀ`, the `n × d` matrix of all client regressors.
    pub fn product(&self) -> Matrix {
        &self.w_star * self.b_star.matrix().transpose()
    }

    /// Writes the text fixture format: a magic line, `n d k seed`, then
    /// row-major `W*` followed by row-major `B*`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{GT_MAGIC}").unwrap();
        writeln!(out, "{} {} {} {}", self.n(), self.d(), self.k(), self.seed).unwrap();
        for m in [&self.w_star, self.b_star.matrix()] {
            for row in m.row_iter() {
                let line = row.iter().map(|v| format!("{v:?}")).join(" ");
                writeln!(out, "{line}").unwrap();
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        match lines.next() {
            Some(l) if l.trim() == GT_MAGIC => {}
            other => {
                return Err(Error::Parse(format!(
                    "expected header `{GT_MAGIC}`, found {other:?}"
                )))
            }
        }
        let header: Vec<u64> = lines
            .next()
            .ok_or_else(|| Error::Parse("missing dimension line".into()))?
            .split_whitespace()
            .map(|t| {
                t.parse::<u64>()
                    .map_err(|e| Error::Parse(format!("{t}: {e}")))
            })
            .collect::<Result<_>>()?;
        let [n, d, k, seed] = header[..] else {
            return Err(Error::Parse("dimension line must be `n d k seed`".into()));
        };
        let (n, d, k) = (n as usize, d as usize, k as usize);
        let mut read_matrix = |rows: usize, what: &str| -> Result<Matrix> {
            let mut data = Vec::with_capacity(rows * k);
            for r in 0..rows {
                let line = lines
                    .next()
                    .ok_or_else(|| Error::Parse(format!("{what}: missing row {r}")))?;
                let vals: Vec<f64> = line
                    .split_whitespace()
                    .map(|t| {
                        t.parse::<f64>()
                            .map_err(|e| Error::Parse(format!("{t}: {e}")))
                    })
                    .collect::<Result<_>>()?;
                if vals.len() != k {
                    return Err(Error::Parse(format!(
                        "{what}: row {r} has {} entries, expected {k}",
                        vals.len()
                    )));
                }
                data.extend(vals);
            }
            Ok(Matrix::from_row_slice(rows, k, &data))
        };
        let w_star = read_matrix(n, "w_star")?;
        let b_star = OrthonormalBasis::new(read_matrix(d, "b_star")?)?;
        Self::from_parts(w_star, b_star, seed)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

/// Random head of norm `√k`.
pub(crate) fn normalized_head<R: rand::Rng>(rng: &mut R, k: usize) -> Vector {
    loop {
        let v = rng::gaussian_vector(rng, k);
        let norm = v.norm();
        if norm > 0.0 {
            return v * ((k as f64).sqrt() / norm);
        }
    }
}

/// Draws `B*` as the Q factor of a Gaussian `d × k` matrix and each `w_i*` as a
/// Gaussian vector rescaled to norm `√k`.
pub fn generate_ground_truth(n: usize, d: usize, k: usize, seed: u64) -> Result<GroundTruth> {
    if k == 0 || k >= n.min(d) {
        return Err(Error::Dimension(format!(
            "need 1 <= k < min(n, d), got n={n} d={d} k={k}"
        )));
    }
    let mut basis_rng = rng::substream(seed, Stream::GroundTruthBasis, &[]);
    let b_star = linalg::orthonormalize(&rng::gaussian_matrix(&mut basis_rng, d, k))?;
    let mut head_rng = rng::substream(seed, Stream::GroundTruthHeads, &[]);
    let mut w_star = Matrix::zeros(n, k);
    for i in 0..n {
        let w = normalized_head(&mut head_rng, k);
        w_star.set_row(i, &w.transpose());
    }
    Ok(GroundTruth {
        w_star,
        b_star,
        seed,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    pub client_id: usize,
    /// `m × d`, one sample per row.
    pub x: Matrix,
    pub y: Vector,
    pub noise_var: f64,
}

impl SampleBatch {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// Draws `m` samples for `client_id` from the stream keyed by
/// `(seed, client_id, counter)`. Passing a new counter each round gives fresh
/// batches; reusing a counter replays the same batch.
pub fn sample_batch(
    gt: &GroundTruth,
    client_id: usize,
    m: usize,
    noise_var: f64,
    seed: u64,
    counter: u64,
) -> Result<SampleBatch> {
    if client_id >= gt.n() {
        return Err(Error::Dimension(format!(
            "client {client_id} out of range for n = {}",
            gt.n()
        )));
    }
    if m == 0 {
        return Err(Error::Dimension("batch size must be >= 1".into()));
    }
    if !(noise_var >= 0.0) || !noise_var.is_finite() {
        return Err(Error::Dimension(format!(
            "noise variance {noise_var} is invalid"
        )));
    }
    let mut rng = rng::substream(seed, Stream::Batch, &[client_id as u64, counter]);
    let x = rng::gaussian_matrix(&mut rng, m, gt.d());
    let mut y = &x * gt.regressor(client_id);
    if noise_var > 0.0 {
        let sd = noise_var.sqrt();
        for v in y.iter_mut() {
            let e: f64 = StandardNormal.sample(&mut rng);
            *v += sd * e;
        }
    }
    Ok(SampleBatch {
        client_id,
        x,
        y,
        noise_var,
    })
}

/// Range of singular values over normalized `rn`-row submatrices of `W*`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralBounds {
    pub sigma_min: f64,
    pub sigma_max: f64,
    /// True when every `rn`-subset was enumerated.
    pub exact: bool,
}

impl SpectralBounds {
    pub fn condition_number(&self) -> f64 {
        self.sigma_max / self.sigma_min
    }
}

/// `C(n, r)`, saturating once it exceeds `cap`.
fn binomial_capped(n: usize, r: usize, cap: u128) -> u128 {
    let r = r.min(n - r);
    let mut acc: u128 = 1;
    for i in 0..r {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > cap {
            return cap + 1;
        }
    }
    acc
}

/// Extreme singular values of `W*_S / √|S|` for a subset `S` of clients.
pub fn subset_singular_values(gt: &GroundTruth, subset: &[usize]) -> (f64, f64) {
    let k = gt.k();
    let rows = subset.len();
    let mut sub = Matrix::zeros(rows, k);
    for (r, &i) in subset.iter().enumerate() {
        sub.set_row(r, &gt.w_star.row(i));
    }
    sub /= (rows as f64).sqrt();
    let sv = linalg::singular_values(&sub);
    let max = sv.first().copied().unwrap_or(0.0);
    let min = if rows < k {
        0.0
    } else {
        sv.last().copied().unwrap_or(0.0)
    };
    (min, max)
}

/// Exhaustive over all `rn`-subsets when there are at most
/// [`EXACT_SUBSET_BUDGET`] of them, otherwise the full-participation values.
pub fn spectral_bounds(gt: &GroundTruth, rn: usize) -> SpectralBounds {
    let n = gt.n();
    let rn = rn.clamp(1, n);
    if binomial_capped(n, rn, EXACT_SUBSET_BUDGET) <= EXACT_SUBSET_BUDGET {
        let (mut lo, mut hi) = (f64::INFINITY, 0.0_f64);
        for subset in (0..n).combinations(rn) {
            let (a, b) = subset_singular_values(gt, &subset);
            lo = lo.min(a);
            hi = hi.max(b);
        }
        SpectralBounds {
            sigma_min: lo,
            sigma_max: hi,
            exact: true,
        }
    } else {
        let all: Vec<usize> = (0..n).collect();
        let (lo, hi) = subset_singular_values(gt, &all);
        SpectralBounds {
            sigma_min: lo,
            sigma_max: hi,
            exact: false,
        }
    }
}

/// Smallest `μ` with `max_i ‖m_i‖₂ ≤ μ ‖M‖_F / √rows`.
pub fn row_incoherence(m: &Matrix) -> f64 {
    let max_row = m.row_iter().map(|r| r.norm()).fold(0.0, f64::max);
    let fro = m.norm();
    if fro == 0.0 {
        return 0.0;
    }
    max_row * (m.nrows() as f64).sqrt() / fro
}

pub fn is_row_wise_incoherent(m: &Matrix, mu: f64) -> bool {
    row_incoherence(m) <= mu
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn heads_have_norm_sqrt_k_and_basis_is_orthonormal() {
        for (n, d, k, seed) in [(10, 5, 2, 0), (30, 20, 3, 9), (4, 3, 1, 5)] {
            let gt = generate_ground_truth(n, d, k, seed).unwrap();
            for row in gt.w_star.row_iter() {
                assert_abs_diff_eq!(row.norm(), (k as f64).sqrt(), epsilon = 1e-10);
            }
            assert!(linalg::orthonormality_deviation(gt.b_star.matrix()) <= 1e-10);
            assert_eq!(linalg::singular_values(&gt.w_star).len(), k);
            assert!(*linalg::singular_values(&gt.w_star).last().unwrap() > 1e-8);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_ground_truth(20, 8, 2, 42).unwrap();
        let b = generate_ground_truth(20, 8, 2, 42).unwrap();
        assert_eq!(a, b);
        let c = generate_ground_truth(20, 8, 2, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn invalid_dimensions_are_rejected() {
        assert!(matches!(
            generate_ground_truth(5, 3, 3, 0),
            Err(Error::Dimension(_))
        ));
        assert!(matches!(
            generate_ground_truth(2, 10, 2, 0),
            Err(Error::Dimension(_))
        ));
        assert!(generate_ground_truth(5, 5, 0, 0).is_err());
    }

    #[test]
    fn noiseless_labels_match_construction() {
        let gt = generate_ground_truth(6, 5, 2, 3).unwrap();
        let batch = sample_batch(&gt, 4, 17, 0.0, 11, 0).unwrap();
        assert_eq!((&batch.y - &batch.x * gt.regressor(4)).amax(), 0.0);
        let expect = &batch.x * gt.b_star.matrix() * gt.head(4);
        assert!((batch.y - expect).amax() <= 1e-12);
    }

    #[test]
    fn batches_are_fresh_per_counter_and_replayable() {
        let gt = generate_ground_truth(6, 5, 2, 3).unwrap();
        let a = sample_batch(&gt, 1, 4, 1e-3, 11, 0).unwrap();
        let b = sample_batch(&gt, 1, 4, 1e-3, 11, 0).unwrap();
        let c = sample_batch(&gt, 1, 4, 1e-3, 11, 1).unwrap();
        let other = sample_batch(&gt, 2, 4, 1e-3, 11, 0).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.x, c.x);
        assert_ne!(a.x, other.x);
    }

    #[test]
    fn batch_rejects_bad_client() {
        let gt = generate_ground_truth(6, 5, 2, 3).unwrap();
        assert!(sample_batch(&gt, 6, 4, 0.0, 0, 0).is_err());
        assert!(sample_batch(&gt, 0, 0, 0.0, 0, 0).is_err());
    }

    #[test]
    fn spectral_bounds_two_opposite_clients() {
        let w = Matrix::from_row_slice(2, 1, &[1.0, -1.0]);
        let b = OrthonormalBasis::new(Matrix::from_column_slice(2, 1, &[1.0, 0.0])).unwrap();
        // k = 1 < min(2, 2)
        let gt = GroundTruth::from_parts(w, b, 0).unwrap();
        let sb = spectral_bounds(&gt, 2);
        assert!(sb.exact);
        assert_abs_diff_eq!(sb.sigma_min, 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(sb.sigma_max, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn full_participation_is_exact_single_subset() {
        let gt = generate_ground_truth(12, 6, 2, 8).unwrap();
        let sb = spectral_bounds(&gt, 12);
        assert!(sb.exact);
        let all: Vec<usize> = (0..12).collect();
        let (lo, hi) = subset_singular_values(&gt, &all);
        assert_eq!((sb.sigma_min, sb.sigma_max), (lo, hi));
    }

    #[test]
    fn large_subset_counts_fall_back_to_proxy() {
        let gt = generate_ground_truth(100, 10, 2, 1).unwrap();
        let sb = spectral_bounds(&gt, 10);
        assert!(!sb.exact);
        let all: Vec<usize> = (0..100).collect();
        let (lo, hi) = subset_singular_values(&gt, &all);
        assert_eq!((sb.sigma_min, sb.sigma_max), (lo, hi));
        assert_eq!(
            binomial_capped(100, 10, EXACT_SUBSET_BUDGET),
            EXACT_SUBSET_BUDGET + 1
        );
        assert_eq!(binomial_capped(10, 3, EXACT_SUBSET_BUDGET), 120);
    }

    #[test]
    fn normalized_heads_give_unit_incoherence() {
        let gt = generate_ground_truth(40, 12, 3, 2).unwrap();
        let mu = row_incoherence(&gt.product());
        assert!(mu <= 1.0 + 1e-10);
        assert!(is_row_wise_incoherent(&gt.product(), 1.0 + 1e-10));
    }

    #[test]
    fn text_format_round_trips_bit_exactly() {
        let gt = generate_ground_truth(7, 5, 2, 99).unwrap();
        let back = GroundTruth::from_text(&gt.to_text()).unwrap();
        assert_eq!(gt, back);
        assert!(GroundTruth::from_text("nonsense").is_err());
        let truncated: String = gt.to_text().lines().take(4).join("\n");
        assert!(GroundTruth::from_text(&truncated).is_err());
    }
}
