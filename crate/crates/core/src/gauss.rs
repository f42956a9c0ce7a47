//! Gaussian fits over token embeddings and the Frechet term distance (FTD)
//! between them.
//!
//! For token Gaussians `S = (mu_s, Sigma_s)` and `T = (mu_t, Sigma_t)`:
//!
//! ```text
//! ftd(S, T) = |mu_t - mu_s| + Tr(Sigma_s + Sigma_t - 2 (Sigma_s^1/2 Sigma_t Sigma_s^1/2)^1/2)
//! ```
//!
//! The mean term is unsquared by default; [`MeanNormMode::Squared`] gives the
//! classical squared Wasserstein-2 distance between the two Gaussians.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::embed::{EmbeddingVector, TokenEmbeddingSet};

/// Ridge scale applied inside [`norm_est`] unless configured otherwise.
pub const DEFAULT_RIDGE_SCALE: f64 = 1e-6;
/// Lower bound for the per-dimension variance the ridge is scaled by.
pub const RIDGE_FLOOR: f64 = 1e-8;
/// Eigenvalues below this fraction of the largest are treated as zero.
pub const EIGEN_CLIP_RATIO: f64 = 1e-10;
const SYMMETRY_TOL: f64 = 1e-10;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum GaussError {
    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },
    #[error("cannot fit a Gaussian to an empty token set")]
    Empty,
    #[error("negative ridge scale {0}")]
    NegativeRidge(f64),
}

/// Mean and covariance fitted to one text's token embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenGaussian {
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
    n_tokens: usize,
    regularization: f64,
}

impl TokenGaussian {
    /// Build from explicit parameters. The covariance must be symmetric.
    pub fn from_parts(
        mean: DVector<f64>,
        covariance: DMatrix<f64>,
        n_tokens: usize,
        regularization: f64,
    ) -> Result<Self, GaussError> {
        check_square(&covariance)?;
        if covariance.nrows() != mean.len() {
            return Err(GaussError::DimMismatch {
                left: mean.len(),
                right: covariance.nrows(),
            });
        }
        let asym = asymmetry(&covariance);
        if asym > SYMMETRY_TOL * (1.0 + covariance.amax()) {
            return Err(GaussError::NotSymmetric { asymmetry: asym });
        }
        Ok(Self {
            mean,
            covariance: symmetrize(&covariance),
            n_tokens,
            regularization,
        })
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn mean_vector(&self) -> EmbeddingVector {
        EmbeddingVector::new(self.mean.iter().copied().collect()).expect("finite mean")
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn n_tokens(&self) -> usize {
        self.n_tokens
    }

    /// Ridge added to the covariance diagonal.
    pub fn regularization(&self) -> f64 {
        self.regularization
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn trace(&self) -> f64 {
        self.covariance.trace()
    }
}

/// Fit a Gaussian to the token vectors: arithmetic mean, biased (1/n)
/// covariance, plus `lambda * I` with
/// `lambda = ridge_scale * max(trace(S) / d, RIDGE_FLOOR)`.
pub fn norm_est(set: &TokenEmbeddingSet, ridge_scale: f64) -> Result<TokenGaussian, GaussError> {
    let rows: Vec<&[f64]> = set.vectors.iter().map(|v| v.values()).collect();
    norm_est_rows(&rows, ridge_scale)
}

/// [`norm_est`] over raw vectors.
pub fn norm_est_rows(rows: &[&[f64]], ridge_scale: f64) -> Result<TokenGaussian, GaussError> {
    if !(ridge_scale >= 0.0) {
        return Err(GaussError::NegativeRidge(ridge_scale));
    }
    let n = rows.len();
    if n == 0 {
        return Err(GaussError::Empty);
    }
    let d = rows[0].len();
    if let Some(r) = rows.iter().find(|r| r.len() != d) {
        return Err(GaussError::DimMismatch {
            left: d,
            right: r.len(),
        });
    }
    let data = DMatrix::from_fn(d, n, |i, j| rows[j][i]);
    let mean = data.column_mean();
    let mut centered = data;
    for mut col in centered.column_iter_mut() {
        col -= &mean;
    }
    let mut cov = (&centered * centered.transpose()) / n as f64;
    let lambda = ridge_scale * (cov.trace() / d as f64).max(RIDGE_FLOOR);
    for i in 0..d {
        cov[(i, i)] += lambda;
    }
    Ok(TokenGaussian {
        mean,
        covariance: symmetrize(&cov),
        n_tokens: n,
        regularization: lambda,
    })
}

fn check_square(m: &DMatrix<f64>) -> Result<(), GaussError> {
    if m.nrows() != m.ncols() {
        return Err(GaussError::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    Ok(())
}

fn asymmetry(m: &DMatrix<f64>) -> f64 {
    (m - m.transpose()).amax()
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Principal square root of a symmetric PSD matrix by eigendecomposition.
/// Eigenvalues below `EIGEN_CLIP_RATIO * lambda_max` (including negative
/// round-off) are set to zero.
pub fn sqrtm_psd(matrix: &DMatrix<f64>) -> Result<DMatrix<f64>, GaussError> {
    check_square(matrix)?;
    let asym = asymmetry(matrix);
    if asym > SYMMETRY_TOL * (1.0 + matrix.amax()) {
        return Err(GaussError::NotSymmetric { asymmetry: asym });
    }
    if matrix.is_empty() {
        return Ok(matrix.clone());
    }
    let eig = SymmetricEigen::new(symmetrize(matrix));
    let lambda_max = eig.eigenvalues.max();
    let cutoff = EIGEN_CLIP_RATIO * lambda_max.max(0.0);
    let roots = eig
        .eigenvalues
        .map(|l| if l > cutoff { l.sqrt() } else { 0.0 });
    let v = &eig.eigenvectors;
    let root = v * DMatrix::from_diagonal(&roots) * v.transpose();
    Ok(symmetrize(&root))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanNormMode {
    /// `|mu_t - mu_s|`
    #[default]
    Unsquared,
    /// `|mu_t - mu_s|^2`, the squared Wasserstein-2 form.
    Squared,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FtdScore {
    pub total: f64,
    pub mean_term: f64,
    pub trace_term: f64,
    pub mean_norm_mode: MeanNormMode,
}

/// A Gaussian with its covariance square root computed once, for scoring
/// one test question against many candidates.
#[derive(Debug, Clone)]
pub struct PreparedGaussian {
    gaussian: TokenGaussian,
    sqrt_cov: DMatrix<f64>,
    trace: f64,
}

impl PreparedGaussian {
    pub fn new(gaussian: TokenGaussian) -> Result<Self, GaussError> {
        let sqrt_cov = sqrtm_psd(gaussian.covariance())?;
        let trace = gaussian.trace();
        Ok(Self {
            gaussian,
            sqrt_cov,
            trace,
        })
    }

    pub fn gaussian(&self) -> &TokenGaussian {
        &self.gaussian
    }
}

pub fn ftd(
    source: &TokenGaussian,
    target: &TokenGaussian,
    mode: MeanNormMode,
) -> Result<FtdScore, GaussError> {
    if source.dim() != target.dim() {
        return Err(GaussError::DimMismatch {
            left: source.dim(),
            right: target.dim(),
        });
    }
    ftd_prepared(
        &PreparedGaussian::new(source.clone())?,
        &PreparedGaussian::new(target.clone())?,
        mode,
    )
}

/// FTD between two prepared Gaussians.
///
/// `Tr((A^1/2 B A^1/2)^1/2)` is evaluated as the nuclear norm of
/// `A^1/2 B^1/2`: the singular values of `A^1/2 B^1/2` are the square roots
/// of the eigenvalues of `A^1/2 B A^1/2`, and taking them from an SVD avoids
/// squaring the condition number before the square root.
pub fn ftd_prepared(
    source: &PreparedGaussian,
    target: &PreparedGaussian,
    mode: MeanNormMode,
) -> Result<FtdScore, GaussError> {
    let (s, t) = (&source.gaussian, &target.gaussian);
    if s.dim() != t.dim() {
        return Err(GaussError::DimMismatch {
            left: s.dim(),
            right: t.dim(),
        });
    }
    let diff = t.mean() - s.mean();
    let sq = diff.norm_squared();
    let mean_term = match mode {
        MeanNormMode::Unsquared => sq.sqrt(),
        MeanNormMode::Squared => sq,
    };
    let cross = &source.sqrt_cov * &target.sqrt_cov;
    let nuclear: f64 = cross.singular_values().iter().sum();
    let trace_term = source.trace + target.trace - 2.0 * nuclear;
    Ok(FtdScore {
        total: mean_term + trace_term,
        mean_term,
        trace_term,
        mean_norm_mode: mode,
    })
}

/// `x -> linear * x + translation`, applied to every token vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineTransform {
    pub linear: DMatrix<f64>,
    pub translation: DVector<f64>,
}

impl AffineTransform {
    pub fn identity(dim: usize) -> Self {
        Self {
            linear: DMatrix::identity(dim, dim),
            translation: DVector::zeros(dim),
        }
    }

    /// Seeded random orthogonal matrix (QR of a Gaussian matrix with the
    /// sign of R's diagonal folded into Q).
    pub fn random_rotation(dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = DMatrix::from_fn(dim, dim, |_, _| StandardNormal.sample(&mut rng));
        let qr = g.qr();
        let mut q = qr.q();
        let r = qr.r();
        for j in 0..dim {
            if r[(j, j)] < 0.0 {
                q.column_mut(j).neg_mut();
            }
        }
        Self {
            linear: q,
            translation: DVector::zeros(dim),
        }
    }

    pub fn translation(v: DVector<f64>) -> Self {
        let dim = v.len();
        Self {
            linear: DMatrix::identity(dim, dim),
            translation: v,
        }
    }

    pub fn uniform_scale(dim: usize, c: f64) -> Self {
        Self {
            linear: DMatrix::identity(dim, dim) * c,
            translation: DVector::zeros(dim),
        }
    }

    /// `self` after `first`.
    pub fn after(&self, first: &AffineTransform) -> Self {
        Self {
            linear: &self.linear * &first.linear,
            translation: &self.linear * &first.translation + &self.translation,
        }
    }

    pub fn is_orthogonal(&self, tol: f64) -> bool {
        let n = self.linear.nrows();
        (&self.linear.transpose() * &self.linear - DMatrix::<f64>::identity(n, n)).amax() <= tol
    }

    pub fn apply(&self, set: &TokenEmbeddingSet) -> Result<TokenEmbeddingSet, GaussError> {
        if set.dim() != self.linear.ncols() {
            return Err(GaussError::DimMismatch {
                left: set.dim(),
                right: self.linear.ncols(),
            });
        }
        let vectors = set
            .vectors
            .iter()
            .map(|v| {
                let x = DVector::from_column_slice(v.values());
                let y = &self.linear * x + &self.translation;
                EmbeddingVector::new(y.iter().copied().collect()).expect("finite transform")
            })
            .collect();
        Ok(TokenEmbeddingSet {
            tokens: set.tokens.clone(),
            vectors,
            source_text: set.source_text.clone(),
            embedder_id: format!("{}+affine", set.embedder_id),
            scheme: set.scheme,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InvarianceReport {
    pub before: FtdScore,
    pub after: FtdScore,
    pub abs_diff: f64,
    /// Whether the transform's linear part was orthogonal, i.e. whether
    /// invariance is expected at all.
    pub isometry: bool,
}

/// Score `q_a` against `q_b` before and after applying `transform` to both.
pub fn invariance_probe(
    q_a: &TokenEmbeddingSet,
    q_b: &TokenEmbeddingSet,
    transform: &AffineTransform,
    ridge_scale: f64,
    mode: MeanNormMode,
) -> Result<InvarianceReport, GaussError> {
    let before = ftd(&norm_est(q_a, ridge_scale)?, &norm_est(q_b, ridge_scale)?, mode)?;
    let ta = transform.apply(q_a)?;
    let tb = transform.apply(q_b)?;
    let after = ftd(&norm_est(&ta, ridge_scale)?, &norm_est(&tb, ridge_scale)?, mode)?;
    Ok(InvarianceReport {
        before,
        after,
        abs_diff: (after.total - before.total).abs(),
        isometry: transform.is_orthogonal(1e-9),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::{EmbeddingProvider, TokenScheme};

    fn set_from(rows: &[&[f64]]) -> TokenEmbeddingSet {
        let tokens = (0..rows.len()).map(|i| format!("t{i}")).collect();
        let vectors = rows
            .iter()
            .map(|r| EmbeddingVector::new(r.to_vec()).unwrap())
            .collect();
        TokenEmbeddingSet::new(tokens, vectors, "x", "test", TokenScheme::Simple).unwrap()
    }

    fn gaussian(mean: &[f64], cov_diag: &[f64]) -> TokenGaussian {
        TokenGaussian::from_parts(
            DVector::from_column_slice(mean),
            DMatrix::from_diagonal(&DVector::from_column_slice(cov_diag)),
            1,
            0.0,
        )
        .unwrap()
    }

    #[test]
    fn single_token_is_ridge_only() {
        let g = norm_est(&set_from(&[&[0.5, -1.0, 2.0]]), 1e-6).unwrap();
        assert_eq!(g.mean().as_slice(), &[0.5, -1.0, 2.0]);
        let lambda = 1e-6 * RIDGE_FLOOR;
        assert_eq!(g.regularization(), lambda);
        assert_eq!(g.covariance(), &(DMatrix::identity(3, 3) * lambda));
    }

    #[test]
    fn two_points_biased_covariance() {
        let g = norm_est(&set_from(&[&[0.0, 0.0], &[2.0, 0.0]]), 1e-6).unwrap();
        assert_eq!(g.mean().as_slice(), &[1.0, 0.0]);
        // trace(S) = 1, d = 2
        let lambda = 1e-6 * 0.5;
        let expect = DMatrix::from_row_slice(2, 2, &[1.0 + lambda, 0.0, 0.0, lambda]);
        assert!((g.covariance() - expect).amax() < 1e-15);
    }

    #[test]
    fn repeated_vector_matches_single() {
        let v: &[f64] = &[0.3, 0.4];
        let one = norm_est(&set_from(&[v]), 1e-6).unwrap();
        let many = norm_est(&set_from(&[v, v, v, v]), 1e-6).unwrap();
        assert_eq!(one.mean(), many.mean());
        assert_eq!(one.covariance(), many.covariance());
    }

    #[test]
    fn sqrtm_known_values() {
        let id = DMatrix::<f64>::identity(4, 4);
        assert!((sqrtm_psd(&id).unwrap() - &id).amax() < 1e-14);
        let d = DMatrix::from_diagonal(&DVector::from_column_slice(&[4.0, 9.0]));
        let r = sqrtm_psd(&d).unwrap();
        assert!((r - DMatrix::from_diagonal(&DVector::from_column_slice(&[2.0, 3.0]))).amax() < 1e-14);
    }

    #[test]
    fn sqrtm_random_psd_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let b = DMatrix::from_fn(6, 6, |_, _| StandardNormal.sample(&mut rng));
        let a: DMatrix<f64> = b.transpose() * &b;
        let r = sqrtm_psd(&a).unwrap();
        assert!((&r * &r - &a).norm() / a.norm() <= 1e-6);
    }

    #[test]
    fn sqrtm_rejects_asymmetric() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(sqrtm_psd(&m), Err(GaussError::NotSymmetric { .. })));
    }

    #[test]
    fn sqrtm_clips_negative_roundoff() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0 - 1e-17]);
        let r = sqrtm_psd(&m).unwrap();
        assert!(r.iter().all(|x| x.is_finite()));
        assert!((&r * &r - &m).amax() < 1e-12);
    }

    #[test]
    fn ftd_of_self_is_zero() {
        let p = EmbeddingProvider::local(7, 32);
        let g = norm_est(&p.embed_tokens("Who is the spouse of Paul Bettany?").unwrap(), 1e-6).unwrap();
        let s = ftd(&g, &g, MeanNormMode::Unsquared).unwrap();
        assert!(s.total.abs() <= 1e-9 * (1.0 + g.trace()), "{s:?}");
    }

    #[test]
    fn ftd_one_dimensional_closed_form() {
        let s = gaussian(&[0.0], &[1.0]);
        let t = gaussian(&[3.0], &[1.0]);
        let score = ftd(&s, &t, MeanNormMode::Unsquared).unwrap();
        assert!((score.mean_term - 3.0).abs() < 1e-12);
        assert!(score.trace_term.abs() < 1e-12);
        assert!((score.total - 3.0).abs() < 1e-12);
        let sq = ftd(&s, &t, MeanNormMode::Squared).unwrap();
        assert!((sq.total - 9.0).abs() < 1e-12);
    }

    #[test]
    fn ftd_diagonal_closed_form() {
        let s = gaussian(&[0.0, 0.0], &[1.0, 4.0]);
        let t = gaussian(&[0.0, 0.0], &[4.0, 1.0]);
        let score = ftd(&s, &t, MeanNormMode::Unsquared).unwrap();
        assert!((score.trace_term - 2.0).abs() < 1e-12);
        assert_eq!(score.mean_term, 0.0);
    }

    #[test]
    fn ftd_dim_mismatch() {
        let s = gaussian(&[0.0], &[1.0]);
        let t = gaussian(&[0.0, 0.0], &[1.0, 1.0]);
        assert!(matches!(
            ftd(&s, &t, MeanNormMode::Unsquared),
            Err(GaussError::DimMismatch { .. })
        ));
    }

    #[test]
    fn rotation_is_orthogonal() {
        let r = AffineTransform::random_rotation(16, 3);
        assert!(r.is_orthogonal(1e-12));
    }

    #[test]
    fn probe_rotation_and_translation() {
        let p = EmbeddingProvider::local(5, 16);
        let a = p.embed_tokens("Who was born later, Gideon Johnson Pillow or Holm Jolsen?").unwrap();
        let b = p.embed_tokens("When was Holm Jolsen born?").unwrap();

        let rot = AffineTransform::random_rotation(16, 9);
        let rep = invariance_probe(&a, &b, &rot, 1e-6, MeanNormMode::Unsquared).unwrap();
        assert!(rep.isometry);
        assert!(rep.abs_diff <= 1e-6 * (1.0 + rep.before.total), "{rep:?}");

        let shift = AffineTransform::translation(DVector::from_element(16, 0.25));
        let rep = invariance_probe(&a, &b, &shift, 1e-6, MeanNormMode::Unsquared).unwrap();
        assert!(rep.abs_diff <= 1e-12 * (1.0 + rep.before.total), "{rep:?}");
    }

    #[test]
    fn probe_scaling_reports_growth() {
        let p = EmbeddingProvider::local(5, 8);
        let a = p.embed_tokens("how many students were in fourth grade").unwrap();
        let b = p.embed_tokens("each pack of dvds costs 76 dollars").unwrap();
        let rep = invariance_probe(&a, &b, &AffineTransform::uniform_scale(8, 2.0), 1e-6, MeanNormMode::Unsquared)
            .unwrap();
        assert!(!rep.isometry);
        assert!((rep.after.mean_term - 2.0 * rep.before.mean_term).abs() < 1e-9);
        assert!((rep.after.trace_term - 4.0 * rep.before.trace_term).abs() < 1e-8);
    }
}
