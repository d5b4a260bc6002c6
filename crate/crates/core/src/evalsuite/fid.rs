use nalgebra::{DMatrix, DVector, SymmetricEigen};
use tch::{Kind, Tensor};

use crate::error::{Error, Result};

/// Negative eigenvalues or trace residue above this magnitude (relative to
/// the covariance scale) are reported instead of clipped.
pub const PSD_TOLERANCE: f64 = 1e-6;

/// Mean and unbiased covariance of a feature sample.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianStats {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub count: usize,
}

impl GaussianStats {
    /// Statistics of the rows of an `N x d` feature matrix.
    pub fn from_rows(features: &DMatrix<f64>) -> Result<Self> {
        let n = features.nrows();
        if n < 2 {
            return Err(Error::InvalidArgument(format!("feature statistics need at least 2 samples, got {n}")));
        }
        let mean = features.row_mean().transpose();
        let mut centered = features.clone();
        for mut row in centered.row_iter_mut() {
            row -= mean.transpose();
        }
        let mut cov = centered.transpose() * &centered / (n - 1) as f64;
        cov = (&cov + cov.transpose()) * 0.5;
        Ok(GaussianStats { mean, cov, count: n })
    }

    /// Statistics of an `[N, d]` float tensor.
    pub fn from_tensor(features: &Tensor) -> Result<Self> {
        let size = features.size();
        if size.len() != 2 {
            return Err(Error::Shape(format!("expected [n, d] features, got {size:?}")));
        }
        let flat: Vec<f64> = Vec::try_from(features.to_kind(Kind::Double).contiguous().view(-1))?;
        Self::from_rows(&DMatrix::from_row_slice(size[0] as usize, size[1] as usize, &flat))
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Symmetric eigendecomposition with small negative eigenvalues clipped to 0.
fn clipped_eigen(m: &DMatrix<f64>, scale: f64, what: &str) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    let sym = (m + m.transpose()) * 0.5;
    let mut eig = SymmetricEigen::new(sym);
    let tol = PSD_TOLERANCE * scale.max(1.0);
    for v in eig.eigenvalues.iter_mut() {
        if *v < -tol {
            return Err(Error::Numerical(format!("{what} is not positive semidefinite (eigenvalue {v:e})")));
        }
        *v = v.max(0.0);
    }
    Ok(eig)
}

fn psd_sqrt(m: &DMatrix<f64>, scale: f64) -> Result<DMatrix<f64>> {
    let eig = clipped_eigen(m, scale, "covariance")?;
    let root = DMatrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt));
    Ok(&eig.eigenvectors * root * eig.eigenvectors.transpose())
}

/// `Tr((a b)^{1/2})` for PSD `a`, `b`, through the symmetric product
/// `a^{1/2} b a^{1/2}`, which has the same spectrum as `a b`.
pub fn trace_sqrt_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    let scale = a.trace().abs().max(b.trace().abs());
    let ra = psd_sqrt(a, scale)?;
    let inner = &ra * b * &ra;
    let eig = clipped_eigen(&inner, scale * scale, "covariance product")?;
    Ok(eig.eigenvalues.iter().map(|v| v.sqrt()).sum())
}

/// Frechet distance between two Gaussians:
/// `|m_a - m_b|^2 + Tr(C_a + C_b - 2 (C_a C_b)^{1/2})`.
pub fn fid(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!("feature dims {} and {} differ", a.dim(), b.dim())));
    }
    let mean_term = (&a.mean - &b.mean).norm_squared();
    // The cross term is computed from the side with the larger trace, so
    // swapping the arguments evaluates the same expression.
    let cross = if a.cov.trace() >= b.cov.trace() {
        trace_sqrt_product(&a.cov, &b.cov)?
    } else {
        trace_sqrt_product(&b.cov, &a.cov)?
    };
    let trace_term = a.cov.trace() + b.cov.trace() - 2.0 * cross;
    let scale = a.cov.trace().abs().max(b.cov.trace().abs()).max(1.0);
    if trace_term < -PSD_TOLERANCE * scale {
        return Err(Error::Numerical(format!("negative trace term {trace_term:e}")));
    }
    Ok(mean_term + trace_term.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn stats1(mean: f64, var: f64) -> GaussianStats {
        GaussianStats {
            mean: DVector::from_element(1, mean),
            cov: DMatrix::from_element(1, 1, var),
            count: 2,
        }
    }

    /// Reference: square roots of the (generally non-symmetric) product's
    /// eigenvalues, taken from a Schur decomposition of `a b` directly.
    fn oracle_fid(a: &GaussianStats, b: &GaussianStats) -> f64 {
        let prod = &a.cov * &b.cov;
        let eig = prod.complex_eigenvalues();
        let cross: f64 = eig.iter().map(|z| z.re.max(0.0).sqrt()).sum();
        (&a.mean - &b.mean).norm_squared() + a.cov.trace() + b.cov.trace() - 2.0 * cross
    }

    fn random_psd(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
        let m = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
        &m * m.transpose()
    }

    #[test]
    fn closed_form_scalar_cases() {
        assert_eq!(fid(&stats1(0.0, 1.0), &stats1(1.0, 1.0)).unwrap(), 1.0);
        assert_eq!(fid(&stats1(0.0, 1.0), &stats1(0.0, 4.0)).unwrap(), 1.0);
        // (m_a - m_b)^2 + (s_a - s_b)^2 for scalar Gaussians.
        for (ma, va, mb, vb) in [(0.3, 2.0, -1.2, 0.5), (4.0, 9.0, 1.0, 16.0), (0.0, 0.0, 0.0, 3.0)] {
            let expect = (ma - mb) * (ma - mb) + (f64::sqrt(va) - f64::sqrt(vb)).powi(2);
            let got = fid(&stats1(ma, va), &stats1(mb, vb)).unwrap();
            assert!((got - expect).abs() < 1e-10, "{got} vs {expect}");
        }
    }

    #[test]
    fn symmetric_and_zero_on_self() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let a = GaussianStats {
                mean: DVector::from_fn(5, |_, _| rng.random_range(-1.0..1.0)),
                cov: random_psd(&mut rng, 5),
                count: 10,
            };
            let b = GaussianStats {
                mean: DVector::from_fn(5, |_, _| rng.random_range(-1.0..1.0)),
                cov: random_psd(&mut rng, 5),
                count: 10,
            };
            assert!(fid(&a, &a).unwrap().abs() < 1e-8);
            assert!((fid(&a, &b).unwrap() - fid(&b, &a).unwrap()).abs() < 1e-8);
        }
    }

    #[test]
    fn matches_oracle_on_random_psd_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(0xf1d);
        for _ in 0..100 {
            let mk = |rng: &mut ChaCha8Rng| GaussianStats {
                mean: DVector::from_fn(3, |_, _| rng.random_range(-2.0..2.0)),
                cov: random_psd(rng, 3),
                count: 3,
            };
            let (a, b) = (mk(&mut rng), mk(&mut rng));
            let (got, want) = (fid(&a, &b).unwrap(), oracle_fid(&a, &b));
            assert!((got - want).abs() < 1e-6, "{got} vs {want}");
        }
    }

    #[test]
    fn sample_statistics() {
        let constant = DMatrix::from_element(4, 2, 3.0);
        let s = GaussianStats::from_rows(&constant).unwrap();
        assert_eq!(s.cov, DMatrix::zeros(2, 2));
        // Two points at -1 and 1: mean 0, unbiased variance 2.
        let two = DMatrix::from_row_slice(2, 1, &[-1.0, 1.0]);
        let s = GaussianStats::from_rows(&two).unwrap();
        assert_eq!((s.mean[0], s.cov[(0, 0)]), (0.0, 2.0));
        let rows = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, -3.0, 0.5, 4.0, 4.0]);
        let shuffled = DMatrix::from_row_slice(3, 2, &[4.0, 4.0, 1.0, 2.0, -3.0, 0.5]);
        let (x, y) = (GaussianStats::from_rows(&rows).unwrap(), GaussianStats::from_rows(&shuffled).unwrap());
        assert!((&x.cov - &y.cov).abs().max() < 1e-12 && (&x.mean - &y.mean).abs().max() < 1e-12);
        assert!(GaussianStats::from_rows(&DMatrix::zeros(1, 2)).is_err());
        assert!(fid(&stats1(0.0, 1.0), &x).is_err());
    }
}
