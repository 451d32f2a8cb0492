//! Fréchet distance between Gaussian fits of two feature sets.

pub mod extract;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
pub use extract::{
    downsample_flatten, extract_features, ExtractorKind, FeatureExtractorSpec, FeatureMatrix, ProxyNet,
    PROXY_DIM,
};

pub const SYMMETRY_TOL: f64 = 1e-10;
/// Most negative eigenvalue, relative to the spectral scale, still treated as PSD.
pub const PSD_TOL: f64 = 1e-8;
/// Negative distances down to this value are rounding noise and become 0.
pub const NEGATIVE_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianStats {
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
    /// Number of samples behind the estimate.
    pub samples: usize,
}

impl GaussianStats {
    pub fn new(mu: DVector<f64>, sigma: DMatrix<f64>, samples: usize) -> Result<Self> {
        let d = mu.len();
        if sigma.shape() != (d, d) {
            return Err(Error::Shape(format!(
                "mean has {d} entries but covariance is {}×{}",
                sigma.nrows(),
                sigma.ncols()
            )));
        }
        if mu.iter().chain(sigma.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("statistics contain non-finite values".into()));
        }
        let asym = (&sigma - sigma.transpose()).amax();
        if asym > SYMMETRY_TOL {
            return Err(Error::Numerical(format!("covariance asymmetric by {asym:e}")));
        }
        let stats = Self { mu, sigma, samples };
        stats.check_psd()?;
        Ok(stats)
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// True when fewer samples than dimensions were used (covariance is rank deficient).
    pub fn undersampled(&self) -> bool {
        self.samples < self.dim()
    }

    fn check_psd(&self) -> Result<()> {
        let eig = SymmetricEigen::new(self.sigma.clone()).eigenvalues;
        let scale = eig.amax().max(1.0);
        let min = eig.min();
        if min < -PSD_TOL * scale {
            return Err(Error::Numerical(format!(
                "covariance is not positive semidefinite (eigenvalue {min:e})"
            )));
        }
        Ok(())
    }
}

/// Sample mean and unbiased covariance, accumulated in row order.
pub fn gaussian_stats(f: &FeatureMatrix) -> Result<GaussianStats> {
    let (n, d) = (f.rows(), f.dim());
    if n < 2 {
        return Err(Error::Empty(format!("covariance needs at least 2 samples, got {n}")));
    }
    let mut mu = DVector::zeros(d);
    for i in 0..n {
        for (m, v) in mu.iter_mut().zip(f.row(i)) {
            *m += v;
        }
    }
    mu /= n as f64;
    let mut centred = DMatrix::zeros(n, d);
    for i in 0..n {
        for (j, v) in f.row(i).iter().enumerate() {
            centred[(i, j)] = v - mu[j];
        }
    }
    let s = centred.tr_mul(&centred) / (n - 1) as f64;
    let sigma = (&s + s.transpose()) * 0.5;
    GaussianStats::new(mu, sigma, n)
}

/// Principal square root of a symmetric PSD matrix.
///
/// Eigenvalues below `n·ε·λ_max` sit inside the decomposition's rounding
/// noise and are set to 0; rooting them would inject errors of order
/// `√(ε·λ_max)` and break the symmetry of the distance for singular inputs.
pub fn sqrtm_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let floor = m.nrows() as f64 * f64::EPSILON * eig.eigenvalues.amax();
    let roots = eig
        .eigenvalues
        .map(|l| if l > floor { l.sqrt() } else { 0.0 });
    let v = &eig.eigenvectors;
    let r = v * DMatrix::from_diagonal(&roots) * v.transpose();
    (&r + r.transpose()) * 0.5
}

/// `Tr((Σa Σb)^½)` through the symmetric congruence `Σa^½ Σb Σa^½`, which shares its spectrum.
pub fn trace_sqrt_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let ra = sqrtm_psd(a);
    let inner = &ra * b * &ra;
    sqrtm_psd(&inner).trace()
}

pub fn frechet_distance(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!(
            "feature dimensions differ: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    if a.mu == b.mu && a.sigma == b.sigma {
        return Ok(0.0);
    }
    let mean_term = (&a.mu - &b.mu).norm_squared();
    let cov_term = a.sigma.trace() + b.sigma.trace() - 2.0 * trace_sqrt_product(&a.sigma, &b.sigma);
    let d = mean_term + cov_term;
    if !d.is_finite() {
        return Err(Error::NonFinite(format!("Fréchet distance evaluated to {d}")));
    }
    if d < -NEGATIVE_TOL {
        return Err(Error::Numerical(format!(
            "Fréchet distance {d:e} is negative; inputs are not PSD"
        )));
    }
    Ok(d.max(0.0))
}

/// Convenience: fit both feature sets and return their distance.
pub fn frechet_from_features(real: &FeatureMatrix, fake: &FeatureMatrix) -> Result<f64> {
    frechet_distance(&gaussian_stats(real)?, &gaussian_stats(fake)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    /// Cyclic Jacobi eigen-solver, independent of the library decomposition.
    fn jacobi_eigen(m: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
        let n = m.len();
        let mut a = m.to_vec();
        let mut v: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        for _sweep in 0..100 {
            let off: f64 = (0..n)
                .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
                .map(|(i, j)| a[i][j] * a[i][j])
                .sum();
            if off < 1e-30 {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    if a[p][q].abs() < 1e-300 {
                        continue;
                    }
                    let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for row in a.iter_mut() {
                        let (akp, akq) = (row[p], row[q]);
                        row[p] = c * akp - s * akq;
                        row[q] = s * akp + c * akq;
                    }
                    #[allow(clippy::needless_range_loop)]
                    for k in 0..n {
                        let (apk, aqk) = (a[p][k], a[q][k]);
                        a[p][k] = c * apk - s * aqk;
                        a[q][k] = s * apk + c * aqk;
                    }
                    for row in v.iter_mut() {
                        let (vp, vq) = (row[p], row[q]);
                        row[p] = c * vp - s * vq;
                        row[q] = s * vp + c * vq;
                    }
                }
            }
        }
        ((0..n).map(|i| a[i][i]).collect(), v)
    }

    fn jacobi_sqrtm(m: &DMatrix<f64>) -> DMatrix<f64> {
        let n = m.nrows();
        let rows: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| m[(i, j)]).collect()).collect();
        let (vals, vecs) = jacobi_eigen(&rows);
        DMatrix::from_fn(n, n, |i, j| {
            (0..n).map(|k| vecs[i][k] * vals[k].max(0.0).sqrt() * vecs[j][k]).sum()
        })
    }

    fn random_psd(n: usize, rank: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let g = DMatrix::<f64>::from_fn(n, rank, |_, _| StandardNormal.sample(rng));
        &g * g.transpose()
    }

    fn stats(mu: &[f64], sigma: DMatrix<f64>) -> GaussianStats {
        GaussianStats::new(DVector::from_column_slice(mu), sigma, 100).unwrap()
    }

    fn rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (a - b).norm() / b.norm().max(1e-300)
    }

    #[test]
    fn hand_computed_covariance() {
        let f = FeatureMatrix::from_rows(&[vec![0.0, 0.0], vec![2.0, 2.0]]).unwrap();
        let s = gaussian_stats(&f).unwrap();
        assert_eq!(s.mu.as_slice(), &[1.0, 1.0]);
        assert_eq!(s.sigma, DMatrix::from_row_slice(2, 2, &[2.0, 2.0, 2.0, 2.0]));
    }

    #[test]
    fn identical_rows_give_zero_covariance() {
        let f = FeatureMatrix::from_rows(&vec![vec![0.3, -1.0, 2.0]; 5]).unwrap();
        let s = gaussian_stats(&f).unwrap();
        assert!(s.sigma.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn too_few_samples_rejected() {
        let f = FeatureMatrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        assert!(matches!(gaussian_stats(&f), Err(Error::Empty(_))));
    }

    #[test]
    fn invalid_stats_rejected() {
        let mu = DVector::from_column_slice(&[0.0, 0.0]);
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
        assert!(GaussianStats::new(mu.clone(), asym, 3).is_err());
        let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(GaussianStats::new(mu.clone(), indefinite, 3).is_err());
        assert!(GaussianStats::new(mu, DMatrix::identity(3, 3), 3).is_err());
    }

    #[test]
    fn analytic_distances() {
        let a = stats(&[0.0], DMatrix::from_element(1, 1, 1.0));
        let b = stats(&[0.0], DMatrix::from_element(1, 1, 4.0));
        assert!((frechet_distance(&a, &b).unwrap() - 1.0).abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cov = random_psd(5, 5, &mut rng);
        let d = [0.5, -1.0, 2.0, 0.0, 0.25];
        let p = stats(&[0.0; 5], cov.clone());
        let q = stats(&d, cov);
        let expected: f64 = d.iter().map(|v| v * v).sum();
        assert!((frechet_distance(&p, &q).unwrap() - expected).abs() < 1e-8);
        assert_eq!(frechet_distance(&p, &p).unwrap(), 0.0);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let a = stats(&[0.0], DMatrix::identity(1, 1));
        let b = stats(&[0.0, 0.0], DMatrix::identity(2, 2));
        assert!(matches!(frechet_distance(&a, &b), Err(Error::Shape(_))));
    }

    #[test]
    fn sqrtm_matches_jacobi_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for case in 0..100 {
            let rank = if case % 4 == 0 { 4 } else { 8 };
            let m = random_psd(8, rank, &mut rng);
            let r = sqrtm_psd(&m);
            assert!(rel(&(&r * &r), &m) < 1e-6, "case {case}");
            assert!(rel(&r, &jacobi_sqrtm(&m)) < 1e-6, "case {case}");
        }
    }

    #[test]
    fn trace_term_matches_commuting_case() {
        // diagonal matrices commute, so Tr((AB)^½) = Σ √(a_i b_i)
        let a = DMatrix::from_diagonal(&DVector::from_column_slice(&[1.0, 4.0, 9.0]));
        let b = DMatrix::from_diagonal(&DVector::from_column_slice(&[4.0, 1.0, 0.0]));
        assert!((trace_sqrt_product(&a, &b) - 4.0).abs() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn symmetric_and_monotone(seed in any::<u64>(), t in 1.05f64..4.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (sa, sb) = (random_psd(6, 6, &mut rng), random_psd(6, 3, &mut rng));
            let ma: Vec<f64> = (0..6).map(|_| StandardNormal.sample(&mut rng)).collect();
            let mb: Vec<f64> = (0..6).map(|_| StandardNormal.sample(&mut rng)).collect();
            let a = stats(&ma, sa.clone());
            let b = stats(&mb, sb.clone());
            let ab = frechet_distance(&a, &b).unwrap();
            let ba = frechet_distance(&b, &a).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert!((ab - ba).abs() <= 1e-8 * ab.max(1.0), "{ab} {ba} {}", ab - ba);
            let far: Vec<f64> = ma.iter().zip(&mb).map(|(x, y)| x + t * (y - x)).collect();
            let c = stats(&far, sb);
            prop_assert!(frechet_distance(&a, &c).unwrap() > ab);
        }

        #[test]
        fn stats_permutation_invariant(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rows: Vec<Vec<f64>> = (0..7)
                .map(|_| (0..3).map(|_| StandardNormal.sample(&mut rng)).collect())
                .collect();
            let mut shuffled = rows.clone();
            shuffled.reverse();
            shuffled.swap(0, 3);
            let a = gaussian_stats(&FeatureMatrix::from_rows(&rows).unwrap()).unwrap();
            let b = gaussian_stats(&FeatureMatrix::from_rows(&shuffled).unwrap()).unwrap();
            prop_assert!((&a.mu - &b.mu).amax() < 1e-12);
            prop_assert!((&a.sigma - &b.sigma).amax() < 1e-12);
        }
    }
}
