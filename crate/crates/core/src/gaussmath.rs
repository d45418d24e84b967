//! Multivariate Gaussian machinery: Cholesky factorization, sampling,
//! conjugate Bayesian linear-regression updates and closed-form KL.
//!
//! Posteriors over linear weights are kept in precision form `(Λ, b = Λμ)`
//! and only converted to moment form when a sample or a mean is needed.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Symmetry tolerance accepted on input matrices.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Diagonal jitter added once when a factorization fails.
pub const CHOLESKY_JITTER: f64 = 1e-10;

fn check_square(m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch {
            expected: m.nrows(),
            found: m.ncols(),
        });
    }
    Ok(())
}

fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// `(m + mᵀ) / 2`
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn factor(m: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    check_square(m)?;
    let asym = max_asymmetry(m);
    if asym > SYMMETRY_TOL {
        return Err(Error::NotSymmetric(asym));
    }
    if !m.iter().all(|v| v.is_finite()) {
        return Err(Error::NotPositiveDefinite);
    }
    if let Some(c) = Cholesky::new(m.clone()) {
        return Ok(c);
    }
    let n = m.nrows();
    let jittered = m + DMatrix::<f64>::identity(n, n) * CHOLESKY_JITTER;
    Cholesky::new(jittered).ok_or(Error::NotPositiveDefinite)
}

/// Lower-triangular `L` with `L·Lᵀ = m`.
pub fn cholesky(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(factor(m)?.l())
}

/// Inverse of a symmetric positive-definite matrix, symmetrized.
pub fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(symmetrize(&factor(m)?.inverse()))
}

/// Solve `m x = rhs` for symmetric positive-definite `m`.
pub fn spd_solve(m: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    if rhs.len() != m.nrows() {
        return Err(Error::DimensionMismatch {
            expected: m.nrows(),
            found: rhs.len(),
        });
    }
    Ok(factor(m)?.solve(rhs))
}

/// Solve `m X = rhs` column by column for symmetric positive-definite `m`.
pub fn spd_solve_matrix(m: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if rhs.nrows() != m.nrows() {
        return Err(Error::DimensionMismatch {
            expected: m.nrows(),
            found: rhs.nrows(),
        });
    }
    Ok(factor(m)?.solve(rhs))
}

/// Draw a vector of i.i.d. standard normals.
pub fn standard_normal_vector<R: Rng + ?Sized>(d: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_iterator(d, (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

/// A multivariate normal distribution in moment form.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl Gaussian {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        check_square(&cov)?;
        if mean.len() != cov.nrows() {
            return Err(Error::DimensionMismatch {
                expected: cov.nrows(),
                found: mean.len(),
            });
        }
        factor(&cov)?;
        Ok(Self { mean, cov })
    }

    /// `N(mean, variance · I)`
    pub fn isotropic(mean: DVector<f64>, variance: f64) -> Result<Self> {
        if !(variance > 0.0) {
            return Err(Error::InvalidVariance {
                name: "variance",
                value: variance,
            });
        }
        let d = mean.len();
        Self::new(mean, DMatrix::identity(d, d) * variance)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// Log density at `x`.
    pub fn log_pdf(&self, x: &DVector<f64>) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: x.len(),
            });
        }
        let chol = factor(&self.cov)?;
        let l = chol.l();
        let diff = x - &self.mean;
        let z = l
            .solve_lower_triangular(&diff)
            .ok_or(Error::NotPositiveDefinite)?;
        let log_det: f64 = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let d = self.dim() as f64;
        Ok(-0.5 * (z.norm_squared() + log_det + d * (2.0 * std::f64::consts::PI).ln()))
    }
}

/// Draw `mean + L·z`, `z ~ N(0, I)`.
pub fn sample_gaussian<R: Rng + ?Sized>(g: &Gaussian, rng: &mut R) -> Result<DVector<f64>> {
    let l = cholesky(&g.cov)?;
    let z = standard_normal_vector(g.dim(), rng);
    Ok(&g.mean + l * z)
}

/// Closed-form `KL(q ‖ p)` between two Gaussians.
pub fn kl_gaussian(q: &Gaussian, p: &Gaussian) -> Result<f64> {
    if q.dim() != p.dim() {
        return Err(Error::DimensionMismatch {
            expected: p.dim(),
            found: q.dim(),
        });
    }
    let lq = cholesky(&q.cov)?;
    let lp = cholesky(&p.cov)?;
    let d = q.dim() as f64;
    // tr(Σp⁻¹Σq) = ‖Lp⁻¹ Lq‖_F²
    let a = lp
        .solve_lower_triangular(&lq)
        .ok_or(Error::NotPositiveDefinite)?;
    let trace = a.norm_squared();
    let diff = &p.mean - &q.mean;
    let z = lp
        .solve_lower_triangular(&diff)
        .ok_or(Error::NotPositiveDefinite)?;
    let quad = z.norm_squared();
    let log_det_p: f64 = lp.diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let log_det_q: f64 = lq.diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let kl = 0.5 * (trace + quad - d) + (log_det_p - log_det_q);
    Ok(kl.max(0.0))
}

/// Posterior over linear weights under `ℓ = ⟨θ, φ⟩ + η`, `η ~ N(0, σ²)`,
/// stored as precision `Λ` and precision-weighted mean `b = Λμ`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearPosterior {
    precision: DMatrix<f64>,
    precision_mean: DVector<f64>,
    noise_var: f64,
}

impl LinearPosterior {
    pub fn new(
        precision: DMatrix<f64>,
        precision_mean: DVector<f64>,
        noise_var: f64,
    ) -> Result<Self> {
        if !(noise_var > 0.0) {
            return Err(Error::InvalidVariance {
                name: "noise_var",
                value: noise_var,
            });
        }
        check_square(&precision)?;
        if precision_mean.len() != precision.nrows() {
            return Err(Error::DimensionMismatch {
                expected: precision.nrows(),
                found: precision_mean.len(),
            });
        }
        factor(&precision)?;
        Ok(Self {
            precision,
            precision_mean,
            noise_var,
        })
    }

    /// Start from a Gaussian prior over the weights.
    pub fn from_prior(prior: &Gaussian, noise_var: f64) -> Result<Self> {
        let precision = spd_inverse(prior.cov())?;
        let precision_mean = &precision * prior.mean();
        Self::new(precision, precision_mean, noise_var)
    }

    pub fn dim(&self) -> usize {
        self.precision_mean.len()
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    pub fn precision_mean(&self) -> &DVector<f64> {
        &self.precision_mean
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    /// `μ = Λ⁻¹ b`
    pub fn mean(&self) -> Result<DVector<f64>> {
        spd_solve(&self.precision, &self.precision_mean)
    }

    pub fn to_gaussian(&self) -> Result<Gaussian> {
        let chol = factor(&self.precision)?;
        let mean = chol.solve(&self.precision_mean);
        let cov = symmetrize(&chol.inverse());
        Gaussian::new(mean, cov)
    }

    /// Draw weights from the posterior.
    ///
    /// With `Λ = L Lᵀ`, `μ + L⁻ᵀ z` has covariance `Λ⁻¹`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<DVector<f64>> {
        let chol = factor(&self.precision)?;
        let mean = chol.solve(&self.precision_mean);
        let z = standard_normal_vector(self.dim(), rng);
        let offset = chol
            .l()
            .transpose()
            .solve_upper_triangular(&z)
            .ok_or(Error::NotPositiveDefinite)?;
        Ok(mean + offset)
    }
}

/// One conjugate observation: `Λ' = Λ + φφᵀ/σ²`, `b' = b + ℓφ/σ²`.
pub fn blr_update(p: &LinearPosterior, phi: &[f64], loss: f64) -> Result<LinearPosterior> {
    let d = p.dim();
    if phi.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: phi.len(),
        });
    }
    let phi = DVector::from_column_slice(phi);
    let inv_var = 1.0 / p.noise_var;
    let precision = symmetrize(&(&p.precision + &phi * phi.transpose() * inv_var));
    let precision_mean = &p.precision_mean + phi * (loss * inv_var);
    Ok(LinearPosterior {
        precision,
        precision_mean,
        noise_var: p.noise_var,
    })
}
