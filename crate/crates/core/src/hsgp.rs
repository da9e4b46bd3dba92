//! Reduced-rank Hilbert-space approximation of the Matérn 3/2 kernel.
//!
//! On the compact domain `[-L, L]` with Dirichlet boundary conditions the
//! Laplacian has eigenpairs
//!
//! ```text
//! λ_m = (mπ / 2L)²,    φ_m(x) = sqrt(1/L) · sin(sqrt(λ_m) · (x + L))
//! ```
//!
//! and a stationary kernel is approximated by `Σ_m S(sqrt(λ_m)) φ_m(x) φ_m(x')`
//! where `S` is its spectral density. Every approximate function vanishes at
//! `±L`.

use std::f64::consts::PI;

use crate::{Error, Result};

pub const DEFAULT_HALF_WIDTH: f64 = 3.0;
pub const DEFAULT_BASIS_SIZE: usize = 40;

const SQRT3: f64 = 1.732_050_807_568_877_2;

/// Laplacian eigenvalue `(mπ/(2L))²` for `m ≥ 1`.
pub fn eigenvalue(m: usize, half_width: f64) -> Result<f64> {
    if m == 0 {
        return Err(Error::invalid("eigenfunction index starts at 1"));
    }
    if !(half_width.is_finite() && half_width > 0.0) {
        return Err(Error::invalid(format!(
            "half-width must be positive, got {half_width}"
        )));
    }
    Ok((m as f64 * PI / (2.0 * half_width)).powi(2))
}

/// Dirichlet eigenfunction; identically zero on and outside the boundary.
pub fn eigenfunction(m: usize, half_width: f64, x: f64) -> f64 {
    if x <= -half_width || x >= half_width {
        return 0.0;
    }
    let freq = m as f64 * PI / (2.0 * half_width);
    (1.0 / half_width).sqrt() * (freq * (x + half_width)).sin()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelHyper {
    /// Marginal standard deviation; the kernel variance is `alpha²`.
    pub alpha: f64,
    pub ell: f64,
}

impl KernelHyper {
    pub fn new(alpha: f64, ell: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::invalid(format!("alpha must be positive, got {alpha}")));
        }
        if !(ell.is_finite() && ell > 0.0) {
            return Err(Error::invalid(format!("ell must be positive, got {ell}")));
        }
        Ok(KernelHyper { alpha, ell })
    }
}

/// `α² · (4·3^{3/2}/ℓ³) · (3/ℓ² + ω²)^{-2}`.
pub fn matern32_spectral_density(omega: f64, hyper: &KernelHyper) -> f64 {
    let KernelHyper { alpha, ell } = *hyper;
    let c = 4.0 * 3f64.powf(1.5) / ell.powi(3);
    alpha * alpha * c / (3.0 / (ell * ell) + omega * omega).powi(2)
}

/// `α² (1 + √3 r/ℓ) exp(-√3 r/ℓ)` with `r = |xi - xj|`.
pub fn matern32_kernel_exact(xi: f64, xj: f64, hyper: &KernelHyper) -> f64 {
    let s = SQRT3 * (xi - xj).abs() / hyper.ell;
    hyper.alpha * hyper.alpha * (1.0 + s) * (-s).exp()
}

/// The compact domain and the first `M` Laplacian eigenvalues on it.
#[derive(Debug, Clone, PartialEq)]
pub struct HsgpBasis {
    half_width: f64,
    eigenvalues: Vec<f64>,
}

impl HsgpBasis {
    pub fn new(half_width: f64, size: usize) -> Result<Self> {
        if size == 0 {
            return Err(Error::invalid("basis needs at least one function"));
        }
        let eigenvalues = (1..=size)
            .map(|m| eigenvalue(m, half_width))
            .collect::<Result<_>>()?;
        Ok(HsgpBasis {
            half_width,
            eigenvalues,
        })
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn size(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn contains(&self, x: f64) -> bool {
        x.is_finite() && x.abs() <= self.half_width
    }

    pub(crate) fn check_inputs(&self, xs: &[f64]) -> Result<()> {
        match xs.iter().find(|x| !self.contains(**x)) {
            Some(&value) => Err(Error::DomainOverflow {
                value,
                half_width: self.half_width,
            }),
            None => Ok(()),
        }
    }

    /// All `M` eigenfunctions at `x` written into `out`.
    pub fn eval_into(&self, x: f64, out: &mut [f64]) {
        for (m, o) in out.iter_mut().enumerate() {
            *o = eigenfunction(m + 1, self.half_width, x);
        }
    }
}

impl Default for HsgpBasis {
    fn default() -> Self {
        HsgpBasis::new(DEFAULT_HALF_WIDTH, DEFAULT_BASIS_SIZE).expect("valid defaults")
    }
}

/// `w_m = sqrt(S(sqrt(λ_m)))`, so that `f = Φ (w ⊙ β)` has the approximate kernel
/// as covariance when `β` is standard normal.
pub fn spectral_weights(basis: &HsgpBasis, hyper: &KernelHyper) -> Vec<f64> {
    basis
        .eigenvalues
        .iter()
        .map(|lambda| matern32_spectral_density(lambda.sqrt(), hyper).sqrt())
        .collect()
}

/// `∂ log w_m / ∂ log ℓ = -3/2 + 6 / (3 + ℓ² λ_m)`. The derivative with respect
/// to `log α` is 1 for every `m`.
pub fn log_weight_ell_sensitivity(basis: &HsgpBasis, hyper: &KernelHyper) -> Vec<f64> {
    let ell2 = hyper.ell * hyper.ell;
    basis
        .eigenvalues
        .iter()
        .map(|lambda| -1.5 + 6.0 / (3.0 + ell2 * lambda))
        .collect()
}

pub fn approx_kernel(xi: f64, xj: f64, basis: &HsgpBasis, hyper: &KernelHyper) -> Result<f64> {
    basis.check_inputs(&[xi, xj])?;
    let l = basis.half_width;
    Ok(basis
        .eigenvalues
        .iter()
        .enumerate()
        .map(|(idx, lambda)| {
            let m = idx + 1;
            // product of the two eigenfunctions first keeps the sum exactly symmetric
            matern32_spectral_density(lambda.sqrt(), hyper)
                * (eigenfunction(m, l, xi) * eigenfunction(m, l, xj))
        })
        .sum())
}

/// Row-major `N × M` matrix of eigenfunction values, `Φ[i, m] = φ_m(x_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    inputs: Vec<f64>,
    cols: usize,
    entries: Vec<f64>,
}

impl DesignMatrix {
    pub fn rows(&self) -> usize {
        self.inputs.len()
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, m: usize) -> f64 {
        self.entries[i * self.cols + m]
    }

    /// `Φ c` for a coefficient vector of length `M`.
    pub fn apply(&self, coeffs: &[f64]) -> Vec<f64> {
        debug_assert_eq!(coeffs.len(), self.cols);
        self.entries
            .chunks_exact(self.cols)
            .map(|row| row.iter().zip(coeffs).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// `ΦᵀΦ`, row-major `M × M`.
    pub fn gram(&self) -> Vec<f64> {
        let m = self.cols;
        let mut g = vec![0.0; m * m];
        for row in self.entries.chunks_exact(m) {
            for a in 0..m {
                let ra = row[a];
                if ra == 0.0 {
                    continue;
                }
                for b in a..m {
                    g[a * m + b] += ra * row[b];
                }
            }
        }
        for a in 0..m {
            for b in 0..a {
                g[a * m + b] = g[b * m + a];
            }
        }
        g
    }

    /// `Φᵀ v`.
    pub fn transpose_apply(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.rows());
        let mut out = vec![0.0; self.cols];
        for (row, &vi) in self.entries.chunks_exact(self.cols).zip(v) {
            for (o, r) in out.iter_mut().zip(row) {
                *o += r * vi;
            }
        }
        out
    }
}

pub fn build_design_matrix(x: &[f64], basis: &HsgpBasis) -> Result<DesignMatrix> {
    basis.check_inputs(x)?;
    let cols = basis.size();
    let mut entries = vec![0.0; x.len() * cols];
    for (xi, row) in x.iter().zip(entries.chunks_exact_mut(cols)) {
        basis.eval_into(*xi, row);
    }
    Ok(DesignMatrix {
        inputs: x.to_vec(),
        cols,
        entries,
    })
}
