//! Gaussian RBF kernel `k(x, y) = exp(−‖x − y‖² / (2ℓ²))` with closed-form
//! derivatives in the first argument, the diffusion-weighted Hessian trace
//! used by the collocation diffusion matrix, and the interpolation
//! diagnostics (power function, fill distance).

use nalgebra::{DMatrix, DVector};
use rand::RngExt;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quasi;
use crate::rng::{keyed_rng, Purpose};
use crate::sde_model::{dot, Domain};
use crate::stats::SampleStats;

const SYMMETRY_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianKernel {
    lengthscale: f64,
}

fn check_dims(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            context: "kernel arguments",
            expected: x.len(),
            got: y.len(),
        });
    }
    Ok(())
}

#[inline]
fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

impl GaussianKernel {
    pub fn new(lengthscale: f64) -> Result<Self> {
        if !(lengthscale > 0.0 && lengthscale.is_finite()) {
            return Err(Error::invalid(format!(
                "kernel lengthscale must be positive, got {lengthscale}"
            )));
        }
        Ok(Self { lengthscale })
    }

    pub fn lengthscale(&self) -> f64 {
        self.lengthscale
    }

    #[inline]
    pub(crate) fn value_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        (-sq_dist(x, y) / (2.0 * self.lengthscale * self.lengthscale)).exp()
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        check_dims(x, y)?;
        Ok(self.value_unchecked(x, y))
    }

    /// ∂k/∂xᵢ = −(xᵢ − yᵢ)/ℓ² · k(x, y).
    pub fn grad_x(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        check_dims(x, y)?;
        let k = self.value_unchecked(x, y);
        let l2 = self.lengthscale * self.lengthscale;
        Ok(x.iter().zip(y).map(|(a, b)| -(a - b) / l2 * k).collect())
    }

    /// ∇ₓ²k = [(x − y)(x − y)ᵀ/ℓ⁴ − I/ℓ²] k(x, y).
    pub fn hessian_x(&self, x: &[f64], y: &[f64]) -> Result<DMatrix<f64>> {
        check_dims(x, y)?;
        let d = x.len();
        let k = self.value_unchecked(x, y);
        let l2 = self.lengthscale * self.lengthscale;
        let l4 = l2 * l2;
        let diff: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
        Ok(DMatrix::from_fn(d, d, |r, c| {
            let delta = if r == c { 1.0 / l2 } else { 0.0 };
            (diff[r] * diff[c] / l4 - delta) * k
        }))
    }

    /// ½ Tr[a(xᵢ) ∇ₓ²k(xᵢ, xⱼ)] in closed form:
    /// `k/2 · [(xᵢ−xⱼ)ᵀ a (xᵢ−xⱼ)/ℓ⁴ − Tr(a)/ℓ²]`.
    pub fn diffusion_trace_entry(&self, xi: &[f64], xj: &[f64], a_xi: &DMatrix<f64>) -> Result<f64> {
        check_dims(xi, xj)?;
        let d = xi.len();
        if a_xi.shape() != (d, d) {
            return Err(Error::DimensionMismatch {
                context: "diffusion tensor",
                expected: d,
                got: a_xi.nrows(),
            });
        }
        let asym = (a_xi - a_xi.transpose()).amax();
        if asym > SYMMETRY_TOL {
            return Err(Error::NonSymmetric { asymmetry: asym });
        }
        Ok(self.trace_entry_unchecked(xi, xj, a_xi.as_slice()))
    }

    /// `a` is column-major `d × d`.
    #[inline]
    pub(crate) fn trace_entry_unchecked(&self, xi: &[f64], xj: &[f64], a: &[f64]) -> f64 {
        let d = xi.len();
        let l2 = self.lengthscale * self.lengthscale;
        let mut quad = 0.0;
        let mut trace = 0.0;
        for c in 0..d {
            let dc = xi[c] - xj[c];
            trace += a[c * d + c];
            for r in 0..d {
                quad += (xi[r] - xj[r]) * a[c * d + r] * dc;
            }
        }
        let k = self.value_unchecked(xi, xj);
        0.5 * k * (quad / (l2 * l2) - trace / l2)
    }

    /// ½ Σₖ (σₖ·∇)² k(xᵢ, ·) evaluated at xⱼ, i.e.
    /// `½ Σₖ [(σₖ·(xᵢ−xⱼ))²/ℓ⁴ − ‖σₖ‖²/ℓ²] k(xᵢ, xⱼ)`.
    /// Well defined when σσᵀ is singular.
    pub fn diffusion_entry_vector_fields(
        &self,
        xi: &[f64],
        xj: &[f64],
        sigma_cols: &[Vec<f64>],
    ) -> Result<f64> {
        check_dims(xi, xj)?;
        for col in sigma_cols {
            check_dims(xi, col)?;
        }
        let d = xi.len();
        let flat: Vec<f64> = sigma_cols.iter().flatten().copied().collect();
        Ok(self.vector_field_entry_unchecked(xi, xj, &flat, d))
    }

    /// `cols` holds the noise fields column-major (`d` entries per field).
    #[inline]
    pub(crate) fn vector_field_entry_unchecked(
        &self,
        xi: &[f64],
        xj: &[f64],
        cols: &[f64],
        d: usize,
    ) -> f64 {
        let l2 = self.lengthscale * self.lengthscale;
        let mut acc = 0.0;
        for col in cols.chunks(d) {
            let proj: f64 = col.iter().zip(xi.iter().zip(xj)).map(|(s, (a, b))| s * (a - b)).sum();
            let norm2 = dot(col, col);
            acc += proj * proj / (l2 * l2) - norm2 / l2;
        }
        0.5 * acc * self.value_unchecked(xi, xj)
    }

    /// Randomized estimate of `½ Tr[a ∇ₓ²k]` from `n_probes` probe vectors,
    /// `½ (1/M) Σ zₘᵀ (a ∇ₓ²k) zₘ`. The probe stream is fully determined by
    /// `seed`.
    pub fn hutchinson_trace_entry(
        &self,
        xi: &[f64],
        xj: &[f64],
        a_xi: &DMatrix<f64>,
        n_probes: usize,
        seed: u64,
        probe_kind: ProbeKind,
    ) -> Result<HutchinsonEstimate> {
        if n_probes < 2 {
            return Err(Error::invalid("hutchinson estimator needs at least 2 probes"));
        }
        let hess = self.hessian_x(xi, xj)?;
        let d = xi.len();
        if a_xi.shape() != (d, d) {
            return Err(Error::DimensionMismatch {
                context: "diffusion tensor",
                expected: d,
                got: a_xi.nrows(),
            });
        }
        let product = a_xi * hess;
        let mut rng = keyed_rng(seed, Purpose::Hutchinson, 0, 0);
        let normal = rand_distr::StandardNormal;
        let mut z = DVector::zeros(d);
        let samples: Vec<f64> = (0..n_probes)
            .map(|_| {
                for v in z.iter_mut() {
                    *v = match probe_kind {
                        ProbeKind::Rademacher => {
                            if rng.random::<bool>() {
                                1.0
                            } else {
                                -1.0
                            }
                        }
                        ProbeKind::Gaussian => rng.sample(normal),
                    };
                }
                0.5 * z.dot(&(&product * &z))
            })
            .collect();
        let stats = SampleStats::from_samples(&samples);
        Ok(HutchinsonEstimate {
            estimate: stats.mean,
            std_error: stats.std_error,
        })
    }

    /// `√max(0, k(x,x) − k(x)ᵀ(K + reg·I)⁻¹k(x))` for the node set `grid`.
    pub fn power_function(&self, grid: &[Vec<f64>], x: &[f64], reg: f64) -> Result<f64> {
        if grid.is_empty() {
            return Err(Error::invalid("power function needs a non-empty grid"));
        }
        if !(reg >= 0.0) {
            return Err(Error::invalid("regularization must be nonnegative"));
        }
        for p in grid {
            check_dims(p, x)?;
        }
        let n = grid.len();
        let gram = DMatrix::from_fn(n, n, |i, j| {
            self.value_unchecked(&grid[i], &grid[j]) + if i == j { reg } else { 0.0 }
        });
        let kx = DVector::from_iterator(n, grid.iter().map(|p| self.value_unchecked(x, p)));
        let coeffs = solve_dense(gram, &kx)?;
        let p2 = 1.0 - kx.dot(&coeffs);
        Ok(p2.max(0.0).sqrt())
    }
}

/// Solves `m · x = rhs` by LU with partial pivoting; on failure reports the
/// 2-norm condition number of `m`.
pub(crate) fn solve_dense(m: DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let lu = m.clone().lu();
    match lu.solve(rhs) {
        Some(x) if x.iter().all(|v| v.is_finite()) => Ok(x),
        _ => Err(Error::Singular {
            condition: condition_number(&m),
        }),
    }
}

/// σ_max / σ_min from a full SVD (infinite when σ_min is zero).
pub(crate) fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    if min > 0.0 {
        max / min
    } else {
        f64::INFINITY
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeKind {
    Gaussian,
    #[default]
    Rademacher,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HutchinsonEstimate {
    pub estimate: f64,
    pub std_error: f64,
}

/// Largest distance from a probe point of Ω to its nearest node. The probe
/// set is the box corners plus `n_probe` Sobol points.
pub fn fill_distance(grid: &[Vec<f64>], domain: &Domain, n_probe: usize) -> Result<f64> {
    if grid.is_empty() {
        return Err(Error::invalid("fill distance needs a non-empty grid"));
    }
    let mut probes = domain.boundary_samples(0);
    probes.extend(
        quasi::unit_points(domain.dim(), n_probe)
            .iter()
            .map(|u| domain.from_unit(u)),
    );
    let mut worst = 0.0_f64;
    for p in &probes {
        let nearest = grid
            .iter()
            .map(|g| sq_dist(g, p))
            .fold(f64::INFINITY, f64::min);
        worst = worst.max(nearest);
    }
    Ok(worst.sqrt())
}
