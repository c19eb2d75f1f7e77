//! SDE systems, their linearization at an equilibrium, and the spectral and
//! ellipticity diagnostics the generator equation depends on.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quasi;

/// `f(x, out)` writes a vector-valued field evaluated at `x` into `out`.
pub type VectorField = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
/// Scalar field on ℝᵈ.
pub type ScalarField = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

const EQUILIBRIUM_TOL: f64 = 1e-10;
pub const DEFAULT_FD_STEP: f64 = 1e-5;
const DIVERGENCE_FD_STEP: f64 = 1e-5;

/// Itô SDE `dX = G(X) dt + σ(X) dW` with `X ∈ ℝᵈ`, `W ∈ ℝᵐ`.
///
/// The diffusion factor writes a `d × m` matrix in column-major order, so
/// column `k` (the k-th noise vector field) occupies `out[k*d..(k+1)*d]`.
#[derive(Clone)]
pub struct SdeSystem {
    label: String,
    dim_state: usize,
    dim_noise: usize,
    drift: VectorField,
    diffusion: VectorField,
    equilibrium: Vec<f64>,
    jacobian: Option<DMatrix<f64>>,
}

impl fmt::Debug for SdeSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SdeSystem")
            .field("label", &self.label)
            .field("dim_state", &self.dim_state)
            .field("dim_noise", &self.dim_noise)
            .field("equilibrium", &self.equilibrium)
            .field("jacobian", &self.jacobian)
            .finish_non_exhaustive()
    }
}

impl SdeSystem {
    /// Builds a system with equilibrium at the origin.
    pub fn new(
        label: impl Into<String>,
        dim_state: usize,
        dim_noise: usize,
        drift: VectorField,
        diffusion: VectorField,
    ) -> Result<Self> {
        if dim_state == 0 || dim_noise == 0 {
            return Err(Error::invalid("state and noise dimensions must be positive"));
        }
        let system = Self {
            label: label.into(),
            dim_state,
            dim_noise,
            drift,
            diffusion,
            equilibrium: vec![0.0; dim_state],
            jacobian: None,
        };
        system.check_equilibrium()?;
        Ok(system)
    }

    /// `dX = A X dt + B dW` with constant `B` (`d × m`).
    pub fn linear(label: impl Into<String>, a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        if !a.is_square() || b.nrows() != a.nrows() {
            return Err(Error::DimensionMismatch {
                context: "linear system",
                expected: a.nrows(),
                got: b.nrows(),
            });
        }
        let (d, m) = b.shape();
        let a_drift = a.clone();
        let b_flat: Vec<f64> = b.as_slice().to_vec();
        Self::new(
            label,
            d,
            m,
            Arc::new(move |x, out| mat_vec_into(&a_drift, x, out)),
            Arc::new(move |_x, out| out.copy_from_slice(&b_flat)),
        )?
        .with_jacobian(a)
    }

    pub fn with_equilibrium(mut self, equilibrium: Vec<f64>) -> Result<Self> {
        if equilibrium.len() != self.dim_state {
            return Err(Error::DimensionMismatch {
                context: "equilibrium",
                expected: self.dim_state,
                got: equilibrium.len(),
            });
        }
        self.equilibrium = equilibrium;
        self.check_equilibrium()?;
        Ok(self)
    }

    /// Supplies the exact drift Jacobian at the equilibrium; [`linearize`]
    /// then uses it instead of finite differences.
    pub fn with_jacobian(mut self, a: DMatrix<f64>) -> Result<Self> {
        if a.shape() != (self.dim_state, self.dim_state) {
            return Err(Error::DimensionMismatch {
                context: "jacobian",
                expected: self.dim_state,
                got: a.nrows(),
            });
        }
        self.jacobian = Some(a);
        Ok(self)
    }

    fn check_equilibrium(&self) -> Result<()> {
        let g = self.drift(&self.equilibrium);
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm <= EQUILIBRIUM_TOL) {
            return Err(Error::invalid(format!(
                "drift at the equilibrium {:?} has norm {norm:e} (> {EQUILIBRIUM_TOL:e})",
                self.equilibrium
            )));
        }
        Ok(())
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn dim_state(&self) -> usize {
        self.dim_state
    }

    pub fn dim_noise(&self) -> usize {
        self.dim_noise
    }

    pub fn equilibrium(&self) -> &[f64] {
        &self.equilibrium
    }

    pub fn exact_jacobian(&self) -> Option<&DMatrix<f64>> {
        self.jacobian.as_ref()
    }

    #[inline]
    pub fn drift_into(&self, x: &[f64], out: &mut [f64]) {
        (self.drift)(x, out)
    }

    pub fn drift(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim_state];
        self.drift_into(x, &mut out);
        out
    }

    /// Writes σ(x) column-major into `out` (length `d·m`).
    #[inline]
    pub fn diffusion_into(&self, x: &[f64], out: &mut [f64]) {
        (self.diffusion)(x, out)
    }

    pub fn diffusion_factor(&self, x: &[f64]) -> DMatrix<f64> {
        let mut out = vec![0.0; self.dim_state * self.dim_noise];
        self.diffusion_into(x, &mut out);
        DMatrix::from_vec(self.dim_state, self.dim_noise, out)
    }

    /// The noise vector fields σₖ(x), i.e. the columns of σ(x).
    pub fn diffusion_columns(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut out = vec![0.0; self.dim_state * self.dim_noise];
        self.diffusion_into(x, &mut out);
        out.chunks(self.dim_state).map(<[f64]>::to_vec).collect()
    }
}

pub(crate) fn mat_vec_into(a: &DMatrix<f64>, x: &[f64], out: &mut [f64]) {
    for (r, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (c, xc) in x.iter().enumerate() {
            acc += a[(r, c)] * xc;
        }
        *o = acc;
    }
}

/// `G(x) = A (x − x*) + F(x)`.
#[derive(Clone, Debug)]
pub struct LinearDecomposition {
    system: SdeSystem,
    a_matrix: DMatrix<f64>,
}

impl LinearDecomposition {
    pub fn a_matrix(&self) -> &DMatrix<f64> {
        &self.a_matrix
    }

    pub fn system(&self) -> &SdeSystem {
        &self.system
    }

    /// F(x) = G(x) − A (x − x*), written into `out`. `scratch` holds `x − x*`.
    #[inline]
    pub fn nonlinear_into(&self, x: &[f64], scratch: &mut [f64], out: &mut [f64]) {
        for ((s, xi), e) in scratch.iter_mut().zip(x).zip(&self.system.equilibrium) {
            *s = xi - e;
        }
        self.system.drift_into(x, out);
        for (r, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (c, sc) in scratch.iter().enumerate() {
                acc += self.a_matrix[(r, c)] * sc;
            }
            *o -= acc;
        }
    }

    pub fn nonlinear_part(&self, x: &[f64]) -> Vec<f64> {
        let d = self.system.dim_state;
        let mut scratch = vec![0.0; d];
        let mut out = vec![0.0; d];
        self.nonlinear_into(x, &mut scratch, &mut out);
        out
    }

    /// wᵀF(x), the source term of the correction equation.
    pub fn source(&self, w: &[f64], x: &[f64]) -> f64 {
        dot(w, &self.nonlinear_part(x))
    }
}

/// Splits the drift at the system's equilibrium. Uses the exact Jacobian when
/// the system carries one, otherwise central differences with step `fd_step`.
pub fn linearize(system: &SdeSystem, fd_step: f64) -> Result<LinearDecomposition> {
    if !(fd_step > 0.0 && fd_step <= 1e-2) {
        return Err(Error::invalid(format!("fd_step must lie in (0, 1e-2], got {fd_step}")));
    }
    let a_matrix = match &system.jacobian {
        Some(a) => a.clone(),
        None => central_jacobian(system, &system.equilibrium, fd_step)?,
    };
    Ok(LinearDecomposition {
        system: system.clone(),
        a_matrix,
    })
}

fn central_jacobian(system: &SdeSystem, at: &[f64], step: f64) -> Result<DMatrix<f64>> {
    let d = system.dim_state;
    let mut jac = DMatrix::zeros(d, d);
    let mut xp = at.to_vec();
    let mut xm = at.to_vec();
    let mut gp = vec![0.0; d];
    let mut gm = vec![0.0; d];
    for c in 0..d {
        xp[c] = at[c] + step;
        xm[c] = at[c] - step;
        system.drift_into(&xp, &mut gp);
        system.drift_into(&xm, &mut gm);
        for r in 0..d {
            if !gp[r].is_finite() || !gm[r].is_finite() {
                return Err(Error::NonFiniteEvaluation {
                    what: "drift",
                    coordinate: c,
                    point: if gp[r].is_finite() { xm.clone() } else { xp.clone() },
                });
            }
            jac[(r, c)] = (gp[r] - gm[r]) / (2.0 * step);
        }
        xp[c] = at[c];
        xm[c] = at[c];
    }
    Ok(jac)
}

/// Real eigenvalue `λ` with left eigenvector `w` (`wᵀA = λwᵀ`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EigenPair {
    pub eigenvalue: f64,
    pub left_eigenvector: Vec<f64>,
}

impl EigenPair {
    /// Wraps a `(λ, w)` pair without checking it against any matrix. Useful
    /// for auxiliary problems (e.g. positive discount rates) that are not
    /// eigenpairs of the linearization.
    pub fn new(eigenvalue: f64, left_eigenvector: Vec<f64>) -> Result<Self> {
        if !eigenvalue.is_finite() || left_eigenvector.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("eigenpair entries must be finite"));
        }
        if norm(&left_eigenvector) == 0.0 {
            return Err(Error::invalid("left eigenvector must be nonzero"));
        }
        Ok(Self {
            eigenvalue,
            left_eigenvector,
        })
    }

    /// ‖wᵀA − λwᵀ‖ / ‖w‖.
    pub fn residual(&self, a: &DMatrix<f64>) -> f64 {
        let w = DVector::from_column_slice(&self.left_eigenvector);
        let r = a.transpose() * &w - &w * self.eigenvalue;
        r.norm() / w.norm()
    }

    /// wᵀ(x − x*).
    pub fn linear_part(&self, x: &[f64], equilibrium: &[f64]) -> f64 {
        self.left_eigenvector
            .iter()
            .zip(x.iter().zip(equilibrium))
            .map(|(w, (x, e))| w * (x - e))
            .sum()
    }
}

/// Which real eigenvalue of `A` to use.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EigenSelector {
    /// Eigenvalue closest to the given value.
    Nearest(f64),
    /// Largest real part (the slowest-decaying mode of a stable equilibrium).
    #[default]
    Slowest,
    /// Position in the spectrum sorted by decreasing real part.
    Index(usize),
}

pub fn left_eigenpair(decomp: &LinearDecomposition, which: EigenSelector) -> Result<EigenPair> {
    let a = &decomp.a_matrix;
    let d = a.nrows();
    let scale = a.amax().max(1.0);
    let mut spectrum: Vec<(f64, f64)> = a
        .clone()
        .complex_eigenvalues()
        .iter()
        .map(|z| (z.re, z.im))
        .collect();
    spectrum.sort_by(|p, q| q.0.total_cmp(&p.0).then(q.1.total_cmp(&p.1)));

    let (re, im) = match which {
        EigenSelector::Nearest(target) => *spectrum
            .iter()
            .min_by(|p, q| {
                let dp = (p.0 - target).hypot(p.1);
                let dq = (q.0 - target).hypot(q.1);
                dp.total_cmp(&dq)
            })
            .expect("non-empty spectrum"),
        EigenSelector::Slowest => spectrum[0],
        EigenSelector::Index(i) => *spectrum.get(i).ok_or_else(|| {
            Error::invalid(format!("eigenvalue index {i} out of range (dimension {d})"))
        })?,
    };
    if im.abs() > 1e-10 * scale {
        return Err(Error::UnsupportedEigenstructure(format!(
            "selected eigenvalue {re} {:+}i is complex; only real eigenvalues are supported",
            im
        )));
    }
    let lambda = re;

    let cluster_tol = 1e-7 * scale;
    let algebraic = spectrum
        .iter()
        .filter(|(r, i)| (r - lambda).hypot(*i) <= cluster_tol)
        .count();

    let shifted = a.transpose() - DMatrix::identity(d, d) * lambda;
    let svd = shifted.svd(false, true);
    let v_t = svd.v_t.expect("requested V");
    let null_tol = 1e-9 * scale;
    let geometric = svd.singular_values.iter().filter(|&&s| s <= null_tol).count();
    if geometric < algebraic {
        return Err(Error::UnsupportedEigenstructure(format!(
            "eigenvalue {lambda} is defective (algebraic multiplicity {algebraic}, geometric {geometric})"
        )));
    }
    let (min_idx, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|p, q| p.1.total_cmp(q.1))
        .expect("non-empty");
    let mut w: Vec<f64> = v_t.row(min_idx).iter().copied().collect();

    let (pivot, _) = w
        .iter()
        .enumerate()
        .max_by(|p, q| p.1.abs().total_cmp(&q.1.abs()))
        .expect("non-empty");
    let s = w[pivot];
    for v in &mut w {
        *v /= s;
    }
    // Clean up rounding noise in entries that should be exactly zero.
    for v in &mut w {
        if v.abs() < 1e-14 {
            *v = 0.0;
        }
    }
    EigenPair::new(lambda, w)
}

/// Axis-aligned box Ω with Dirichlet data ψ on ∂Ω (zero by default).
#[derive(Clone)]
pub struct Domain {
    lower: Vec<f64>,
    upper: Vec<f64>,
    boundary_value: ScalarField,
}

impl fmt::Debug for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Domain")
            .field("lower", &self.lower)
            .field("upper", &self.upper)
            .finish_non_exhaustive()
    }
}

impl Domain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::DimensionMismatch {
                context: "domain bounds",
                expected: lower.len(),
                got: upper.len(),
            });
        }
        if let Some(i) = (0..lower.len()).find(|&i| !(lower[i] < upper[i])) {
            return Err(Error::invalid(format!(
                "domain axis {i}: lower {} must be below upper {}",
                lower[i], upper[i]
            )));
        }
        Ok(Self {
            lower,
            upper,
            boundary_value: Arc::new(|_| 0.0),
        })
    }

    /// Symmetric box `[-r, r]ᵈ`.
    pub fn cube(dim: usize, half_width: f64) -> Result<Self> {
        Self::new(vec![-half_width; dim], vec![half_width; dim])
    }

    pub fn with_boundary_value(mut self, psi: ScalarField) -> Self {
        self.boundary_value = psi;
        self
    }

    /// Checks that the system's equilibrium lies strictly inside the box.
    pub fn check_system(&self, system: &SdeSystem) -> Result<()> {
        if system.dim_state() != self.dim() {
            return Err(Error::DimensionMismatch {
                context: "domain vs system",
                expected: system.dim_state(),
                got: self.dim(),
            });
        }
        if !self.contains_strictly(system.equilibrium()) {
            return Err(Error::invalid("equilibrium must lie strictly inside the domain"));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn boundary_value(&self, x: &[f64]) -> f64 {
        (self.boundary_value)(x)
    }

    pub fn boundary_field(&self) -> &ScalarField {
        &self.boundary_value
    }

    #[inline]
    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (lo, hi))| *lo <= *v && *v <= *hi)
    }

    #[inline]
    pub fn contains_strictly(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (lo, hi))| *lo < *v && *v < *hi)
    }

    pub fn clamp_into(&self, x: &mut [f64]) {
        for ((v, lo), hi) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.clamp(*lo, *hi);
        }
    }

    pub fn half_diagonal(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| (hi - lo).powi(2))
            .sum::<f64>()
            .sqrt()
            / 2.0
    }

    /// Maps a point of the unit cube onto the box.
    pub fn from_unit(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(u, (lo, hi))| lo + u * (hi - lo))
            .collect()
    }

    /// Cartesian product of per-axis uniform grids (endpoints included),
    /// last axis varying fastest.
    pub fn tensor_grid(&self, per_axis: usize) -> Vec<Vec<f64>> {
        self.inset_tensor_grid(per_axis, 0.0)
    }

    /// Tensor grid on the box shrunk by `inset_frac` of each side length on
    /// both ends.
    pub fn inset_tensor_grid(&self, per_axis: usize, inset_frac: f64) -> Vec<Vec<f64>> {
        let axes: Vec<Vec<f64>> = self
            .lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| {
                let pad = inset_frac * (hi - lo);
                linspace(lo + pad, hi - pad, per_axis)
            })
            .collect();
        cartesian(&axes)
    }

    /// Points spread over the faces of the box (each face sampled with a
    /// quasi-random set) plus all corners.
    pub fn boundary_samples(&self, per_face: usize) -> Vec<Vec<f64>> {
        let d = self.dim();
        let mut out = Vec::new();
        for corner in 0..(1usize << d) {
            out.push(
                (0..d)
                    .map(|i| if corner >> i & 1 == 1 { self.upper[i] } else { self.lower[i] })
                    .collect(),
            );
        }
        if d == 1 {
            return out;
        }
        let face_points = quasi::unit_points(d - 1, per_face);
        for axis in 0..d {
            for side in [self.lower[axis], self.upper[axis]] {
                for u in &face_points {
                    let mut p = Vec::with_capacity(d);
                    let mut k = 0;
                    for i in 0..d {
                        if i == axis {
                            p.push(side);
                        } else {
                            p.push(self.lower[i] + u[k] * (self.upper[i] - self.lower[i]));
                            k += 1;
                        }
                    }
                    out.push(p);
                }
            }
        }
        out
    }
}

pub(crate) fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![(lo + hi) / 2.0],
        _ => (0..n)
            .map(|i| {
                if i == n - 1 {
                    hi
                } else {
                    lo + (hi - lo) * i as f64 / (n - 1) as f64
                }
            })
            .collect(),
    }
}

pub(crate) fn cartesian(axes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = vec![Vec::new()];
    for axis in axes {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                axis.iter().map(move |v| {
                    let mut p = prefix.clone();
                    p.push(*v);
                    p
                })
            })
            .collect();
    }
    out
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// a(x) = σ(x) σ(x)ᵀ.
pub fn diffusion_tensor(system: &SdeSystem, x: &[f64]) -> DMatrix<f64> {
    let sigma = system.diffusion_factor(x);
    &sigma * sigma.transpose()
}

/// Smallest eigenvalue of a(x) minimized over `n_probe` quasi-random points
/// in the box. Zero flags degenerate diffusion.
pub fn ellipticity_level(system: &SdeSystem, domain: &Domain, n_probe: usize) -> f64 {
    let n_probe = n_probe.max(1);
    quasi::unit_points(domain.dim(), n_probe)
        .iter()
        .map(|u| {
            let a = diffusion_tensor(system, &domain.from_unit(u));
            SymmetricEigen::new(a).eigenvalues.min().max(0.0)
        })
        .fold(f64::INFINITY, f64::min)
}

/// Grid approximation of λ₀ = ½ sup_Ω (∇·G)⁻, with the divergence taken by
/// central differences.
pub fn lambda_threshold(system: &SdeSystem, domain: &Domain, grid_per_axis: usize) -> Result<f64> {
    if grid_per_axis < 2 {
        return Err(Error::invalid("grid_per_axis must be at least 2"));
    }
    let d = system.dim_state();
    let h = DIVERGENCE_FD_STEP;
    let mut gp = vec![0.0; d];
    let mut gm = vec![0.0; d];
    let mut worst = 0.0_f64;
    for x in domain.tensor_grid(grid_per_axis) {
        let mut div = 0.0;
        let mut xs = x.clone();
        for i in 0..d {
            xs[i] = x[i] + h;
            system.drift_into(&xs, &mut gp);
            xs[i] = x[i] - h;
            system.drift_into(&xs, &mut gm);
            xs[i] = x[i];
            div += (gp[i] - gm[i]) / (2.0 * h);
        }
        worst = worst.max(-div);
    }
    Ok(0.5 * worst)
}
