//! Kernel collocation for the correction equation
//! `G·∇h + ½ Tr[a ∇²h] − λh = −wᵀF`.
//!
//! With `h(x) = Σⱼ αⱼ k(x, xⱼ)` and the equation enforced at the nodes, the
//! coefficients solve `(L + D − λK + γI) α = −f` where
//!
//! ```text
//! Kᵢⱼ = k(xᵢ, xⱼ)
//! Lᵢⱼ = G(xᵢ)·∇ₓk(xᵢ, xⱼ)
//! Dᵢⱼ = ½ Tr[a(xᵢ) ∇ₓ²k(xᵢ, xⱼ)]        (or ½ Σₖ (σₖ·∇)²k for degenerate a)
//! fᵢ  = wᵀF(xᵢ)
//! ```

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{condition_number, GaussianKernel};
use crate::quasi;
use crate::sde_model::{dot, linspace, Domain, EigenPair, LinearDecomposition, SdeSystem};

const DUPLICATE_TOL: f64 = 1e-12;
const SINGULAR_VALUE_FLOOR: f64 = 1e-300;

/// Collocation nodes, all inside the domain box and pairwise distinct.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollocationGrid {
    points: Vec<Vec<f64>>,
}

impl CollocationGrid {
    pub fn new(points: Vec<Vec<f64>>, domain: &Domain) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("collocation grid is empty"));
        }
        for (i, p) in points.iter().enumerate() {
            if p.len() != domain.dim() {
                return Err(Error::DimensionMismatch {
                    context: "collocation point",
                    expected: domain.dim(),
                    got: p.len(),
                });
            }
            if !domain.contains(p) {
                return Err(Error::invalid(format!("collocation point {i} {p:?} lies outside the domain")));
            }
            for (j, q) in points[..i].iter().enumerate() {
                let dist2: f64 = p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum();
                if dist2.sqrt() <= DUPLICATE_TOL {
                    return Err(Error::invalid(format!("collocation points {j} and {i} coincide")));
                }
            }
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridSpec {
    /// `n` equispaced points on an interval, endpoints included.
    Uniform1d(usize),
    /// Cartesian product of `n` equispaced points per axis.
    Tensor(usize),
    /// First `n` Sobol points scaled to the box.
    Sobol(usize),
}

pub fn make_grid(domain: &Domain, spec: GridSpec) -> Result<CollocationGrid> {
    let points = match spec {
        GridSpec::Uniform1d(n) | GridSpec::Tensor(n) | GridSpec::Sobol(n) if n < 2 => {
            return Err(Error::invalid("grid counts must be at least 2"));
        }
        GridSpec::Uniform1d(n) => {
            if domain.dim() != 1 {
                return Err(Error::DimensionMismatch {
                    context: "uniform_1d grid",
                    expected: 1,
                    got: domain.dim(),
                });
            }
            linspace(domain.lower()[0], domain.upper()[0], n)
                .into_iter()
                .map(|v| vec![v])
                .collect()
        }
        GridSpec::Tensor(n) => domain.tensor_grid(n),
        GridSpec::Sobol(n) => quasi::unit_points(domain.dim(), n)
            .iter()
            .map(|u| domain.from_unit(u))
            .collect(),
    };
    CollocationGrid::new(points, domain)
}

/// How the second-order (diffusion) matrix is formed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiffusionAssembly {
    /// Closed-form trace with a(x) = σσᵀ.
    #[default]
    Trace,
    /// Sum over the noise vector fields; valid for degenerate a(x).
    VectorFields,
}

/// The dense collocation system `M α = −f` with `M = L + D − λK + γI`.
#[derive(Clone, Debug)]
pub struct AssembledSystem {
    pub gram: DMatrix<f64>,
    pub drift_mat: DMatrix<f64>,
    pub diff_mat: DMatrix<f64>,
    pub source: DVector<f64>,
    pub system_matrix: DMatrix<f64>,
    pub regularization: f64,
    pub lambda: f64,
}

struct RowData {
    gram: Vec<f64>,
    drift: Vec<f64>,
    diff: Vec<f64>,
    source: f64,
}

pub fn assemble(
    system: &SdeSystem,
    decomp: &LinearDecomposition,
    eigenpair: &EigenPair,
    kern: &GaussianKernel,
    grid: &CollocationGrid,
    gamma: f64,
    mode: DiffusionAssembly,
) -> Result<AssembledSystem> {
    if !(gamma >= 0.0) {
        return Err(Error::invalid("gamma must be nonnegative"));
    }
    let d = system.dim_state();
    if grid.dim() != d || eigenpair.left_eigenvector.len() != d {
        return Err(Error::DimensionMismatch {
            context: "assembly inputs",
            expected: d,
            got: grid.dim(),
        });
    }
    let m = system.dim_noise();
    let n = grid.len();
    let pts = grid.points();
    let l2 = kern.lengthscale() * kern.lengthscale();
    let w = &eigenpair.left_eigenvector;

    let rows: Vec<RowData> = pts
        .par_iter()
        .map(|xi| {
            let g = system.drift(xi);
            let mut sigma = vec![0.0; d * m];
            system.diffusion_into(xi, &mut sigma);
            let a = match mode {
                DiffusionAssembly::Trace => {
                    let s = DMatrix::from_column_slice(d, m, &sigma);
                    (&s * s.transpose()).as_slice().to_vec()
                }
                DiffusionAssembly::VectorFields => Vec::new(),
            };
            let source = dot(w, &decomp.nonlinear_part(xi));
            let mut row = RowData {
                gram: Vec::with_capacity(n),
                drift: Vec::with_capacity(n),
                diff: Vec::with_capacity(n),
                source,
            };
            for xj in pts {
                let k = kern.value_unchecked(xi, xj);
                let lij: f64 = g
                    .iter()
                    .zip(xi.iter().zip(xj))
                    .map(|(gr, (a, b))| gr * (-(a - b) / l2 * k))
                    .sum();
                let dij = match mode {
                    DiffusionAssembly::Trace => kern.trace_entry_unchecked(xi, xj, &a),
                    DiffusionAssembly::VectorFields => {
                        kern.vector_field_entry_unchecked(xi, xj, &sigma, d)
                    }
                };
                row.gram.push(k);
                row.drift.push(lij);
                row.diff.push(dij);
            }
            row
        })
        .collect();

    let mut gram = DMatrix::zeros(n, n);
    let mut drift_mat = DMatrix::zeros(n, n);
    let mut diff_mat = DMatrix::zeros(n, n);
    let mut source = DVector::zeros(n);
    for (i, row) in rows.iter().enumerate() {
        if !row.source.is_finite() {
            return Err(Error::Assembly { matrix: "source", row: i, col: 0 });
        }
        source[i] = row.source;
        for j in 0..n {
            for (name, v) in [("gram", row.gram[j]), ("drift", row.drift[j]), ("diffusion", row.diff[j])] {
                if !v.is_finite() {
                    return Err(Error::Assembly { matrix: name, row: i, col: j });
                }
            }
            gram[(i, j)] = row.gram[j];
            drift_mat[(i, j)] = row.drift[j];
            diff_mat[(i, j)] = row.diff[j];
        }
    }
    let lambda = eigenpair.eigenvalue;
    let mut system_matrix = &drift_mat + &diff_mat - &gram * lambda;
    for i in 0..n {
        system_matrix[(i, i)] += gamma;
    }
    Ok(AssembledSystem {
        gram,
        drift_mat,
        diff_mat,
        source,
        system_matrix,
        regularization: gamma,
        lambda,
    })
}

impl AssembledSystem {
    /// Solves `M α = −f` by LU with partial pivoting and returns `α` with the
    /// 2-norm condition number of `M`.
    pub fn solve(&self) -> Result<(DVector<f64>, f64)> {
        let sv = self.system_matrix.clone().singular_values();
        let (max, min) = (sv.max(), sv.min());
        let condition = if min > 0.0 { max / min } else { f64::INFINITY };
        if !(min >= SINGULAR_VALUE_FLOOR) {
            return Err(Error::Singular { condition });
        }
        let rhs = -&self.source;
        match self.system_matrix.clone().lu().solve(&rhs) {
            Some(alpha) if alpha.iter().all(|v| v.is_finite()) => Ok((alpha, condition)),
            _ => Err(Error::Singular { condition }),
        }
    }

    pub fn condition_number(&self) -> f64 {
        condition_number(&self.system_matrix)
    }

    pub fn to_record(&self) -> SystemRecord {
        SystemRecord {
            gram: rows_of(&self.gram),
            drift: rows_of(&self.drift_mat),
            diffusion: rows_of(&self.diff_mat),
            source: self.source.iter().copied().collect(),
            lambda: self.lambda,
            gamma: self.regularization,
        }
    }
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// `x ↦ Σⱼ αⱼ k(x, xⱼ)` with exact derivatives.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelExpansion {
    kernel: GaussianKernel,
    centers: Vec<Vec<f64>>,
    coefficients: Vec<f64>,
}

impl KernelExpansion {
    pub fn new(kernel: GaussianKernel, centers: Vec<Vec<f64>>, coefficients: Vec<f64>) -> Result<Self> {
        if centers.len() != coefficients.len() {
            return Err(Error::DimensionMismatch {
                context: "kernel expansion",
                expected: centers.len(),
                got: coefficients.len(),
            });
        }
        if coefficients.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("expansion coefficients must be finite"));
        }
        Ok(Self {
            kernel,
            centers,
            coefficients,
        })
    }

    pub fn kernel(&self) -> &GaussianKernel {
        &self.kernel
    }

    pub fn centers(&self) -> &[Vec<f64>] {
        &self.centers
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.centers
            .iter()
            .zip(&self.coefficients)
            .map(|(c, a)| a * self.kernel.value_unchecked(x, c))
            .sum()
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let l2 = self.kernel.lengthscale().powi(2);
        let mut g = vec![0.0; x.len()];
        for (c, a) in self.centers.iter().zip(&self.coefficients) {
            let k = self.kernel.value_unchecked(x, c);
            for (gi, (xi, ci)) in g.iter_mut().zip(x.iter().zip(c)) {
                *gi += a * (-(xi - ci) / l2 * k);
            }
        }
        g
    }

    pub fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        let d = x.len();
        let l2 = self.kernel.lengthscale().powi(2);
        let l4 = l2 * l2;
        let mut h = DMatrix::zeros(d, d);
        for (c, a) in self.centers.iter().zip(&self.coefficients) {
            let k = self.kernel.value_unchecked(x, c);
            for r in 0..d {
                for s in 0..d {
                    let delta = if r == s { 1.0 / l2 } else { 0.0 };
                    h[(r, s)] += a * ((x[r] - c[r]) * (x[s] - c[s]) / l4 - delta) * k;
                }
            }
        }
        h
    }
}

/// `h` from collocation together with everything needed to evaluate
/// `φ(x) = wᵀ(x − x*) + h(x)`.
#[derive(Clone, Debug)]
pub struct CollocationSolution {
    expansion: KernelExpansion,
    grid: CollocationGrid,
    eigenpair: EigenPair,
    equilibrium: Vec<f64>,
    gamma: f64,
}

impl CollocationSolution {
    pub fn from_parts(
        kernel: GaussianKernel,
        grid: CollocationGrid,
        coefficients: Vec<f64>,
        eigenpair: EigenPair,
        equilibrium: Vec<f64>,
        gamma: f64,
    ) -> Result<Self> {
        let expansion = KernelExpansion::new(kernel, grid.points().to_vec(), coefficients)?;
        Ok(Self {
            expansion,
            grid,
            eigenpair,
            equilibrium,
            gamma,
        })
    }

    pub fn expansion(&self) -> &KernelExpansion {
        &self.expansion
    }

    pub fn coefficients(&self) -> &[f64] {
        self.expansion.coefficients()
    }

    pub fn grid(&self) -> &CollocationGrid {
        &self.grid
    }

    pub fn eigenpair(&self) -> &EigenPair {
        &self.eigenpair
    }

    pub fn equilibrium(&self) -> &[f64] {
        &self.equilibrium
    }

    pub fn kernel(&self) -> &GaussianKernel {
        self.expansion.kernel()
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn eval_h(&self, x: &[f64]) -> f64 {
        self.expansion.value(x)
    }

    pub fn eval_phi(&self, x: &[f64]) -> f64 {
        self.eigenpair.linear_part(x, &self.equilibrium) + self.eval_h(x)
    }

    pub fn to_record(&self, condition_number: Option<f64>) -> SolutionRecord {
        SolutionRecord {
            lengthscale: self.kernel().lengthscale(),
            lambda: self.eigenpair.eigenvalue,
            w: self.eigenpair.left_eigenvector.clone(),
            gamma: self.gamma,
            equilibrium: self.equilibrium.clone(),
            grid: self.grid.points().to_vec(),
            coefficients: self.coefficients().to_vec(),
            condition_number,
        }
    }

    /// Rebuilds an evaluable solution from its JSON record. The grid is not
    /// re-validated against a domain.
    pub fn from_record(rec: &SolutionRecord) -> Result<Self> {
        let kernel = GaussianKernel::new(rec.lengthscale)?;
        let eigenpair = EigenPair::new(rec.lambda, rec.w.clone())?;
        let expansion = KernelExpansion::new(kernel, rec.grid.clone(), rec.coefficients.clone())?;
        Ok(Self {
            expansion,
            grid: CollocationGrid {
                points: rec.grid.clone(),
            },
            eigenpair,
            equilibrium: rec.equilibrium.clone(),
            gamma: rec.gamma,
        })
    }
}

/// JSON layout of an assembled system.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemRecord {
    pub gram: Vec<Vec<f64>>,
    pub drift: Vec<Vec<f64>>,
    pub diffusion: Vec<Vec<f64>>,
    pub source: Vec<f64>,
    pub lambda: f64,
    pub gamma: f64,
}

/// JSON layout of an evaluable solution `φ(x) = wᵀ(x − x*) + Σⱼ αⱼ k(x, xⱼ)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolutionRecord {
    pub lengthscale: f64,
    pub lambda: f64,
    pub w: Vec<f64>,
    pub gamma: f64,
    pub equilibrium: Vec<f64>,
    pub grid: Vec<Vec<f64>>,
    pub coefficients: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition_number: Option<f64>,
}

/// Output of the full assemble → solve pipeline.
#[derive(Clone, Debug)]
pub struct SolveOutput {
    pub solution: CollocationSolution,
    pub system: AssembledSystem,
    pub condition_number: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn solve_collocation(
    system: &SdeSystem,
    decomp: &LinearDecomposition,
    eigenpair: &EigenPair,
    kern: &GaussianKernel,
    grid: &CollocationGrid,
    gamma: f64,
    mode: DiffusionAssembly,
) -> Result<SolveOutput> {
    let assembled = assemble(system, decomp, eigenpair, kern, grid, gamma, mode)?;
    let (alpha, condition_number) = assembled.solve()?;
    let solution = CollocationSolution::from_parts(
        *kern,
        grid.clone(),
        alpha.iter().copied().collect(),
        eigenpair.clone(),
        system.equilibrium().to_vec(),
        gamma,
    )?;
    Ok(SolveOutput {
        solution,
        system: assembled,
        condition_number,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResidualStats {
    pub mean: f64,
    pub max: f64,
    pub per_point: Vec<f64>,
}

/// |G·∇φ + ½ Tr[a ∇²h] − λφ| at each test point, with `∇φ = w + ∇h` and
/// exact kernel derivatives.
pub fn pde_residual(sol: &CollocationSolution, system: &SdeSystem, test_points: &[Vec<f64>]) -> ResidualStats {
    let w = &sol.eigenpair.left_eigenvector;
    let lambda = sol.eigenpair.eigenvalue;
    let per_point: Vec<f64> = test_points
        .par_iter()
        .map(|x| {
            let g = system.drift(x);
            let grad_h = sol.expansion.gradient(x);
            let grad_phi: Vec<f64> = w.iter().zip(&grad_h).map(|(a, b)| a + b).collect();
            let sigma = system.diffusion_factor(x);
            let a = &sigma * sigma.transpose();
            let hess = sol.expansion.hessian(x);
            let second = 0.5 * (a * hess).trace();
            (dot(&g, &grad_phi) + second - lambda * sol.eval_phi(x)).abs()
        })
        .collect();
    let n = per_point.len().max(1) as f64;
    ResidualStats {
        mean: per_point.iter().sum::<f64>() / n,
        max: per_point.iter().copied().fold(0.0, f64::max),
        per_point,
    }
}

/// Default residual test set: 200 equispaced points (1D) or a 20-per-axis
/// tensor grid (higher dimensions) on the box inset by 5% on every side.
pub fn default_test_points(domain: &Domain) -> Vec<Vec<f64>> {
    if domain.dim() == 1 {
        domain.inset_tensor_grid(200, 0.05)
    } else {
        domain.inset_tensor_grid(20, 0.05)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry::ModelSpec;
    use crate::sde_model::{linearize, DEFAULT_FD_STEP};
    use std::sync::Arc;

    #[test]
    fn grid_specs() {
        let dom = Domain::cube(1, 2.5).unwrap();
        let g = make_grid(&dom, GridSpec::Uniform1d(40)).unwrap();
        assert_eq!(g.len(), 40);
        assert_eq!(g.points()[0], vec![-2.5]);
        assert_eq!(g.points()[39], vec![2.5]);
        assert!((g.points()[1][0] - g.points()[0][0] - 5.0 / 39.0).abs() < 1e-14);

        let dom2 = Domain::cube(2, 1.5).unwrap();
        assert_eq!(make_grid(&dom2, GridSpec::Tensor(15)).unwrap().len(), 225);
        assert!(make_grid(&dom2, GridSpec::Uniform1d(10)).is_err());
        let s = make_grid(&dom2, GridSpec::Sobol(64)).unwrap();
        assert!(s.points().iter().all(|p| dom2.contains(p)));
        assert!(make_grid(&dom, GridSpec::Tensor(1)).is_err());
    }

    #[test]
    fn grid_rejects_duplicates_and_outside_points() {
        let dom = Domain::cube(1, 1.0).unwrap();
        assert!(CollocationGrid::new(vec![vec![0.1], vec![0.1]], &dom).is_err());
        assert!(CollocationGrid::new(vec![vec![0.1], vec![1.1]], &dom).is_err());
        assert!(CollocationGrid::new(vec![vec![0.1], vec![1.0]], &dom).is_ok());
    }

    #[test]
    fn ou_diffusion_diagonal() {
        let setup = ModelSpec::Ou { theta: 1.0, sigma: 0.5 }.build().unwrap();
        let grid = make_grid(&setup.domain, GridSpec::Uniform1d(40)).unwrap();
        let kern = GaussianKernel::new(1.0).unwrap();
        let sys = assemble(
            &setup.system,
            &setup.decomposition,
            &setup.eigenpair,
            &kern,
            &grid,
            1e-4,
            DiffusionAssembly::Trace,
        )
        .unwrap();
        for i in 0..40 {
            assert_eq!(sys.diff_mat[(i, i)], -0.125);
            assert_eq!(sys.gram[(i, i)], 1.0);
            assert_eq!(sys.source[i], 0.0);
            for j in 0..40 {
                assert_eq!(sys.gram[(i, j)], sys.gram[(j, i)]);
            }
        }
        // Oracle: ½·a·(second difference of k) at coincident points.
        let step = 1e-4;
        let f = |x: f64| kern.eval(&[x], &[0.0]).unwrap();
        let fd = 0.5 * 0.25 * (f(step) - 2.0 + f(-step)) / (step * step);
        assert!((fd + 0.125).abs() < 1e-7);

        let (alpha, _) = sys.solve().unwrap();
        assert!(alpha.iter().all(|a| *a == 0.0));
    }

    #[test]
    fn zero_diffusion_gives_zero_d_and_deterministic_system() {
        let setup = ModelSpec::Quadratic { sigma: 0.0 }.build().unwrap();
        let grid = make_grid(&setup.domain, GridSpec::Uniform1d(20)).unwrap();
        let kern = GaussianKernel::new(0.8).unwrap();
        let args = (&setup.system, &setup.decomposition, &setup.eigenpair, &kern, &grid);
        let trace = assemble(args.0, args.1, args.2, args.3, args.4, 1e-4, DiffusionAssembly::Trace).unwrap();
        let fields =
            assemble(args.0, args.1, args.2, args.3, args.4, 1e-4, DiffusionAssembly::VectorFields).unwrap();
        assert!(trace.diff_mat.iter().all(|v| *v == 0.0));
        assert!(fields.diff_mat.iter().all(|v| *v == 0.0));
        let mut deterministic = &trace.drift_mat - &trace.gram * trace.lambda;
        for i in 0..grid.len() {
            deterministic[(i, i)] += 1e-4;
        }
        assert_eq!(trace.system_matrix, deterministic);
        let (a1, _) = trace.solve().unwrap();
        let (a2, _) = fields.solve().unwrap();
        assert_eq!(a1, a2);
    }

    #[test]
    fn assembly_modes_agree_for_full_rank_noise() {
        let setup = ModelSpec::Linear2d.build().unwrap();
        let grid = make_grid(&setup.domain, GridSpec::Tensor(6)).unwrap();
        let kern = GaussianKernel::new(1.0).unwrap();
        let a = assemble(
            &setup.system,
            &setup.decomposition,
            &setup.eigenpair,
            &kern,
            &grid,
            1e-4,
            DiffusionAssembly::Trace,
        )
        .unwrap();
        let b = assemble(
            &setup.system,
            &setup.decomposition,
            &setup.eigenpair,
            &kern,
            &grid,
            1e-4,
            DiffusionAssembly::VectorFields,
        )
        .unwrap();
        assert!((&a.diff_mat - &b.diff_mat).amax() < 1e-12);
    }

    #[test]
    fn rejects_negative_gamma() {
        let setup = ModelSpec::Ou { theta: 1.0, sigma: 0.5 }.build().unwrap();
        let grid = make_grid(&setup.domain, GridSpec::Uniform1d(5)).unwrap();
        let kern = GaussianKernel::new(1.0).unwrap();
        let err = assemble(
            &setup.system,
            &setup.decomposition,
            &setup.eigenpair,
            &kern,
            &grid,
            -1.0,
            DiffusionAssembly::Trace,
        );
        assert!(err.unwrap_err().to_string().contains("gamma must be nonnegative"));
    }

    #[test]
    fn assembly_names_non_finite_entry() {
        let sys = SdeSystem::new(
            "blowup",
            1,
            1,
            Arc::new(|x, out| out[0] = if x[0] > 0.9 { f64::INFINITY } else { -x[0] }),
            Arc::new(|_, out| out[0] = 0.1),
        )
        .unwrap();
        let dom = Domain::cube(1, 1.0).unwrap();
        let lin = linearize(&sys, DEFAULT_FD_STEP).unwrap();
        let pair = EigenPair::new(-1.0, vec![1.0]).unwrap();
        let grid = make_grid(&dom, GridSpec::Uniform1d(5)).unwrap();
        let kern = GaussianKernel::new(0.5).unwrap();
        match assemble(&sys, &lin, &pair, &kern, &grid, 0.0, DiffusionAssembly::Trace) {
            Err(Error::Assembly { row, .. }) => assert_eq!(row, 4),
            other => panic!("expected assembly error, got {other:?}"),
        }
    }

    #[test]
    fn collocation_equations_hold_at_nodes() {
        let setup = ModelSpec::Quadratic { sigma: 0.3 }.build().unwrap();
        let grid = make_grid(&setup.domain, GridSpec::Uniform1d(8)).unwrap();
        let kern = GaussianKernel::new(0.3).unwrap();
        let out = solve_collocation(
            &setup.system,
            &setup.decomposition,
            &setup.eigenpair,
            &kern,
            &grid,
            0.0,
            DiffusionAssembly::Trace,
        )
        .unwrap();
        assert!(out.condition_number < 1e6);
        let res = pde_residual(&out.solution, &setup.system, grid.points());
        assert!(res.max <= 1e-8, "node residual {}", res.max);

        // ‖Mα + f‖ ≤ 1e-10 (‖M‖‖α‖ + ‖f‖)
        let alpha = DVector::from_column_slice(out.solution.coefficients());
        let r = &out.system.system_matrix * &alpha + &out.system.source;
        let scale = out.system.system_matrix.norm() * alpha.norm() + out.system.source.norm();
        assert!(r.norm() <= 1e-10 * scale);
    }

    #[test]
    fn solution_json_round_trip() {
        let setup = ModelSpec::Quadratic { sigma: 0.3 }.build().unwrap();
        let grid = make_grid(&setup.domain, GridSpec::Uniform1d(10)).unwrap();
        let kern = GaussianKernel::new(0.8).unwrap();
        let out = solve_collocation(
            &setup.system,
            &setup.decomposition,
            &setup.eigenpair,
            &kern,
            &grid,
            1e-4,
            DiffusionAssembly::Trace,
        )
        .unwrap();
        let json = serde_json::to_string(&out.solution.to_record(Some(out.condition_number))).unwrap();
        let value: serde_json::Value = serde_json::from_str(&json).unwrap();
        for key in ["coefficients", "grid", "lengthscale", "lambda", "w", "gamma"] {
            assert!(value.get(key).is_some(), "missing {key}");
        }
        let back = CollocationSolution::from_record(&serde_json::from_str(&json).unwrap()).unwrap();
        for x in [-1.0, 0.2, 0.9] {
            assert_eq!(back.eval_phi(&[x]), out.solution.eval_phi(&[x]));
        }
        let sys_json = serde_json::to_value(out.system.to_record()).unwrap();
        for key in ["gram", "drift", "diffusion", "source", "lambda", "gamma"] {
            assert!(sys_json.get(key).is_some(), "missing {key}");
        }
    }
}
