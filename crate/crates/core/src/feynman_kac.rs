//! Monte Carlo Feynman–Kac estimation of the correction `h`.
//!
//! Each path starts at `x`, accumulates the left-endpoint sum
//! `Σ e^{−λt} wᵀF(X_t) Δt`, advances by Euler–Maruyama, and stops at the first
//! state outside the box, where it collects `e^{−λτ} ψ(X_τ)` with `X_τ`
//! clamped onto ∂Ω. Paths that reach `t_max`, or whose discount factor would
//! exceed the magnitude guard, stop early and are counted as capped.

use std::fmt::Write as _;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::collocation::{CollocationGrid, KernelExpansion, SolutionRecord};
use crate::error::{Error, Result};
use crate::kernel::{solve_dense, GaussianKernel};
use crate::rng::{NormalStream, Purpose};
use crate::sde_model::{dot, Domain, EigenPair, LinearDecomposition, SdeSystem};
use crate::stats::SampleStats;
use crate::text::format_float;

pub const DEFAULT_DT: f64 = 0.01;
pub const DEFAULT_T_MAX: f64 = 50.0;
pub const DEFAULT_DISCOUNT_GUARD: f64 = 1e12;
pub const DEFAULT_KRR_ETA: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FkConfig {
    pub dt: f64,
    pub n_paths: usize,
    pub t_max: f64,
    pub seed: u64,
    pub antithetic: bool,
    pub discount_guard: f64,
}

impl Default for FkConfig {
    fn default() -> Self {
        Self {
            dt: DEFAULT_DT,
            n_paths: 20_000,
            t_max: DEFAULT_T_MAX,
            seed: 0,
            antithetic: false,
            discount_guard: DEFAULT_DISCOUNT_GUARD,
        }
    }
}

impl FkConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::invalid("dt must be positive"));
        }
        if !(self.t_max >= self.dt) {
            return Err(Error::invalid("t_max must be at least dt"));
        }
        if self.n_paths == 0 {
            return Err(Error::invalid("n_paths must be at least 1"));
        }
        if self.antithetic && !self.n_paths.is_multiple_of(2) {
            return Err(Error::invalid("antithetic sampling needs an even number of paths"));
        }
        if !(self.discount_guard > 1.0) {
            return Err(Error::invalid("discount_guard must exceed 1"));
        }
        Ok(())
    }

    fn max_steps(&self) -> usize {
        (self.t_max / self.dt).round() as usize
    }

    /// Stream key and sign for a path: antithetic pairs share a stream.
    fn stream_for(&self, path: usize) -> (u64, bool) {
        if self.antithetic {
            ((path / 2) as u64, path % 2 == 1)
        } else {
            (path as u64, false)
        }
    }

    /// Collapses per-path values into the i.i.d. samples the standard error
    /// is computed from (pair means under antithetic sampling).
    fn effective_samples(&self, values: &[f64]) -> Vec<f64> {
        if self.antithetic {
            values.chunks(2).map(|p| 0.5 * (p[0] + p[1])).collect()
        } else {
            values.to_vec()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FkEstimate {
    pub value: f64,
    pub std_error: f64,
    pub n_paths: usize,
    pub n_capped: usize,
    /// Mean exit time over the paths that left the domain.
    pub mean_exit_time: Option<f64>,
    /// Some discount factor exceeded the magnitude guard.
    pub discount_overflow: bool,
}

impl FkEstimate {
    /// Every path was capped: the estimate reflects the truncation horizon,
    /// not the exit-time representation.
    pub fn capped_dominated(&self) -> bool {
        self.n_capped == self.n_paths
    }
}

/// One Euler–Maruyama step `x + G(x)Δt + σ(x)√Δt z`.
pub fn em_step(system: &SdeSystem, x: &[f64], dt: f64, z: &[f64]) -> Result<Vec<f64>> {
    let d = system.dim_state();
    let m = system.dim_noise();
    if x.len() != d || z.len() != m {
        return Err(Error::DimensionMismatch {
            context: "em_step",
            expected: d,
            got: x.len(),
        });
    }
    let mut ws = Workspace::new(d, m);
    let mut out = x.to_vec();
    ws.z.copy_from_slice(z);
    ws.step(system, &mut out, dt.sqrt(), dt);
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::BlowUp { state: out });
    }
    Ok(out)
}

struct Workspace {
    drift: Vec<f64>,
    sigma: Vec<f64>,
    z: Vec<f64>,
    scratch: Vec<f64>,
    nonlinear: Vec<f64>,
}

impl Workspace {
    fn new(d: usize, m: usize) -> Self {
        Self {
            drift: vec![0.0; d],
            sigma: vec![0.0; d * m],
            z: vec![0.0; m],
            scratch: vec![0.0; d],
            nonlinear: vec![0.0; d],
        }
    }

    /// Advances `x` in place using the normals already stored in `self.z`.
    #[inline]
    fn step(&mut self, system: &SdeSystem, x: &mut [f64], sqrt_dt: f64, dt: f64) {
        let d = x.len();
        system.drift_into(x, &mut self.drift);
        system.diffusion_into(x, &mut self.sigma);
        for (r, xr) in x.iter_mut().enumerate() {
            let mut noise = 0.0;
            for (k, zk) in self.z.iter().enumerate() {
                noise += self.sigma[k * d + r] * zk;
            }
            *xr += self.drift[r] * dt + sqrt_dt * noise;
        }
    }
}

struct PathOutcome {
    value: f64,
    exit_time: Option<f64>,
    capped: bool,
    overflow: bool,
}

struct FkProblem<'a> {
    system: &'a SdeSystem,
    decomp: &'a LinearDecomposition,
    eigenpair: &'a EigenPair,
    domain: &'a Domain,
    cfg: &'a FkConfig,
}

impl FkProblem<'_> {
    fn simulate_path(&self, x0: &[f64], query: u64, path: usize) -> Result<PathOutcome> {
        let d = self.system.dim_state();
        let mut ws = Workspace::new(d, self.system.dim_noise());
        let (stream_id, negate) = self.cfg.stream_for(path);
        let mut normals = NormalStream::new(self.cfg.seed, Purpose::FeynmanKac, query, stream_id, negate);
        let lambda = self.eigenpair.eigenvalue;
        let w = &self.eigenpair.left_eigenvector;
        let dt = self.cfg.dt;
        let sqrt_dt = dt.sqrt();
        let max_steps = self.cfg.max_steps();
        let guard = self.cfg.discount_guard;

        let mut x = x0.to_vec();
        let mut integral = 0.0;
        for s in 0..max_steps {
            let t = s as f64 * dt;
            let discount = (-lambda * t).exp();
            if discount > guard {
                return Ok(PathOutcome {
                    value: integral,
                    exit_time: None,
                    capped: true,
                    overflow: true,
                });
            }
            self.decomp.nonlinear_into(&x, &mut ws.scratch, &mut ws.nonlinear);
            integral += discount * dot(w, &ws.nonlinear) * dt;

            normals.fill(&mut ws.z);
            ws.step(self.system, &mut x, sqrt_dt, dt);
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::BlowUp { state: x });
            }
            if !self.domain.contains(&x) {
                let tau = (s + 1) as f64 * dt;
                self.domain.clamp_into(&mut x);
                let discount = (-lambda * tau).exp();
                let value = integral + discount * self.domain.boundary_value(&x);
                return Ok(PathOutcome {
                    value,
                    exit_time: Some(tau),
                    capped: false,
                    overflow: discount > guard,
                });
            }
        }
        Ok(PathOutcome {
            value: integral,
            exit_time: None,
            capped: true,
            overflow: false,
        })
    }

    fn estimate(&self, x: &[f64], query: u64) -> Result<FkEstimate> {
        if x.len() != self.domain.dim() {
            return Err(Error::DimensionMismatch {
                context: "query point",
                expected: self.domain.dim(),
                got: x.len(),
            });
        }
        if !self.domain.contains_strictly(x) {
            return Err(Error::invalid(format!("query point {x:?} is not strictly inside the domain")));
        }
        let outcomes: Vec<PathOutcome> = (0..self.cfg.n_paths)
            .into_par_iter()
            .map(|p| self.simulate_path(x, query, p))
            .collect::<Result<_>>()?;

        let values: Vec<f64> = outcomes.iter().map(|o| o.value).collect();
        let stats = SampleStats::from_samples(&self.cfg.effective_samples(&values));
        let exits: Vec<f64> = outcomes.iter().filter_map(|o| o.exit_time).collect();
        let mean_exit_time = if exits.is_empty() {
            None
        } else {
            Some(exits.iter().sum::<f64>() / exits.len() as f64)
        };
        Ok(FkEstimate {
            value: stats.mean,
            std_error: stats.std_error,
            n_paths: self.cfg.n_paths,
            n_capped: outcomes.iter().filter(|o| o.capped).count(),
            mean_exit_time,
            discount_overflow: outcomes.iter().any(|o| o.overflow),
        })
    }
}

/// Monte Carlo estimate of `h(x)`; uses query index 0 for its random streams.
pub fn fk_estimate(
    system: &SdeSystem,
    decomp: &LinearDecomposition,
    eigenpair: &EigenPair,
    domain: &Domain,
    x: &[f64],
    cfg: &FkConfig,
) -> Result<FkEstimate> {
    fk_estimate_indexed(system, decomp, eigenpair, domain, x, cfg, 0)
}

/// As [`fk_estimate`], with random streams keyed by `query_index`.
pub fn fk_estimate_indexed(
    system: &SdeSystem,
    decomp: &LinearDecomposition,
    eigenpair: &EigenPair,
    domain: &Domain,
    x: &[f64],
    cfg: &FkConfig,
    query_index: u64,
) -> Result<FkEstimate> {
    cfg.validate()?;
    FkProblem {
        system,
        decomp,
        eigenpair,
        domain,
        cfg,
    }
    .estimate(x, query_index)
}

/// Independent estimates at each query point; point `i` uses query index
/// `i`. A failing point yields an `Err` entry without affecting the others.
pub fn fk_batch(
    system: &SdeSystem,
    decomp: &LinearDecomposition,
    eigenpair: &EigenPair,
    domain: &Domain,
    query_points: &[Vec<f64>],
    cfg: &FkConfig,
) -> Vec<Result<FkEstimate>> {
    if let Err(e) = cfg.validate() {
        let msg = e.to_string();
        return query_points.iter().map(|_| Err(Error::invalid(msg.clone()))).collect();
    }
    let problem = FkProblem {
        system,
        decomp,
        eigenpair,
        domain,
        cfg,
    };
    query_points
        .par_iter()
        .enumerate()
        .map(|(i, x)| problem.estimate(x, i as u64))
        .collect()
}

/// CSV with columns `query_index, x1..xd, value, std_error, n_capped,
/// mean_exit_time, overflow_flag`. Failed points keep their index and
/// coordinates with the remaining fields empty.
pub fn batch_to_csv(query_points: &[Vec<f64>], results: &[Result<FkEstimate>]) -> String {
    let dim = query_points.first().map_or(0, Vec::len);
    let mut out = String::from("query_index");
    for c in 1..=dim {
        let _ = write!(out, ",x{c}");
    }
    out.push_str(",value,std_error,n_capped,mean_exit_time,overflow_flag\n");
    for (i, (x, r)) in query_points.iter().zip(results).enumerate() {
        let _ = write!(out, "{i}");
        for v in x {
            let _ = write!(out, ",{}", format_float(*v));
        }
        match r {
            Ok(e) => {
                let tau = e.mean_exit_time.map(format_float).unwrap_or_default();
                let _ = writeln!(
                    out,
                    ",{},{},{},{},{}",
                    format_float(e.value),
                    format_float(e.std_error),
                    e.n_capped,
                    tau,
                    e.discount_overflow as u8
                );
            }
            Err(_) => out.push_str(",,,,,\n"),
        }
    }
    out
}

/// Final states of `n_paths` unstopped Euler–Maruyama paths run from `x0`
/// for `round(t/Δt)` steps.
pub fn simulate_endpoints(
    system: &SdeSystem,
    x0: &[f64],
    t: f64,
    cfg: &FkConfig,
    purpose: Purpose,
) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    if x0.len() != system.dim_state() {
        return Err(Error::DimensionMismatch {
            context: "start point",
            expected: system.dim_state(),
            got: x0.len(),
        });
    }
    let steps = (t / cfg.dt).round() as usize;
    let sqrt_dt = cfg.dt.sqrt();
    (0..cfg.n_paths)
        .into_par_iter()
        .map(|p| {
            let (stream_id, negate) = cfg.stream_for(p);
            let mut normals = NormalStream::new(cfg.seed, purpose, 0, stream_id, negate);
            let mut ws = Workspace::new(system.dim_state(), system.dim_noise());
            let mut x = x0.to_vec();
            for _ in 0..steps {
                normals.fill(&mut ws.z);
                ws.step(system, &mut x, sqrt_dt, cfg.dt);
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::BlowUp { state: x });
            }
            Ok(x)
        })
        .collect()
}

/// Kernel ridge fit `(K + ηI) α = values` of pointwise estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct KrrFit {
    expansion: KernelExpansion,
    eta: f64,
}

impl KrrFit {
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.expansion.value(x)
    }

    pub fn expansion(&self) -> &KernelExpansion {
        &self.expansion
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// The fitted `h` in the same record layout as a collocation solution
    /// (`gamma` carries η).
    pub fn to_record(&self, eigenpair: &EigenPair, equilibrium: &[f64]) -> SolutionRecord {
        SolutionRecord {
            lengthscale: self.expansion.kernel().lengthscale(),
            lambda: eigenpair.eigenvalue,
            w: eigenpair.left_eigenvector.clone(),
            gamma: self.eta,
            equilibrium: equilibrium.to_vec(),
            grid: self.expansion.centers().to_vec(),
            coefficients: self.expansion.coefficients().to_vec(),
            condition_number: None,
        }
    }
}

pub fn krr_fit(kern: &GaussianKernel, grid: &CollocationGrid, values: &[f64], eta: f64) -> Result<KrrFit> {
    if !(eta > 0.0) {
        return Err(Error::invalid("eta must be positive"));
    }
    let n = grid.len();
    if values.len() != n {
        return Err(Error::DimensionMismatch {
            context: "krr values",
            expected: n,
            got: values.len(),
        });
    }
    let pts = grid.points();
    let mut gram = nalgebra::DMatrix::from_fn(n, n, |i, j| kern.value_unchecked(&pts[i], &pts[j]));
    for i in 0..n {
        gram[(i, i)] += eta;
    }
    let alpha = solve_dense(gram, &DVector::from_column_slice(values))?;
    Ok(KrrFit {
        expansion: KernelExpansion::new(*kern, pts.to_vec(), alpha.iter().copied().collect())?,
        eta,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub n_paths: usize,
    pub value: f64,
    pub std_error: f64,
}

/// Runs the estimator at each path count (same seed, nested streams).
#[allow(clippy::too_many_arguments)]
pub fn mc_convergence_probe(
    system: &SdeSystem,
    decomp: &LinearDecomposition,
    eigenpair: &EigenPair,
    domain: &Domain,
    x: &[f64],
    cfg: &FkConfig,
    path_counts: &[usize],
) -> Result<Vec<ConvergenceRow>> {
    if path_counts.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("path counts must be strictly increasing"));
    }
    path_counts
        .iter()
        .map(|&k| {
            let run = FkConfig {
                n_paths: k,
                ..cfg.clone()
            };
            let est = fk_estimate(system, decomp, eigenpair, domain, x, &run)?;
            Ok(ConvergenceRow {
                n_paths: k,
                value: est.value,
                std_error: est.std_error,
            })
        })
        .collect()
}

/// Least-squares slope of `ln(std_error)` against `ln(K)`.
pub fn loglog_slope(rows: &[ConvergenceRow]) -> f64 {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .map(|r| ((r.n_paths as f64).ln(), r.std_error.ln()))
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}
