//! Verification metrics and the built-in benchmark experiments.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::collocation::{
    default_test_points, make_grid, pde_residual, solve_collocation, CollocationSolution, DiffusionAssembly,
    GridSpec, SolveOutput,
};
use crate::error::{Error, Result};
use crate::feynman_kac::{fk_batch, simulate_endpoints, FkConfig};
use crate::kernel::GaussianKernel;
use crate::registry::{ModelSetup, ModelSpec};
use crate::rng::Purpose;
use crate::sde_model::{cartesian, left_eigenpair, linspace, Domain, EigenPair, EigenSelector, LinearDecomposition, ScalarField, SdeSystem};
use crate::stats::SampleStats;
use crate::text::{csv_field, format_float};

pub const EXPERIMENTS: [&str; 4] = ["test1_ou", "test2_quadratic", "test3_linear2d", "langevin_demo"];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SemigroupResult {
    pub relative_error: f64,
    pub mc_mean: f64,
    pub prediction: f64,
    /// Standard error of `mc_mean`.
    pub std_error: f64,
}

/// Compares the Monte Carlo mean of `φ(X_t)` with `e^{λt} φ(x₀)`.
///
/// Paths run the full horizon `t` without exit stopping.
pub fn semigroup_check(
    system: &SdeSystem,
    phi: &(dyn Fn(&[f64]) -> f64 + Sync),
    lambda: f64,
    x0: &[f64],
    t: f64,
    cfg: &FkConfig,
) -> Result<SemigroupResult> {
    if !(t >= cfg.dt) {
        return Err(Error::invalid("semigroup horizon must be at least dt"));
    }
    let phi0 = phi(x0);
    if phi0 == 0.0 || !phi0.is_finite() {
        return Err(Error::DegenerateStart { x0: x0.to_vec() });
    }
    let ends = simulate_endpoints(system, x0, t, cfg, Purpose::Semigroup)?;
    let values: Vec<f64> = ends.iter().map(|x| phi(x)).collect();
    let stats = SampleStats::from_samples(&values);
    let prediction = (lambda * t).exp() * phi0;
    Ok(SemigroupResult {
        relative_error: (stats.mean - prediction).abs() / prediction.abs(),
        mc_mean: stats.mean,
        prediction,
        std_error: stats.std_error,
    })
}

pub fn rmse_vs_exact(phi: &dyn Fn(&[f64]) -> f64, exact: &dyn Fn(&[f64]) -> f64, test_points: &[Vec<f64>]) -> f64 {
    if test_points.is_empty() {
        return 0.0;
    }
    let sum: f64 = test_points.iter().map(|x| (phi(x) - exact(x)).powi(2)).sum();
    (sum / test_points.len() as f64).sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundaryStability {
    pub max_interior_diff: f64,
    pub boundary_diff: f64,
    /// Largest pooled standard error over the probes.
    pub pooled_std_error: f64,
    pub holds: bool,
    /// Some probe had every path capped under either boundary datum.
    pub inconclusive: bool,
}

/// Interior Feynman–Kac difference under two boundary data, estimated with
/// common random numbers, against the boundary sup-difference.
#[allow(clippy::too_many_arguments)]
pub fn boundary_stability_check(
    system: &SdeSystem,
    decomp: &LinearDecomposition,
    eigenpair_pos: &EigenPair,
    domain: &Domain,
    psi_a: ScalarField,
    psi_b: ScalarField,
    probe_points: &[Vec<f64>],
    cfg: &FkConfig,
) -> Result<BoundaryStability> {
    if !(eigenpair_pos.eigenvalue > 0.0) {
        return Err(Error::invalid("boundary stability needs a positive rate"));
    }
    let boundary_diff = domain
        .boundary_samples(64)
        .iter()
        .map(|x| (psi_a(x) - psi_b(x)).abs())
        .fold(0.0, f64::max);
    let dom_a = domain.clone().with_boundary_value(psi_a);
    let dom_b = domain.clone().with_boundary_value(psi_b);
    let est_a = fk_batch(system, decomp, eigenpair_pos, &dom_a, probe_points, cfg);
    let est_b = fk_batch(system, decomp, eigenpair_pos, &dom_b, probe_points, cfg);

    let mut out = BoundaryStability {
        max_interior_diff: 0.0,
        boundary_diff,
        pooled_std_error: 0.0,
        holds: true,
        inconclusive: false,
    };
    for (a, b) in est_a.into_iter().zip(est_b) {
        let (a, b) = (a?, b?);
        let diff = (a.value - b.value).abs();
        let pooled = (a.std_error.powi(2) + b.std_error.powi(2)).sqrt();
        out.max_interior_diff = out.max_interior_diff.max(diff);
        out.pooled_std_error = out.pooled_std_error.max(pooled);
        out.holds &= diff <= boundary_diff + 4.0 * pooled;
        out.inconclusive |= a.capped_dominated() || b.capped_dominated();
    }
    Ok(out)
}

/// Points at which PDE residuals, `max|h|` and the RMSE are measured.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ResidualPoints {
    /// The domain inset by 5% (200 points in 1D, 20 per axis otherwise).
    #[default]
    Inset,
    /// A tensor grid on an explicit window (may extend past the domain).
    Window {
        lower: Vec<f64>,
        upper: Vec<f64>,
        per_axis: usize,
    },
}

impl ResidualPoints {
    pub fn points(&self, domain: &Domain) -> Result<Vec<Vec<f64>>> {
        match self {
            ResidualPoints::Inset => Ok(default_test_points(domain)),
            ResidualPoints::Window { lower, upper, per_axis } => {
                if lower.len() != domain.dim() || upper.len() != domain.dim() {
                    return Err(Error::DimensionMismatch {
                        context: "residual window",
                        expected: domain.dim(),
                        got: lower.len().min(upper.len()),
                    });
                }
                if *per_axis < 2 || lower.iter().zip(upper).any(|(l, u)| !(l < u)) {
                    return Err(Error::invalid("residual window needs lower < upper and at least 2 points per axis"));
                }
                let axes: Vec<Vec<f64>> = lower.iter().zip(upper).map(|(l, u)| linspace(*l, *u, *per_axis)).collect();
                Ok(cartesian(&axes))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SemigroupConfig {
    /// Start point; 1.0 in each of the first two coordinates when unset
    /// (`1.0` in 1D, `(1.0, 0.5)` in 2D).
    pub x0: Option<Vec<f64>>,
    pub t: f64,
}

impl Default for SemigroupConfig {
    fn default() -> Self {
        Self { x0: None, t: 0.5 }
    }
}

impl SemigroupConfig {
    pub fn start_point(&self, dim: usize) -> Vec<f64> {
        self.x0.clone().unwrap_or_else(|| match dim {
            1 => vec![1.0],
            _ => {
                let mut x = vec![0.0; dim];
                x[0] = 1.0;
                x[1] = 0.5;
                x
            }
        })
    }
}

/// Everything needed to run the collocation pipeline and its metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub label: String,
    pub model: ModelSpec,
    pub lengthscale: f64,
    pub grid: GridSpec,
    pub gamma: f64,
    /// Overrides the registry's eigenvalue choice.
    pub lambda_select: Option<EigenSelector>,
    pub assembly: DiffusionAssembly,
    pub residual_points: ResidualPoints,
    pub semigroup: SemigroupConfig,
    pub fk: FkConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            label: "ou".into(),
            model: ModelSpec::Ou { theta: 1.0, sigma: 0.5 },
            lengthscale: 1.0,
            grid: GridSpec::Uniform1d(40),
            gamma: 1e-4,
            lambda_select: None,
            assembly: DiffusionAssembly::Trace,
            residual_points: ResidualPoints::Inset,
            semigroup: SemigroupConfig::default(),
            fk: FkConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn setup(&self) -> Result<ModelSetup> {
        let setup = self.model.build().map_err(Error::at("model"))?;
        match self.lambda_select {
            None => Ok(setup),
            Some(sel) => {
                let pair = left_eigenpair(&setup.decomposition, sel).map_err(Error::at("eigenpair"))?;
                Ok(setup.with_eigenpair(pair))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub label: String,
    pub condition_number: f64,
    pub pde_residual_mean: f64,
    pub pde_residual_max: f64,
    /// Semigroup relative error in percent.
    pub semigroup_error: f64,
    pub rmse_vs_exact: Option<f64>,
    pub max_abs_h: f64,
    pub config_echo: ExperimentConfig,
}

pub struct PipelineOutput {
    pub setup: ModelSetup,
    pub solve: SolveOutput,
    pub report: ExperimentReport,
}

impl PipelineOutput {
    pub fn solution(&self) -> &CollocationSolution {
        &self.solve.solution
    }
}

/// Grid → assemble → solve → metrics for one configuration.
pub fn run_pipeline(cfg: &ExperimentConfig) -> Result<PipelineOutput> {
    let setup = cfg.setup()?;
    let kern = GaussianKernel::new(cfg.lengthscale).map_err(Error::at("kernel"))?;
    let grid = make_grid(&setup.domain, cfg.grid).map_err(Error::at("grid"))?;
    let solve = solve_collocation(
        &setup.system,
        &setup.decomposition,
        &setup.eigenpair,
        &kern,
        &grid,
        cfg.gamma,
        cfg.assembly,
    )
    .map_err(Error::at("collocation"))?;
    let sol = &solve.solution;

    let test_points = cfg.residual_points.points(&setup.domain).map_err(Error::at("residual points"))?;
    let residual = pde_residual(sol, &setup.system, &test_points);
    let max_abs_h = test_points.iter().map(|x| sol.eval_h(x).abs()).fold(0.0, f64::max);
    let rmse = setup
        .exact_phi
        .as_ref()
        .map(|exact| rmse_vs_exact(&|x| sol.eval_phi(x), exact.as_ref(), &test_points));

    let x0 = cfg.semigroup.start_point(setup.domain.dim());
    let semigroup = semigroup_check(
        &setup.system,
        &|x| sol.eval_phi(x),
        setup.eigenpair.eigenvalue,
        &x0,
        cfg.semigroup.t,
        &cfg.fk,
    )
    .map_err(Error::at("semigroup check"))?;

    let report = ExperimentReport {
        label: cfg.label.clone(),
        condition_number: solve.condition_number,
        pde_residual_mean: residual.mean,
        pde_residual_max: residual.max,
        semigroup_error: 100.0 * semigroup.relative_error,
        rmse_vs_exact: rmse,
        max_abs_h,
        config_echo: cfg.clone(),
    };
    Ok(PipelineOutput { setup, solve, report })
}

/// Quadratic-model configurations, one per σ, sorted by σ.
pub fn sweep_configs(sigmas: &[f64], base: &ExperimentConfig) -> Result<Vec<ExperimentConfig>> {
    if sigmas.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
        return Err(Error::invalid("sigmas must be nonnegative"));
    }
    let mut sorted = sigmas.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted
        .into_iter()
        .map(|sigma| ExperimentConfig {
            label: format!("quadratic sigma={sigma}"),
            model: ModelSpec::Quadratic { sigma },
            ..base.clone()
        })
        .collect())
}

/// Full pipeline per σ on the quadratic model; a failing row does not stop
/// the others.
pub fn conditioning_sweep(sigmas: &[f64], base: &ExperimentConfig) -> Result<Vec<Result<ExperimentReport>>> {
    Ok(sweep_configs(sigmas, base)?
        .iter()
        .map(|c| run_pipeline(c).map(|o| o.report))
        .collect())
}

/// Settings shared by all built-in experiments.
#[derive(Clone, Debug, PartialEq)]
pub struct Overrides {
    pub seed: u64,
    pub n_paths: usize,
}

impl Default for Overrides {
    fn default() -> Self {
        Self {
            seed: 0,
            n_paths: 20_000,
        }
    }
}

/// The registered experiment settings for a model family (lengthscale,
/// grid, assembly, residual points), with `fk` as given.
pub fn default_config_for(model: ModelSpec, fk: FkConfig) -> ExperimentConfig {
    let base = ExperimentConfig {
        label: model.name().into(),
        model,
        fk,
        ..ExperimentConfig::default()
    };
    match model {
        ModelSpec::Ou { .. } => base,
        ModelSpec::Quadratic { .. } => ExperimentConfig {
            lengthscale: 0.8,
            grid: GridSpec::Uniform1d(50),
            residual_points: ResidualPoints::Window {
                lower: vec![-1.5],
                upper: vec![1.5],
                per_axis: 100,
            },
            ..base
        },
        ModelSpec::Linear2d => ExperimentConfig {
            grid: GridSpec::Tensor(15),
            ..base
        },
        ModelSpec::Langevin { .. } => ExperimentConfig {
            grid: GridSpec::Tensor(15),
            assembly: DiffusionAssembly::VectorFields,
            ..base
        },
    }
}

pub fn experiment_configs(name: &str, overrides: &Overrides) -> Result<Vec<ExperimentConfig>> {
    let fk = FkConfig {
        seed: overrides.seed,
        n_paths: overrides.n_paths,
        ..FkConfig::default()
    };
    match name {
        "test1_ou" => Ok(vec![default_config_for(ModelSpec::Ou { theta: 1.0, sigma: 0.5 }, fk)]),
        "test2_quadratic" => sweep_configs(&[0.0, 0.3, 0.5], &default_config_for(ModelSpec::Quadratic { sigma: 0.0 }, fk)),
        "test3_linear2d" => Ok(vec![default_config_for(ModelSpec::Linear2d, fk)]),
        "langevin_demo" => Ok(vec![default_config_for(ModelSpec::Langevin { gamma: 3.0, beta: 1.0 }, fk)]),
        other => Err(Error::Unknown {
            kind: "experiment",
            name: other.to_string(),
        }),
    }
}

pub fn run_experiment(name: &str, overrides: &Overrides) -> Result<Vec<ExperimentReport>> {
    experiment_configs(name, overrides)?
        .iter()
        .map(|c| run_pipeline(c).map(|o| o.report))
        .collect()
}

/// Report columns after `label`, in output order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Cond,
    PdeResMean,
    SemigroupErrorPct,
    Rmse,
    MaxAbsH,
}

impl Metric {
    pub const ALL: [Metric; 5] = [
        Metric::Cond,
        Metric::PdeResMean,
        Metric::SemigroupErrorPct,
        Metric::Rmse,
        Metric::MaxAbsH,
    ];

    pub fn column(self) -> &'static str {
        match self {
            Metric::Cond => "cond",
            Metric::PdeResMean => "pde_res_mean",
            Metric::SemigroupErrorPct => "semigroup_error_pct",
            Metric::Rmse => "rmse",
            Metric::MaxAbsH => "max_abs_h",
        }
    }

    fn value(self, r: &ExperimentReport) -> Option<f64> {
        match self {
            Metric::Cond => Some(r.condition_number),
            Metric::PdeResMean => Some(r.pde_residual_mean),
            Metric::SemigroupErrorPct => Some(r.semigroup_error),
            Metric::Rmse => r.rmse_vs_exact,
            Metric::MaxAbsH => Some(r.max_abs_h),
        }
    }
}

pub const REPORT_CSV_HEADER: &str = "label,cond,pde_res_mean,semigroup_error_pct,rmse,max_abs_h";

/// One CSV row per report; an absent RMSE is an empty field.
pub fn reports_to_csv(reports: &[ExperimentReport]) -> String {
    reports_to_csv_with(reports.iter().map(Ok), &Metric::ALL)
}

/// Full column layout; metrics not in `keep` and failed rows leave their
/// fields empty.
pub fn reports_to_csv_with<'a>(
    rows: impl IntoIterator<Item = std::result::Result<&'a ExperimentReport, &'a str>>,
    keep: &[Metric],
) -> String {
    let mut out = String::from(REPORT_CSV_HEADER);
    out.push('\n');
    for row in rows {
        match row {
            Ok(r) => {
                out.push_str(&csv_field(&r.label));
                for m in Metric::ALL {
                    out.push(',');
                    if keep.contains(&m) {
                        if let Some(v) = m.value(r) {
                            out.push_str(&format_float(v));
                        }
                    }
                }
            }
            Err(label) => {
                out.push_str(&csv_field(label));
                out.push_str(",,,,,");
            }
        }
        out.push('\n');
    }
    out
}

pub fn reports_table(reports: &[ExperimentReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<22} {:>12} {:>14} {:>12} {:>12} {:>12}",
        "test", "cond", "pde residual", "semigroup %", "rmse", "max |h|"
    );
    for r in reports {
        let rmse = r.rmse_vs_exact.map(|v| format!("{v:.3e}")).unwrap_or_else(|| "-".into());
        let _ = writeln!(
            out,
            "{:<22} {:>12.3e} {:>14.3e} {:>12.2} {:>12} {:>12.3e}",
            r.label, r.condition_number, r.pde_residual_mean, r.semigroup_error, rmse, r.max_abs_h
        );
    }
    out
}

/// One acceptance band and its outcome.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Band {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn band(name: impl Into<String>, passed: bool, detail: String) -> Band {
    Band {
        name: name.into(),
        passed,
        detail,
    }
}

/// `value` within a factor of 3 of `target`.
pub fn within_factor(value: f64, target: f64, factor: f64) -> bool {
    value.is_finite() && value >= target / factor && value <= target * factor
}

fn exact_row_bands(prefix: &str, r: &ExperimentReport, cond_ref: f64, check_h: bool) -> Vec<Band> {
    let rmse = r.rmse_vs_exact.unwrap_or(f64::NAN);
    let mut out = vec![
        band(format!("{prefix} rmse <= 1e-12"), rmse <= 1e-12, format!("{rmse:e}")),
        band(
            format!("{prefix} residual <= 1e-12"),
            r.pde_residual_mean <= 1e-12,
            format!("{:e}", r.pde_residual_mean),
        ),
        band(
            format!("{prefix} cond within x3 of {cond_ref:e}"),
            within_factor(r.condition_number, cond_ref, 3.0),
            format!("{:e}", r.condition_number),
        ),
        band(
            format!("{prefix} semigroup <= 10%"),
            r.semigroup_error <= 10.0,
            format!("{:.3}%", r.semigroup_error),
        ),
    ];
    if check_h {
        out.insert(1, band(format!("{prefix} max|h| <= 1e-12"), r.max_abs_h <= 1e-12, format!("{:e}", r.max_abs_h)));
    }
    out
}

pub const QUADRATIC_COND_REF: [f64; 3] = [3.79e6, 1.51e6, 1.03e6];
pub const QUADRATIC_RESIDUAL_REF: [f64; 3] = [1.23e-1, 1.80e-2, 1.51e-2];

/// Acceptance bands for a built-in experiment's reports.
pub fn check_bands(name: &str, reports: &[ExperimentReport]) -> Result<Vec<Band>> {
    let expect = |n: usize| {
        if reports.len() == n {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                context: "experiment rows",
                expected: n,
                got: reports.len(),
            })
        }
    };
    match name {
        "test1_ou" => {
            expect(1)?;
            Ok(exact_row_bands("ou", &reports[0], 9.91e5, true))
        }
        "test3_linear2d" => {
            expect(1)?;
            Ok(exact_row_bands("linear2d", &reports[0], 1.30e7, false))
        }
        "test2_quadratic" => {
            expect(3)?;
            let conds: Vec<f64> = reports.iter().map(|r| r.condition_number).collect();
            let mut out = vec![band(
                "quadratic cond strictly decreasing in sigma",
                conds[0] > conds[1] && conds[1] > conds[2],
                format!("{conds:?}"),
            )];
            for (i, r) in reports.iter().enumerate() {
                out.push(band(
                    format!("{} cond within x3 of {:e}", r.label, QUADRATIC_COND_REF[i]),
                    within_factor(r.condition_number, QUADRATIC_COND_REF[i], 3.0),
                    format!("{:e}", r.condition_number),
                ));
                out.push(band(
                    format!("{} residual within x3 of {:e}", r.label, QUADRATIC_RESIDUAL_REF[i]),
                    within_factor(r.pde_residual_mean, QUADRATIC_RESIDUAL_REF[i], 3.0),
                    format!("{:e}", r.pde_residual_mean),
                ));
                out.push(band(
                    format!("{} semigroup <= 10%", r.label),
                    r.semigroup_error <= 10.0,
                    format!("{:.3}%", r.semigroup_error),
                ));
            }
            out.push(band(
                "quadratic residual(sigma=0.3) < residual(sigma=0)",
                reports[1].pde_residual_mean < reports[0].pde_residual_mean,
                format!("{:e} vs {:e}", reports[1].pde_residual_mean, reports[0].pde_residual_mean),
            ));
            Ok(out)
        }
        other => Err(Error::Unknown {
            kind: "experiment with acceptance bands",
            name: other.to_string(),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    fn quick(n_paths: usize) -> Overrides {
        Overrides { seed: 7, n_paths }
    }

    #[test]
    fn ou_semigroup_matches_closed_form_mean() {
        let ou = ModelSpec::Ou { theta: 1.0, sigma: 0.5 }.build().unwrap();
        let cfg = FkConfig { n_paths: 20_000, seed: 1, ..FkConfig::default() };
        let r = semigroup_check(&ou.system, &|x| x[0], -1.0, &[1.0], 0.5, &cfg).unwrap();
        assert_eq!(r.prediction, (-0.5f64).exp());
        assert!((r.mc_mean - r.prediction).abs() <= 4.0 * r.std_error);
    }

    #[test]
    fn one_step_semigroup_has_small_bias() {
        let q = ModelSpec::Quadratic { sigma: 0.3 }.build().unwrap();
        let cfg = FkConfig { n_paths: 4000, seed: 2, ..FkConfig::default() };
        let phi = |x: &[f64]| x[0] / (1.0 - 0.3 * x[0]);
        let r = semigroup_check(&q.system, &phi, -1.0, &[0.8], cfg.dt, &cfg).unwrap();
        assert!(r.relative_error <= 0.05, "{}", r.relative_error);
    }

    #[test]
    fn semigroup_rejects_degenerate_start() {
        let ou = ModelSpec::Ou { theta: 1.0, sigma: 0.5 }.build().unwrap();
        let err = semigroup_check(&ou.system, &|x| x[0], -1.0, &[0.0], 0.5, &FkConfig::default()).unwrap_err();
        assert!(matches!(err, Error::DegenerateStart { .. }));
        assert!(err.is_input_error());
    }

    #[test]
    fn rmse_of_identical_functions_is_zero() {
        let pts = vec![vec![0.1], vec![0.5]];
        assert_eq!(rmse_vs_exact(&|x| x[0].sin(), &|x| x[0].sin(), &pts), 0.0);
        assert!((rmse_vs_exact(&|_| 1.0, &|_| 0.0, &pts) - 1.0).abs() < 1e-15);
    }

    fn wide_ou() -> ModelSetup {
        // OU on [−2, 2] with noise strong enough for paths to exit quickly.
        let mut s = ModelSpec::Ou { theta: 1.0, sigma: 1.5 }.build().unwrap();
        s.domain = Domain::cube(1, 2.0).unwrap();
        s
    }

    fn probes() -> Vec<Vec<f64>> {
        linspace(-1.8, 1.8, 10).into_iter().map(|x| vec![x]).collect()
    }

    #[test]
    fn identical_boundary_data_give_zero_difference() {
        let s = wide_ou();
        let pos = EigenPair::new(1.0, vec![1.0]).unwrap();
        let psi: ScalarField = Arc::new(|x| 0.3 * x[0]);
        let cfg = FkConfig { n_paths: 200, seed: 3, ..FkConfig::default() };
        let r = boundary_stability_check(&s.system, &s.decomposition, &pos, &s.domain, psi.clone(), psi, &probes(), &cfg)
            .unwrap();
        assert_eq!(r.max_interior_diff, 0.0);
        assert_eq!(r.boundary_diff, 0.0);
        assert!(r.holds);
    }

    #[test]
    fn constant_shift_is_bounded_by_its_size() {
        let s = wide_ou();
        let pos = EigenPair::new(1.0, vec![1.0]).unwrap();
        let cfg = FkConfig { n_paths: 1000, seed: 4, ..FkConfig::default() };
        let r = boundary_stability_check(
            &s.system,
            &s.decomposition,
            &pos,
            &s.domain,
            Arc::new(|_| 0.0),
            Arc::new(|_| 0.1),
            &probes(),
            &cfg,
        )
        .unwrap();
        assert!((r.boundary_diff - 0.1).abs() < 1e-15);
        assert!(r.max_interior_diff <= 0.1 + 1e-12);
        assert!(r.holds && !r.inconclusive);
    }

    #[test]
    fn boundary_check_needs_positive_rate() {
        let s = wide_ou();
        let r = boundary_stability_check(
            &s.system,
            &s.decomposition,
            &s.eigenpair,
            &s.domain,
            Arc::new(|_| 0.0),
            Arc::new(|_| 0.0),
            &probes(),
            &FkConfig::default(),
        );
        assert!(r.is_err());
    }

    #[test]
    fn residual_windows() {
        let dom = Domain::cube(2, 1.0).unwrap();
        assert_eq!(ResidualPoints::Inset.points(&dom).unwrap().len(), 400);
        let w = ResidualPoints::Window {
            lower: vec![-2.0, -1.0],
            upper: vec![2.0, 1.0],
            per_axis: 5,
        };
        let pts = w.points(&dom).unwrap();
        assert_eq!(pts.len(), 25);
        assert_eq!(pts[0], vec![-2.0, -1.0]);
        let bad = ResidualPoints::Window {
            lower: vec![0.0],
            upper: vec![1.0],
            per_axis: 5,
        };
        assert!(bad.points(&dom).is_err());
    }

    #[test]
    fn empty_sweep_is_empty_and_negative_sigma_rejected() {
        assert!(conditioning_sweep(&[], &default_config_for(ModelSpec::Quadratic { sigma: 0.0 }, FkConfig::default())).unwrap().is_empty());
        assert!(conditioning_sweep(&[-0.1], &default_config_for(ModelSpec::Quadratic { sigma: 0.0 }, FkConfig::default())).is_err());
        let cfgs = sweep_configs(&[0.5, 0.0, 0.3], &default_config_for(ModelSpec::Quadratic { sigma: 0.0 }, FkConfig::default())).unwrap();
        let sig: Vec<String> = cfgs.iter().map(|c| c.label.clone()).collect();
        assert_eq!(sig, ["quadratic sigma=0", "quadratic sigma=0.3", "quadratic sigma=0.5"]);
    }

    #[test]
    fn unknown_experiment() {
        let err = run_experiment("test9", &Overrides::default()).unwrap_err();
        assert!(err.is_input_error());
    }

    #[test]
    fn stage_labels_wrap_pipeline_errors() {
        let cfg = ExperimentConfig {
            gamma: -1.0,
            ..ExperimentConfig::default()
        };
        let err = run_pipeline(&cfg).err().unwrap();
        assert!(err.to_string().starts_with("collocation: "));
        assert!(err.to_string().contains("gamma must be nonnegative"));
        assert!(err.is_input_error());
    }

    #[test]
    fn ou_report_is_exact_and_reproducible() {
        let a = run_experiment("test1_ou", &quick(2000)).unwrap();
        let b = run_experiment("test1_ou", &quick(2000)).unwrap();
        assert_eq!(a, b);
        let r = &a[0];
        assert!(r.rmse_vs_exact.unwrap() <= 1e-12);
        assert!(r.max_abs_h <= 1e-12);
        assert!(r.pde_residual_mean <= 1e-12);
    }

    #[test]
    fn langevin_demo_runs_on_degenerate_noise() {
        let r = &run_experiment("langevin_demo", &quick(500)).unwrap()[0];
        assert!(r.rmse_vs_exact.is_none());
        assert!(r.condition_number.is_finite() && r.condition_number > 1.0);
        assert!(r.pde_residual_mean.is_finite());
    }

    #[test]
    fn masked_csv_blanks_unrequested_metrics() {
        let r = run_experiment("test1_ou", &quick(200)).unwrap();
        let csv = reports_to_csv_with([Ok(&r[0]), Err("broken")], &[Metric::Cond]);
        let lines: Vec<&str> = csv.lines().collect();
        assert!(lines[1].ends_with(",,,,"));
        assert_eq!(lines[2], "broken,,,,,");
    }

    #[test]
    fn bands_pass_on_linear_experiments() {
        for name in ["test1_ou", "test3_linear2d"] {
            let bands = check_bands(name, &run_experiment(name, &quick(2000)).unwrap()).unwrap();
            assert!(bands.iter().all(|b| b.passed), "{bands:?}");
        }
        assert!(check_bands("langevin_demo", &[]).is_err());
        assert!(within_factor(3.0, 1.0, 3.0) && !within_factor(3.01, 1.0, 3.0));
    }

    #[test]
    fn report_csv_layout() {
        let r = run_experiment("test1_ou", &quick(200)).unwrap();
        let csv = reports_to_csv(&r);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), REPORT_CSV_HEADER);
        let row: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(row.len(), 6);
        assert_eq!(row[0], "ou");
        assert_eq!(row[1].parse::<f64>().unwrap(), r[0].condition_number);
        assert!(reports_table(&r).contains("ou"));
    }
}
