use std::fs;
use std::path::{Path, PathBuf};

use koopman_sde::collocation::{make_grid, solve_collocation, CollocationSolution};
use koopman_sde::feynman_kac::{batch_to_csv, fk_batch, krr_fit, FkEstimate};
use koopman_sde::validation::{
    check_bands, conditioning_sweep, reports_table, reports_to_csv, reports_to_csv_with, run_experiment,
    run_pipeline, semigroup_check, Overrides, SemigroupResult,
};
use koopman_sde::text::format_float as num;
use koopman_sde::{Domain, GaussianKernel, ModelSpec};

use crate::config::{ConfigError, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Numerical(String),
    #[error("{0}")]
    Acceptance(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Acceptance(_) => 1,
            CliError::Input(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl From<koopman_sde::Error> for CliError {
    fn from(e: koopman_sde::Error) -> Self {
        if e.is_input_error() {
            CliError::Input(e.to_string())
        } else {
            CliError::Numerical(e.to_string())
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Input(e.to_string())
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;

pub struct Context {
    pub cfg: RunConfig,
    pub out: PathBuf,
}

impl Context {
    fn write(&self, name: &str, contents: &str) -> CliResult {
        fs::create_dir_all(&self.out)
            .map_err(|e| CliError::Input(format!("cannot create {}: {e}", self.out.display())))?;
        let path = self.out.join(name);
        fs::write(&path, contents).map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))?;
        eprintln!("wrote {}", path.display());
        Ok(())
    }

    fn write_json<T: serde::Serialize>(&self, name: &str, value: &T) -> CliResult {
        let mut text = serde_json::to_string_pretty(value).expect("records serialize");
        text.push('\n');
        self.write(name, &text)
    }
}

fn axis(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |i| if i + 1 == n { hi } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 })
}

/// `x,phi,h` on 200 points (1D) or `x1,x2,phi` on a 20×20 grid (2D).
fn eigenfunction_curve(sol: &CollocationSolution, domain: &Domain) -> Option<String> {
    let (lo, hi) = (domain.lower(), domain.upper());
    match domain.dim() {
        1 => {
            let mut out = String::from("x,phi,h\n");
            for x in axis(lo[0], hi[0], 200) {
                out.push_str(&format!("{},{},{}\n", num(x), num(sol.eval_phi(&[x])), num(sol.eval_h(&[x]))));
            }
            Some(out)
        }
        2 => {
            let mut out = String::from("x1,x2,phi\n");
            for x1 in axis(lo[0], hi[0], 20) {
                for x2 in axis(lo[1], hi[1], 20) {
                    out.push_str(&format!("{},{},{}\n", num(x1), num(x2), num(sol.eval_phi(&[x1, x2]))));
                }
            }
            Some(out)
        }
        _ => None,
    }
}

pub fn solve(ctx: &Context) -> CliResult {
    let exp = ctx.cfg.experiment()?;
    let run = run_pipeline(&exp)?;
    ctx.write_json("solution.json", &run.solution().to_record(Some(run.solve.condition_number)))?;
    ctx.write("report.csv", &reports_to_csv_with([Ok(&run.report)], &ctx.cfg.metrics))?;
    if let Some(curve) = eigenfunction_curve(run.solution(), &run.setup.domain) {
        ctx.write("eigenfunction_curve.csv", &curve)?;
    }
    print!("{}", reports_table(std::slice::from_ref(&run.report)));
    Ok(())
}

/// One point per line, comma separated; blank lines and `#` comments are
/// skipped.
pub fn read_queries(path: &Path, domain: &Domain) -> CliResult<Vec<Vec<f64>>> {
    let text =
        fs::read_to_string(path).map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
    parse_queries(&text, domain).map_err(|(line, msg)| CliError::Input(format!("{}:{line}: {msg}", path.display())))
}

fn parse_queries(text: &str, domain: &Domain) -> Result<Vec<Vec<f64>>, (usize, String)> {
    let mut points = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let point = content
            .split(',')
            .map(|f| {
                let f = f.trim();
                f.parse::<f64>().map_err(|_| (line, format!("'{f}' is not a number")))
            })
            .collect::<Result<Vec<f64>, _>>()?;
        if point.len() != domain.dim() {
            return Err((line, format!("expected {} coordinates, got {}", domain.dim(), point.len())));
        }
        if !domain.contains_strictly(&point) {
            return Err((line, format!("{point:?} is not strictly inside the domain")));
        }
        points.push(point);
    }
    if points.is_empty() {
        return Err((0, "no query points".into()));
    }
    Ok(points)
}

/// Prints per-point errors and a summary of capped/overflow flags; returns
/// the number of failed points.
fn report_flags(kind: &str, points: &[Vec<f64>], results: &[koopman_sde::Result<FkEstimate>]) -> usize {
    let (mut failed, mut capped, mut overflow) = (0, 0, 0);
    for (i, (x, r)) in points.iter().zip(results).enumerate() {
        match r {
            Ok(e) => {
                capped += usize::from(e.capped_dominated());
                overflow += usize::from(e.discount_overflow);
            }
            Err(e) => {
                failed += 1;
                eprintln!("error: {kind} {i} {x:?}: {e}");
            }
        }
    }
    let n = points.len();
    if capped > 0 {
        eprintln!("warning: {capped} of {n} {kind} estimates had every path capped; they reflect t_max, not exit times");
    }
    if overflow > 0 {
        eprintln!("warning: {overflow} of {n} {kind} estimates hit the discount magnitude guard");
    }
    failed
}

pub fn fk(ctx: &Context, queries: Option<&Path>, fit: bool) -> CliResult {
    if queries.is_none() && !fit {
        return Err(CliError::Input("fk needs --queries <file>, --fit, or both".into()));
    }
    let exp = ctx.cfg.experiment()?;
    let setup = exp.setup()?;
    let fk_cfg = ctx.cfg.fk_config();
    fk_cfg.validate()?;
    let mut failed = 0;

    if let Some(path) = queries {
        let points = read_queries(path, &setup.domain)?;
        let results = fk_batch(&setup.system, &setup.decomposition, &setup.eigenpair, &setup.domain, &points, &fk_cfg);
        ctx.write("fk_estimates.csv", &batch_to_csv(&points, &results))?;
        failed += report_flags("query", &points, &results);
    }

    if fit {
        let kern = GaussianKernel::new(exp.lengthscale)?;
        let grid = make_grid(&setup.domain, exp.grid)?;
        let nodes = grid.points().to_vec();
        let interior: Vec<Vec<f64>> = nodes.iter().filter(|x| setup.domain.contains_strictly(x)).cloned().collect();
        let mut interior_results =
            fk_batch(&setup.system, &setup.decomposition, &setup.eigenpair, &setup.domain, &interior, &fk_cfg)
                .into_iter();
        // Boundary nodes take the boundary datum directly (τ = 0).
        let results: Vec<koopman_sde::Result<FkEstimate>> = nodes
            .iter()
            .map(|x| {
                if setup.domain.contains_strictly(x) {
                    interior_results.next().expect("one result per interior node")
                } else {
                    Ok(FkEstimate {
                        value: setup.domain.boundary_value(x),
                        std_error: 0.0,
                        n_paths: fk_cfg.n_paths,
                        n_capped: 0,
                        mean_exit_time: None,
                        discount_overflow: false,
                    })
                }
            })
            .collect();
        ctx.write("fk_nodes.csv", &batch_to_csv(&nodes, &results))?;
        let node_failures = report_flags("node", &nodes, &results);
        if node_failures > 0 {
            return Err(CliError::Numerical(format!(
                "kernel ridge fit: {node_failures} node estimates failed"
            )));
        }
        let values: Vec<f64> = results.into_iter().map(|r| r.expect("checked above").value).collect();
        let fitted = krr_fit(&kern, &grid, &values, ctx.cfg.krr_eta)?;
        ctx.write_json("solution.json", &fitted.to_record(&setup.eigenpair, setup.system.equilibrium()))?;
    }

    if failed > 0 {
        return Err(CliError::Numerical(format!("feynman-kac: {failed} query points failed")));
    }
    Ok(())
}

pub const REPRODUCE_TARGETS: [&str; 4] = ["all", "test1", "test2", "test3"];

fn experiments_for(which: &str) -> CliResult<Vec<&'static str>> {
    match which {
        "all" => Ok(vec!["test1_ou", "test2_quadratic", "test3_linear2d"]),
        "test1" => Ok(vec!["test1_ou"]),
        "test2" => Ok(vec!["test2_quadratic"]),
        "test3" => Ok(vec!["test3_linear2d"]),
        other => Err(CliError::Input(format!(
            "unknown test '{other}' (expected one of {})",
            REPRODUCE_TARGETS.join(", ")
        ))),
    }
}

pub fn reproduce(ctx: &Context, which: &str) -> CliResult {
    let names = experiments_for(which)?;
    let overrides = Overrides {
        seed: ctx.cfg.seed,
        n_paths: ctx.cfg.fk.n_paths,
    };
    let mut reports = Vec::new();
    let mut bands = Vec::new();
    for name in names {
        let rows = run_experiment(name, &overrides)?;
        bands.extend(check_bands(name, &rows)?);
        reports.extend(rows);
    }
    ctx.write("summary.csv", &reports_to_csv(&reports))?;
    print!("{}", reports_table(&reports));
    let mut failures = 0;
    for b in &bands {
        println!("{} {} ({})", if b.passed { "PASS" } else { "FAIL" }, b.name, b.detail);
        failures += usize::from(!b.passed);
    }
    if failures > 0 {
        return Err(CliError::Acceptance(format!("{failures} acceptance bands failed")));
    }
    Ok(())
}

pub fn semigroup_curve(ctx: &Context, times: &[f64]) -> CliResult {
    if times.is_empty() {
        return Err(CliError::Input("the time list is empty".into()));
    }
    if times[0] <= 0.0 || times.windows(2).any(|w| w[0] >= w[1]) {
        return Err(CliError::Input("times must be positive and strictly increasing".into()));
    }
    let exp = ctx.cfg.experiment()?;
    let setup = exp.setup()?;
    let kern = GaussianKernel::new(exp.lengthscale)?;
    let grid = make_grid(&setup.domain, exp.grid)?;
    let sol = solve_collocation(
        &setup.system,
        &setup.decomposition,
        &setup.eigenpair,
        &kern,
        &grid,
        exp.gamma,
        exp.assembly,
    )?
    .solution;
    let x0 = exp.semigroup.start_point(setup.domain.dim());
    let fk_cfg = ctx.cfg.fk_config();
    let mut out = String::from("t,mc_mean,prediction,rel_error\n");
    for &t in times {
        let SemigroupResult {
            relative_error,
            mc_mean,
            prediction,
            ..
        } = semigroup_check(&setup.system, &|x| sol.eval_phi(x), setup.eigenpair.eigenvalue, &x0, t, &fk_cfg)?;
        out.push_str(&format!("{},{},{},{}\n", num(t), num(mc_mean), num(prediction), num(relative_error)));
    }
    ctx.write("semigroup_curve.csv", &out)
}

pub fn sweep(ctx: &Context, sigmas: &[f64]) -> CliResult {
    let base = ctx.cfg.experiment_for(ModelSpec::Quadratic { sigma: 0.0 })?;
    let rows = conditioning_sweep(sigmas, &base)?;
    let mut sorted = sigmas.to_vec();
    sorted.sort_by(f64::total_cmp);
    let labels: Vec<String> = sorted.iter().map(|s| format!("quadratic sigma={s}")).collect();
    let mut failed = 0;
    let mut ok = Vec::new();
    for (label, row) in labels.iter().zip(&rows) {
        match row {
            Ok(r) => ok.push(r.clone()),
            Err(e) => {
                failed += 1;
                eprintln!("error: {label}: {e}");
            }
        }
    }
    let csv = reports_to_csv_with(
        labels.iter().zip(&rows).map(|(l, r)| r.as_ref().map_err(|_| l.as_str())),
        &ctx.cfg.metrics,
    );
    ctx.write("sweep.csv", &csv)?;
    print!("{}", reports_table(&ok));
    if failed > 0 {
        return Err(CliError::Numerical(format!("sweep: {failed} rows failed")));
    }
    Ok(())
}
