//! JSON run configuration.

use std::path::{Path, PathBuf};

use koopman_sde::collocation::DiffusionAssembly;
use koopman_sde::feynman_kac::{FkConfig, DEFAULT_DISCOUNT_GUARD, DEFAULT_DT, DEFAULT_KRR_ETA, DEFAULT_T_MAX};
use koopman_sde::validation::{default_config_for, ExperimentConfig, Metric, ResidualPoints, SemigroupConfig};
use koopman_sde::{EigenSelector, GridSpec, ModelSpec};
use serde::{Deserialize, Deserializer, Serialize};

/// A registry name (`"ou"`) or an inline spec (`{"name": "ou", "theta": 2, "sigma": 0.1}`).
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(untagged)]
pub enum ModelRef {
    Name(String),
    Spec(ModelSpec),
}

impl<'de> Deserialize<'de> for ModelRef {
    fn deserialize<D: Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        // Decode through a JSON value so an inline spec reports its own
        // field errors instead of a generic untagged-enum failure.
        match serde_json::Value::deserialize(de)? {
            serde_json::Value::String(s) => Ok(ModelRef::Name(s)),
            other => ModelSpec::deserialize(other).map(ModelRef::Spec).map_err(serde::de::Error::custom),
        }
    }
}

impl ModelRef {
    pub fn resolve(&self) -> koopman_sde::Result<ModelSpec> {
        match self {
            ModelRef::Name(n) => ModelSpec::by_name(n),
            ModelRef::Spec(s) => Ok(*s),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FkSection {
    pub dt: f64,
    pub n_paths: usize,
    pub t_max: f64,
    pub antithetic: bool,
    pub discount_guard: f64,
}

impl Default for FkSection {
    fn default() -> Self {
        Self {
            dt: DEFAULT_DT,
            n_paths: 20_000,
            t_max: DEFAULT_T_MAX,
            antithetic: false,
            discount_guard: DEFAULT_DISCOUNT_GUARD,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelRef,
    /// Unset: the model's registered lengthscale.
    pub kernel_lengthscale: Option<f64>,
    /// Unset: the model's registered grid.
    pub grid_spec: Option<GridSpec>,
    pub gamma: f64,
    /// Unset: the model's registered eigenvalue choice.
    pub lambda_select: Option<EigenSelector>,
    /// Unset: the model's registered assembly mode.
    pub assembly: Option<DiffusionAssembly>,
    /// Unset: the model's registered residual test points.
    pub residual_points: Option<ResidualPoints>,
    pub semigroup: SemigroupConfig,
    pub fk: FkSection,
    pub krr_eta: f64,
    pub metrics: Vec<Metric>,
    pub output_dir: PathBuf,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelRef::Name("ou".into()),
            kernel_lengthscale: None,
            grid_spec: None,
            gamma: 1e-4,
            lambda_select: None,
            assembly: None,
            residual_points: None,
            semigroup: SemigroupConfig::default(),
            fk: FkSection::default(),
            krr_eta: DEFAULT_KRR_ETA,
            metrics: Metric::ALL.to_vec(),
            output_dir: PathBuf::from("out"),
            seed: 0,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config {path}: {source}")]
    Parse {
        path: PathBuf,
        source: serde_json::Error,
    },
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn fk_config(&self) -> FkConfig {
        FkConfig {
            dt: self.fk.dt,
            n_paths: self.fk.n_paths,
            t_max: self.fk.t_max,
            seed: self.seed,
            antithetic: self.fk.antithetic,
            discount_guard: self.fk.discount_guard,
        }
    }

    /// The pipeline configuration, with unset keys taken from the model's
    /// registered settings.
    pub fn experiment(&self) -> koopman_sde::Result<ExperimentConfig> {
        self.experiment_for(self.model.resolve()?)
    }

    /// As [`RunConfig::experiment`] with `model` in place of the configured one.
    pub fn experiment_for(&self, model: ModelSpec) -> koopman_sde::Result<ExperimentConfig> {
        let defaults = default_config_for(model, self.fk_config());
        Ok(ExperimentConfig {
            lengthscale: self.kernel_lengthscale.unwrap_or(defaults.lengthscale),
            grid: self.grid_spec.unwrap_or(defaults.grid),
            gamma: self.gamma,
            lambda_select: self.lambda_select.or(defaults.lambda_select),
            assembly: self.assembly.unwrap_or(defaults.assembly),
            residual_points: self.residual_points.clone().unwrap_or(defaults.residual_points.clone()),
            semigroup: self.semigroup.clone(),
            ..defaults
        })
    }
}

/// Help text listing every configuration key with its default.
pub fn keys_help() -> String {
    format!(
        "Configuration (JSON, --config). Keys and defaults:\n{}\n\n\
         model: registry name (ou, quadratic, linear2d, langevin) or inline spec,\n  \
         e.g. {{\"name\": \"quadratic\", \"sigma\": 0.5}}.\n\
         kernel_lengthscale, grid_spec, lambda_select, assembly, residual_points:\n  \
         null means the model's registered setting.\n\
         grid_spec: {{\"uniform1d\": n}} | {{\"tensor\": n}} | {{\"sobol\": n}}.\n\
         lambda_select: \"slowest\" | {{\"nearest\": x}} | {{\"index\": i}}.\n\
         assembly: \"trace\" | \"vector_fields\".\n\
         residual_points: \"inset\" | {{\"window\": {{\"lower\": [..], \"upper\": [..], \"per_axis\": n}}}}.\n\
         metrics: subset of cond, pde_res_mean, semigroup_error_pct, rmse, max_abs_h.",
        RunConfig::default().to_json()
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    }

    #[test]
    fn full_config_round_trips() {
        let cfg = RunConfig {
            model: ModelRef::Spec(ModelSpec::Quadratic { sigma: 0.123456789012345 }),
            kernel_lengthscale: Some(0.7),
            grid_spec: Some(GridSpec::Sobol(33)),
            lambda_select: Some(EigenSelector::Nearest(-1.0)),
            assembly: Some(DiffusionAssembly::VectorFields),
            residual_points: Some(ResidualPoints::Window {
                lower: vec![-1.0],
                upper: vec![1.0],
                per_axis: 7,
            }),
            semigroup: SemigroupConfig {
                x0: Some(vec![0.3]),
                t: 0.25,
            },
            metrics: vec![Metric::Cond],
            seed: u64::MAX,
            ..RunConfig::default()
        };
        assert_eq!(RunConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = RunConfig::from_json(r#"{"gama": 1.0}"#).unwrap_err();
        assert!(err.to_string().contains("gama"), "{err}");
        let err = RunConfig::from_json(r#"{"fk": {"paths": 3}}"#).unwrap_err();
        assert!(err.to_string().contains("paths"), "{err}");
        let err = RunConfig::from_json(r#"{"model": {"name": "ou", "theta": 1, "sigma": 1, "mu": 0}}"#).unwrap_err();
        assert!(err.to_string().contains("mu"), "{err}");
    }

    #[test]
    fn model_defaults_fill_unset_keys() {
        let cfg = RunConfig::from_json(r#"{"model": "linear2d"}"#).unwrap();
        let exp = cfg.experiment().unwrap();
        assert_eq!(exp.grid, GridSpec::Tensor(15));
        assert_eq!(exp.lengthscale, 1.0);
        let cfg = RunConfig::from_json(r#"{"model": {"name": "quadratic", "sigma": 0.5}, "kernel_lengthscale": 0.5}"#)
            .unwrap();
        let exp = cfg.experiment().unwrap();
        assert_eq!(exp.lengthscale, 0.5);
        assert_eq!(exp.grid, GridSpec::Uniform1d(50));
        assert!(RunConfig::from_json(r#"{"model": "lorenz"}"#).unwrap().experiment().is_err());
    }

    #[test]
    fn help_lists_every_key() {
        let help = keys_help();
        let value = serde_json::to_value(RunConfig::default()).unwrap();
        for key in value.as_object().unwrap().keys() {
            assert!(help.contains(&format!("\"{key}\"")), "{key}");
        }
    }
}
