//! Built-in benchmark models.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sde_model::{
    left_eigenpair, linearize, Domain, EigenPair, EigenSelector, LinearDecomposition, ScalarField,
    SdeSystem, DEFAULT_FD_STEP,
};

/// A model from the registry with its parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    /// `dX = −θX dt + σ dW` on [−2.5, 2.5].
    Ou { theta: f64, sigma: f64 },
    /// `dX = (−X + 0.3X²) dt + σ dW` on [−1.2, 1.2].
    Quadratic { sigma: f64 },
    /// `dX = AX dt + B dW`, A = [[−1, 0.5], [0, −2]], B = diag(0.3, 0.5), on [−1.5, 1.5]².
    Linear2d,
    /// Underdamped Langevin dynamics with V(q) = q²/2 on [−1.5, 1.5]².
    Langevin { gamma: f64, beta: f64 },
}

impl ModelSpec {
    pub const NAMES: [&'static str; 4] = ["ou", "quadratic", "linear2d", "langevin"];

    /// Registry entry with default parameters.
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "ou" => Ok(ModelSpec::Ou { theta: 1.0, sigma: 0.5 }),
            "quadratic" => Ok(ModelSpec::Quadratic { sigma: 0.3 }),
            "linear2d" => Ok(ModelSpec::Linear2d),
            "langevin" => Ok(ModelSpec::Langevin { gamma: 3.0, beta: 1.0 }),
            other => Err(Error::Unknown {
                kind: "model",
                name: other.to_string(),
            }),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ModelSpec::Ou { .. } => "ou",
            ModelSpec::Quadratic { .. } => "quadratic",
            ModelSpec::Linear2d => "linear2d",
            ModelSpec::Langevin { .. } => "langevin",
        }
    }

    pub fn build(&self) -> Result<ModelSetup> {
        match *self {
            ModelSpec::Ou { theta, sigma } => {
                let system = SdeSystem::new(
                    "ou",
                    1,
                    1,
                    Arc::new(move |x, out| out[0] = -theta * x[0]),
                    Arc::new(move |_, out| out[0] = sigma),
                )?
                .with_jacobian(DMatrix::from_element(1, 1, -theta))?;
                let exact: ScalarField = Arc::new(|x| x[0]);
                ModelSetup::assemble(*self, system, Domain::cube(1, 2.5)?, EigenSelector::Slowest, Some(exact))
            }
            ModelSpec::Quadratic { sigma } => {
                let system = SdeSystem::new(
                    "quadratic",
                    1,
                    1,
                    Arc::new(|x, out| out[0] = -x[0] + 0.3 * x[0] * x[0]),
                    Arc::new(move |_, out| out[0] = sigma),
                )?
                .with_jacobian(DMatrix::from_element(1, 1, -1.0))?;
                ModelSetup::assemble(*self, system, Domain::cube(1, 1.2)?, EigenSelector::Slowest, None)
            }
            ModelSpec::Linear2d => {
                let a = DMatrix::from_row_slice(2, 2, &[-1.0, 0.5, 0.0, -2.0]);
                let b = DMatrix::from_row_slice(2, 2, &[0.3, 0.0, 0.0, 0.5]);
                let system = SdeSystem::linear("linear2d", a, b)?;
                let exact: ScalarField = Arc::new(|x| x[0] + 0.5 * x[1]);
                ModelSetup::assemble(
                    *self,
                    system,
                    Domain::cube(2, 1.5)?,
                    EigenSelector::Nearest(-1.0),
                    Some(exact),
                )
            }
            ModelSpec::Langevin { gamma, beta } => {
                if !(gamma > 0.0 && beta > 0.0) {
                    return Err(Error::invalid("langevin friction and inverse temperature must be positive"));
                }
                let noise = (2.0 * gamma / beta).sqrt();
                let system = SdeSystem::new(
                    "langevin",
                    2,
                    1,
                    Arc::new(move |x, out| {
                        out[0] = x[1];
                        out[1] = -x[0] - gamma * x[1];
                    }),
                    Arc::new(move |_, out| {
                        out[0] = 0.0;
                        out[1] = noise;
                    }),
                )?
                .with_jacobian(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, -gamma]))?;
                ModelSetup::assemble(*self, system, Domain::cube(2, 1.5)?, EigenSelector::Slowest, None)
            }
        }
    }
}

/// A fully configured model: system, linearization, eigenpair, domain and
/// (when known) the exact eigenfunction.
#[derive(Clone)]
pub struct ModelSetup {
    pub spec: ModelSpec,
    pub system: SdeSystem,
    pub decomposition: LinearDecomposition,
    pub eigenpair: EigenPair,
    pub domain: Domain,
    pub exact_phi: Option<ScalarField>,
}

impl fmt::Debug for ModelSetup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelSetup")
            .field("spec", &self.spec)
            .field("eigenpair", &self.eigenpair)
            .field("domain", &self.domain)
            .field("has_exact_phi", &self.exact_phi.is_some())
            .finish_non_exhaustive()
    }
}

impl ModelSetup {
    fn assemble(
        spec: ModelSpec,
        system: SdeSystem,
        domain: Domain,
        selector: EigenSelector,
        exact_phi: Option<ScalarField>,
    ) -> Result<Self> {
        domain.check_system(&system)?;
        let decomposition = linearize(&system, DEFAULT_FD_STEP)?;
        let eigenpair = left_eigenpair(&decomposition, selector)?;
        Ok(Self {
            spec,
            system,
            decomposition,
            eigenpair,
            domain,
            exact_phi,
        })
    }

    /// Replaces the eigenpair (e.g. an auxiliary positive discount rate).
    pub fn with_eigenpair(mut self, eigenpair: EigenPair) -> Self {
        self.eigenpair = eigenpair;
        self
    }
}
