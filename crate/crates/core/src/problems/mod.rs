//! The three observation models and their shared solver-facing surface.

pub mod cdp;
pub mod csmri;
pub mod masks;
pub mod qis;

use crate::denoise::SIGMA_MAX;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use cdp::{cdp_fidelity_grad, cdp_forward, cdp_init, CdpModel};
pub use csmri::{csmri_forward, csmri_init, csmri_prox, CsMriModel};
pub use masks::{sampling_mask, MaskKind};
pub use qis::{qis_forward, qis_init, qis_prox, QisModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProblemKind {
    CsMri,
    Qis,
    Cdp,
}

impl ProblemKind {
    pub fn name(self) -> &'static str {
        match self {
            ProblemKind::CsMri => "csmri",
            ProblemKind::Qis => "qis",
            ProblemKind::Cdp => "cdp",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "csmri" => Ok(ProblemKind::CsMri),
            "qis" => Ok(ProblemKind::Qis),
            "cdp" => Ok(ProblemKind::Cdp),
            other => Err(Error::invalid(format!("unknown problem kind `{other}`"))),
        }
    }
}

/// One measured instance of an inverse problem: forward operator metadata,
/// the measurement, and everything the solver needs from the data side.
#[derive(Clone, Debug)]
pub enum ObservationModel {
    CsMri(CsMriModel),
    Qis(QisModel),
    Cdp(CdpModel),
}

impl ObservationModel {
    pub fn kind(&self) -> ProblemKind {
        match self {
            ObservationModel::CsMri(_) => ProblemKind::CsMri,
            ObservationModel::Qis(_) => ProblemKind::Qis,
            ObservationModel::Cdp(_) => ProblemKind::Cdp,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        match self {
            ObservationModel::CsMri(m) => m.dims(),
            ObservationModel::Qis(m) => m.dims(),
            ObservationModel::Cdp(m) => m.dims(),
        }
    }

    /// CS-MRI keeps complex optimization variables; the other two are real.
    pub fn state_is_complex(&self) -> bool {
        matches!(self, ObservationModel::CsMri(_))
    }

    /// Problem-specific initial estimate in [0, 1].
    pub fn init_image(&self) -> Result<Tensor> {
        match self {
            ObservationModel::CsMri(m) => csmri_init(m),
            ObservationModel::Qis(m) => qis_init(m),
            ObservationModel::Cdp(m) => cdp_init(m, 30),
        }
    }

    /// Proximal step of the data term with penalty `mu`; for CDP (no fast
    /// prox) this is a single gradient step with step 1/mu.
    pub fn data_prox(&self, v: &Tensor, mu: f64) -> Result<Tensor> {
        match self {
            ObservationModel::CsMri(m) => csmri_prox(v, m, mu),
            ObservationModel::Qis(m) => qis_prox(v, m, mu),
            ObservationModel::Cdp(m) => cdp::cdp_prox_step(v, m, mu),
        }
    }

    pub fn data_grad(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            ObservationModel::CsMri(m) => csmri::csmri_grad(x, m),
            ObservationModel::Qis(m) => qis::qis_grad(x, m),
            ObservationModel::Cdp(m) => cdp_fidelity_grad(x, m),
        }
    }

    pub fn data_objective(&self, x: &Tensor) -> Result<f64> {
        match self {
            ObservationModel::CsMri(m) => csmri::csmri_objective(x, m),
            ObservationModel::Qis(m) => qis::qis_objective(x, m),
            ObservationModel::Cdp(m) => cdp::cdp_objective(x, m),
        }
    }

    /// Whether the forward operator is linear with an available adjoint
    /// (required by the AMP scheme).
    pub fn is_linear(&self) -> bool {
        matches!(self, ObservationModel::CsMri(_))
    }

    pub fn forward_apply(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            ObservationModel::CsMri(m) => csmri::csmri_apply(x, m),
            _ => Err(Error::invalid(format!(
                "{} has no linear forward operator",
                self.kind().name()
            ))),
        }
    }

    pub fn adjoint_apply(&self, z: &Tensor) -> Result<Tensor> {
        match self {
            ObservationModel::CsMri(m) => csmri::csmri_adjoint(z, m),
            _ => Err(Error::invalid(format!(
                "{} has no linear adjoint operator",
                self.kind().name()
            ))),
        }
    }

    /// Measurement grid for linear problems (zeros off-mask).
    pub fn measurement(&self) -> Result<&Tensor> {
        match self {
            ObservationModel::CsMri(m) => Ok(&m.y),
            _ => Err(Error::invalid("measurement grid only defined for CS-MRI")),
        }
    }

    /// Number of measured samples M for the linear problems.
    pub fn measured_count(&self) -> Result<usize> {
        match self {
            ObservationModel::CsMri(m) => Ok(m.mask_count()),
            _ => Err(Error::invalid("measured count only defined for CS-MRI")),
        }
    }

    /// Scalar noise descriptor mapped into [0, SIGMA_MAX] for the observation
    /// encoding: the measurement sigma for CS-MRI, 1/K of the range for QIS,
    /// and the clamped noise ratio for CDP.
    pub fn effective_noise_sigma(&self) -> f64 {
        match self {
            ObservationModel::CsMri(m) => m.noise_sigma.clamp(0.0, SIGMA_MAX),
            ObservationModel::Qis(m) => SIGMA_MAX / m.k.max(1) as f64,
            ObservationModel::Cdp(m) => SIGMA_MAX * m.alpha.clamp(0.0, 1.0),
        }
    }
}
