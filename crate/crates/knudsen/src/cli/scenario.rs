use super::CliError;
use crate::boundary::{MaxwellProfile, ProfileMode};
use crate::collision::{KernelSpec, Mollifier};
use crate::geometry::{ConvexPolygon, Vec2, VelocityAnnulus};
use crate::solver::{FreeFlight, Model, SolverConfig, WallResolution};
use crate::spectral::SpectralConstants;
use crate::transport::{PhaseDensity, PhaseGrid, TransportParams};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

/// A run configuration, read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub domain: DomainSpec,
    #[serde(default)]
    pub velocity: VelocitySpec,
    pub model: ModelSpec,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub initial: InitialSpec,
    #[serde(default)]
    pub plan: PlanSpec,
    #[serde(default)]
    pub solver: SolverKnobs,
    #[serde(default)]
    pub transport: TransportSpec,
}

fn default_name() -> String {
    "scenario".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    /// Counterclockwise vertex list.
    pub vertices: Vec<[f64; 2]>,
    #[serde(default = "default_k0")]
    pub k0: u32,
}

fn default_k0() -> u32 {
    2
}

impl Default for DomainSpec {
    fn default() -> Self {
        Self {
            vertices: vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
            k0: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VelocitySpec {
    pub v_min: f64,
    pub v_max: f64,
}

impl Default for VelocitySpec {
    fn default() -> Self {
        Self { v_min: 1.0, v_max: 2.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub omega: f64,
    #[serde(default)]
    pub lambda: f64,
    #[serde(default)]
    pub kernel: KernelSpec,
    /// Defaults to `γ = diam / 5`, `‖h_γ‖ = 1`.
    #[serde(default)]
    pub mollifier: Option<Mollifier>,
    #[serde(default = "default_profile")]
    pub profile: ProfileMode,
}

fn default_profile() -> ProfileMode {
    ProfileMode::Constant
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    /// Spatial cells per bounding-box side.
    pub n: usize,
    pub n_theta: usize,
    pub n_speed: usize,
    /// Collision-parameter directions per velocity pair.
    pub n_e: usize,
    pub wall: WallResolution,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            n: 16,
            n_theta: 16,
            n_speed: 2,
            n_e: 8,
            wall: WallResolution::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitialKind {
    Uniform,
    /// `(1 + a cos πx̂ cos πŷ)(1 + b cos θ)` on the bounding box coordinates
    /// `x̂, ŷ ∈ [0, 1]`, normalized.
    #[default]
    Bump,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialSpec {
    pub kind: InitialKind,
    pub amplitude: f64,
    pub velocity_tilt: f64,
}

impl Default for InitialSpec {
    fn default() -> Self {
        Self {
            kind: InitialKind::Bump,
            amplitude: 0.5,
            velocity_tilt: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Step {
    Forward,
    Backward,
    Stationary,
    Spectral,
    Transport,
    Validate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanSpec {
    pub steps: Vec<Step>,
    pub t_end: f64,
    pub checkpoint_every: f64,
    pub backward_to: f64,
    /// Rays sampled by the characteristic-form check.
    pub characteristic_samples: usize,
    /// Random signed data for the group lower bound.
    pub group_samples: usize,
}

impl Default for PlanSpec {
    fn default() -> Self {
        Self {
            steps: vec![Step::Forward],
            t_end: 1.0,
            checkpoint_every: 0.1,
            backward_to: -0.1,
            characteristic_samples: 100,
            group_samples: 20,
        }
    }
}

/// Numerical knobs of the solvers; `λ` comes from the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverKnobs {
    pub t_local: f64,
    pub n_steps: usize,
    pub picard_tol: f64,
    pub max_picard: usize,
    pub regime_fraction: f64,
    pub free_flight: FreeFlight,
    pub backward_mu: f64,
    pub backward_table_step: f64,
    pub laguerre_nodes: usize,
    pub inner_tol: f64,
    pub max_inner: usize,
}

impl Default for SolverKnobs {
    fn default() -> Self {
        let c = SolverConfig::default();
        Self {
            t_local: c.t_local,
            n_steps: c.n_steps,
            picard_tol: c.picard_tol,
            max_picard: c.max_picard,
            regime_fraction: c.regime_fraction,
            free_flight: c.free_flight,
            backward_mu: c.backward_mu,
            backward_table_step: c.backward_table_step,
            laguerre_nodes: c.laguerre_nodes,
            inner_tol: c.inner_tol,
            max_inner: c.max_inner,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TransportMode {
    #[default]
    Series,
    Mc,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransportSpec {
    pub mode: TransportMode,
    pub t: f64,
    pub particles: usize,
    /// Diffuse re-emissions followed per push.
    pub depth: usize,
}

impl Default for TransportSpec {
    fn default() -> Self {
        Self {
            mode: TransportMode::Series,
            t: 0.5,
            particles: 100_000,
            depth: 16,
        }
    }
}

impl Scenario {
    /// The smallest complete scenario: unit square, forward plan.
    pub fn minimal(omega: f64, lambda: f64) -> Self {
        Self {
            name: default_name(),
            seed: 0,
            domain: DomainSpec::default(),
            velocity: VelocitySpec::default(),
            model: ModelSpec {
                omega,
                lambda,
                kernel: KernelSpec::default(),
                mollifier: None,
                profile: ProfileMode::Constant,
            },
            grid: GridSpec::default(),
            initial: InitialSpec::default(),
            plan: PlanSpec::default(),
            solver: SolverKnobs::default(),
            transport: TransportSpec::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let sc: Scenario = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Checks everything that can be checked without building operators.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        let p = &self.plan;
        if self.grid.n == 0 || self.grid.n_theta == 0 || self.grid.n_speed == 0 || self.grid.n_e == 0 {
            return bad("grid sizes must be >= 1".into());
        }
        if !(p.t_end > 0.0 && p.checkpoint_every > 0.0) {
            return bad(format!(
                "plan needs t_end > 0 and checkpoint_every > 0, got {} and {}",
                p.t_end, p.checkpoint_every
            ));
        }
        if p.steps.contains(&Step::Backward) && !(p.backward_to < 0.0) {
            return bad(format!("backward_to must be < 0, got {}", p.backward_to));
        }
        if !(self.transport.t >= 0.0) || self.transport.particles == 0 {
            return bad("transport needs t >= 0 and particles >= 1".into());
        }
        self.solver_config().validate()?;
        Ok(())
    }

    pub fn solver_config(&self) -> SolverConfig {
        let k = &self.solver;
        SolverConfig {
            lambda: self.model.lambda,
            t_local: k.t_local,
            n_steps: k.n_steps,
            picard_tol: k.picard_tol,
            max_picard: k.max_picard,
            regime_fraction: k.regime_fraction,
            free_flight: k.free_flight,
            backward_mu: k.backward_mu,
            backward_table_step: k.backward_table_step,
            laguerre_nodes: k.laguerre_nodes,
            inner_tol: k.inner_tol,
            max_inner: k.max_inner,
        }
    }

    pub fn polygon(&self) -> Result<ConvexPolygon, CliError> {
        Ok(ConvexPolygon::new(self.domain.vertices.iter().map(|v| Vec2::new(v[0], v[1])).collect())?)
    }

    pub fn annulus(&self) -> Result<VelocityAnnulus, CliError> {
        Ok(VelocityAnnulus::new(self.velocity.v_min, self.velocity.v_max)?)
    }

    pub fn transport_params(&self) -> Result<TransportParams, CliError> {
        let profile = MaxwellProfile::from_mode(self.annulus()?, self.model.profile.clone())?;
        let mut p = TransportParams::new(self.model.omega, profile)?;
        p.depth = self.transport.depth;
        Ok(p)
    }

    pub fn phase_grid(&self) -> Result<Arc<PhaseGrid>, CliError> {
        let g = &self.grid;
        let vel = crate::transport::VelocityGrid::new(self.annulus()?, g.n_theta, g.n_speed)?;
        Ok(Arc::new(PhaseGrid::new(self.polygon()?, vel, g.n, g.n)?))
    }

    pub fn model(&self, grid: Arc<PhaseGrid>) -> Result<Model, CliError> {
        let mol = self.model.mollifier.unwrap_or_else(|| Mollifier::default_for(grid.poly.diam()));
        Ok(Model::new(grid, self.transport_params()?, self.model.kernel.clone(), mol, self.grid.n_e)?)
    }

    pub fn constants(&self) -> Result<SpectralConstants, CliError> {
        Ok(SpectralConstants::for_polygon(
            &self.polygon()?,
            self.velocity.v_max,
            self.model.omega,
            self.domain.k0,
        )?)
    }

    pub fn initial_density(&self, grid: Arc<PhaseGrid>) -> PhaseDensity {
        let ini = self.initial;
        match ini.kind {
            InitialKind::Uniform => PhaseDensity::uniform(grid),
            InitialKind::Bump => {
                let (lo, hi) = grid.poly.bbox();
                PhaseDensity::from_fn(grid, |r, v| {
                    let x = (r.x - lo.x) / (hi.x - lo.x);
                    let y = (r.y - lo.y) / (hi.y - lo.y);
                    (1.0 + ini.amplitude * (PI * x).cos() * (PI * y).cos()) * (1.0 + ini.velocity_tilt * v.x / v.norm())
                })
                .normalized()
            }
        }
    }
}
