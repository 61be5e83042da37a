use super::scenario::{Scenario, Step, TransportMode};
use super::validate::{run_suite, ValidationReport};
use super::CliError;
use crate::boundary::BoundaryGrid;
use crate::solver::{
    c_one_estimate, characteristic_form_check, envelope_report, lambda_threshold, solve_backward, solve_forward,
    BackwardReport, EnvelopeReport, FreeFlight, Model, PicardReport, SolverConfig,
};
use crate::spectral::{group_lower_bound_check, spectral_summary, GroupBoundReport, SpectralSummary};
use crate::transport::{
    evolve_mc, evolve_series, stationary_density, McMode, ParticleEnsemble, PhaseDensity, StationaryResult,
};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

pub struct RunOptions {
    pub out: PathBuf,
    /// Overrides the scenario seed.
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    ConfigError,
    RegimeViolation,
    NumericalFailure,
}

impl RunStatus {
    fn of(e: &CliError) -> Self {
        match e.exit_code() {
            2 => RunStatus::ConfigError,
            3 => RunStatus::RegimeViolation,
            _ => RunStatus::NumericalFailure,
        }
    }
}

/// One inequality a run depends on, with the numbers that decide it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeCheck {
    pub name: String,
    pub inequality: String,
    pub measured: f64,
    /// `None` when the inequality is vacuous.
    pub threshold: Option<f64>,
    pub inputs: BTreeMap<String, f64>,
    /// Whether some planned step depends on it.
    pub required: bool,
    pub pass: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckTotals {
    pub passed: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: Step,
    pub ok: bool,
    pub artifacts: Vec<String>,
    pub error: Option<String>,
}

/// Contents of `manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: u32,
    pub name: String,
    pub seed: u64,
    pub status: RunStatus,
    pub error: Option<String>,
    pub exit_code: i32,
    pub scenario: Scenario,
    pub checks: Vec<RegimeCheck>,
    pub check_totals: CheckTotals,
    pub steps: Vec<StepRecord>,
}

#[derive(Debug, Clone, Serialize)]
struct CharacteristicSummary {
    samples: usize,
    mean_residual: f64,
    mean_estimate: f64,
    ratio: f64,
    psi_lower: f64,
    psi_upper: f64,
    psi_bounds_hold: bool,
}

#[derive(Debug, Clone, Serialize)]
struct ForwardDiagnostics {
    t_end: f64,
    c_one: f64,
    segments: Vec<PicardReport>,
    envelope: EnvelopeReport,
    characteristic: CharacteristicSummary,
    checkpoints: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
struct BackwardDiagnostics {
    tau: f64,
    report: BackwardReport,
    /// `‖S_λ(|τ|) f(τ) - p₀‖₁` by a forward re-solve on the same stamps.
    roundtrip_error: Option<f64>,
    roundtrip_note: Option<String>,
    checkpoints: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
struct StationaryDiagnostics {
    result: StationaryResult,
    min_value: f64,
    artifact: String,
}

#[derive(Debug, Clone, Serialize)]
struct SpectralDiagnostics {
    summary: SpectralSummary,
    group: GroupBoundReport,
    x_mu_norm_below_one: bool,
    group_bound_holds: bool,
}

#[derive(Debug, Clone, Serialize)]
struct TransportDiagnostics {
    mode: TransportMode,
    t: f64,
    l1: f64,
    mass: f64,
    min_value: f64,
    spatial_marginal: Vec<f64>,
    speed_marginal: Vec<f64>,
    max_lumped: Option<f64>,
    depth_insufficient: Option<bool>,
    wall_hits: Option<u64>,
    artifact: String,
}

/// Contents of `diagnostics.json`; absent steps are omitted.
#[derive(Debug, Clone, Default, Serialize)]
struct Diagnostics {
    #[serde(skip_serializing_if = "Option::is_none")]
    forward: Option<ForwardDiagnostics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    backward: Option<BackwardDiagnostics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    stationary: Option<StationaryDiagnostics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    spectral: Option<SpectralDiagnostics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    transport: Option<TransportDiagnostics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    validate: Option<ValidationReport>,
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn write_density(out: &Path, rel: &str, p: &PhaseDensity) -> Result<String, CliError> {
    let path = out.join(rel);
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut w = BufWriter::new(fs::File::create(&path)?);
    p.write_csv(&mut w)?;
    w.flush()?;
    Ok(rel.to_string())
}

fn check(
    name: &str,
    inequality: &str,
    measured: f64,
    threshold: Option<f64>,
    inputs: &[(&str, f64)],
    required: bool,
    pass: bool,
) -> RegimeCheck {
    RegimeCheck {
        name: name.into(),
        inequality: inequality.into(),
        measured,
        threshold,
        inputs: inputs.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        required,
        pass,
    }
}

/// The inequalities the planned steps rely on, evaluated before any solve.
fn regime_checks(sc: &Scenario, model: &Model, p0: &PhaseDensity, cfg: &SolverConfig) -> Result<Vec<RegimeCheck>, CliError> {
    let steps = &sc.plan.steps;
    let needs = |s: Step| steps.contains(&s);
    let backward = needs(Step::Backward);
    let spectral = needs(Step::Spectral);
    let forward = needs(Step::Forward);
    let poly = &model.grid.poly;
    let consts = sc.constants()?;
    let omega = sc.model.omega;
    let lambda = cfg.lambda;
    let mut out = Vec::new();

    let xi = poly.xi_min();
    out.push(check(
        "inner_angles",
        "xi_min >= pi/2",
        xi,
        Some(std::f64::consts::FRAC_PI_2),
        &[],
        backward || spectral,
        xi >= std::f64::consts::FRAC_PI_2 - 1e-12,
    ));
    let thr = consts.threshold();
    out.push(check(
        "omega_threshold",
        "omega > 2^(-1/k0)",
        omega,
        Some(thr),
        &[("k0", sc.domain.k0 as f64)],
        backward || spectral,
        omega > thr,
    ));
    out.push(check("omega_below_one", "omega < 1", omega, Some(1.0), &[], backward, omega < 1.0));

    let (p_min, p_max) = (p0.ess_inf(), p0.ess_sup());
    out.push(check(
        "initial_lower_bound",
        "ess inf p0 > 0",
        p_min,
        Some(0.0),
        &[("p_max", p_max)],
        forward && lambda > 0.0,
        p_min > 0.0,
    ));

    if forward {
        let t_end = sc.plan.t_end;
        let dt0 = cfg.t_local / cfg.n_steps as f64;
        let horizon = t_end.max(cfg.t_local);
        let c_one = c_one_estimate(model, dt0, (horizon / dt0).ceil() as usize)?;
        let t1 = crate::solver::segment_length(model, p0, cfg, c_one, cfg.t_local.min(t_end));
        let (threshold, pass) = if lambda == 0.0 {
            (None, true)
        } else {
            let th = lambda_threshold(model, p_min, p_max, t1, c_one);
            (Some(th), lambda < th)
        };
        out.push(check(
            "lambda_local",
            "lambda < (3/4) p_min / (T |h| b (p_max + p_min/2) c1)",
            lambda,
            threshold,
            &[
                ("p_min", p_min),
                ("p_max", p_max),
                ("T", t1),
                ("h_sup", model.h_sup()),
                ("b", model.b),
                ("c_one", c_one),
            ],
            lambda > 0.0,
            pass,
        ));
    }

    if backward {
        let hb = model.h_sup() * model.b_norm();
        let m1 = consts.m1().ok();
        let bound = match m1 {
            Some(m1) => 1.0 / (-m1 + 8.0 * lambda * hb),
            None => 0.5 / (8.0 * lambda * hb),
        };
        let mut inputs = vec![("lambda", lambda), ("h_sup", model.h_sup()), ("b_norm", model.b_norm())];
        if let Some(m1) = m1 {
            inputs.push(("m1", m1));
        }
        let mu = cfg.backward_mu;
        out.push(check(
            "mu_bound",
            "mu < 1 / (-m1 + 8 lambda |h| |B|)",
            mu,
            bound.is_finite().then_some(bound),
            &inputs,
            true,
            mu < bound,
        ));
    }
    Ok(out)
}

fn checkpoint_times(t_end: f64, every: f64) -> Vec<f64> {
    let n = ((t_end / every) - 1e-9).ceil().max(1.0) as usize;
    (1..=n).map(|k| (k as f64 * every).min(t_end)).collect()
}

fn run_forward(sc: &Scenario, model: &Model, p0: &PhaseDensity, cfg: &SolverConfig, seed: u64, out: &Path) -> Result<ForwardDiagnostics, CliError> {
    let t_end = sc.plan.t_end;
    let res = solve_forward(model, p0, t_end, cfg)?;
    let cps = checkpoint_times(t_end, sc.plan.checkpoint_every);
    let mut checkpoints = vec![write_density(out, "checkpoints/forward_0000.csv", p0)?];
    for (k, t) in cps.iter().enumerate() {
        checkpoints.push(write_density(out, &format!("checkpoints/forward_{:04}.csv", k + 1), res.path.at(*t))?);
    }
    let dt_low = cfg.t_local / cfg.n_steps as f64;
    let envelope = envelope_report(model, &res.path, &cps, cfg.lambda, res.c_one, dt_low)?;
    let ch = characteristic_form_check(model, &res.path, cfg.lambda, sc.plan.characteristic_samples, seed)?;
    Ok(ForwardDiagnostics {
        t_end,
        c_one: res.c_one,
        segments: res.segments,
        envelope,
        characteristic: CharacteristicSummary {
            samples: ch.samples.len(),
            mean_residual: ch.mean_residual,
            mean_estimate: ch.mean_estimate,
            ratio: ch.ratio,
            psi_lower: ch.psi_lower,
            psi_upper: ch.psi_upper,
            psi_bounds_hold: ch.psi_bounds_hold,
        },
        checkpoints,
    })
}

fn run_backward(sc: &Scenario, model: &Model, p0: &PhaseDensity, cfg: &SolverConfig, out: &Path) -> Result<BackwardDiagnostics, CliError> {
    let tau = sc.plan.backward_to;
    let consts = sc.constants()?;
    let res = solve_backward(model, p0, tau, cfg, &consts)?;
    let every = sc.plan.checkpoint_every;
    let mut checkpoints = Vec::new();
    let mut k = 0usize;
    loop {
        let t = -(k as f64) * every;
        if t < tau - 1e-9 * every {
            break;
        }
        checkpoints.push(write_density(out, &format!("checkpoints/backward_{k:04}.csv"), res.path.at(t))?);
        k += 1;
    }
    if (tau + (k - 1) as f64 * every).abs() > 1e-9 * every {
        checkpoints.push(write_density(out, &format!("checkpoints/backward_{k:04}.csv"), res.path.first())?);
    }
    // re-solve forward on the backward stamps
    let fwd_cfg = SolverConfig {
        t_local: -tau,
        n_steps: res.report.steps,
        free_flight: FreeFlight::Direct,
        ..cfg.clone()
    };
    let (roundtrip_error, roundtrip_note) = match solve_forward(model, res.path.first(), -tau, &fwd_cfg) {
        Ok(f) => (Some(f.path.last().l1_dist(p0)), None),
        Err(e) => (None, Some(e.to_string())),
    };
    Ok(BackwardDiagnostics { tau, report: res.report, roundtrip_error, roundtrip_note, checkpoints })
}

fn run_stationary(model: &Model, out: &Path) -> Result<StationaryDiagnostics, CliError> {
    let result = stationary_density(model.grid.clone(), &model.transport, None, 1e-10, 100_000)?;
    let artifact = write_density(out, "stationary.csv", &result.density)?;
    Ok(StationaryDiagnostics { min_value: result.density.ess_inf(), result, artifact })
}

fn run_spectral(sc: &Scenario, model: &Model, seed: u64) -> Result<SpectralDiagnostics, CliError> {
    let consts = sc.constants()?;
    let w = sc.grid.wall;
    let bg = Arc::new(BoundaryGrid::new(model.grid.poly.clone(), model.grid.vel.annulus, w.n_s, w.n_phi, w.n_speed)?);
    let summary = spectral_summary(bg, model.profile(), consts)?;
    let t = 0.9 * summary.window_t_max;
    let group = group_lower_bound_check(model.grid.clone(), &model.transport, &consts, t, sc.plan.group_samples, seed, 1e-9)?;
    Ok(SpectralDiagnostics {
        x_mu_norm_below_one: summary.x_mu_norm_at < 1.0,
        group_bound_holds: group.violations.is_empty(),
        summary,
        group,
    })
}

fn run_transport(sc: &Scenario, model: &Model, p0: &PhaseDensity, seed: u64, out: &Path) -> Result<TransportDiagnostics, CliError> {
    let spec = sc.transport;
    let (density, max_lumped, depth_insufficient, wall_hits) = match spec.mode {
        TransportMode::Series => {
            let r = evolve_series(p0, spec.t, &model.transport)?;
            (r.density, Some(r.max_lumped), Some(r.depth_insufficient), None)
        }
        TransportMode::Mc => {
            let mode = McMode::Grid(Arc::new(model.grid.vel.clone()));
            let mut e = ParticleEnsemble::sample(p0, spec.particles, seed, &mode)?;
            let stats = evolve_mc(&mut e, spec.t, &model.transport, &model.grid.poly, &mode)?;
            (e.histogram(model.grid.clone()), None, None, Some(stats.wall_hits))
        }
    };
    let artifact = write_density(out, "transport.csv", &density)?;
    Ok(TransportDiagnostics {
        mode: spec.mode,
        t: spec.t,
        l1: density.l1(),
        mass: density.mass(),
        min_value: density.ess_inf(),
        spatial_marginal: density.spatial_marginal(),
        speed_marginal: density.speed_marginal(),
        max_lumped,
        depth_insufficient,
        wall_hits,
        artifact,
    })
}

/// Runs every planned step, writing `manifest.json`, `diagnostics.json`
/// and the density checkpoints into `opts.out`. A failing required regime
/// check stops the run before any solve. The manifest is written on every
/// outcome except an unreadable scenario.
pub fn run_scenario(sc: &Scenario, opts: &RunOptions) -> Result<Manifest, CliError> {
    sc.validate()?;
    let out = &opts.out;
    fs::create_dir_all(out)?;
    let seed = opts.seed.unwrap_or(sc.seed);
    let mut manifest = Manifest {
        format: 1,
        name: sc.name.clone(),
        seed,
        status: RunStatus::Ok,
        error: None,
        exit_code: 0,
        scenario: sc.clone(),
        checks: Vec::new(),
        check_totals: CheckTotals::default(),
        steps: Vec::new(),
    };
    let fail = |m: &mut Manifest, e: CliError| -> Result<Manifest, CliError> {
        m.status = RunStatus::of(&e);
        m.error = Some(e.to_string());
        m.exit_code = e.exit_code();
        write_json(&out.join("manifest.json"), m)?;
        Err(e)
    };

    let setup = (|| {
        let grid = sc.phase_grid()?;
        let model = sc.model(grid.clone())?;
        let p0 = sc.initial_density(grid);
        let cfg = sc.solver_config();
        let checks = regime_checks(sc, &model, &p0, &cfg)?;
        Ok::<_, CliError>((model, p0, cfg, checks))
    })();
    let (model, p0, cfg, checks) = match setup {
        Ok(s) => s,
        Err(e) => return fail(&mut manifest, e),
    };
    manifest.check_totals = CheckTotals {
        passed: checks.iter().filter(|c| c.pass).count(),
        failed: checks.iter().filter(|c| !c.pass).count(),
    };
    manifest.checks = checks;
    if let Some(c) = manifest.checks.iter().find(|c| c.required && !c.pass) {
        let e = CliError::Regime(format!("{}: {} fails (measured {})", c.name, c.inequality, c.measured));
        return fail(&mut manifest, e);
    }

    let mut diag = Diagnostics::default();
    for &step in &sc.plan.steps {
        let res: Result<Vec<String>, CliError> = match step {
            Step::Forward => run_forward(sc, &model, &p0, &cfg, seed, out).map(|d| {
                let a = d.checkpoints.clone();
                diag.forward = Some(d);
                a
            }),
            Step::Backward => run_backward(sc, &model, &p0, &cfg, out).map(|d| {
                let a = d.checkpoints.clone();
                diag.backward = Some(d);
                a
            }),
            Step::Stationary => run_stationary(&model, out).map(|d| {
                let a = vec![d.artifact.clone()];
                diag.stationary = Some(d);
                a
            }),
            Step::Spectral => run_spectral(sc, &model, seed).map(|d| {
                diag.spectral = Some(d);
                Vec::new()
            }),
            Step::Transport => run_transport(sc, &model, &p0, seed, out).map(|d| {
                let a = vec![d.artifact.clone()];
                diag.transport = Some(d);
                a
            }),
            Step::Validate => run_suite(sc, &model, &p0, seed).map(|d| {
                diag.validate = Some(d);
                Vec::new()
            }),
        };
        match res {
            Ok(artifacts) => manifest.steps.push(StepRecord { step, ok: true, artifacts, error: None }),
            Err(e) => {
                manifest.steps.push(StepRecord { step, ok: false, artifacts: Vec::new(), error: Some(e.to_string()) });
                write_json(&out.join("diagnostics.json"), &diag)?;
                return fail(&mut manifest, e);
            }
        }
    }
    write_json(&out.join("diagnostics.json"), &diag)?;
    write_json(&out.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

/// Output of the `spectral` subcommand.
#[derive(Debug, Clone, Serialize)]
pub struct SpectralCliReport {
    pub omega: f64,
    pub k0: u32,
    pub omega_threshold: f64,
    pub m: Option<f64>,
    pub m1: Option<f64>,
    pub x_mu_norm_at: Option<f64>,
    pub group_lower_bound: f64,
    pub window_t_max: Option<f64>,
    pub group_min_norm: Option<f64>,
    pub pass_flags: BTreeMap<String, bool>,
    pub error: Option<String>,
}

/// `m1`, `‖X_μ‖`, the group bound and its empirical check. Below the `ω`
/// threshold the report is still produced, with the error alongside.
pub fn spectral_report(sc: &Scenario, seed: u64) -> (SpectralCliReport, Option<CliError>) {
    let consts = sc.constants();
    let mut rep = SpectralCliReport {
        omega: sc.model.omega,
        k0: sc.domain.k0,
        omega_threshold: 0.5f64.powf(1.0 / sc.domain.k0.max(1) as f64),
        m: None,
        m1: None,
        x_mu_norm_at: None,
        group_lower_bound: 2.0 * sc.model.omega.powi(sc.domain.k0 as i32) - 1.0,
        window_t_max: None,
        group_min_norm: None,
        pass_flags: BTreeMap::new(),
        error: None,
    };
    let consts = match consts {
        Ok(c) => c,
        Err(e) => {
            rep.error = Some(e.to_string());
            return (rep, Some(e));
        }
    };
    rep.omega_threshold = consts.threshold();
    rep.group_lower_bound = consts.group_lower_bound();
    let above = sc.model.omega > consts.threshold();
    rep.pass_flags.insert("omega_above_threshold".into(), above);
    let run = (|| {
        let grid = sc.phase_grid()?;
        let model = sc.model(grid)?;
        run_spectral(sc, &model, seed)
    })();
    match run {
        Ok(d) => {
            rep.m = Some(d.summary.m);
            rep.m1 = Some(d.summary.m1);
            rep.x_mu_norm_at = Some(d.summary.x_mu_norm_at);
            rep.window_t_max = Some(d.summary.window_t_max);
            rep.group_min_norm = Some(d.group.min_norm);
            rep.pass_flags.insert("x_mu_norm_below_one".into(), d.x_mu_norm_below_one);
            rep.pass_flags.insert("group_bound_holds".into(), d.group_bound_holds);
            (rep, None)
        }
        Err(e) => {
            rep.error = Some(e.to_string());
            (rep, Some(e))
        }
    }
}
