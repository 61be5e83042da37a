use super::run::{write_json, Manifest, RunStatus};
use super::CliError;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::fs;
use std::path::Path;

/// A measured quantity against its envelope. `margin ≥ 0` means the
/// inequality holds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub kind: String,
    pub t: Option<f64>,
    pub measured: f64,
    pub envelope: f64,
    pub margin: f64,
    pub pass: bool,
}

/// Contents of `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub format: u32,
    pub name: String,
    pub status: RunStatus,
    pub omega_threshold: Option<f64>,
    pub m1: Option<f64>,
    pub measurements: Vec<Measurement>,
    pub passed: usize,
    pub failed: usize,
    pub min_margin: Option<f64>,
    pub validate_passed: Option<usize>,
    pub validate_failed: Option<usize>,
}

fn f(v: &Value) -> Option<f64> {
    v.as_f64()
}

fn push(out: &mut Vec<Measurement>, kind: &str, t: Option<f64>, measured: f64, envelope: f64, margin: f64) {
    out.push(Measurement { kind: kind.into(), t, measured, envelope, margin, pass: margin >= 0.0 })
}

fn measurements(diag: &Value) -> Vec<Measurement> {
    let mut out = Vec::new();
    if let Some(points) = diag.pointer("/forward/envelope/points").and_then(Value::as_array) {
        for p in points {
            let (Some(t), Some(sup), Some(up), Some(inf), Some(low)) =
                (f(&p["t"]), f(&p["ess_sup"]), f(&p["upper"]), f(&p["ess_inf"]), f(&p["lower"]))
            else {
                continue;
            };
            push(&mut out, "forward_upper_envelope", Some(t), sup, up, up - sup);
            push(&mut out, "forward_lower_envelope", Some(t), inf, low, inf - low);
        }
    }
    if let Some(g) = diag.pointer("/backward/report/growth").and_then(Value::as_array) {
        for row in g {
            if let (Some(t), Some(sup), Some(env)) = (f(&row[0]), f(&row[1]), f(&row[2])) {
                push(&mut out, "backward_growth", Some(t), sup, env, env - sup);
            }
        }
    }
    if let Some(s) = diag.get("spectral") {
        if let Some(x) = s.pointer("/summary/x_mu_norm_at").and_then(Value::as_f64) {
            push(&mut out, "x_mu_norm", None, x, 1.0, 1.0 - x);
        }
        if let (Some(t), Some(b), Some(m)) =
            (f(&s["group"]["t"]), f(&s["group"]["bound"]), f(&s["group"]["min_norm"]))
        {
            push(&mut out, "group_lower_bound", Some(t), m, b, m - b);
        }
    }
    out
}

/// Reads `manifest.json` and `diagnostics.json` from a run directory and
/// writes `report.json` next to them.
pub fn emit_report(dir: &Path) -> Result<Report, CliError> {
    let mpath = dir.join("manifest.json");
    let text = fs::read_to_string(&mpath).map_err(|_| CliError::MissingArtifact(mpath.display().to_string()))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| CliError::MissingArtifact(format!("{}: {e}", mpath.display())))?;
    let diag: Value = match fs::read_to_string(dir.join("diagnostics.json")) {
        Ok(t) => serde_json::from_str(&t)?,
        Err(_) => Value::Null,
    };
    let check_value = |name: &str| manifest.checks.iter().find(|c| c.name == name);
    let omega_threshold = check_value("omega_threshold")
        .and_then(|c| c.threshold)
        .or_else(|| diag.pointer("/spectral/summary/omega_threshold").and_then(Value::as_f64));
    let m1 = diag
        .pointer("/spectral/summary/m1")
        .and_then(Value::as_f64)
        .or_else(|| check_value("mu_bound").and_then(|c| c.inputs.get("m1").copied()));
    let ms = measurements(&diag);
    let passed = ms.iter().filter(|m| m.pass).count();
    let report = Report {
        format: 1,
        name: manifest.name.clone(),
        status: manifest.status,
        omega_threshold,
        m1,
        passed,
        failed: ms.len() - passed,
        min_margin: ms.iter().map(|m| m.margin).reduce(f64::min),
        validate_passed: diag.pointer("/validate/passed").and_then(Value::as_u64).map(|v| v as usize),
        validate_failed: diag.pointer("/validate/failed").and_then(Value::as_u64).map(|v| v as usize),
        measurements: ms,
    };
    write_json(&dir.join("report.json"), &report)?;
    Ok(report)
}
