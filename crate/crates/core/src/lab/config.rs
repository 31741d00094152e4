//! Experiment configuration files.
//!
//! A config is a TOML document with the sections `experiment`, `space`,
//! `operator`, `coefficients`, `noise` and `sim`:
//!
//! ```toml
//! [experiment]
//! name = "wave_chain"
//!
//! [operator]
//! family = "damped_wave_chain"
//! m = 4
//! r_q = 1.0
//! r_p = 1.0
//! k = 1.0
//!
//! [coefficients.diffusion]
//! family = "diagonal"
//! scale = 0.3
//! port = true
//!
//! [noise]
//! seed = 7
//!
//! [sim]
//! dt = 1e-3
//! t_end = 5.0
//! n_paths = 10000
//! x0 = [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]
//! ```
//!
//! Validation errors name the offending line whenever the key can be found
//! in the source.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::certificate::BetaMode;
use crate::coefficients::{
    CoefficientSet, Diffusion, DiffusionFamily, Drift, DriftFamily, Jump, JumpFamily, JumpMeasure, MarkDistribution,
};
use crate::error::{Error, Result};
use crate::noise::QWienerSpec;
use crate::simulate::{Model, SimConfig};
use crate::space::{build_damped_wave_chain, BlockOperator, SpaceDecomposition};

/// Environment variable that overrides the config seed.
pub const SEED_ENV: &str = "PHS_SEED";

type Rows = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub space: Option<SpaceSection>,
    pub operator: OperatorSection,
    #[serde(default)]
    pub coefficients: CoefficientsSection,
    #[serde(default)]
    pub noise: NoiseSection,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(skip)]
    source: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<String>,
    /// `sharp`, `remark_bounded` or `remark_skew`.
    #[serde(default = "default_beta_mode")]
    pub beta_mode: String,
    #[serde(default = "default_pairs")]
    pub dissipativity_pairs: usize,
    #[serde(default = "default_lipschitz_pairs")]
    pub lipschitz_pairs: usize,
    /// Times at which the contraction experiment compares marginals in `W2`.
    #[serde(default)]
    pub w2_times: Vec<f64>,
    /// Subsample size for empirical `W2`.
    #[serde(default = "default_w2_samples")]
    pub w2_samples: usize,
    /// Rerun the contraction experiment at `dt / 2`.
    #[serde(default)]
    pub step_halving: bool,
    /// Number of disjoint path blocks averaged by the invariant-measure checks.
    #[serde(default = "default_blocks")]
    pub blocks: usize,
    #[serde(default = "default_selftest_instances")]
    pub selftest_instances: usize,
    #[serde(default = "default_selftest_points")]
    pub selftest_points: usize,
}

fn default_beta_mode() -> String {
    "sharp".into()
}
fn default_pairs() -> usize {
    10_000
}
fn default_lipschitz_pairs() -> usize {
    1_000
}
fn default_w2_samples() -> usize {
    2_000
}
fn default_blocks() -> usize {
    20
}
fn default_selftest_instances() -> usize {
    100
}
fn default_selftest_points() -> usize {
    6
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceSection {
    pub n0: usize,
    pub n1: usize,
}

/// Either a built-in family with its parameters or the four blocks.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_q: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<f64>,
    #[serde(rename = "R0", default, skip_serializing_if = "Option::is_none")]
    pub r0: Option<Rows>,
    #[serde(rename = "R1", default, skip_serializing_if = "Option::is_none")]
    pub r1: Option<Rows>,
    #[serde(rename = "D0", default, skip_serializing_if = "Option::is_none")]
    pub d0: Option<Rows>,
    #[serde(rename = "D1", default, skip_serializing_if = "Option::is_none")]
    pub d1: Option<Rows>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientsSection {
    #[serde(default)]
    pub drift: MapSpec,
    #[serde(default)]
    pub diffusion: MapSpec,
    #[serde(default)]
    pub jump: MapSpec,
}

/// One coefficient: a family name, its data, the port flag and an optional
/// declared Lipschitz constant overriding the analytic one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapSpec {
    #[serde(default = "default_family")]
    pub family: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vector: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<Rows>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrices: Option<Vec<Rows>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
    #[serde(default)]
    pub port: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lipschitz: Option<f64>,
}

fn default_family() -> String {
    "zero".into()
}

impl Default for MapSpec {
    fn default() -> Self {
        Self {
            family: default_family(),
            vector: None,
            matrix: None,
            matrices: None,
            scale: None,
            port: false,
            lipschitz: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    #[serde(default)]
    pub seed: u64,
    /// Square root of the Wiener covariance; identity when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_half: Option<Rows>,
    #[serde(default)]
    pub jump: JumpNoiseSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JumpNoiseSection {
    #[serde(default)]
    pub intensity: f64,
    #[serde(default = "default_mark_dist")]
    pub mark_dist: String,
    #[serde(default)]
    pub params: Vec<f64>,
    #[serde(default = "default_mark_dim")]
    pub mark_dim: usize,
}

fn default_mark_dist() -> String {
    "none".into()
}
fn default_mark_dim() -> usize {
    1
}

impl Default for JumpNoiseSection {
    fn default() -> Self {
        Self {
            intensity: 0.0,
            mark_dist: default_mark_dist(),
            params: Vec::new(),
            mark_dim: default_mark_dim(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_t_end")]
    pub t_end: f64,
    #[serde(default = "default_n_paths")]
    pub n_paths: usize,
    #[serde(default = "default_record_every")]
    pub record_every: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y0: Option<Vec<f64>>,
}

fn default_dt() -> f64 {
    1e-3
}
fn default_t_end() -> f64 {
    1.0
}
fn default_n_paths() -> usize {
    1_000
}
fn default_record_every() -> usize {
    1
}

impl Default for SimSection {
    fn default() -> Self {
        Self {
            dt: default_dt(),
            t_end: default_t_end(),
            n_paths: default_n_paths(),
            record_every: default_record_every(),
            x0: None,
            y0: None,
        }
    }
}

/// Everything an experiment needs, validated and assembled.
#[derive(Debug, Clone)]
pub struct Setup {
    pub name: String,
    pub blocks: BlockOperator<f64>,
    pub model: Model<f64>,
    pub sim: SimConfig<f64>,
    pub x0: DVector<f64>,
    pub y0: DVector<f64>,
    pub beta_mode: BetaMode,
    /// Drift is `c + B x` (zero, constant or linear family).
    pub affine_drift: bool,
    /// Affine drift, additive diffusion and no jumps: the stationary law is
    /// Gaussian.
    pub linear_additive: bool,
    /// No diffusion and no jumps.
    pub deterministic: bool,
}

/// 1-based line of `key = ...` inside `[section]`, or of the section header
/// when `key` is empty.
pub fn locate(source: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    for (i, raw) in source.lines().enumerate() {
        let line = raw.trim();
        if let Some(rest) = line.strip_prefix('[') {
            current = rest.trim_start_matches('[').trim_end_matches(']').trim().to_string();
            if key.is_empty() && current == section {
                return Some(i + 1);
            }
            continue;
        }
        if current == section && !key.is_empty() {
            if let Some(rest) = line.strip_prefix(key) {
                if rest.trim_start().starts_with('=') {
                    return Some(i + 1);
                }
            }
        }
    }
    None
}

fn rows_to_matrix(rows: &Rows) -> std::result::Result<DMatrix<f64>, String> {
    let nr = rows.len();
    let nc = rows.first().map_or(0, Vec::len);
    if nr == 0 || nc == 0 {
        return Err("matrix must be non-empty".into());
    }
    if rows.iter().any(|r| r.len() != nc) {
        return Err("matrix rows have different lengths".into());
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err("matrix entries must be finite".into());
    }
    Ok(DMatrix::from_fn(nr, nc, |i, j| rows[i][j]))
}

impl ExperimentConfig {
    /// Parses and validates a config document.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.source = text.to_string();
        cfg.setup()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// Text the config was parsed from, empty for configs built in code.
    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn seed(&self) -> u64 {
        self.noise.seed
    }

    /// Applies `--seed` (highest priority) or the `PHS_SEED` value.
    pub fn override_seed(&mut self, cli: Option<u64>, env: Option<&str>) -> Result<()> {
        if let Some(s) = cli {
            self.noise.seed = s;
        } else if let Some(text) = env {
            self.noise.seed = text
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV} must be an unsigned integer, got '{text}'")))?;
        }
        Ok(())
    }

    pub fn out_dir(&self) -> PathBuf {
        match &self.experiment.out_dir {
            Some(d) => PathBuf::from(d),
            None => PathBuf::from("out").join(&self.experiment.name),
        }
    }

    fn err(&self, section: &str, key: &str, msg: impl std::fmt::Display) -> Error {
        let line = locate(&self.source, section, key).or_else(|| locate(&self.source, section, ""));
        let field = if key.is_empty() {
            format!("[{section}]")
        } else {
            format!("[{section}] {key}")
        };
        match line {
            Some(n) => Error::Config(format!("line {n}: {field}: {msg}")),
            None => Error::Config(format!("{field}: {msg}")),
        }
    }

    fn matrix(&self, section: &str, key: &str, rows: &Rows) -> Result<DMatrix<f64>> {
        rows_to_matrix(rows).map_err(|m| self.err(section, key, m))
    }

    fn operator(&self) -> Result<BlockOperator<f64>> {
        let op = &self.operator;
        let explicit = [&op.r0, &op.r1, &op.d0, &op.d1];
        match op.family.as_deref() {
            Some("damped_wave_chain") => {
                if explicit.iter().any(|b| b.is_some()) {
                    return Err(self.err("operator", "family", "give either a family or explicit blocks, not both"));
                }
                let m = op.m.ok_or_else(|| self.err("operator", "m", "damped_wave_chain needs m"))?;
                let r_q = op.r_q.unwrap_or(1.0);
                let r_p = op.r_p.unwrap_or(1.0);
                let k = op.k.unwrap_or(1.0);
                for (key, v) in [("r_q", r_q), ("r_p", r_p)] {
                    if !(v >= 0.0) || !v.is_finite() {
                        return Err(self.err("operator", key, format!("damping must be finite and >= 0, got {v}")));
                    }
                }
                if !k.is_finite() {
                    return Err(self.err("operator", "k", "coupling must be finite"));
                }
                build_damped_wave_chain(m, r_q, r_p, k).map_err(|e| self.err("operator", "m", e))
            }
            Some(other) => Err(self.err("operator", "family", format!("unknown operator family '{other}'"))),
            None => {
                let names = ["R0", "R1", "D0", "D1"];
                let mut mats = Vec::with_capacity(4);
                for (name, rows) in names.iter().zip(explicit) {
                    let rows = rows
                        .as_ref()
                        .ok_or_else(|| self.err("operator", "", format!("missing block {name} (or set family)")))?;
                    mats.push(self.matrix("operator", name, rows)?);
                }
                let d1 = mats.pop().expect("four blocks");
                let d0 = mats.pop().expect("four blocks");
                let r1 = mats.pop().expect("four blocks");
                let r0 = mats.pop().expect("four blocks");
                BlockOperator::new(r0, r1, d0, d1).map_err(|e| self.err("operator", "", e))
            }
        }
    }

    fn q_half(&self, n: usize) -> Result<DMatrix<f64>> {
        match &self.noise.q_half {
            None => Ok(DMatrix::identity(n, n)),
            Some(rows) => {
                let q = self.matrix("noise", "q_half", rows)?;
                if q.nrows() != n {
                    return Err(self.err("noise", "q_half", format!("q_half must have {n} rows, has {}", q.nrows())));
                }
                Ok(q)
            }
        }
    }

    fn jump_measure(&self) -> Result<JumpMeasure<f64>> {
        let j = &self.noise.jump;
        let marks = MarkDistribution::from_name(&j.mark_dist, &j.params).map_err(|e| self.err("noise.jump", "mark_dist", e))?;
        JumpMeasure::new(j.intensity, marks, j.mark_dim).map_err(|e| self.err("noise.jump", "intensity", e))
    }

    fn map_matrix(&self, section: &str, spec: &MapSpec) -> Result<DMatrix<f64>> {
        let rows = spec
            .matrix
            .as_ref()
            .ok_or_else(|| self.err(section, "family", format!("family '{}' needs `matrix`", spec.family)))?;
        self.matrix(section, "matrix", rows)
    }

    fn map_vector(&self, section: &str, spec: &MapSpec, n: usize) -> Result<DVector<f64>> {
        let v = spec
            .vector
            .as_ref()
            .ok_or_else(|| self.err(section, "family", format!("family '{}' needs `vector`", spec.family)))?;
        if v.len() != n {
            return Err(self.err(section, "vector", format!("vector must have length {n}, has {}", v.len())));
        }
        Ok(DVector::from_column_slice(v))
    }

    fn coefficients(
        &self,
        space: SpaceDecomposition,
        q_half: &DMatrix<f64>,
        measure: JumpMeasure<f64>,
    ) -> Result<CoefficientSet<f64>> {
        let n = space.dim();
        let c = &self.coefficients;
        let port = |s: &MapSpec| s.port.then_some(&space);

        let sec = "coefficients.drift";
        let family = match c.drift.family.as_str() {
            "zero" => DriftFamily::Zero,
            "constant" => DriftFamily::Constant(self.map_vector(sec, &c.drift, n)?),
            "linear" => DriftFamily::Linear(self.map_matrix(sec, &c.drift)?),
            "saturating" => DriftFamily::Saturating(self.map_matrix(sec, &c.drift)?),
            other => return Err(self.err(sec, "family", format!("unknown drift family '{other}'"))),
        };
        let mut drift = Drift::new(family, n, port(&c.drift)).map_err(|e| self.err(sec, "", e))?;
        if let Some(l) = c.drift.lipschitz {
            drift = drift.with_declared_lipschitz(l).map_err(|e| self.err(sec, "lipschitz", e))?;
        }

        let sec = "coefficients.diffusion";
        let family = match c.diffusion.family.as_str() {
            "zero" => DiffusionFamily::Zero,
            "additive" => DiffusionFamily::Additive(self.map_matrix(sec, &c.diffusion)?),
            "diagonal" => DiffusionFamily::Diagonal(
                c.diffusion
                    .scale
                    .ok_or_else(|| self.err(sec, "family", "family 'diagonal' needs `scale`"))?,
            ),
            "linear" => {
                let ms = c
                    .diffusion
                    .matrices
                    .as_ref()
                    .ok_or_else(|| self.err(sec, "family", "family 'linear' needs `matrices`"))?;
                DiffusionFamily::Linear(ms.iter().map(|m| self.matrix(sec, "matrices", m)).collect::<Result<_>>()?)
            }
            other => return Err(self.err(sec, "family", format!("unknown diffusion family '{other}'"))),
        };
        let mut diffusion = Diffusion::new(family, n, q_half, port(&c.diffusion)).map_err(|e| self.err(sec, "", e))?;
        if let Some(l) = c.diffusion.lipschitz {
            diffusion = diffusion.with_declared_lipschitz(l).map_err(|e| self.err(sec, "lipschitz", e))?;
        }

        let sec = "coefficients.jump";
        let family = match c.jump.family.as_str() {
            "zero" => JumpFamily::Zero,
            "constant" => JumpFamily::Constant(self.map_vector(sec, &c.jump, n)?),
            "additive" => JumpFamily::Additive(self.map_matrix(sec, &c.jump)?),
            "multiplicative" => JumpFamily::Multiplicative(self.map_matrix(sec, &c.jump)?),
            "linear" => JumpFamily::Linear(self.map_matrix(sec, &c.jump)?),
            other => return Err(self.err(sec, "family", format!("unknown jump family '{other}'"))),
        };
        let mut jump = Jump::new(family, n, &measure, port(&c.jump)).map_err(|e| self.err(sec, "", e))?;
        if let Some(l) = c.jump.lipschitz {
            jump = jump.with_declared_lipschitz(l).map_err(|e| self.err(sec, "lipschitz", e))?;
        }

        CoefficientSet::new(space, Arc::new(drift), Arc::new(diffusion), Arc::new(jump), measure)
            .map_err(|e| self.err("coefficients", "", e))
    }

    fn state(&self, key: &str, v: &Option<Vec<f64>>, n: usize) -> Result<Option<DVector<f64>>> {
        match v {
            None => Ok(None),
            Some(v) if v.len() != n => Err(self.err("sim", key, format!("state must have length {n}, has {}", v.len()))),
            Some(v) if v.iter().any(|x| !x.is_finite()) => Err(self.err("sim", key, "state entries must be finite")),
            Some(v) => Ok(Some(DVector::from_column_slice(v))),
        }
    }

    /// Validates every section and assembles the model.
    pub fn setup(&self) -> Result<Setup> {
        if self.experiment.name.trim().is_empty() {
            return Err(self.err("experiment", "name", "name must not be empty"));
        }
        let beta_mode = BetaMode::parse(&self.experiment.beta_mode).map_err(|e| self.err("experiment", "beta_mode", e))?;
        if self.experiment.w2_samples < 1 {
            return Err(self.err("experiment", "w2_samples", "must be >= 1"));
        }
        if self.experiment.blocks < 2 {
            return Err(self.err("experiment", "blocks", "need at least 2 blocks"));
        }
        if self.experiment.w2_times.iter().any(|t| !(*t >= 0.0) || !t.is_finite()) {
            return Err(self.err("experiment", "w2_times", "times must be finite and >= 0"));
        }

        let blocks = self.operator()?;
        let space = blocks.decomposition();
        if let Some(s) = self.space {
            if (s.n0, s.n1) != (space.n0(), space.n1()) {
                return Err(self.err(
                    "space",
                    "",
                    format!(
                        "space is ({}, {}) but the operator has ({}, {})",
                        s.n0,
                        s.n1,
                        space.n0(),
                        space.n1()
                    ),
                ));
            }
        }
        let n = space.dim();
        let q_half = self.q_half(n)?;
        let measure = self.jump_measure()?;
        let coeffs = self.coefficients(space, &q_half, measure)?;
        let affine_drift = matches!(self.coefficients.drift.family.as_str(), "zero" | "constant" | "linear");
        let jumps_inactive = coeffs.jumps_inactive();
        let linear_additive = affine_drift
            && matches!(self.coefficients.diffusion.family.as_str(), "zero" | "additive")
            && jumps_inactive;
        let deterministic = self.coefficients.diffusion.family == "zero" && jumps_inactive;
        let wiener = QWienerSpec::new(q_half).map_err(|e| self.err("noise", "q_half", e))?;
        let model = Model::new(&blocks, coeffs, wiener).map_err(|e| self.err("noise", "", e))?;

        let s = &self.sim;
        let sim = SimConfig {
            dt: s.dt,
            t_end: s.t_end,
            n_paths: s.n_paths,
            seed: self.noise.seed,
            record_every: s.record_every,
        };
        sim.validate().map_err(|e| self.err("sim", "", e))?;
        let x0 = self.state("x0", &s.x0, n)?.unwrap_or_else(|| DVector::zeros(n));
        let y0 = self.state("y0", &s.y0, n)?.unwrap_or_else(|| DVector::zeros(n));

        Ok(Setup {
            name: self.experiment.name.clone(),
            blocks,
            model,
            sim,
            x0,
            y0,
            beta_mode,
            affine_drift,
            linear_additive,
            deterministic,
        })
    }
}
