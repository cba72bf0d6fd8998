//! Experiment configuration: a flat map of dotted keys read from JSON
//! (nested objects are flattened), layered over built-in presets.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use serde_json::{json, Map, Value};

use crate::domain::{Potential, PotentialKind, TorusDomain};
use crate::dynamics::InitialDistribution;
use crate::error::{Error, Result};
use crate::rates::{default_log_sobolev_constant, default_poincare_constant};

pub const PRESETS: [&str; 3] = ["dw1d", "multimodal2d", "exit_fig6"];

/// Every recognised key with its default. `null` means "derived from other keys".
fn defaults() -> BTreeMap<String, Value> {
    let entries = [
        ("preset", Value::Null),
        ("paper_scale", json!(false)),
        ("description", json!("")),
        ("seed", json!(0)),
        ("potential.kind", json!("double_well")),
        ("potential.c", json!(1.0)),
        ("potential.amplitude", json!(1.0)),
        ("potential.coeffs", json!([0.0])),
        ("potential.path", Value::Null),
        ("potential.dim", json!(1)),
        ("potential.period", Value::Null),
        ("dynamics.kind", json!(["langevin", "derivative_free"])),
        ("eps", json!(0.25)),
        ("n_particles", json!(2000)),
        ("dt", json!(1e-3)),
        ("t_final", json!(10.0)),
        ("snapshots.every", json!(0.1)),
        ("snapshots.times", json!([])),
        ("snapshots.particles", Value::Null),
        ("mesh.resolution", Value::Null),
        ("init.kind", json!("uniform")),
        ("init.mean", Value::Null),
        ("init.stddev", json!(0.01)),
        ("rates.c_pi", Value::Null),
        ("rates.c_lsi", Value::Null),
        ("rates.fit_floor", Value::Null),
        ("rates.fpe", json!(false)),
        ("rates.kl_fit_t_min", json!(1.0)),
        ("fpe.resolution", Value::Null),
        ("fpe.t_final", Value::Null),
        ("fpe.snapshot_every", Value::Null),
        ("fpe.max_substeps", json!(50_000_000u64)),
        ("fpe.fit_floor", json!(1e-10)),
        ("exit.a", json!(-PI)),
        ("exit.b", json!(PI)),
        ("exit.x0", json!(0.0)),
        ("exit.hit_tolerance", json!(1e-2)),
        ("exit.eps", json!([0.1, 0.15, 0.2, 0.3, 0.5])),
        ("exit.n_runs", json!(1000)),
        ("exit.dt_langevin", json!(1e-2)),
        ("exit.dt_derivative_free", json!(1e-4)),
        ("exit.t_cap", Value::Null),
        ("exit.quad_points", json!(4000)),
    ];
    entries.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

/// Built-in bundles of settings.
pub fn preset(name: &str, paper_scale: bool) -> Result<ConfigMap> {
    let mut m = ConfigMap::default();
    match name {
        "dw1d" => {
            m.set(
                "description",
                json!(
                    "Double well (x^2 - c)^2 / 80 on [-pi, pi) for c in {1, 5, 9}; eps = 0.25 is an implementer choice"
                ),
            );
            m.set("potential.kind", json!("double_well"));
            m.set("potential.c", json!([1.0, 5.0, 9.0]));
            m.set("dynamics.kind", json!(["langevin", "derivative_free"]));
            m.set("eps", json!(0.25));
            m.set("init.kind", json!("gaussian"));
            m.set("init.mean", json!([-PI / 2.0]));
            m.set("init.stddev", json!(0.01));
            m.set("mesh.resolution", json!(256));
            m.set("snapshots.every", json!(0.1));
            if paper_scale {
                m.set("n_particles", json!(10_000));
                m.set("dt", json!(1e-4));
                m.set("t_final", json!(20.0));
            } else {
                m.set("n_particles", json!(2000));
                m.set("dt", json!(1e-3));
                m.set("t_final", json!(10.0));
            }
        }
        "multimodal2d" => {
            m.set(
                "description",
                json!("Sixteen-mode potential 2 sum sin^2(2 pi (x_i - 0.1)) on [-1, 1)^2 at eps = 0.05"),
            );
            m.set("potential.kind", json!("sine_modes"));
            m.set("dynamics.kind", json!(["langevin", "derivative_free"]));
            m.set("eps", json!(0.05));
            m.set("init.kind", json!("gaussian"));
            m.set("init.mean", json!([-0.2, -0.2]));
            m.set("init.stddev", json!(0.01));
            m.set("mesh.resolution", json!(128));
            m.set("t_final", json!(10.0));
            m.set("snapshots.every", json!(1.0));
            if paper_scale {
                m.set("n_particles", json!(100_000));
                m.set("dt", json!(1e-4));
            } else {
                m.set("n_particles", json!(20_000));
                m.set("dt", json!(1e-3));
            }
        }
        "exit_fig6" => {
            m.set(
                "description",
                json!("Exit from the well of (A / 2)(1 - cos 2x) at 0 through a = -pi or b = pi"),
            );
            m.set("potential.kind", json!("cosine_well"));
            m.set("potential.amplitude", json!(1.0));
            m.set("dynamics.kind", json!(["langevin", "derivative_free"]));
            m.set("exit.a", json!(-PI));
            m.set("exit.b", json!(PI));
            m.set("exit.x0", json!(0.0));
            m.set("exit.hit_tolerance", json!(1e-2));
            m.set("exit.eps", json!([0.1, 0.15, 0.2, 0.3, 0.5]));
            m.set("exit.n_runs", json!(1000));
            m.set("exit.quad_points", json!(4000));
            if paper_scale {
                m.set("exit.dt_langevin", json!(1e-4));
                m.set("exit.dt_derivative_free", json!(1e-4));
            } else {
                m.set("exit.dt_langevin", json!(1e-2));
                m.set("exit.dt_derivative_free", json!(1e-4));
            }
        }
        other => {
            return Err(Error::config(
                "preset",
                format!("unknown preset `{other}`; expected one of {}", PRESETS.join(", ")),
            ))
        }
    }
    m.set("preset", json!(name));
    m.set("paper_scale", json!(paper_scale));
    Ok(m)
}

/// Dotted-key settings.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConfigMap(BTreeMap<String, Value>);

impl ConfigMap {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let value: Value =
            serde_json::from_str(text).map_err(|e| Error::config("config", format!("invalid JSON: {e}")))?;
        let Value::Object(obj) = value else {
            return Err(Error::config("config", "top level must be an object"));
        };
        let mut m = Self::default();
        flatten("", &obj, &mut m.0);
        Ok(m)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::config("config", format!("{}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    pub fn set(&mut self, key: &str, value: Value) {
        self.0.insert(key.to_string(), value);
    }

    /// Parses a `key=value` override; the value is read as JSON, else as a string.
    pub fn set_assignment(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::config(assignment, "expected key=value"))?;
        let value = serde_json::from_str(raw.trim()).unwrap_or_else(|_| Value::String(raw.trim().to_string()));
        self.set(key.trim(), value);
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfigMap) {
        for (k, v) in &other.0 {
            self.0.insert(k.clone(), v.clone());
        }
    }

    pub fn get(&self, key: &str) -> Option<&Value> {
        self.0.get(key).filter(|v| !v.is_null())
    }

    pub fn keys(&self) -> impl Iterator<Item = &String> {
        self.0.keys()
    }

    /// Pretty JSON with one dotted key per line.
    pub fn to_json_pretty(&self) -> String {
        let obj: Map<String, Value> = self.0.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        serde_json::to_string_pretty(&Value::Object(obj)).expect("serializable")
    }

    fn f64(&self, key: &str) -> Result<Option<f64>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v
                .as_f64()
                .filter(|x| x.is_finite())
                .map(Some)
                .ok_or_else(|| Error::config(key, "expected a finite number")),
        }
    }

    fn req_f64(&self, key: &str) -> Result<f64> {
        self.f64(key)?.ok_or_else(|| Error::config(key, "missing value"))
    }

    fn u64(&self, key: &str) -> Result<Option<u64>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v
                .as_u64()
                .or_else(|| {
                    v.as_f64()
                        .filter(|x| x.fract() == 0.0 && *x >= 0.0 && *x < 2f64.powi(64))
                        .map(|x| x as u64)
                })
                .map(Some)
                .ok_or_else(|| Error::config(key, "expected a non-negative integer")),
        }
    }

    fn req_usize(&self, key: &str) -> Result<usize> {
        self.u64(key)?
            .map(|v| v as usize)
            .ok_or_else(|| Error::config(key, "missing value"))
    }

    fn bool(&self, key: &str) -> Result<bool> {
        match self.get(key) {
            None => Ok(false),
            Some(v) => v.as_bool().ok_or_else(|| Error::config(key, "expected true or false")),
        }
    }

    fn string(&self, key: &str) -> Result<Option<String>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v
                .as_str()
                .map(|s| Some(s.to_string()))
                .ok_or_else(|| Error::config(key, "expected a string")),
        }
    }

    /// A number or a list of numbers.
    fn f64_list(&self, key: &str) -> Result<Option<Vec<f64>>> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::Array(items)) => items
                .iter()
                .map(|v| {
                    v.as_f64()
                        .filter(|x| x.is_finite())
                        .ok_or_else(|| Error::config(key, "expected finite numbers"))
                })
                .collect::<Result<Vec<_>>>()
                .map(Some),
            Some(v) => v
                .as_f64()
                .filter(|x| x.is_finite())
                .map(|x| Some(vec![x]))
                .ok_or_else(|| Error::config(key, "expected a number or a list of numbers")),
        }
    }

    /// A string or a list of strings.
    fn str_list(&self, key: &str) -> Result<Vec<String>> {
        match self.get(key) {
            None => Ok(Vec::new()),
            Some(Value::String(s)) => Ok(vec![s.clone()]),
            Some(Value::Array(items)) => items
                .iter()
                .map(|v| {
                    v.as_str()
                        .map(str::to_string)
                        .ok_or_else(|| Error::config(key, "expected strings"))
                })
                .collect(),
            Some(_) => Err(Error::config(key, "expected a string or a list of strings")),
        }
    }
}

fn flatten(prefix: &str, obj: &Map<String, Value>, out: &mut BTreeMap<String, Value>) {
    for (k, v) in obj {
        let key = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match v {
            Value::Object(inner) => flatten(&key, inner, out),
            other => {
                out.insert(key, other.clone());
            }
        }
    }
}

/// Layers defaults, an optional preset, a config file and overrides, in that order.
/// A `preset` named in the file or overrides is loaded beneath them.
pub fn resolve_layers(
    preset_name: Option<&str>,
    paper_scale: bool,
    file: Option<&ConfigMap>,
    overrides: &ConfigMap,
) -> Result<ConfigMap> {
    let mut upper = ConfigMap::default();
    if let Some(f) = file {
        upper.merge(f);
    }
    upper.merge(overrides);
    let name = match preset_name {
        Some(n) => Some(n.to_string()),
        None => upper.string("preset")?,
    };
    let scale = paper_scale || upper.bool("paper_scale")?;
    let mut m = ConfigMap(defaults());
    if let Some(n) = &name {
        m.merge(&preset(n, scale)?);
    }
    m.merge(&upper);
    if let Some(n) = name {
        m.set("preset", json!(n));
    }
    m.set("paper_scale", json!(scale));
    let known = defaults();
    if let Some(bad) = m.keys().find(|k| !known.contains_key(*k)) {
        return Err(Error::config(bad.clone(), "unknown configuration key"));
    }
    Ok(m)
}

#[derive(Clone, Debug, PartialEq)]
pub enum PotentialChoice {
    DoubleWell { c: Vec<f64> },
    SineModes,
    CosineWell { amplitude: f64 },
    Polynomial { coeffs: Vec<f64> },
    Zero,
    GridFile { path: PathBuf },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExitSettings {
    pub a: f64,
    pub b: f64,
    pub x0: f64,
    pub hit_tolerance: f64,
    pub eps: Vec<f64>,
    pub n_runs: usize,
    pub dt_langevin: f64,
    pub dt_derivative_free: f64,
    /// `None` uses `1e6 / eps`.
    pub t_cap: Option<f64>,
    pub quad_points: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FpeSettings {
    pub resolution: usize,
    pub t_final: f64,
    pub snapshot_every: f64,
    pub max_substeps: u64,
    pub fit_floor: f64,
}

/// Fully resolved and validated settings.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub preset: Option<String>,
    pub paper_scale: bool,
    pub description: String,
    pub seed: u64,
    pub potential: PotentialChoice,
    pub dim: usize,
    pub period: f64,
    pub dynamics: Vec<String>,
    pub eps: f64,
    pub n_particles: usize,
    pub dt: f64,
    pub t_final: f64,
    pub snapshot_every: f64,
    pub snapshot_times: Vec<f64>,
    pub particle_snapshot_times: Vec<f64>,
    pub resolution: usize,
    pub init: InitialDistribution<f64>,
    pub c_pi: f64,
    pub c_lsi: f64,
    /// `None` uses three times the histogram noise floor.
    pub fit_floor: Option<f64>,
    pub rates_fpe: bool,
    pub kl_fit_t_min: f64,
    pub fpe: FpeSettings,
    pub exit: ExitSettings,
}

pub const DYNAMICS_KINDS: [&str; 3] = ["langevin", "derivative_free", "linear"];

impl ExperimentConfig {
    pub fn from_map(m: &ConfigMap) -> Result<Self> {
        let kind = m.string("potential.kind")?.unwrap_or_else(|| "double_well".into());
        let potential = match kind.as_str() {
            "double_well" => PotentialChoice::DoubleWell {
                c: m.f64_list("potential.c")?.unwrap_or_else(|| vec![1.0]),
            },
            "sine_modes" => PotentialChoice::SineModes,
            "cosine_well" => PotentialChoice::CosineWell {
                amplitude: m.req_f64("potential.amplitude")?,
            },
            "polynomial" => PotentialChoice::Polynomial {
                coeffs: m.f64_list("potential.coeffs")?.unwrap_or_else(|| vec![0.0]),
            },
            "zero" => PotentialChoice::Zero,
            "grid_file" => PotentialChoice::GridFile {
                path: m
                    .string("potential.path")?
                    .map(PathBuf::from)
                    .ok_or_else(|| Error::config("potential.path", "grid_file needs a path"))?,
            },
            other => {
                return Err(Error::config(
                    "potential.kind",
                    format!("unknown kind `{other}`; expected double_well, sine_modes, cosine_well, polynomial, zero or grid_file"),
                ))
            }
        };
        if let PotentialChoice::DoubleWell { c } = &potential {
            if c.is_empty() {
                return Err(Error::config("potential.c", "need at least one value"));
            }
        }
        let (dim, period) = match &potential {
            PotentialChoice::SineModes => (2, 2.0),
            PotentialChoice::GridFile { path } => {
                let p = Potential::<f64>::from_grid_file(path)?;
                (p.domain().dim(), p.domain().period())
            }
            _ => (
                m.req_usize("potential.dim")?,
                m.f64("potential.period")?.unwrap_or(2.0 * PI),
            ),
        };
        if !(1..=2).contains(&dim) {
            return Err(Error::config("potential.dim", "supported dimensions are 1 and 2"));
        }
        if !(period > 0.0) {
            return Err(Error::config("potential.period", "must be positive"));
        }
        if matches!(potential, PotentialChoice::CosineWell { .. }) && dim != 1 {
            return Err(Error::config("potential.dim", "cosine_well is one-dimensional"));
        }

        let dynamics = m.str_list("dynamics.kind")?;
        if dynamics.is_empty() {
            return Err(Error::config("dynamics.kind", "need at least one dynamics"));
        }
        if let Some(bad) = dynamics.iter().find(|d| !DYNAMICS_KINDS.contains(&d.as_str())) {
            return Err(Error::config(
                "dynamics.kind",
                format!("unknown dynamics `{bad}`; expected langevin, derivative_free or linear"),
            ));
        }

        let eps = m.req_f64("eps")?;
        if !(eps > 0.0) {
            return Err(Error::config("eps", "must be positive"));
        }
        let n_particles = m.req_usize("n_particles")?;
        if n_particles == 0 {
            return Err(Error::config("n_particles", "need at least one particle"));
        }
        let dt = m.req_f64("dt")?;
        if !(dt > 0.0) {
            return Err(Error::config("dt", "must be positive"));
        }
        let t_final = m.req_f64("t_final")?;
        if !(t_final >= 0.0) {
            return Err(Error::config("t_final", "must be non-negative"));
        }
        if t_final > 0.0 && dt > t_final {
            return Err(Error::config("dt", "time step exceeds t_final"));
        }
        let snapshot_every = m.req_f64("snapshots.every")?;
        if !(snapshot_every > 0.0) {
            return Err(Error::config("snapshots.every", "must be positive"));
        }
        let snapshot_times = m.f64_list("snapshots.times")?.unwrap_or_default();
        let particle_snapshot_times = m.f64_list("snapshots.particles")?.unwrap_or_else(|| {
            if t_final > 0.0 {
                vec![0.0, t_final]
            } else {
                vec![0.0]
            }
        });
        for (key, list) in [
            ("snapshots.times", &snapshot_times),
            ("snapshots.particles", &particle_snapshot_times),
        ] {
            if list.iter().any(|&t| !(0.0..=t_final).contains(&t)) {
                return Err(Error::config(key, "times must lie in [0, t_final]"));
            }
        }
        let resolution = match m.u64("mesh.resolution")? {
            Some(r) => r as usize,
            None => {
                if dim == 1 {
                    256
                } else {
                    128
                }
            }
        };
        if resolution < 16 {
            return Err(Error::config("mesh.resolution", "need at least 16 cells per axis"));
        }

        let stddev = m.req_f64("init.stddev")?;
        let init = match m.string("init.kind")?.as_deref().unwrap_or("uniform") {
            "uniform" => InitialDistribution::Uniform,
            "gaussian" => InitialDistribution::Gaussian {
                mean: init_point(m, "init.mean", dim)?,
                stddev,
            },
            "point" => InitialDistribution::Point(init_point(m, "init.mean", dim)?),
            other => {
                return Err(Error::config(
                    "init.kind",
                    format!("unknown initial distribution `{other}`; expected uniform, gaussian or point"),
                ))
            }
        };
        if !(stddev >= 0.0) {
            return Err(Error::config("init.stddev", "must be non-negative"));
        }

        let c_pi = m
            .f64("rates.c_pi")?
            .unwrap_or_else(|| default_poincare_constant(period));
        let c_lsi = m
            .f64("rates.c_lsi")?
            .unwrap_or_else(|| default_log_sobolev_constant(period));
        if !(c_pi > 0.0 && c_lsi > 0.0) {
            return Err(Error::config(
                "rates.c_pi",
                "functional-inequality constants must be positive",
            ));
        }
        let fit_floor = m.f64("rates.fit_floor")?;
        let fpe = FpeSettings {
            resolution: m.u64("fpe.resolution")?.map_or(resolution, |r| r as usize),
            t_final: m.f64("fpe.t_final")?.unwrap_or(t_final),
            snapshot_every: m.f64("fpe.snapshot_every")?.unwrap_or(snapshot_every),
            max_substeps: m.u64("fpe.max_substeps")?.unwrap_or(50_000_000),
            fit_floor: m.req_f64("fpe.fit_floor")?,
        };
        if fpe.resolution < 16 {
            return Err(Error::config("fpe.resolution", "need at least 16 cells per axis"));
        }
        if !(fpe.t_final >= 0.0) || !(fpe.snapshot_every > 0.0) {
            return Err(Error::config(
                "fpe.t_final",
                "need t_final >= 0 and a positive snapshot interval",
            ));
        }

        let exit = ExitSettings {
            a: m.req_f64("exit.a")?,
            b: m.req_f64("exit.b")?,
            x0: m.req_f64("exit.x0")?,
            hit_tolerance: m.req_f64("exit.hit_tolerance")?,
            eps: m.f64_list("exit.eps")?.unwrap_or_default(),
            n_runs: m.req_usize("exit.n_runs")?,
            dt_langevin: m.req_f64("exit.dt_langevin")?,
            dt_derivative_free: m.req_f64("exit.dt_derivative_free")?,
            t_cap: m.f64("exit.t_cap")?,
            quad_points: m.req_usize("exit.quad_points")?,
        };
        if exit.eps.is_empty() || exit.eps.iter().any(|&e| !(e > 0.0)) {
            return Err(Error::config("exit.eps", "need one or more positive values"));
        }
        if exit.n_runs != 0 && exit.n_runs < 100 {
            return Err(Error::config(
                "exit.n_runs",
                "use 0 for quadrature only, or at least 100 runs",
            ));
        }
        if !(exit.dt_langevin > 0.0 && exit.dt_derivative_free > 0.0) {
            return Err(Error::config("exit.dt_langevin", "exit time steps must be positive"));
        }

        Ok(Self {
            preset: m.string("preset")?,
            paper_scale: m.bool("paper_scale")?,
            description: m.string("description")?.unwrap_or_default(),
            seed: m.u64("seed")?.unwrap_or(0),
            potential,
            dim,
            period,
            dynamics,
            eps,
            n_particles,
            dt,
            t_final,
            snapshot_every,
            snapshot_times,
            particle_snapshot_times,
            resolution,
            init,
            c_pi,
            c_lsi,
            fit_floor,
            rates_fpe: m.bool("rates.fpe")?,
            kl_fit_t_min: m.req_f64("rates.kl_fit_t_min")?,
            fpe,
            exit,
        })
    }

    pub fn resolve(
        preset_name: Option<&str>,
        paper_scale: bool,
        file: Option<&ConfigMap>,
        overrides: &ConfigMap,
    ) -> Result<Self> {
        Self::from_map(&resolve_layers(preset_name, paper_scale, file, overrides)?)
    }

    pub fn from_preset(name: &str, paper_scale: bool) -> Result<Self> {
        Self::resolve(Some(name), paper_scale, None, &ConfigMap::default())
    }

    /// Every setting with defaults materialized.
    pub fn to_map(&self) -> ConfigMap {
        let mut m = ConfigMap::default();
        m.set("preset", self.preset.as_ref().map_or(Value::Null, |p| json!(p)));
        m.set("paper_scale", json!(self.paper_scale));
        m.set("description", json!(self.description));
        m.set("seed", json!(self.seed));
        let (kind, extra): (&str, Vec<(&str, Value)>) = match &self.potential {
            PotentialChoice::DoubleWell { c } => ("double_well", vec![("potential.c", json!(c))]),
            PotentialChoice::SineModes => ("sine_modes", vec![]),
            PotentialChoice::CosineWell { amplitude } => {
                ("cosine_well", vec![("potential.amplitude", json!(amplitude))])
            }
            PotentialChoice::Polynomial { coeffs } => ("polynomial", vec![("potential.coeffs", json!(coeffs))]),
            PotentialChoice::Zero => ("zero", vec![]),
            PotentialChoice::GridFile { path } => {
                ("grid_file", vec![("potential.path", json!(path.to_string_lossy()))])
            }
        };
        m.set("potential.kind", json!(kind));
        for (k, v) in extra {
            m.set(k, v);
        }
        if !matches!(
            self.potential,
            PotentialChoice::SineModes | PotentialChoice::GridFile { .. }
        ) {
            m.set("potential.dim", json!(self.dim));
            m.set("potential.period", json!(self.period));
        }
        m.set("dynamics.kind", json!(self.dynamics));
        m.set("eps", json!(self.eps));
        m.set("n_particles", json!(self.n_particles));
        m.set("dt", json!(self.dt));
        m.set("t_final", json!(self.t_final));
        m.set("snapshots.every", json!(self.snapshot_every));
        m.set("snapshots.times", json!(self.snapshot_times));
        m.set("snapshots.particles", json!(self.particle_snapshot_times));
        m.set("mesh.resolution", json!(self.resolution));
        match &self.init {
            InitialDistribution::Uniform => m.set("init.kind", json!("uniform")),
            InitialDistribution::Gaussian { mean, .. } => {
                m.set("init.kind", json!("gaussian"));
                m.set("init.mean", json!(mean));
            }
            InitialDistribution::Point(p) => {
                m.set("init.kind", json!("point"));
                m.set("init.mean", json!(p));
            }
        }
        let stddev = match &self.init {
            InitialDistribution::Gaussian { stddev, .. } => *stddev,
            _ => 0.01,
        };
        m.set("init.stddev", json!(stddev));
        m.set("rates.c_pi", json!(self.c_pi));
        m.set("rates.c_lsi", json!(self.c_lsi));
        m.set("rates.fit_floor", self.fit_floor.map_or(Value::Null, |f| json!(f)));
        m.set("rates.fpe", json!(self.rates_fpe));
        m.set("rates.kl_fit_t_min", json!(self.kl_fit_t_min));
        m.set("fpe.resolution", json!(self.fpe.resolution));
        m.set("fpe.t_final", json!(self.fpe.t_final));
        m.set("fpe.snapshot_every", json!(self.fpe.snapshot_every));
        m.set("fpe.max_substeps", json!(self.fpe.max_substeps));
        m.set("fpe.fit_floor", json!(self.fpe.fit_floor));
        m.set("exit.a", json!(self.exit.a));
        m.set("exit.b", json!(self.exit.b));
        m.set("exit.x0", json!(self.exit.x0));
        m.set("exit.hit_tolerance", json!(self.exit.hit_tolerance));
        m.set("exit.eps", json!(self.exit.eps));
        m.set("exit.n_runs", json!(self.exit.n_runs));
        m.set("exit.dt_langevin", json!(self.exit.dt_langevin));
        m.set("exit.dt_derivative_free", json!(self.exit.dt_derivative_free));
        m.set("exit.t_cap", self.exit.t_cap.map_or(Value::Null, |t| json!(t)));
        m.set("exit.quad_points", json!(self.exit.quad_points));
        m
    }

    /// The configured potentials, one per value of a swept parameter.
    pub fn potentials(&self) -> Result<Vec<(Option<f64>, Potential<f64>)>> {
        let domain = || TorusDomain::new(self.dim, self.period);
        Ok(match &self.potential {
            PotentialChoice::DoubleWell { c } => c
                .iter()
                .map(|&c| Ok((Some(c), Potential::new(PotentialKind::DoubleWell { c }, domain()?)?)))
                .collect::<Result<_>>()?,
            PotentialChoice::SineModes => vec![(None, Potential::sine_modes()?)],
            PotentialChoice::CosineWell { amplitude } => vec![(
                None,
                Potential::new(PotentialKind::CosineWell { amplitude: *amplitude }, domain()?)?,
            )],
            PotentialChoice::Polynomial { coeffs } => vec![(None, Potential::polynomial(coeffs.clone(), domain()?)?)],
            PotentialChoice::Zero => vec![(None, Potential::constant_zero(domain()?)?)],
            PotentialChoice::GridFile { path } => vec![(None, Potential::from_grid_file(path)?)],
        })
    }

    /// Whether a sweep over `c` is configured.
    pub fn sweeps_c(&self) -> bool {
        matches!(&self.potential, PotentialChoice::DoubleWell { c } if c.len() > 1)
    }
}

fn init_point(m: &ConfigMap, key: &str, dim: usize) -> Result<Vec<f64>> {
    let p = m.f64_list(key)?.unwrap_or_else(|| vec![0.0; dim]);
    if p.len() != dim {
        return Err(Error::config(key, format!("expected {dim} coordinates")));
    }
    Ok(p)
}
