//! Experiment configuration.
//!
//! Configurations are TOML documents (`.cfg` files). Top-level keys hold the
//! run sizes and times; typed sections hold the model, the initial condition,
//! the filter initialization, the evaluation grid and optional KL gates.
//! See `configs/README.md` for the grammar.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use cgpdf::filter::FilterInit;
use cgpdf::models::{ModelParams, TriadRegime};
use cgpdf::simulate::{step_index, DimInit};
use cgpdf::{CgSystem, InitialCondition, ModelId};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{HarnessError, Result};

/// Configurations shipped with the harness, addressable by name.
pub const CANNED: &[(&str, &str)] = &[
    ("l63-t033", include_str!("../configs/l63-t033.cfg")),
    ("l63-t15", include_str!("../configs/l63-t15.cfg")),
    ("climate4d-t05", include_str!("../configs/climate4d-t05.cfg")),
    ("climate4d-t4", include_str!("../configs/climate4d-t4.cfg")),
    ("triad3-I", include_str!("../configs/triad3-I.cfg")),
    ("triad3-II", include_str!("../configs/triad3-II.cfg")),
    ("triad3-III", include_str!("../configs/triad3-III.cfg")),
    ("triad3-III-init-gamma", include_str!("../configs/triad3-III-init-gamma.cfg")),
    ("triad3-III-init-bimodal", include_str!("../configs/triad3-III-init-bimodal.cfg")),
    ("turb6d-t06", include_str!("../configs/turb6d-t06.cfg")),
    ("turb6d-t4", include_str!("../configs/turb6d-t4.cfg")),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    /// Ensemble size `L`.
    pub members: usize,
    /// Monte Carlo truth ensemble size.
    pub mc_particles: usize,
    pub dt: f64,
    /// Defaults to the last snapshot time.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_end: Option<f64>,
    pub snapshots: Vec<f64>,
    /// Variable names of each requested 1D or 2D marginal.
    pub marginals: Vec<Vec<String>>,
    /// Defaults to a value derived from `seed`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth_seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
    /// Ensemble sizes for `sweep`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sweep: Vec<usize>,
    pub model: ModelSection,
    pub init: InitSpec,
    #[serde(default)]
    pub filter: FilterSection,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gates: Option<Gates>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// Canonical model id such as `l63` or `triad3:III`.
    pub id: String,
    #[serde(default, skip_serializing_if = "toml::Table::is_empty")]
    pub params: toml::Table,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitSpec {
    Delta { state: Vec<f64> },
    /// Independent Gaussians with a common variance.
    Gaussian { mean: Vec<f64>, variance: f64 },
    Independent { dims: Vec<DimInit> },
}

impl InitSpec {
    pub fn to_initial_condition(&self) -> InitialCondition {
        match self {
            InitSpec::Delta { state } => InitialCondition::delta(state),
            InitSpec::Gaussian { mean, variance } => InitialCondition::gaussian(mean, *variance),
            InitSpec::Independent { dims } => InitialCondition::Independent(dims.clone()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterMode {
    #[default]
    Point,
    Kde,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterSection {
    pub mode: FilterMode,
    /// Initial posterior variance in point mode.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    pub thin: usize,
}

impl Default for FilterSection {
    fn default() -> Self {
        Self { mode: FilterMode::Point, epsilon: None, thin: 1 }
    }
}

impl FilterSection {
    pub fn filter_init(&self) -> FilterInit {
        match self.mode {
            FilterMode::Point => FilterInit::Point { epsilon: self.epsilon },
            FilterMode::Kde => FilterInit::KdeDiagonal,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridMode {
    #[default]
    Auto,
    Explicit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisRange {
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub mode: GridMode,
    /// Auto grids span the truth mean ± `width` standard deviations.
    pub width: f64,
    pub points_1d: usize,
    pub points_2d: usize,
    /// Per-variable ranges in explicit mode.
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub axes: BTreeMap<String, AxisRange>,
}

impl Default for GridSection {
    fn default() -> Self {
        Self { mode: GridMode::Auto, width: 6.0, points_1d: 200, points_2d: 100, axes: BTreeMap::new() }
    }
}

/// Pass thresholds on the relative entropy of every requested marginal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Gates {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kl_1d: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kl_2d: Option<f64>,
    /// Set when the thresholds are carried over from another experiment.
    #[serde(default)]
    pub extrapolated: bool,
}

/// A requested marginal resolved against the model's variables.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Marginal {
    pub names: Vec<String>,
    pub dims: Vec<usize>,
}

impl Marginal {
    pub fn label(&self) -> String {
        self.names.join(",")
    }
}

/// A validated configuration with its model built.
#[derive(Clone)]
pub struct Prepared {
    pub config: ExperimentConfig,
    pub model_id: ModelId,
    pub params: ModelParams,
    pub system: Arc<dyn CgSystem>,
    pub init: InitialCondition,
    pub names: Vec<String>,
    pub marginals: Vec<Marginal>,
    pub t_end: f64,
}

/// Command-line replacements for configuration fields.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub model: Option<String>,
    pub regime: Option<String>,
    pub members: Option<usize>,
    pub mc_particles: Option<usize>,
    pub dt: Option<f64>,
    pub seed: Option<u64>,
    pub snapshots: Option<Vec<f64>>,
    pub out: Option<PathBuf>,
    pub grid: Option<String>,
}

fn config_err(msg: impl Into<String>) -> HarnessError {
    HarnessError::Config(msg.into())
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| config_err(e.to_string()))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| config_err(e.to_string()))
    }

    /// Reads a config file, or a canned config when `spec` names one
    /// (`l63-t033`, `l63-t033.cfg` and `triad3:III-init-gamma` all work).
    pub fn load(spec: &str) -> Result<Self> {
        let path = Path::new(spec);
        if path.exists() {
            let text = std::fs::read_to_string(path).map_err(HarnessError::io(path))?;
            return Self::from_toml_str(&text);
        }
        match canned(spec) {
            Some(text) => Self::from_toml_str(text),
            None => Err(config_err(format!("no config file or canned config named `{spec}`"))),
        }
    }

    /// Defaults for a model when no config file is given.
    pub fn for_model(id: ModelId) -> Self {
        let sys = ModelParams::defaults(id).build().expect("default parameters are valid");
        let names = sys.variable_names();
        let dim = names.len();
        let init = match id {
            ModelId::L63 => InitSpec::Gaussian { mean: vec![0.0; dim], variance: 1.0 },
            ModelId::Climate4d => InitSpec::Gaussian { mean: vec![0.0; dim], variance: 0.1 },
            ModelId::Triad3(_) => InitSpec::Gaussian { mean: vec![0.5, 1.0, 1.0], variance: 0.1 },
            ModelId::Turb6d | ModelId::L96Two => InitSpec::Delta { state: vec![0.0; dim] },
        };
        let shown: Vec<String> = if dim <= 6 { names.clone() } else { names[..sys.n_obs()].to_vec() };
        let mut marginals: Vec<Vec<String>> = shown.iter().map(|n| vec![n.clone()]).collect();
        let paired = &names[..dim.min(3)];
        for (a, first) in paired.iter().enumerate() {
            for second in &paired[a + 1..] {
                marginals.push(vec![first.clone(), second.clone()]);
            }
        }
        Self {
            name: id.to_string().replace(':', "-"),
            seed: 0,
            members: 500,
            mc_particles: 150_000,
            dt: 1e-3,
            t_end: None,
            snapshots: vec![1.0],
            marginals,
            truth_seed: None,
            out: None,
            cache_dir: None,
            sweep: Vec::new(),
            model: ModelSection { id: id.to_string(), params: toml::Table::new() },
            init,
            filter: FilterSection::default(),
            grid: GridSection::default(),
            gates: None,
        }
    }

    /// Seed of the Monte Carlo truth ensemble, distinct from the
    /// recovery ensemble's seed.
    pub fn truth_seed(&self) -> u64 {
        self.truth_seed.unwrap_or(self.seed ^ 0x7472_7574_685f_6d63)
    }

    /// SHA-256 of the configuration with the output locations left out.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out = None;
        c.cache_dir = None;
        let bytes = serde_json::to_vec(&c).expect("configs serialize to JSON");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if o.model.is_some() || o.regime.is_some() {
            let base = o.model.clone().unwrap_or_else(|| {
                self.model.id.split(':').next().unwrap_or_default().to_string()
            });
            let id = match &o.regime {
                Some(r) => format!("{base}:{r}"),
                None => base,
            };
            if id != self.model.id {
                self.model = ModelSection { id, params: toml::Table::new() };
            }
        }
        if let Some(v) = o.members {
            self.members = v;
        }
        if let Some(v) = o.mc_particles {
            self.mc_particles = v;
        }
        if let Some(v) = o.dt {
            self.dt = v;
        }
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = &o.snapshots {
            self.snapshots = v.clone();
        }
        if let Some(v) = &o.out {
            self.out = Some(v.clone());
        }
        if let Some(g) = &o.grid {
            self.apply_grid(g)?;
        }
        Ok(())
    }

    /// `auto`, or comma-separated `min:max:n` ranges for the model variables
    /// in order.
    fn apply_grid(&mut self, spec: &str) -> Result<()> {
        if spec == "auto" {
            self.grid.mode = GridMode::Auto;
            self.grid.axes.clear();
            return Ok(());
        }
        let id: ModelId = self.model.id.parse().map_err(|e: cgpdf::Error| config_err(e.to_string()))?;
        let names = ModelParams::defaults(id).build().expect("defaults build").variable_names();
        let ranges: Vec<&str> = spec.split(',').collect();
        if ranges.len() > names.len() {
            return Err(config_err(format!("--grid lists {} ranges for {} variables", ranges.len(), names.len())));
        }
        let mut axes = BTreeMap::new();
        for (name, r) in names.iter().zip(ranges) {
            let parts: Vec<&str> = r.split(':').collect();
            let bad = || config_err(format!("grid range `{r}` is not min:max:n"));
            if parts.len() != 3 {
                return Err(bad());
            }
            let min: f64 = parts[0].trim().parse().map_err(|_| bad())?;
            let max: f64 = parts[1].trim().parse().map_err(|_| bad())?;
            let points: usize = parts[2].trim().parse().map_err(|_| bad())?;
            axes.insert(name.clone(), AxisRange { min, max, points });
        }
        self.grid.mode = GridMode::Explicit;
        self.grid.axes = axes;
        Ok(())
    }

    pub fn validate(&self) -> Result<Prepared> {
        if self.name.trim().is_empty() {
            return Err(config_err("name must not be empty"));
        }
        let model_id: ModelId = self.model.id.parse().map_err(|e: cgpdf::Error| config_err(e.to_string()))?;
        let overrides = serde_json::to_value(&self.model.params).map_err(|e| config_err(e.to_string()))?;
        let params = ModelParams::with_overrides(model_id, &overrides).map_err(|e| config_err(e.to_string()))?;
        let system = params.build().map_err(|e| config_err(e.to_string()))?;
        let names = system.variable_names();
        if system.n_obs() > 3 {
            return Err(config_err(format!(
                "model {model_id} has {} observed variables; kernel density estimation supports at most 3",
                system.n_obs()
            )));
        }

        let init = self.init.to_initial_condition();
        init.validate(system.dim()).map_err(|e| config_err(format!("initial condition: {e}")))?;

        if self.members == 0 {
            return Err(config_err("members must be at least 1"));
        }
        if self.mc_particles < 2 {
            return Err(config_err("mc_particles must be at least 2"));
        }
        if let Some(&l) = self.sweep.iter().find(|&&l| l == 0) {
            return Err(config_err(format!("sweep entry {l} must be at least 1")));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(config_err(format!("dt must be positive, got {}", self.dt)));
        }
        if self.filter.thin == 0 {
            return Err(config_err("filter.thin must be at least 1"));
        }
        if let Some(eps) = self.filter.epsilon {
            if !(eps > 0.0 && eps.is_finite()) {
                return Err(config_err(format!("filter.epsilon must be positive, got {eps}")));
            }
        }

        let last = self.snapshots.iter().copied().fold(0.0, f64::max);
        let t_end = self.t_end.unwrap_or(last);
        if !(t_end >= 0.0 && t_end.is_finite()) {
            return Err(config_err(format!("t_end must be nonnegative, got {t_end}")));
        }
        let filter_dt = self.dt * self.filter.thin as f64;
        for &t in &self.snapshots {
            if !(t >= 0.0) || t > t_end {
                return Err(config_err(format!("snapshot time {t} lies outside [0, t_end = {t_end}]")));
            }
            step_index(t, filter_dt).map_err(|e| config_err(format!("snapshot {t}: {e}")))?;
        }

        let mut marginals = Vec::with_capacity(self.marginals.len());
        for m in &self.marginals {
            if m.is_empty() || m.len() > 2 {
                return Err(config_err(format!("marginal {m:?} must name one or two variables")));
            }
            let dims = m
                .iter()
                .map(|n| {
                    names.iter().position(|v| v == n).ok_or_else(|| {
                        config_err(format!("marginal variable `{n}` is not one of {}", names.join(", ")))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            if dims.len() == 2 && dims[0] == dims[1] {
                return Err(config_err(format!("marginal {m:?} repeats a variable")));
            }
            marginals.push(Marginal { names: m.clone(), dims });
        }

        let g = &self.grid;
        match g.mode {
            GridMode::Auto => {
                if !(g.width > 0.0) || g.points_1d < 2 || g.points_2d < 2 {
                    return Err(config_err("auto grid needs a positive width and at least 2 points per axis"));
                }
            }
            GridMode::Explicit => {
                for m in &marginals {
                    for n in &m.names {
                        let a = g.axes.get(n).ok_or_else(|| config_err(format!("explicit grid has no axis for `{n}`")))?;
                        if !(a.max > a.min) || a.points < 2 {
                            return Err(config_err(format!("grid axis `{n}` needs min < max and at least 2 points")));
                        }
                    }
                }
            }
        }
        if let Some(gates) = &self.gates {
            for v in [gates.kl_1d, gates.kl_2d].into_iter().flatten() {
                if !(v > 0.0) {
                    return Err(config_err(format!("KL gates must be positive, got {v}")));
                }
            }
        }

        Ok(Prepared {
            config: self.clone(),
            model_id,
            params,
            system,
            init,
            names,
            marginals,
            t_end,
        })
    }
}

/// Text of a canned config by name.
pub fn canned(spec: &str) -> Option<&'static str> {
    let name = spec.strip_suffix(".cfg").unwrap_or(spec).replace(':', "-");
    CANNED.iter().find(|(n, _)| *n == name).map(|(_, text)| *text)
}

/// Parses `I`, `II`, `III` (or `1`..`3`).
pub fn parse_regime(s: &str) -> Result<TriadRegime> {
    s.parse().map_err(|e: cgpdf::Error| config_err(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_canned_config_validates_and_round_trips() {
        for (name, text) in CANNED {
            let cfg = ExperimentConfig::from_toml_str(text).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(&cfg.name, name);
            cfg.validate().unwrap_or_else(|e| panic!("{name}: {e}"));
            let back = ExperimentConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
            assert_eq!(back, cfg, "{name}");
            assert_eq!(back.hash(), cfg.hash());
        }
    }

    #[test]
    fn canned_lookup_accepts_aliases() {
        assert!(canned("l63-t033.cfg").is_some());
        assert!(canned("triad3:III-init-gamma").is_some());
        assert!(canned("nope").is_none());
    }

    #[test]
    fn snapshot_beyond_t_end_is_rejected() {
        let mut cfg = ExperimentConfig::for_model(ModelId::L63);
        cfg.t_end = Some(0.5);
        cfg.snapshots = vec![0.33, 0.6];
        assert!(matches!(cfg.validate(), Err(HarnessError::Config(_))));
    }

    #[test]
    fn unknown_marginal_name_is_rejected() {
        let mut cfg = ExperimentConfig::for_model(ModelId::L63);
        cfg.marginals = vec![vec!["w".into()]];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn off_grid_snapshot_is_rejected() {
        let mut cfg = ExperimentConfig::for_model(ModelId::L63);
        cfg.snapshots = vec![0.3305];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn hash_ignores_output_location() {
        let a = ExperimentConfig::for_model(ModelId::Climate4d);
        let mut b = a.clone();
        b.out = Some("elsewhere".into());
        assert_eq!(a.hash(), b.hash());
        b.seed += 1;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn model_override_resets_parameters() {
        let mut cfg = ExperimentConfig::load("l63-t033").unwrap();
        cfg.model.params.insert("rho".into(), toml::Value::Float(30.0));
        cfg.apply(&Overrides { model: Some("triad3".into()), regime: Some("II".into()), ..Default::default() })
            .unwrap();
        assert_eq!(cfg.model.id, "triad3:II");
        assert!(cfg.model.params.is_empty());
    }

    #[test]
    fn grid_override_parses_ranges() {
        let mut cfg = ExperimentConfig::for_model(ModelId::L63);
        cfg.apply_grid("-30:30:101,-40:40:81,-5:55:61").unwrap();
        assert_eq!(cfg.grid.mode, GridMode::Explicit);
        assert_eq!(cfg.grid.axes["y"], AxisRange { min: -40.0, max: 40.0, points: 81 });
        assert!(cfg.apply_grid("1:2").is_err());
        cfg.apply_grid("auto").unwrap();
        assert!(cfg.grid.axes.is_empty());
    }

    #[test]
    fn parameter_overrides_reach_the_model() {
        let mut cfg = ExperimentConfig::for_model(ModelId::L63);
        cfg.model.params.insert("rho".into(), toml::Value::Float(10.0));
        let p = cfg.validate().unwrap();
        match p.params {
            ModelParams::L63(ref l) => assert_eq!(l.rho, 10.0),
            _ => unreachable!(),
        }
        cfg.model.params.insert("nonsense".into(), toml::Value::Float(1.0));
        assert!(cfg.validate().is_err());
    }
}
