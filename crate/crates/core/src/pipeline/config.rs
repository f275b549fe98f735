use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::distill::DistillConfig;
use crate::error::{Error, Result};
use crate::hwsim::HwConfig;
use crate::planner::{PlannerConfig, SizeLimit};
use crate::sensitivity::{Method, DEFAULT_ALPHA, MQE_BITS};
use crate::toy::{TOY_NOISE, TOY_TASK_SEED};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensitivityConfig {
    pub alpha: f64,
    pub seed: u64,
    pub method: Method,
    /// Bit width of the naive per-layer method.
    pub naive_bits: u8,
}

impl Default for SensitivityConfig {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            seed: 0,
            method: Method::Mqe,
            naive_bits: MQE_BITS,
        }
    }
}

/// Activation widths applied with a plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ActivationBits {
    /// Activations follow the weight plan.
    #[default]
    Plan,
    /// Activations stay at 8 bits.
    #[serde(rename = "8")]
    Eight,
}

impl std::str::FromStr for ActivationBits {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plan" => Ok(Self::Plan),
            "8" => Ok(Self::Eight),
            other => Err(Error::config("planner.bits_activations", format!("`{other}` is not `plan` or `8`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerSection {
    pub beta: f64,
    pub gamma: f64,
    /// Size limit between the all-4-bit (0) and all-8-bit (1) model.
    pub ratio: f64,
    pub bits_activations: ActivationBits,
}

impl Default for PlannerSection {
    fn default() -> Self {
        Self {
            beta: 0.5,
            gamma: 0.5,
            ratio: 0.5,
            bits_activations: ActivationBits::Plan,
        }
    }
}

impl PlannerSection {
    pub fn planner_config(&self) -> PlannerConfig {
        PlannerConfig {
            beta: self.beta,
            gamma: self.gamma,
            limit: SizeLimit::Ratio(self.ratio),
            ..PlannerConfig::default()
        }
    }
}

/// Labeled evaluation data: a file, or samples of the bundled synthetic task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub dataset: Option<PathBuf>,
    pub samples: usize,
    pub seed: u64,
    pub task_seed: u64,
    pub noise: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            samples: 500,
            seed: 1234,
            task_seed: TOY_TASK_SEED,
            noise: TOY_NOISE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub model: PathBuf,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub hw: HwConfig,
    #[serde(default)]
    pub distill: DistillConfig,
    #[serde(default)]
    pub sensitivity: SensitivityConfig,
    #[serde(default)]
    pub planner: PlannerSection,
    #[serde(default)]
    pub eval: EvalConfig,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl PipelineConfig {
    pub fn new(model: impl Into<PathBuf>, out_dir: impl Into<PathBuf>) -> Self {
        Self {
            model: model.into(),
            out_dir: out_dir.into(),
            hw: HwConfig::default(),
            distill: DistillConfig::default(),
            sensitivity: SensitivityConfig::default(),
            planner: PlannerSection::default(),
            eval: EvalConfig::default(),
        }
    }

    /// Parses TOML; relative paths are resolved against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or_else(|| Path::new(""));
        cfg.model = base.join(&cfg.model);
        cfg.out_dir = base.join(&cfg.out_dir);
        if let Some(d) = &cfg.eval.dataset {
            cfg.eval.dataset = Some(base.join(d));
        }
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let field = e.message().split('`').nth(1).unwrap_or("config").to_string();
            Error::config(field, e.to_string().trim())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::config("config", e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.hw.validate()?;
        self.distill.validate()?;
        let a = self.sensitivity.alpha;
        if !(0.0..=1.0).contains(&a) {
            return Err(Error::config("sensitivity.alpha", format!("{a} is outside [0, 1]")));
        }
        if ![4u8, 8, 32].contains(&self.sensitivity.naive_bits) {
            return Err(Error::config("sensitivity.naive_bits", "must be 4, 8 or 32"));
        }
        let p = &self.planner;
        if !(0.0..=1.0).contains(&p.ratio) {
            return Err(Error::config("planner.ratio", format!("{} is outside [0, 1]", p.ratio)));
        }
        if !(p.beta >= 0.0 && p.gamma >= 0.0) {
            return Err(Error::config("planner.beta", "beta and gamma must be non-negative"));
        }
        if (p.beta + p.gamma - 1.0).abs() > 1e-9 {
            return Err(Error::config(
                "planner.gamma",
                format!("beta + gamma must equal 1, got {} + {}", p.beta, p.gamma),
            ));
        }
        if self.eval.samples == 0 && self.eval.dataset.is_none() {
            return Err(Error::config("eval.samples", "must be at least 1"));
        }
        if !(self.eval.noise >= 0.0 && self.eval.noise.is_finite()) {
            return Err(Error::config("eval.noise", "must be finite and non-negative"));
        }
        Ok(())
    }

    pub fn artifact(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub ratio: Option<f64>,
    pub alpha: Option<f64>,
    /// Sets gamma to `1 - beta`.
    pub beta: Option<f64>,
    pub method: Option<Method>,
    pub bits_activations: Option<ActivationBits>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut PipelineConfig) -> Result<()> {
        if let Some(o) = &self.out {
            cfg.out_dir = o.clone();
        }
        if let Some(s) = self.seed {
            cfg.distill.seed = s;
            cfg.sensitivity.seed = s;
        }
        if let Some(r) = self.ratio {
            cfg.planner.ratio = r;
        }
        if let Some(a) = self.alpha {
            cfg.sensitivity.alpha = a;
        }
        if let Some(b) = self.beta {
            cfg.planner.beta = b;
            cfg.planner.gamma = 1.0 - b;
        }
        if let Some(m) = self.method {
            cfg.sensitivity.method = m;
        }
        if let Some(b) = self.bits_activations {
            cfg.planner.bits_activations = b;
        }
        cfg.validate()
    }
}
