use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ganmc::estimators::Learner;
use ganmc::fidelity::{Condition, GroundMetric};
use ganmc::penalty::PenaltySpec;
use ganmc::simharness::MonteCarloConfig;
use ganmc::tabular::{ldw_schema, ColumnSchema};
use ganmc::wgan::{architecture_preset, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const OUT_DIR_ENV: &str = "GANMC_OUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PopulationSettings {
    pub size: usize,
    /// Defaults to the treated share recorded when the models were trained.
    pub treated_fraction: Option<f64>,
    pub file: Option<PathBuf>,
}

impl Default for PopulationSettings {
    fn default() -> Self {
        PopulationSettings {
            size: 1_000_000,
            treated_fraction: None,
            file: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnoseSettings {
    pub real: Option<PathBuf>,
    pub generated: Option<PathBuf>,
    pub bins: usize,
    /// Conditional histograms; `None` uses the 1974-earnings split when the
    /// columns exist.
    pub conditions: Option<Vec<Condition>>,
    /// Restrict the distance and R² diagnostics to one arm ("control",
    /// "treated") or use every row ("all").
    pub arm: String,
    pub wasserstein_max_rows: usize,
    pub mvn_samples: usize,
    pub metric: GroundMetric,
    /// Per-column multipliers applied before computing ground costs.
    pub cost_scale: BTreeMap<String, f64>,
    pub cv_learners: Vec<Learner>,
    pub cv_folds: usize,
}

impl Default for DiagnoseSettings {
    fn default() -> Self {
        DiagnoseSettings {
            real: None,
            generated: None,
            bins: 30,
            conditions: None,
            arm: "control".into(),
            wasserstein_max_rows: 2000,
            mvn_samples: 10,
            metric: GroundMetric::Euclidean,
            cost_scale: BTreeMap::new(),
            cv_learners: vec![Learner::Lm],
            cv_folds: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobustnessSettings {
    pub runs: usize,
    pub fraction: f64,
    /// Replications per run in the subsample protocol.
    pub subsample_reps: usize,
    pub architectures: Vec<String>,
    pub fractions: Vec<f64>,
}

impl Default for RobustnessSettings {
    fn default() -> Self {
        RobustnessSettings {
            runs: 10,
            fraction: 0.8,
            subsample_reps: 10_000,
            architectures: vec!["main".into(), "alt1".into(), "alt2".into()],
            fractions: vec![0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    /// Column schema; `None` means the LDW job-training schema.
    pub schema: Option<Vec<ColumnSchema>>,
    pub data: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub train: TrainConfig,
    /// Outcome-stage settings; `None` reuses `train`.
    pub train_y: Option<TrainConfig>,
    pub penalty: Option<PenaltySpec>,
    /// Directory holding `models.json` from a previous `train` run.
    pub models: Option<PathBuf>,
    pub population: PopulationSettings,
    pub simulate: MonteCarloConfig,
    pub diagnose: DiagnoseSettings,
    pub robustness: RobustnessSettings,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("invalid config {}: {e}", path.display()))
    }

    pub fn schema(&self) -> Vec<ColumnSchema> {
        self.schema.clone().unwrap_or_else(ldw_schema)
    }

    pub fn train_y(&self) -> TrainConfig {
        self.train_y.clone().unwrap_or_else(|| self.train.clone())
    }

    /// Short SHA-256 of the resolved configuration without the output
    /// directory, so relocating outputs leaves the hash unchanged.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = None;
        let json = serde_json::to_string(&c).expect("config serializes");
        Sha256::digest(json.as_bytes())
            .iter()
            .take(8)
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn out_dir(&self) -> PathBuf {
        self.output_dir.clone().unwrap_or_else(|| PathBuf::from("ganmc-out"))
    }
}

fn need_file(v: &mut Vec<String>, field: &str, p: &Option<PathBuf>) {
    match p {
        None => v.push(format!("{field} is required")),
        Some(p) if !p.exists() => v.push(format!("{field}: file {} does not exist", p.display())),
        _ => {}
    }
}

fn train_violations(v: &mut Vec<String>, prefix: &str, t: &TrainConfig) {
    for e in t.violations() {
        v.push(format!("{prefix}: {e}"));
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Train,
    Generate,
    Population,
    Simulate,
    Diagnose,
    Robustness,
}

/// Every violation relevant to `cmd`, not just the first.
pub fn violations(cfg: &RunConfig, cmd: Command) -> Vec<String> {
    let mut v = Vec::new();
    if cfg.seed.is_none() {
        v.push("seed is required".into());
    }
    let uses_training = matches!(cmd, Command::Train | Command::Robustness);
    if uses_training {
        need_file(&mut v, "data", &cfg.data);
        train_violations(&mut v, "train", &cfg.train);
        if let Some(t) = &cfg.train_y {
            train_violations(&mut v, "train_y", t);
        }
        let names: Vec<String> = cfg.schema().iter().map(|c| c.name.clone()).collect();
        if let Some(p) = &cfg.penalty {
            if let Err(e) = p.validate(&names) {
                v.push(format!("penalty: {e}"));
            }
        }
    }
    if matches!(cmd, Command::Generate | Command::Population) {
        match &cfg.models {
            None => v.push("models is required".into()),
            Some(d) if !d.join("models.json").exists() => {
                v.push(format!("models: {} has no models.json", d.display()))
            }
            _ => {}
        }
        if let Some(f) = cfg.population.treated_fraction {
            if !(f > 0.0 && f < 1.0) {
                v.push(format!("population.treated_fraction must be in (0, 1), got {f}"));
            }
        }
        if cfg.population.size == 0 {
            v.push("population.size must be >= 1".into());
        }
    }
    if matches!(cmd, Command::Simulate | Command::Robustness) {
        for e in cfg.simulate.validate() {
            v.push(e);
        }
    }
    if cmd == Command::Simulate {
        need_file(&mut v, "population.file", &cfg.population.file);
    }
    if cmd == Command::Robustness && cfg.population.size == 0 {
        v.push("population.size must be >= 1".into());
    }
    if cmd == Command::Diagnose {
        need_file(&mut v, "diagnose.real", &cfg.diagnose.real);
        need_file(&mut v, "diagnose.generated", &cfg.diagnose.generated);
        let d = &cfg.diagnose;
        if d.bins == 0 {
            v.push("diagnose.bins must be >= 1".into());
        }
        if !["control", "treated", "all"].contains(&d.arm.as_str()) {
            v.push(format!("diagnose.arm must be control, treated or all, got '{}'", d.arm));
        }
        if d.wasserstein_max_rows == 0 {
            v.push("diagnose.wasserstein_max_rows must be >= 1".into());
        }
        if d.cv_folds < 2 {
            v.push("diagnose.cv_folds must be >= 2".into());
        }
        for (k, s) in &d.cost_scale {
            if !(s.is_finite() && *s > 0.0) {
                v.push(format!("diagnose.cost_scale.{k} must be positive"));
            }
        }
    }
    if cmd == Command::Robustness {
        let r = &cfg.robustness;
        if r.runs == 0 {
            v.push("robustness.runs must be >= 1".into());
        }
        if !(r.fraction > 0.0 && r.fraction <= 1.0) {
            v.push(format!("robustness.fraction must be in (0, 1], got {}", r.fraction));
        }
        if r.subsample_reps < 2 {
            v.push("robustness.subsample_reps must be >= 2".into());
        }
        for a in &r.architectures {
            if architecture_preset(a).is_none() {
                v.push(format!("robustness.architectures: unknown preset '{a}'"));
            }
        }
        for f in &r.fractions {
            if !(*f > 0.0 && *f <= 1.0) {
                v.push(format!("robustness.fractions: {f} is outside (0, 1]"));
            }
        }
    }
    v
}
