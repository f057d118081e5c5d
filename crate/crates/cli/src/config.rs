//! Experiment configuration: one JSON document, every field defaulted.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use jumpreg::model::lookup_model_with;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    KulikVerify,
    TimechangeIdentities,
    SdeConsistency,
    BsdeSolve,
    HjbSolve,
    Regularity,
    Counterexample,
    #[default]
    All,
}

impl ExperimentKind {
    /// The experiments this kind runs, in order.
    pub fn expand(self) -> Vec<ExperimentKind> {
        use ExperimentKind::*;
        match self {
            All => vec![
                Counterexample,
                KulikVerify,
                TimechangeIdentities,
                SdeConsistency,
                BsdeSolve,
                HjbSolve,
                Regularity,
            ],
            k => vec![k],
        }
    }

    pub fn name(self) -> &'static str {
        use ExperimentKind::*;
        match self {
            KulikVerify => "kulik-verify",
            TimechangeIdentities => "timechange-identities",
            SdeConsistency => "sde-consistency",
            BsdeSolve => "bsde-solve",
            HjbSolve => "hjb-solve",
            Regularity => "regularity",
            Counterexample => "counterexample",
            All => "all",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    /// Registry model used by `bsde-solve`, `hjb-solve` (value grid dump) and
    /// the solver part of `regularity`.
    pub model: String,
    /// Scalar parameter overrides for `model`.
    pub params: BTreeMap<String, f64>,
    /// Initial state for `bsde-solve`.
    pub x0: f64,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub grid: GridConfig,
    pub ensemble: EnsembleConfig,
    pub kulik: KulikConfig,
    pub identities: IdentitiesConfig,
    pub consistency: ConsistencyConfig,
    pub regularity: RegularityConfig,
    pub counterexample: CounterexampleConfig,
}

/// Finite-difference grid of the HJB solver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub dx: f64,
    /// `Δt = cfl_fraction · cfl_max_dt`, rounded down to an integer step count.
    pub cfl_fraction: f64,
    /// Overrides the model's declared state box.
    pub x_range: Option<[f64; 2]>,
    /// Time rows kept in value grid dumps.
    pub dump_rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleConfig {
    pub paths: usize,
    pub steps: usize,
    pub bins: usize,
    /// Constant control index of the `bsde-solve` ensemble.
    pub control: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KulikConfig {
    pub configs: usize,
    pub paths: usize,
    /// Total Lévy masses, cycled over the configurations.
    pub masses: Vec<f64>,
    /// Fixes the time change of every configuration when both are set.
    pub t0: Option<f64>,
    pub t1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IdentitiesConfig {
    pub tuples: usize,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConsistencyConfig {
    pub seeds: usize,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegularityConfig {
    /// Strictly decreasing, at least three values.
    pub deltas: Vec<f64>,
    pub pairs: usize,
    pub triples: usize,
    /// Closed-form constants gate only for `δ ≥ analytic_min_delta`.
    pub analytic_min_delta: f64,
    /// Probe multiplier of the stability check.
    pub probe_factor: usize,
    /// Probe box of the solver part; defaults to the grid's safe interior.
    pub x_box: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CounterexampleConfig {
    pub times: Vec<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: ExperimentKind::All,
            model: "lq_jump".into(),
            params: BTreeMap::new(),
            x0: 0.0,
            seed: 20_240_601,
            output_dir: PathBuf::from("out"),
            grid: GridConfig::default(),
            ensemble: EnsembleConfig::default(),
            kulik: KulikConfig::default(),
            identities: IdentitiesConfig::default(),
            consistency: ConsistencyConfig::default(),
            regularity: RegularityConfig::default(),
            counterexample: CounterexampleConfig::default(),
        }
    }
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            dx: 0.02,
            cfl_fraction: 0.5,
            x_range: None,
            dump_rows: 21,
        }
    }
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            paths: 100_000,
            steps: 100,
            bins: 50,
            control: 0,
        }
    }
}

impl Default for KulikConfig {
    fn default() -> Self {
        Self {
            configs: 10,
            paths: 100_000,
            masses: vec![0.5, 2.0, 5.0],
            t0: None,
            t1: None,
        }
    }
}

impl Default for IdentitiesConfig {
    fn default() -> Self {
        Self {
            tuples: 1000,
            points: 100,
        }
    }
}

impl Default for ConsistencyConfig {
    fn default() -> Self {
        Self { seeds: 100, steps: 50 }
    }
}

impl Default for RegularityConfig {
    fn default() -> Self {
        Self {
            deltas: vec![0.4, 0.2, 0.1, 0.05],
            pairs: 2000,
            triples: 2000,
            analytic_min_delta: 0.1,
            probe_factor: 4,
            x_box: None,
        }
    }
}

impl Default for CounterexampleConfig {
    fn default() -> Self {
        Self {
            times: vec![0.0, 0.25, 0.5, 0.75],
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> anyhow::Result<Self> {
        let cfg: Self = serde_json::from_str(text).context("invalid configuration")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        Self::from_json(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the configuration with `output_dir` blanked, so runs that
    /// differ only in where they write share a hash.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        let text = serde_json::to_string(&c).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    /// Range and name checks; runs before any computation.
    pub fn validate(&self) -> anyhow::Result<()> {
        let model = lookup_model_with(&self.model, &self.params).with_context(|| format!("model `{}`", self.model))?;
        ensure!(self.x0.is_finite(), "x0 must be finite");

        let g = &self.grid;
        ensure!(g.dx > 0.0 && g.dx.is_finite(), "grid.dx must be positive, got {}", g.dx);
        ensure!(
            g.cfl_fraction > 0.0 && g.cfl_fraction <= 1.0,
            "grid.cfl_fraction must lie in (0, 1], got {}",
            g.cfl_fraction
        );
        if let Some([a, b]) = g.x_range {
            ensure!(a < b, "grid.x_range [{a}, {b}] is empty");
        }
        ensure!(g.dump_rows >= 2, "grid.dump_rows must be at least 2");

        let e = &self.ensemble;
        ensure!(e.steps >= 1, "ensemble.steps must be at least 1");
        ensure!(e.bins >= 1, "ensemble.bins must be at least 1");
        ensure!(
            e.paths >= 2 * e.bins,
            "ensemble.paths = {} cannot fill {} bins with 2 paths each",
            e.paths,
            e.bins
        );
        ensure!(
            e.control < model.controls().len(),
            "ensemble.control = {} but `{}` has {} controls",
            e.control,
            self.model,
            model.controls().len()
        );

        let k = &self.kulik;
        ensure!(k.configs >= 1, "kulik.configs must be at least 1");
        ensure!(k.paths >= 100, "kulik.paths must be at least 100");
        ensure!(
            !k.masses.is_empty() && k.masses.iter().all(|m| *m > 0.0 && m.is_finite()),
            "kulik.masses must be positive"
        );
        match (k.t0, k.t1) {
            (None, None) => {}
            (Some(t0), Some(t1)) => ensure!(
                (0.0..1.0).contains(&t0) && (0.0..1.0).contains(&t1),
                "kulik.t0 and kulik.t1 must lie in [0, 1)"
            ),
            _ => bail!("kulik.t0 and kulik.t1 must be given together"),
        }

        ensure!(self.identities.tuples >= 1, "identities.tuples must be at least 1");
        ensure!(self.identities.points >= 2, "identities.points must be at least 2");
        ensure!(self.consistency.seeds >= 1, "consistency.seeds must be at least 1");
        ensure!(self.consistency.steps >= 1, "consistency.steps must be at least 1");

        let r = &self.regularity;
        ensure!(r.deltas.len() >= 3, "regularity.deltas needs at least 3 values");
        ensure!(
            r.deltas.iter().all(|d| *d > 0.0 && *d < 1.0) && r.deltas.windows(2).all(|w| w[1] < w[0]),
            "regularity.deltas must be strictly decreasing in (0, 1)"
        );
        ensure!(r.pairs >= 1 && r.triples >= 1, "regularity probe counts must be positive");
        ensure!(r.probe_factor >= 2, "regularity.probe_factor must be at least 2");
        if let Some([a, b]) = r.x_box {
            ensure!(a <= b, "regularity.x_box [{a}, {b}] is empty");
        }

        ensure!(
            !self.counterexample.times.is_empty() && self.counterexample.times.iter().all(|t| (0.0..1.0).contains(t)),
            "counterexample.times must lie in [0, 1)"
        );
        Ok(())
    }
}
