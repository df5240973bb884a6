//! Experiment configuration: one JSON document, optionally layered over a
//! named preset.
//!
//! ```json
//! {"preset": "both-negative", "seed": 11, "entire": {"run": {"n_list": [5, 10]}}}
//! ```
//!
//! Objects are merged key by key into the preset; any other value replaces
//! the preset's.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::cauchy::stability_budget;
use crate::entire::{Case, ConstructionOptions, EntireConfig};
use crate::error::{Error, Result};
use crate::kernel::{KernelConfig, EXAMPLE_PRESET};
use crate::reaction::{IgnitionNonlinearity, ReactionConfig, ReactionConstants};
use crate::waves::{NewtonOptions, SolveMethod, TrackingOptions, WaveGrid};

/// Thresholds every claim in the diagnostics is tested against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    /// Absolute tolerance of the adaptive kernel quadrature.
    pub quadrature: f64,
    /// Mass and first-moment checks.
    pub kernel_moments: f64,
    /// Relative gap between the tracking and Newton speeds.
    pub speed_agreement: f64,
    pub newton_residual: f64,
    pub speed_identity: f64,
    pub difference_identity: f64,
    pub root: f64,
    /// Relative gap between the fitted right-tail rate and its root.
    pub tail_rate: f64,
    pub tail_r2: f64,
    pub p_integration: f64,
    pub supersolution: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            quadrature: 1e-12,
            kernel_moments: 1e-8,
            speed_agreement: 0.01,
            newton_residual: 1e-6,
            speed_identity: 1e-3,
            difference_identity: 2e-3,
            root: 1e-12,
            tail_rate: 0.02,
            tail_r2: 0.9999,
            p_integration: 1e-8,
            supersolution: 1e-3,
        }
    }
}

impl Tolerances {
    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("quadrature", self.quadrature),
            ("kernel_moments", self.kernel_moments),
            ("speed_agreement", self.speed_agreement),
            ("newton_residual", self.newton_residual),
            ("speed_identity", self.speed_identity),
            ("difference_identity", self.difference_identity),
            ("root", self.root),
            ("tail_rate", self.tail_rate),
            ("tail_r2", self.tail_r2),
            ("p_integration", self.p_integration),
            ("supersolution", self.supersolution),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("tolerance {name} = {v} must be positive")));
            }
        }
        if self.tail_r2 > 1.0 {
            return Err(Error::Config(format!("tail_r2 = {} exceeds 1", self.tail_r2)));
        }
        Ok(())
    }
}

/// Seeded random ordered pairs checked for the comparison principle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ComparisonSettings {
    pub pairs: usize,
    pub t_end: f64,
    pub dt: f64,
    pub window: (f64, f64),
}

impl Default for ComparisonSettings {
    fn default() -> Self {
        ComparisonSettings {
            pairs: 50,
            t_end: 10.0,
            dt: 0.1,
            window: (-30.0, 30.0),
        }
    }
}

/// Settings of the entire-solution stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EntireSettings {
    pub enabled: bool,
    /// Window of the fronts the construction uses; `None` reuses the wave
    /// stage's fronts. A wider window keeps the slow tails from being cut
    /// where the supersolution is evaluated.
    pub wave_grid: Option<WaveGrid>,
    pub construction: ConstructionOptions,
    pub run: EntireConfig,
    /// `N` of the falsification run, as a multiple of `N*`.
    pub falsification_factor: f64,
    /// Space window of the supersolution check.
    pub supersolution_window: (f64, f64),
    /// The check covers `[t_start, 0]` in steps of `time_step`.
    pub supersolution_t_start: f64,
    pub supersolution_time_step: f64,
    pub p_t_start: f64,
    pub p_steps: usize,
    /// Case the speeds must produce; `None` accepts any.
    pub case_expect: Option<Case>,
    /// Tolerance of `sup |u(·, t_end) - 1|` and the edge proxies.
    pub epsilon: f64,
    /// Extent of the half-line proxy in cases (a) and (b).
    pub halfline_range: f64,
    pub regularity_eta: f64,
    /// Time between states written for the finest ladder member.
    pub snapshot_every: f64,
}

impl Default for EntireSettings {
    fn default() -> Self {
        EntireSettings {
            enabled: true,
            wave_grid: Some(WaveGrid {
                lo: -100.0,
                hi: 100.0,
                h: 0.05,
            }),
            construction: ConstructionOptions::default(),
            run: EntireConfig {
                n_list: vec![5, 10, 20, 40],
                ..EntireConfig::default()
            },
            falsification_factor: 0.01,
            supersolution_window: (-60.0, 60.0),
            supersolution_t_start: -20.0,
            supersolution_time_step: 0.5,
            p_t_start: -20.0,
            p_steps: 20_000,
            case_expect: None,
            epsilon: 1e-2,
            halfline_range: 20.0,
            regularity_eta: 0.5,
            snapshot_every: 5.0,
        }
    }
}

/// Everything a pipeline run depends on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub kernel: KernelConfig,
    pub reaction: ReactionConfig,
    pub grid: WaveGrid,
    pub tracking: TrackingOptions,
    pub newton: NewtonOptions,
    pub method: SolveMethod,
    pub tolerances: Tolerances,
    pub comparison: ComparisonSettings,
    pub entire: EntireSettings,
    pub output_dir: PathBuf,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            kernel: KernelConfig::preset(EXAMPLE_PRESET),
            reaction: ReactionConfig::default(),
            grid: WaveGrid::default(),
            tracking: TrackingOptions::default(),
            newton: NewtonOptions {
                tol: 1e-10,
                ..NewtonOptions::default()
            },
            method: SolveMethod::Both,
            tolerances: Tolerances::default(),
            comparison: ComparisonSettings::default(),
            entire: EntireSettings::default(),
            output_dir: PathBuf::from("runs/default"),
            seed: 20_240_601,
        }
    }
}

/// Names accepted by [`ExperimentConfig::preset`].
pub const PRESETS: [&str; 4] = [EXAMPLE_PRESET, "both-positive", "both-negative", "quick"];

impl ExperimentConfig {
    /// Built-in configurations: the asymmetric example kernel with the
    /// standard nonlinearity, the same kernel shifted left or right so that
    /// both speeds share a sign, and a reduced run for smoke tests.
    pub fn preset(name: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        match name {
            EXAMPLE_PRESET => cfg.entire.case_expect = Some(Case::C),
            "both-positive" => {
                cfg.kernel.shift = -0.8;
                cfg.entire.case_expect = Some(Case::A);
                cfg.output_dir = PathBuf::from("runs/both-positive");
            }
            "both-negative" => {
                cfg.kernel.shift = 0.8;
                cfg.entire.case_expect = Some(Case::B);
                cfg.output_dir = PathBuf::from("runs/both-negative");
            }
            "quick" => {
                cfg.grid = WaveGrid {
                    lo: -40.0,
                    hi: 40.0,
                    h: 0.1,
                };
                cfg.tracking.t_end = 150.0;
                cfg.comparison.pairs = 8;
                cfg.comparison.t_end = 5.0;
                cfg.entire.enabled = false;
                cfg.output_dir = PathBuf::from("runs/quick");
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown preset '{other}'; known: {}",
                    PRESETS.join(", ")
                )))
            }
        }
        Ok(cfg)
    }

    /// Parses a JSON document; a top-level `"preset"` selects the base that
    /// the remaining fields override.
    pub fn from_json(text: &str) -> Result<Self> {
        let mut doc: Value = serde_json::from_str(text)?;
        let base = match doc.as_object_mut().and_then(|o| o.remove("preset")) {
            Some(Value::String(name)) => ExperimentConfig::preset(&name)?,
            Some(other) => return Err(Error::Config(format!("preset must be a string, got {other}"))),
            None => ExperimentConfig::default(),
        };
        let mut merged = serde_json::to_value(&base)?;
        merge(&mut merged, doc);
        Ok(serde_json::from_value(merged)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Applies `value` at a dotted path such as `kernel.shift`.
    pub fn with_override(&self, path: &str, value: Value) -> Result<Self> {
        let mut doc = serde_json::to_value(self)?;
        let mut slot = &mut doc;
        for key in path.split('.') {
            slot = slot
                .as_object_mut()
                .and_then(|o| o.get_mut(key))
                .ok_or_else(|| Error::Config(format!("no configuration field '{path}'")))?;
        }
        *slot = value;
        Ok(serde_json::from_value(doc)?)
    }

    /// The configuration without its output location, which does not
    /// affect any result.
    pub fn located_nowhere(&self) -> ExperimentConfig {
        ExperimentConfig {
            output_dir: PathBuf::new(),
            ..self.clone()
        }
    }

    /// SHA-256 of the canonical JSON form (fields in declaration order),
    /// output location excluded.
    pub fn hash(&self) -> Result<String> {
        let bytes = serde_json::to_vec(&self.located_nowhere())?;
        Ok(hex::encode(Sha256::digest(&bytes)))
    }

    /// Checks everything that can be checked without solving: the kernel
    /// and nonlinearity build, `max f' < 1`, every step fits the stability
    /// budget and every tolerance is positive.
    pub fn validate(&self) -> Result<(IgnitionNonlinearity, ReactionConstants)> {
        self.kernel.build()?;
        let nl = self.reaction.build()?;
        let rc = nl.derive_constants(1e-12)?;
        self.grid.validate()?;
        self.tolerances.validate()?;
        let budget = stability_budget(rc.fprime_max);
        let mut steps = vec![("tracking.dt", self.tracking.dt), ("comparison.dt", self.comparison.dt)];
        if self.entire.enabled {
            steps.push(("entire.run.dt", self.entire.run.dt));
        }
        for (name, dt) in steps {
            if !(dt > 0.0 && dt <= budget) {
                return Err(Error::Config(format!(
                    "{name} = {dt} outside the stability budget (0, {budget:.4}]"
                )));
            }
        }
        if !(self.tracking.t_end > 0.0 && self.comparison.t_end > 0.0) {
            return Err(Error::Config("integration horizons must be positive".into()));
        }
        let (a, b) = self.comparison.window;
        if !(a < b) || self.comparison.pairs == 0 {
            return Err(Error::Config("comparison needs a window lo < hi and at least one pair".into()));
        }
        if self.entire.enabled {
            let e = &self.entire;
            e.run.validate()?;
            if let Some(g) = &e.wave_grid {
                g.validate()?;
                if (g.h - e.run.h).abs() > 1e-12 {
                    return Err(Error::Config(format!(
                        "entire wave grid spacing {} differs from the run spacing {}",
                        g.h, e.run.h
                    )));
                }
            } else if (self.grid.h - e.run.h).abs() > 1e-12 {
                return Err(Error::Config(format!(
                    "wave spacing {} differs from the entire run spacing {}",
                    self.grid.h, e.run.h
                )));
            }
            let positive = [
                ("falsification_factor", e.falsification_factor),
                ("supersolution_time_step", e.supersolution_time_step),
                ("epsilon", e.epsilon),
                ("regularity_eta", e.regularity_eta),
                ("halfline_range", e.halfline_range),
                ("snapshot_every", e.snapshot_every),
                ("construction.n_factor", e.construction.n_factor),
            ];
            for (name, v) in positive {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(Error::Config(format!("entire.{name} = {v} must be positive")));
                }
            }
            if !(e.supersolution_t_start < 0.0 && e.p_t_start < 0.0 && e.p_steps > 0) {
                return Err(Error::Config("entire time ranges must start before 0".into()));
            }
        }
        Ok((nl, rc))
    }
}

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::KernelSource;

    #[test]
    fn round_trips_through_json() {
        let cfg = ExperimentConfig::preset("both-negative").unwrap();
        let back = ExperimentConfig::from_json(&cfg.to_json().unwrap()).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(cfg.hash().unwrap(), back.hash().unwrap());
        let moved = ExperimentConfig {
            output_dir: "elsewhere".into(),
            ..cfg.clone()
        };
        assert_eq!(cfg.hash().unwrap(), moved.hash().unwrap());
    }

    #[test]
    fn overrides_merge_into_the_preset() {
        let cfg = ExperimentConfig::from_json(
            r#"{"preset": "both-positive", "seed": 3, "entire": {"run": {"n_list": [5, 10]}}}"#,
        )
        .unwrap();
        assert_eq!(cfg.kernel.shift, -0.8);
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.entire.run.n_list, vec![5, 10]);
        assert_eq!(cfg.entire.run.dt, 0.05);
        assert!(matches!(cfg.kernel.source, KernelSource::Preset { .. }));
    }

    #[test]
    fn dotted_override() {
        let cfg = ExperimentConfig::default()
            .with_override("kernel.shift", serde_json::json!(0.3))
            .unwrap();
        assert_eq!(cfg.kernel.shift, 0.3);
        assert!(ExperimentConfig::default()
            .with_override("kernel.nope", serde_json::json!(1))
            .is_err());
    }

    #[test]
    fn steep_reaction_is_rejected() {
        let cfg = ExperimentConfig::from_json(r#"{"reaction": {"rho": 0.25, "amplitude": 40.0}}"#).unwrap();
        let err = cfg.validate().unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn unstable_step_and_bad_tolerance_are_rejected() {
        let mut cfg = ExperimentConfig::default();
        cfg.comparison.dt = 0.5;
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::default();
        cfg.tolerances.root = 0.0;
        assert!(cfg.validate().is_err());
        assert!(ExperimentConfig::default().validate().is_ok());
        assert!(ExperimentConfig::preset("nope").is_err());
    }
}
