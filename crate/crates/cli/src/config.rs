use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use specmm::distances::Budget;
use specmm::mmspace::GeneratorSpec;
use specmm::reconstruct::Verdict;
use specmm::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioName {
    FlatTori,
    CollapsePoint,
    EigenConvergence,
    Reconstruct,
    KkContinuity,
    Custom,
}

impl ScenarioName {
    pub fn as_str(&self) -> &'static str {
        match self {
            ScenarioName::FlatTori => "flat-tori",
            ScenarioName::CollapsePoint => "collapse-point",
            ScenarioName::EigenConvergence => "eigen-convergence",
            ScenarioName::Reconstruct => "reconstruct",
            ScenarioName::KkContinuity => "kk-continuity",
            ScenarioName::Custom => "custom",
        }
    }

    pub const ALL: [ScenarioName; 6] = [
        ScenarioName::FlatTori,
        ScenarioName::CollapsePoint,
        ScenarioName::EigenConvergence,
        ScenarioName::Reconstruct,
        ScenarioName::KkContinuity,
        ScenarioName::Custom,
    ];
}

/// One scenario run. The seed has no default: every run names its seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: ScenarioName,
    /// ε or δ values; measure scales for `reconstruct`.
    #[serde(default)]
    pub grid: Vec<f64>,
    /// Point counts for `eigen-convergence`.
    #[serde(default)]
    pub sizes: Vec<usize>,
    /// Points per cycle (per factor for tori).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    #[serde(default)]
    pub budget: Budget,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// The two spaces compared by `custom`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub spaces: Vec<GeneratorSpec>,
    /// Verdict a `custom` run must reach.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expect: Option<Verdict>,
}

impl ScenarioConfig {
    /// Desk-scale defaults for a scenario.
    pub fn preset(scenario: ScenarioName, seed: u64) -> Self {
        let grid = match scenario {
            ScenarioName::FlatTori | ScenarioName::CollapsePoint | ScenarioName::KkContinuity => {
                vec![0.2, 0.1, 0.05]
            }
            ScenarioName::Reconstruct => vec![4.0],
            _ => Vec::new(),
        };
        let sizes = match scenario {
            ScenarioName::EigenConvergence => vec![16, 32, 64, 128],
            _ => Vec::new(),
        };
        let spaces = match scenario {
            ScenarioName::Custom => vec![
                GeneratorSpec::Cycle {
                    radius: 1.0,
                    count: 32,
                },
                GeneratorSpec::Cycle {
                    radius: 1.0,
                    count: 32,
                },
            ],
            _ => Vec::new(),
        };
        ScenarioConfig {
            scenario,
            grid,
            sizes,
            n: None,
            t: None,
            budget: Budget::default(),
            seed,
            out: None,
            spaces,
            expect: None,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let cfg: ScenarioConfig = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn n_or_default(&self) -> usize {
        self.n.unwrap_or(match self.scenario {
            ScenarioName::FlatTori => 24,
            _ => 32,
        })
    }

    pub fn t_or_default(&self) -> f64 {
        self.t.unwrap_or(1.0)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| {
            Err(Error::Contract(format!(
                "{}: {msg}",
                self.scenario.as_str()
            )))
        };
        let needs_grid = matches!(
            self.scenario,
            ScenarioName::FlatTori
                | ScenarioName::CollapsePoint
                | ScenarioName::KkContinuity
                | ScenarioName::Reconstruct
        );
        if needs_grid && self.grid.is_empty() {
            return bad("grid is empty".into());
        }
        if let Some(v) = self.grid.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            return bad(format!("grid values must be positive, got {v}"));
        }
        if self.scenario == ScenarioName::EigenConvergence && self.sizes.is_empty() {
            return bad("sizes are empty".into());
        }
        if let Some(s) = self.sizes.iter().find(|s| **s < 3) {
            return bad(format!("sizes must be at least 3, got {s}"));
        }
        if self.scenario == ScenarioName::Custom && self.spaces.len() != 2 {
            return bad(format!(
                "needs exactly two spaces, got {}",
                self.spaces.len()
            ));
        }
        if self.n.is_some_and(|n| n < 3) {
            return bad("n must be at least 3".into());
        }
        if let Some(t) = self.t {
            if !(t > 0.0 && t.is_finite()) {
                return bad(format!("t must be positive, got {t}"));
            }
        }
        if self.budget.inner == 0 || self.budget.outer == 0 {
            return bad("budgets must be positive".into());
        }
        Ok(())
    }

    /// Grid sorted by decreasing parameter, duplicates removed.
    pub fn sorted_grid(&self) -> Vec<f64> {
        let mut g = self.grid.clone();
        g.sort_by(|a, b| b.total_cmp(a));
        g.dedup();
        g
    }

    pub fn sorted_sizes(&self) -> Vec<usize> {
        let mut s = self.sizes.clone();
        s.sort_unstable();
        s.dedup();
        s
    }
}
