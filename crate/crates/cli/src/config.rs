//! Run configuration: one plain-text (TOML) file format shared by every
//! command, with command-line flags taking precedence over file values.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use sbmcov::sbm::StoreMode;
use sbmcov::simlab::{CovDesign, ScreeningRecipe};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: u64,
    pub threads: Option<usize>,
    /// Sample size for calibration when no data file is given.
    pub n: Option<usize>,
    /// Column mean subtraction before correlations; the CLI default is on
    /// (real data are rarely mean zero), the library core default is off.
    pub center: Option<bool>,
    pub screening: ScreeningConfig,
    pub chain: ChainSection,
    pub hyper: Option<HyperSection>,
    pub experiment: Option<ExperimentSection>,
    pub lda: Option<LdaSection>,
}

/// Exactly one recipe; the FNR study defaults apply when nothing is chosen.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScreeningConfig {
    pub r: Option<f64>,
    pub quantile: Option<f64>,
    pub fnr: Option<FnrSection>,
}

impl Default for ScreeningConfig {
    fn default() -> Self {
        ScreeningConfig {
            r: None,
            quantile: None,
            fnr: Some(FnrSection::default()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FnrSection {
    /// Reference correlation; 0.2 is a study value, not a recommendation.
    pub rho_star: f64,
    pub alpha_fnr: f64,
    pub reps: usize,
    pub kappa: f64,
}

impl Default for FnrSection {
    fn default() -> Self {
        FnrSection {
            rho_star: 0.2,
            alpha_fnr: 0.01,
            reps: 10_000,
            kappa: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChainSection {
    pub iters: usize,
    pub burnin: usize,
    pub thin: usize,
    pub refresh_interval: u64,
    pub store: StoreMode,
}

impl Default for ChainSection {
    fn default() -> Self {
        ChainSection {
            iters: 4000,
            burnin: 2000,
            thin: 1,
            refresh_interval: 25,
            store: StoreMode::Summaries,
        }
    }
}

/// Optional hyperparameter overrides; unset fields keep the per-dataset
/// defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HyperSection {
    pub a: Option<f64>,
    pub b: Option<f64>,
    pub c: Option<f64>,
    pub lambda: Option<f64>,
    pub tau1: Option<f64>,
    pub eps: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    pub design: DesignName,
    pub p: usize,
    pub n: usize,
    pub replications: usize,
    /// Estimator under test: "sbm" or "sample".
    pub estimator: String,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            design: DesignName::Random,
            p: 50,
            n: 100,
            replications: 5,
            estimator: "sbm".into(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignName {
    Random,
    RandomSpeedStudy,
    Hubs,
    Cliques,
}

impl DesignName {
    pub fn to_design(self, p: usize) -> CovDesign {
        match self {
            DesignName::Random => CovDesign::random(p),
            DesignName::RandomSpeedStudy => CovDesign::random_speed_study(p),
            DesignName::Hubs => CovDesign::hubs(p),
            DesignName::Cliques => CovDesign::cliques(p),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LdaSection {
    /// Label column name or 0-based index inside the data file; ignored when
    /// a separate labels file is given.
    pub label_col: Option<String>,
    pub estimator: String,
    pub pooling: sbmcov::ldaeval::PoolingMode,
}

impl Default for LdaSection {
    fn default() -> Self {
        LdaSection {
            label_col: None,
            estimator: "sbm".into(),
            pooling: sbmcov::ldaeval::PoolingMode::CenteredResiduals,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("config {}: {e}", path.display()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// CLI centering default is on.
    pub fn center(&self) -> bool {
        self.center.unwrap_or(true)
    }

    /// The single configured recipe, rejecting ambiguous combinations.
    pub fn recipe(&self) -> Result<ScreeningRecipe, String> {
        let s = &self.screening;
        let chosen = [s.r.is_some(), s.quantile.is_some(), s.fnr.is_some()]
            .iter()
            .filter(|b| **b)
            .count();
        if chosen > 1 {
            return Err(
                "exactly one screening recipe: set one of r, quantile, or [screening.fnr]".into(),
            );
        }
        if let Some(r) = s.r {
            return Ok(ScreeningRecipe::Fixed { r });
        }
        if let Some(q) = s.quantile {
            return Ok(ScreeningRecipe::Quantile { q });
        }
        let fnr = s.fnr.clone().unwrap_or_default();
        Ok(ScreeningRecipe::Fnr {
            rho_star: fnr.rho_star,
            alpha_fnr: fnr.alpha_fnr,
            reps: fnr.reps,
            kappa: fnr.kappa,
        })
    }

    /// Hyperparameters for a dataset of shape (n, p): defaults with the
    /// configured overrides applied.
    pub fn hyperparams(&self, n: usize, p: usize) -> sbmcov::HyperParams {
        let mut hp = sbmcov::HyperParams::defaults(n.max(2), p.max(2));
        if let Some(h) = &self.hyper {
            if let Some(a) = h.a {
                hp.a = a;
            }
            if let Some(b) = h.b {
                hp.b = b;
            }
            if let Some(c) = h.c {
                hp.c = c;
            }
            if let Some(lambda) = h.lambda {
                hp.lambda = lambda;
                hp.d = lambda / 2.0;
            }
            if let Some(tau1) = h.tau1 {
                hp.tau1 = tau1;
            }
            if let Some(eps) = h.eps {
                hp.eps = eps;
            }
        }
        hp
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_identity() {
        let mut cfg = RunConfig {
            data: Some(PathBuf::from("x.csv")),
            seed: 9,
            ..RunConfig::default()
        };
        cfg.screening.fnr = Some(FnrSection {
            rho_star: 0.25,
            ..FnrSection::default()
        });
        cfg.experiment = Some(ExperimentSection::default());
        let text = cfg.to_toml();
        let parsed: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(parsed, cfg);
        // And a second serialize gives identical bytes.
        assert_eq!(parsed.to_toml(), text);
    }

    #[test]
    fn recipe_selection() {
        let cfg = RunConfig::default();
        assert!(matches!(
            cfg.recipe().unwrap(),
            ScreeningRecipe::Fnr { .. }
        ));
        let mut fixed = RunConfig::default();
        fixed.screening = ScreeningConfig {
            r: Some(0.3),
            quantile: None,
            fnr: None,
        };
        assert_eq!(fixed.recipe().unwrap(), ScreeningRecipe::Fixed { r: 0.3 });
        let mut clash = RunConfig::default();
        clash.screening.r = Some(0.3);
        assert!(clash.recipe().is_err());
    }

    #[test]
    fn hyper_overrides() {
        let mut cfg = RunConfig::default();
        cfg.hyper = Some(HyperSection {
            lambda: Some(3.0),
            tau1: Some(0.01),
            ..HyperSection::default()
        });
        let hp = cfg.hyperparams(100, 50);
        assert_eq!(hp.lambda, 3.0);
        assert_eq!(hp.d, 1.5);
        assert_eq!(hp.tau1, 0.01);
        assert_eq!(hp.a, 0.5);
    }
}
