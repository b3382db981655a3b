//! TOML run configs. Unknown keys anywhere are rejected.
//!
//! ```toml
//! experiment = "scratch"        # scratch | adapt | ablate | submodels | size-report
//! out_dir = "runs/rate20"       # relative to this file; `--out` overrides
//! target_error = 0.10           # optional, for rounds_to_target
//!
//! [arch]
//! input_dim = 8
//! model_dim = 16
//! hidden_dim = 32
//! num_blocks = 3
//! num_classes = 4
//!
//! [data]                        # exactly one of `path` or `generator`
//! path = "standard.data"
//!
//! [federated]
//! rounds = 150
//! clients_per_round = 128
//! client_lr = 0.1
//! local_steps = 4
//! batch_size = 16
//! seed = 1
//! server_optimizer = { kind = "adam", lr = 0.01 }
//! dropout = { rates = [0.2, 0.2, 0.2], scheme = "pcpr", seed = 1 }
//! ```
//!
//! `adapt` additionally reads `[adapt]` (`holdout_domain`, `[adapt.pretrain]`),
//! `ablate` reads `[ablate]`, `submodels` reads `[submodels]` and
//! `size-report` reads `[size_report]`.

use std::fs;
use std::path::{Path, PathBuf};

use feddrop_core::data::GeneratorConfig;
use feddrop_core::fedsim::{CentralizedConfig, FederatedConfig};
use feddrop_core::nn::Arch;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Scratch,
    Adapt,
    Ablate,
    Submodels,
    SizeReport,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Self::Scratch => "scratch",
            Self::Adapt => "adapt",
            Self::Ablate => "ablate",
            Self::Submodels => "submodels",
            Self::SizeReport => "size-report",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub path: Option<PathBuf>,
    pub generator: Option<GeneratorConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptSection {
    pub holdout_domain: usize,
    pub pretrain: CentralizedConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblateSection {
    pub checkpoint: PathBuf,
    pub base_rate: f64,
    /// Extra rate per ambient rank, most ambient first.
    pub extra: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubmodelsSection {
    pub checkpoint: PathBuf,
    pub rate: f64,
    pub n: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SizeReportSection {
    pub ff_fraction: f64,
    pub total_params: usize,
    pub rates: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: Option<Experiment>,
    pub out_dir: Option<PathBuf>,
    pub target_error: Option<f64>,
    pub arch: Option<Arch>,
    pub data: Option<DataSection>,
    pub federated: Option<FederatedConfig>,
    pub adapt: Option<AdaptSection>,
    pub ablate: Option<AblateSection>,
    pub submodels: Option<SubmodelsSection>,
    pub size_report: Option<SizeReportSection>,
}

fn missing(section: &str, what: &str) -> Error {
    Error::Config(format!("{what} needs a [{section}] section"))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config file and resolves its relative paths against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = &mut self.out_dir {
            fix(p);
        }
        if let Some(DataSection { path: Some(p), .. }) = &mut self.data {
            fix(p);
        }
        if let Some(s) = &mut self.ablate {
            fix(&mut s.checkpoint);
        }
        if let Some(s) = &mut self.submodels {
            fix(&mut s.checkpoint);
        }
    }

    /// Fails if the config names a different experiment than the one requested.
    pub fn check_experiment(&self, requested: Experiment) -> Result<()> {
        match self.experiment {
            Some(e) if e != requested => Err(Error::Config(format!(
                "config is for experiment {:?} but {:?} was requested",
                e.name(),
                requested.name()
            ))),
            _ => Ok(()),
        }
    }

    pub fn arch(&self, what: &str) -> Result<Arch> {
        let arch = self.arch.ok_or_else(|| missing("arch", what))?;
        arch.validate()?;
        Ok(arch)
    }

    pub fn data(&self, what: &str) -> Result<&DataSection> {
        let d = self.data.as_ref().ok_or_else(|| missing("data", what))?;
        match (&d.path, &d.generator) {
            (Some(_), None) | (None, Some(_)) => Ok(d),
            _ => Err(Error::Config("[data] needs exactly one of `path` or `generator`".into())),
        }
    }

    pub fn federated(&self, what: &str) -> Result<&FederatedConfig> {
        self.federated.as_ref().ok_or_else(|| missing("federated", what))
    }

    pub fn adapt(&self) -> Result<&AdaptSection> {
        self.adapt.as_ref().ok_or_else(|| missing("adapt", "adapt"))
    }

    pub fn ablate(&self) -> Result<&AblateSection> {
        self.ablate.as_ref().ok_or_else(|| missing("ablate", "ablate"))
    }

    pub fn submodels(&self) -> Result<&SubmodelsSection> {
        self.submodels.as_ref().ok_or_else(|| missing("submodels", "submodels"))
    }

    pub fn size_report(&self) -> Result<&SizeReportSection> {
        self.size_report.as_ref().ok_or_else(|| missing("size_report", "size-report"))
    }

    /// Applies a `--seed` override to every seed the config carries.
    pub fn override_seed(&mut self, seed: u64) {
        if let Some(DataSection { generator: Some(g), .. }) = &mut self.data {
            g.seed = seed;
        }
        if let Some(f) = &mut self.federated {
            f.seed = seed;
            f.dropout.seed = seed;
        }
        if let Some(a) = &mut self.adapt {
            a.pretrain.seed = seed;
        }
        if let Some(s) = &mut self.submodels {
            s.seed = seed;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TRAIN: &str = r#"
experiment = "scratch"
target_error = 0.1

[arch]
input_dim = 8
model_dim = 16
hidden_dim = 32
num_blocks = 3
num_classes = 4

[data]
path = "d.data"

[federated]
rounds = 2
clients_per_round = 4
client_lr = 0.1
local_steps = 2
batch_size = 8
seed = 3
server_optimizer = { kind = "adam" }
dropout = { rates = [0.2, 0.2, 0.2], scheme = "pr", seed = 3 }
"#;

    #[test]
    fn parses_and_resolves() {
        let mut cfg = RunConfig::parse(TRAIN).unwrap();
        cfg.resolve_paths(Path::new("/cfg"));
        assert_eq!(cfg.experiment, Some(Experiment::Scratch));
        assert_eq!(cfg.data("t").unwrap().path.as_deref(), Some(Path::new("/cfg/d.data")));
        let fed = cfg.federated("t").unwrap();
        assert_eq!(fed.dropout.rates, vec![0.2; 3]);
        assert!(cfg.check_experiment(Experiment::Scratch).is_ok());
        assert!(cfg.check_experiment(Experiment::Adapt).is_err());
        cfg.override_seed(77);
        let fed = cfg.federated("t").unwrap();
        assert_eq!((fed.seed, fed.dropout.seed), (77, 77));
    }

    #[test]
    fn unknown_keys_are_errors() {
        assert!(RunConfig::parse(&format!("{TRAIN}\ncolour = 1\n")).is_err());
        let bad = TRAIN.replace("local_steps = 2", "local_steps = 2\nmomentum = 0.9");
        assert!(RunConfig::parse(&bad).is_err());
        let bad = TRAIN.replace("scheme = \"pr\"", "scheme = \"per-round\"");
        assert!(RunConfig::parse(&bad).is_err());
    }

    #[test]
    fn data_needs_exactly_one_source() {
        let mut cfg = RunConfig::parse(TRAIN).unwrap();
        cfg.data = Some(DataSection { path: None, generator: None });
        assert!(cfg.data("t").is_err());
        cfg.data = None;
        assert!(cfg.data("t").is_err());
    }
}
