//! Run settings: a built-in profile, overridden by a flat TOML file, overridden
//! by command-line flags.

use std::fmt;
use std::path::Path;

use anyhow::{bail, Context};
use clap::ValueEnum;
use qas_core::controller::Credit;
use qas_core::data::SubsetSizes;
use qas_core::search::{RewardKind, SearchConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// Full budgets: 50 search epochs, up to 5 layers of 8 gates, 300 circuit epochs.
    Paper,
    /// 10 search epochs, 2 layers of 4 gates, 30 circuit epochs on a
    /// balanced 1000/400/400 subset.
    Desk,
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Profile::Paper => "paper",
            Profile::Desk => "desk",
        })
    }
}

/// Every key a config file may set. Unknown keys are rejected.
#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub profile: Option<Profile>,
    pub seed: Option<u64>,
    pub max_epochs: Option<usize>,
    pub max_layers: Option<usize>,
    pub gates_per_layer: Option<usize>,
    pub gamma: Option<f64>,
    pub warm_start: Option<bool>,
    pub reward: Option<RewardKind>,
    pub credit: Option<Credit>,
    pub baseline: Option<bool>,
    pub baseline_decay: Option<f64>,
    pub circuit_epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub circuit_learning_rate: Option<f64>,
    pub controller_learning_rate: Option<f64>,
    pub embed_dim: Option<usize>,
    pub encoder_width: Option<usize>,
    pub hidden: Option<usize>,
    pub train_size: Option<usize>,
    pub valid_size: Option<usize>,
    pub test_size: Option<usize>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("invalid config file {}", path.display()))
    }

    pub fn parse(text: &str) -> anyhow::Result<Self> {
        Ok(toml::from_str(text)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Settings {
    pub profile: Profile,
    pub search: SearchConfig,
    pub subset: Option<SubsetSizes>,
}

impl Settings {
    pub fn for_profile(profile: Profile) -> Self {
        match profile {
            Profile::Paper => Self {
                profile,
                search: SearchConfig::paper(),
                subset: None,
            },
            Profile::Desk => Self {
                profile,
                search: SearchConfig::desk(),
                subset: Some(SubsetSizes {
                    train: 1000,
                    valid: 400,
                    test: 400,
                }),
            },
        }
    }

    /// Profile defaults, then the file, then flags.
    pub fn resolve(
        file: Option<&ConfigFile>,
        profile: Option<Profile>,
        seed: Option<u64>,
    ) -> anyhow::Result<Self> {
        let empty = ConfigFile::default();
        let file = file.unwrap_or(&empty);
        let mut s = Self::for_profile(profile.or(file.profile).unwrap_or(Profile::Paper));
        let c = &mut s.search;

        macro_rules! set {
            ($($key:ident => $target:expr),* $(,)?) => {
                $(if let Some(v) = file.$key { $target = v; })*
            };
        }
        set! {
            seed => c.seed,
            max_epochs => c.max_epochs,
            max_layers => c.max_layers,
            gates_per_layer => c.gates_per_layer,
            gamma => c.reinforce.gamma,
            warm_start => c.warm_start,
            reward => c.reward,
            credit => c.reinforce.credit,
            baseline => c.reinforce.baseline,
            baseline_decay => c.reinforce.baseline_decay,
            circuit_epochs => c.train.max_epochs,
            batch_size => c.train.batch_size,
            circuit_learning_rate => c.train.adam.learning_rate,
            controller_learning_rate => c.controller.adam.learning_rate,
            embed_dim => c.controller.embed_dim,
            encoder_width => c.controller.encoder_width,
            hidden => c.controller.hidden,
        }
        if let Some(seed) = seed {
            c.seed = seed;
        }

        match (file.train_size, file.valid_size, file.test_size) {
            (None, None, None) => {}
            (Some(train), Some(valid), Some(test)) => {
                s.subset = Some(SubsetSizes { train, valid, test })
            }
            _ => bail!("train_size, valid_size and test_size must be given together"),
        }
        s.search.validate()?;
        Ok(s)
    }
}
