//! Training configuration files.
//!
//! ```toml
//! [train]
//! steps = 2500
//! crop = 32
//! lr = 5e-4
//!
//! [train.synth]
//! max_speed = 2.0
//!
//! [codec]
//! coding_mode = "merged"
//! width = 16
//!
//! [codec.af]
//! content_adaptive = false
//! ```
//!
//! Keys mirror `TrainConfig` and `CodecConfig`; missing keys keep their
//! defaults.

use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use hbcodec::codec::CodecConfig;
use hbcodec::train::TrainConfig;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub train: TrainConfig,
    pub codec: CodecConfig,
}

impl ConfigFile {
    pub fn toy() -> Self {
        ConfigFile {
            train: TrainConfig::toy(),
            codec: CodecConfig::toy(),
        }
    }
}

pub fn load(path: &Path) -> Result<ConfigFile> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use hbcodec::codec::CodingMode;

    #[test]
    fn partial_files_keep_defaults() {
        let c: ConfigFile = toml::from_str(
            "[train]\nsteps = 7\n[codec]\ncoding_mode = \"merged\"\n[codec.af]\ncoding_level = false\n",
        )
        .unwrap();
        assert_eq!(c.train.steps, 7);
        assert_eq!(c.train.crop, TrainConfig::default().crop);
        assert_eq!(c.codec.coding_mode, CodingMode::Merged);
        assert!(c.codec.af.content_adaptive && !c.codec.af.coding_level);
    }

    #[test]
    fn unknown_tables_are_rejected() {
        assert!(toml::from_str::<ConfigFile>("[trian]\nsteps = 1\n").is_err());
    }

    #[test]
    fn toy_preset_roundtrips() {
        let c = ConfigFile::toy();
        let text = toml::to_string(&c).unwrap();
        assert_eq!(toml::from_str::<ConfigFile>(&text).unwrap(), c);
    }
}
