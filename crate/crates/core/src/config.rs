//! Run configuration from a TOML file with optional `[lake]`, `[mpc]` and
//! `[ddp]` tables. Keys are the struct field names; anything left out keeps
//! its default, and controller defaults that depend on the lake (storage
//! thresholds, DDP grid extent) follow a customized `[lake]` table.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::ddp::DdpConfig;
use crate::error::{Error, Result};
use crate::hydrology::LakeParams;
use crate::mpc::MpcConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub lake: LakeParams,
    pub mpc: MpcConfig,
    pub ddp: DdpConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let lake = LakeParams::default();
        Self {
            mpc: MpcConfig::for_lake(&lake),
            ddp: DdpConfig::for_lake(&lake),
            lake,
        }
    }
}

fn config_err(section: &str, e: impl std::fmt::Display) -> Error {
    Error::Config(format!("[{section}]: {e}"))
}

/// Replace the fields of `base` named in `patch`.
fn overlay<T: Serialize + DeserializeOwned + Clone>(section: &str, base: &T, patch: Option<&toml::Value>) -> Result<T> {
    let Some(patch) = patch else {
        return Ok(base.clone());
    };
    let toml::Value::Table(patch) = patch else {
        return Err(config_err(section, "expected a table"));
    };
    let mut merged = match toml::Value::try_from(base).map_err(|e| config_err(section, e))? {
        toml::Value::Table(t) => t,
        _ => unreachable!("config structs serialize to tables"),
    };
    for (k, v) in patch {
        merged.insert(k.clone(), v.clone());
    }
    toml::Value::Table(merged).try_into().map_err(|e| config_err(section, e))
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let doc: toml::Table = text.parse().map_err(|e| Error::Config(format!("{e}")))?;
        if let Some(k) = doc.keys().find(|k| !["lake", "mpc", "ddp"].contains(&k.as_str())) {
            return Err(Error::Config(format!("unknown section `{k}` (expected lake, mpc, ddp)")));
        }
        let lake: LakeParams = overlay("lake", &LakeParams::default(), doc.get("lake"))?;
        lake.validate()?;
        let mpc: MpcConfig = overlay("mpc", &MpcConfig::for_lake(&lake), doc.get("mpc"))?;
        mpc.validate()?;
        let ddp: DdpConfig = overlay("ddp", &DdpConfig::for_lake(&lake), doc.get("ddp"))?;
        ddp.validate()?;
        Ok(Self { lake, mpc, ddp })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}
