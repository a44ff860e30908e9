//! The JSON experiment document: one file reproduces any run.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latency::{ChannelModel, ExecutionProfile, PayloadSizes};
use crate::netspec::NetworkSpec;
use crate::pipeline::{FilterModel, ServerOptions};
use crate::tensor::Shape;

/// Client-side settings for loopback sessions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionOptions {
    /// Shape of the synthetic bottleneck tensors the client sends.
    pub bottleneck_shape: Shape,
}

impl Default for SessionOptions {
    fn default() -> Self {
        SessionOptions {
            bottleneck_shape: Shape::new([3, 223, 265]).expect("nonzero extents"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    /// Free-form provenance of the numbers below.
    #[serde(default)]
    pub notes: Vec<String>,
    pub profile: ExecutionProfile,
    pub channel: ChannelModel,
    pub sizes: PayloadSizes,
    #[serde(default)]
    pub filter: FilterModel,
    #[serde(default)]
    pub netspecs: BTreeMap<String, NetworkSpec>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub server: ServerOptions,
    #[serde(default)]
    pub session: SessionOptions,
}

impl Config {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Config = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Config::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.profile.validate()?;
        self.channel.validate()?;
        self.sizes.validate()?;
        self.filter.validate()?;
        self.server.validate()?;
        for (name, spec) in &self.netspecs {
            spec.validate()
                .map_err(|e| Error::Config(format!("netspecs.{name}: {e}")))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "profile": {"t_local": 2.25, "t_edge_full": 0.04, "t_head": 0.1, "t_tail": 0.04},
        "channel": {"rate_bps": 5e6},
        "sizes": {"jpeg_bytes": 1000, "bottleneck_bytes_8": 600,
                  "bottleneck_bytes_16": 1200, "bottleneck_bytes_32": 2400}
    }"#;

    #[test]
    fn minimal_document_uses_defaults() {
        let cfg = Config::from_json(MINIMAL).unwrap();
        assert_eq!(cfg.filter, FilterModel::default());
        assert_eq!(cfg.seed, 0);
        assert_eq!(cfg.profile.t_filter_extra, 0.0);
        assert_eq!(cfg.session.bottleneck_shape.dims(), &[3, 223, 265]);
        let round = Config::from_json(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(round, cfg);
    }

    #[test]
    fn invalid_documents_are_config_errors() {
        let bad_rate = MINIMAL.replace("5e6", "0");
        assert!(matches!(Config::from_json(&bad_rate), Err(Error::Config(_))));
        let unknown = MINIMAL.replacen('{', r#"{"bogus": 1,"#, 1);
        assert!(matches!(Config::from_json(&unknown), Err(Error::Config(_))));
        assert!(matches!(Config::from_json("not json"), Err(Error::Config(_))));
        assert!(matches!(
            Config::load("/nonexistent/splitwire.json"),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn shipped_reference_config_loads() {
        let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/keypoint_rn50.json");
        let cfg = Config::load(path).unwrap();
        assert_eq!(cfg.profile.t_local, 2.25);
        assert!(!cfg.notes.is_empty());
    }
}
