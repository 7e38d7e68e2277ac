//! Layer-level DNN profiles.
//!
//! A profile is the sequential logical-layer view of one model. Index 0 is a
//! virtual input layer (no compute, no weights) whose output is the raw input.
//! A cut `l` in `0..=L` runs layers `0..=l` on the device and `l+1..=L` on the
//! edge server after sending the output of layer `l`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerProfile {
    /// Multiply-accumulate operations.
    pub macs: u64,
    /// Bytes of weights needed to load the layer.
    pub param_bytes: u64,
    /// Bytes of the layer's output feature map.
    pub out_feature_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DnnProfile {
    name: String,
    layers: Vec<LayerProfile>,
    #[serde(skip)]
    cum_macs: Vec<u64>,
    #[serde(skip)]
    cum_params: Vec<u64>,
}

const BUNDLED: &[(&str, &str)] = &[
    ("alexnet", include_str!("../data/alexnet.json")),
    ("resnet18", include_str!("../data/resnet18.json")),
    ("synthetic", include_str!("../data/synthetic.json")),
];

impl DnnProfile {
    pub fn new(name: impl Into<String>, layers: Vec<LayerProfile>) -> Result<Self> {
        if layers.len() < 2 {
            return Err(Error::ProfileValidation {
                layer: None,
                message: format!(
                    "need the input layer and at least one layer, got {}",
                    layers.len()
                ),
            });
        }
        if layers[0].macs != 0 || layers[0].param_bytes != 0 {
            return Err(Error::ProfileValidation {
                layer: Some(0),
                message:
                    "layer 0 is the virtual input layer and must have macs = 0 and param_bytes = 0"
                        .into(),
            });
        }
        if let Some(i) = layers.iter().skip(1).position(|l| l.macs == 0) {
            return Err(Error::ProfileValidation {
                layer: Some(i + 1),
                message: "macs = 0 is only allowed for the input layer".into(),
            });
        }
        let cum = |f: fn(&LayerProfile) -> u64| {
            layers
                .iter()
                .scan(0u64, |acc, l| {
                    *acc += f(l);
                    Some(*acc)
                })
                .collect::<Vec<_>>()
        };
        let cum_macs = cum(|l| l.macs);
        let cum_params = cum(|l| l.param_bytes);
        Ok(Self {
            name: name.into(),
            layers,
            cum_macs,
            cum_params,
        })
    }

    /// Parses and validates profile JSON. Errors name the offending layer.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let root: Value = serde_json::from_str(text).map_err(|e| Error::Parse {
            layer: None,
            message: e.to_string(),
        })?;
        let name = root
            .get("name")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::Parse {
                layer: None,
                message: "missing string field `name`".into(),
            })?;
        let raw_layers = root
            .get("layers")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::Parse {
                layer: None,
                message: "missing array field `layers`".into(),
            })?;
        if raw_layers.is_empty() {
            return Err(Error::ProfileValidation {
                layer: Some(0),
                message: "missing input layer 0".into(),
            });
        }
        let layers = raw_layers
            .iter()
            .enumerate()
            .map(|(i, v)| parse_layer(i, v))
            .collect::<Result<Vec<_>>>()?;
        Self::new(name, layers)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("profile serializes")
    }

    /// One of the profiles shipped with the crate: `alexnet`, `resnet18`, `synthetic`.
    pub fn bundled(name: &str) -> Result<Self> {
        let text = BUNDLED
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, t)| *t)
            .ok_or_else(|| Error::Config(format!("no bundled profile named `{name}`")))?;
        Self::from_json_str(text)
    }

    pub fn bundled_names() -> impl Iterator<Item = &'static str> {
        BUNDLED.iter().map(|(n, _)| *n)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn layers(&self) -> &[LayerProfile] {
        &self.layers
    }

    /// Number of real layers `L` (the input layer is not counted).
    pub fn layer_count(&self) -> usize {
        self.layers.len() - 1
    }

    fn check_cut(&self, cut: usize) -> Result<()> {
        if cut > self.layer_count() {
            return Err(Error::CutOutOfRange {
                cut,
                layers: self.layer_count(),
            });
        }
        Ok(())
    }

    pub fn total_macs(&self) -> u64 {
        *self.cum_macs.last().unwrap()
    }

    pub fn total_param_bytes(&self) -> u64 {
        *self.cum_params.last().unwrap()
    }

    /// MACs of layers `0..=cut`, executed on the device.
    pub fn local_macs(&self, cut: usize) -> Result<u64> {
        self.check_cut(cut)?;
        Ok(self.cum_macs[cut])
    }

    /// MACs of layers `cut+1..=L`, executed on the edge server.
    pub fn edge_macs(&self, cut: usize) -> Result<u64> {
        Ok(self.total_macs() - self.local_macs(cut)?)
    }

    pub fn local_param_bytes(&self, cut: usize) -> Result<u64> {
        self.check_cut(cut)?;
        Ok(self.cum_params[cut])
    }

    pub fn edge_param_bytes(&self, cut: usize) -> Result<u64> {
        Ok(self.total_param_bytes() - self.local_param_bytes(cut)?)
    }

    /// Largest output feature map over layers `from..=to`.
    ///
    /// `from == to + 1` is the empty range and yields 0, so the edge side of a
    /// fully local cut (`from = L + 1`) costs nothing.
    pub fn peak_activation(&self, from: usize, to: usize) -> Result<u64> {
        if from > to + 1 {
            return Err(Error::InvertedRange { from, to });
        }
        if to > self.layer_count() && from <= to {
            return Err(Error::CutOutOfRange {
                cut: to,
                layers: self.layer_count(),
            });
        }
        Ok(self
            .layers
            .get(from..=to)
            .unwrap_or(&[])
            .iter()
            .map(|l| l.out_feature_bytes)
            .max()
            .unwrap_or(0))
    }

    /// Bytes sent uplink for `cut`: the cut layer's output, or nothing when
    /// the whole model runs on the device.
    pub fn payload_bytes(&self, cut: usize) -> Result<u64> {
        self.check_cut(cut)?;
        if cut == self.layer_count() {
            Ok(0)
        } else {
            Ok(self.layers[cut].out_feature_bytes)
        }
    }
}

impl<'de> Deserialize<'de> for DnnProfile {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Value::deserialize(d)?;
        DnnProfile::from_json_str(&v.to_string()).map_err(serde::de::Error::custom)
    }
}

fn parse_layer(index: usize, v: &Value) -> Result<LayerProfile> {
    let field = |key: &str| -> Result<u64> {
        let raw = v.get(key).ok_or_else(|| Error::Parse {
            layer: Some(index),
            message: format!("missing field `{key}`"),
        })?;
        if let Some(n) = raw.as_u64() {
            return Ok(n);
        }
        match raw.as_f64() {
            Some(x) if x < 0.0 => Err(Error::ProfileValidation {
                layer: Some(index),
                message: format!("`{key}` must be non-negative, got {raw}"),
            }),
            _ => Err(Error::Parse {
                layer: Some(index),
                message: format!("`{key}` must be a non-negative integer, got {raw}"),
            }),
        }
    };
    Ok(LayerProfile {
        macs: field("macs")?,
        param_bytes: field("param_bytes")?,
        out_feature_bytes: field("out_feature_bytes")?,
    })
}

pub fn load_profile(path: impl AsRef<Path>) -> Result<DnnProfile> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    DnnProfile::from_json_str(&text)
}
