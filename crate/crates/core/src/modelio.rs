//! Model file: a versioned JSON document.
//!
//! Field names are fixed by `schemas/model.schema.json`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ghh::{GhhModel, Hyperplane};
use crate::imagekit::{ChannelNorm, Filter2d, Normalization, NUM_CHANNELS};
use crate::sepfilters::SeparableBank;
use crate::MODEL_SCHEMA_VERSION;

/// One hyperplane: offset plus row-major taps per feature channel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterDocument {
    pub bias: f64,
    pub channels: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDocument {
    pub version: u32,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "M")]
    pub m: usize,
    pub patch_size: usize,
    pub delta: Vec<i8>,
    pub normalization: Vec<ChannelNorm>,
    /// `filters[n][m]`.
    pub filters: Vec<Vec<FilterDocument>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub separable: Option<SeparableBank>,
    /// Run configuration that produced the model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

impl ModelDocument {
    pub fn from_model(model: &GhhModel) -> Self {
        Self {
            version: MODEL_SCHEMA_VERSION,
            n: model.n(),
            m: model.m(),
            patch_size: model.patch_size(),
            delta: model.delta().to_vec(),
            normalization: model.normalization().0.to_vec(),
            filters: model
                .planes()
                .iter()
                .map(|row| {
                    row.iter()
                        .map(|p| FilterDocument {
                            bias: p.bias,
                            channels: p.filters.iter().map(|f| f.taps().to_vec()).collect(),
                        })
                        .collect()
                })
                .collect(),
            separable: None,
            config: None,
            config_hash: None,
        }
    }

    /// Rebuilds the model and checks the separable section against it.
    pub fn to_model(&self) -> Result<GhhModel> {
        if self.version != MODEL_SCHEMA_VERSION {
            return Err(Error::Data(format!(
                "model version {} is not supported (expected {MODEL_SCHEMA_VERSION})",
                self.version
            )));
        }
        if self.filters.len() != self.n || self.delta.len() != self.n {
            return Err(Error::Data(format!("model declares N={} but has {} components", self.n, self.filters.len())));
        }
        let norm: [ChannelNorm; NUM_CHANNELS] = self
            .normalization
            .clone()
            .try_into()
            .map_err(|_| Error::Data(format!("normalization needs {NUM_CHANNELS} channels")))?;
        let normalization = Normalization(norm);
        normalization.validate()?;
        let p = self.patch_size;
        let planes = self
            .filters
            .iter()
            .map(|row| {
                if row.len() != self.m {
                    return Err(Error::Data(format!("model declares M={} but a component has {}", self.m, row.len())));
                }
                row.iter()
                    .map(|f| {
                        if f.channels.len() != NUM_CHANNELS {
                            return Err(Error::Data(format!("a filter has {} channels", f.channels.len())));
                        }
                        let filters: Vec<Filter2d> =
                            f.channels.iter().map(|t| Filter2d::new(p, t.clone())).collect::<Result<_>>()?;
                        Ok(Hyperplane {
                            bias: f.bias,
                            filters: filters.try_into().expect("six channels"),
                        })
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let model = GhhModel::new(p, self.delta.clone(), planes, normalization)?;
        if let Some(bank) = &self.separable {
            bank.check_model(&model)?;
        }
        Ok(model)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
    }
}
