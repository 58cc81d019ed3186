//! Versioned JSON model documents.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{ImavaeModel, InputScaling, LinearPredictor, ModelDims};
use crate::error::{Error, Result};
use crate::gradnet::{Activation, Layer, MlpParams};
use crate::numkit::Matrix;

pub const MODEL_FORMAT: &str = "imavae-model-v1";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDoc {
    format: String,
    dims: ModelDims,
    scaling: InputScaling,
    encoder: NetDoc,
    decoder: NetDoc,
    prior_head: NetDoc,
    predictor: LinearPredictor,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetDoc {
    activations: Vec<Activation>,
    layers: Vec<LayerDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerDoc {
    rows: usize,
    cols: usize,
    /// Row-major `rows × cols`.
    weight: Vec<f64>,
    bias: Vec<f64>,
}

impl From<&MlpParams> for NetDoc {
    fn from(p: &MlpParams) -> Self {
        NetDoc {
            activations: p.activations().to_vec(),
            layers: p
                .layers()
                .iter()
                .map(|l| LayerDoc {
                    rows: l.weight.rows(),
                    cols: l.weight.cols(),
                    weight: l.weight.data().to_vec(),
                    bias: l.bias.clone(),
                })
                .collect(),
        }
    }
}

impl NetDoc {
    fn into_params(self) -> Result<MlpParams> {
        let layers = self
            .layers
            .into_iter()
            .map(|l| {
                Ok(Layer {
                    weight: Matrix::from_vec(l.rows, l.cols, l.weight)?,
                    bias: l.bias,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        MlpParams::new(layers, self.activations)
    }
}

impl ImavaeModel {
    /// Serialises to the `imavae-model-v1` JSON document (fixed field order).
    pub fn to_json(&self) -> Result<String> {
        let doc = ModelDoc {
            format: MODEL_FORMAT.to_string(),
            dims: *self.dims(),
            scaling: self.scaling.clone(),
            encoder: (&self.encoder).into(),
            decoder: (&self.decoder).into(),
            prior_head: (&self.prior_head).into(),
            predictor: self.predictor.clone(),
        };
        let mut s = serde_json::to_string_pretty(&doc)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDoc = serde_json::from_str(text)?;
        if doc.format != MODEL_FORMAT {
            return Err(Error::Schema(format!(
                "unsupported model format `{}` (expected `{MODEL_FORMAT}`)",
                doc.format
            )));
        }
        ImavaeModel::from_parts(
            doc.dims,
            doc.encoder.into_params()?,
            doc.decoder.into_params()?,
            doc.prior_head.into_params()?,
            doc.predictor,
            doc.scaling,
        )
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
