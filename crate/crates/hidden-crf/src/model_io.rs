//! Model files: one JSON document, every matrix stored as base64 of its
//! little-endian `f64` bytes so a load after save reproduces each bit.

use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use hidden_crf_core::chain::{CrfTransition, WeakSourceMatrices};
use hidden_crf_core::{Backbone, BackboneConfig, LabelSpace, Matrix, ModelParams, Scheme};
use serde::{Deserialize, Serialize};

use crate::atomic::{read_to_string, write_atomic};
use crate::error::{CliError, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct EncodedMatrix {
    rows: usize,
    cols: usize,
    data: String,
}

impl EncodedMatrix {
    fn encode(m: &Matrix) -> Self {
        let bytes: Vec<u8> = m.as_slice().iter().flat_map(|x| x.to_le_bytes()).collect();
        EncodedMatrix {
            rows: m.rows(),
            cols: m.cols(),
            data: STANDARD.encode(bytes),
        }
    }

    fn decode(&self, what: &str) -> std::result::Result<Matrix, String> {
        let bytes = STANDARD
            .decode(&self.data)
            .map_err(|e| format!("{what}: bad base64: {e}"))?;
        if bytes.len() % 8 != 0 {
            return Err(format!("{what}: byte length {} is not a multiple of 8", bytes.len()));
        }
        let data: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        let n = data.len();
        Matrix::from_vec(self.rows, self.cols, data)
            .ok_or_else(|| format!("{what}: {n} values for a {}x{} matrix", self.rows, self.cols))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct EncodedBackbone {
    kind: String,
    feature_config: BackboneConfig,
    weights: Vec<EncodedMatrix>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    labels: Vec<String>,
    scheme: Scheme,
    sources: Vec<String>,
    backbone: EncodedBackbone,
    crf_transition: EncodedMatrix,
    weak_matrices: Vec<EncodedMatrix>,
}

pub fn to_json(params: &ModelParams) -> String {
    let bb = &params.backbone;
    let file = ModelFile {
        format_version: FORMAT_VERSION,
        labels: params.space.labels().to_vec(),
        scheme: params.space.scheme(),
        sources: params.source_names.clone(),
        backbone: EncodedBackbone {
            kind: bb.config().kind().to_string(),
            feature_config: bb.config(),
            weights: bb.blocks().into_iter().map(EncodedMatrix::encode).collect(),
        },
        crf_transition: EncodedMatrix::encode(params.transition.matrix()),
        weak_matrices: params.sources.iter().map(EncodedMatrix::encode).collect(),
    };
    serde_json::to_string_pretty(&file).expect("model serialises")
}

/// Parses and validates a model document. Errors are plain messages.
pub fn from_json(text: &str) -> std::result::Result<ModelParams, String> {
    let version = serde_json::from_str::<serde_json::Value>(text)
        .map_err(|e| format!("invalid JSON: {e}"))?
        .get("format_version")
        .and_then(serde_json::Value::as_u64);
    if version != Some(u64::from(FORMAT_VERSION)) {
        return Err(format!(
            "unsupported format_version {version:?}; expected {FORMAT_VERSION}"
        ));
    }
    let file: ModelFile = serde_json::from_str(text).map_err(|e| format!("corrupt model file: {e}"))?;
    let space = LabelSpace::new(&file.labels, file.scheme).map_err(|e| e.to_string())?;
    let k = space.len();
    let cfg = file.backbone.feature_config;
    if cfg.kind() != file.backbone.kind {
        return Err(format!(
            "backbone kind `{}` disagrees with its configuration (`{}`)",
            file.backbone.kind,
            cfg.kind()
        ));
    }
    let blocks = file
        .backbone
        .weights
        .iter()
        .enumerate()
        .map(|(i, m)| m.decode(&format!("backbone block {i}")))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let backbone = Backbone::from_blocks(&cfg, k, blocks).map_err(|e| e.to_string())?;
    let transition = CrfTransition::from_matrix(file.crf_transition.decode("crf_transition")?)
        .map_err(|e| e.to_string())?;
    let sources = file
        .weak_matrices
        .iter()
        .enumerate()
        .map(|(j, m)| m.decode(&format!("weak matrix {j}")))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let params = ModelParams {
        backbone,
        transition,
        sources: WeakSourceMatrices::from_matrices(sources, k).map_err(|e| e.to_string())?,
        space,
        source_names: file.sources,
    };
    params.validate().map_err(|e| e.to_string())?;
    Ok(params)
}

pub fn save_model(params: &ModelParams, path: &Path) -> Result<()> {
    write_atomic(path, to_json(params).as_bytes())
}

pub fn load_model(path: &Path) -> Result<ModelParams> {
    from_json(&read_to_string(path)?).map_err(|m| CliError::invalid(path, m))
}
