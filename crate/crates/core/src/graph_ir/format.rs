//! JSON manifest plus little-endian weights blob.
//!
//! Conv weight extents hold the `[kh, kw, cin, cout]` weights followed by the
//! `cout` biases: f32/f32 for float convs (bias omitted when `has_bias` is
//! false), i8/i32 for quantized ones (bias always present since it carries
//! the folded zero-point terms).

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::graph::{Bias, ConvParams, Graph, GraphInput, Node, Weights};
use super::op::Op;
use super::types::{DataType, TensorSpec};
use crate::error::{Error, Result};

pub const MODEL_FORMAT: &str = "gemflow-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestDoc {
    format: String,
    version: u32,
    inputs: Vec<GraphInput>,
    outputs: Vec<String>,
    weights: BlobDoc,
    /// Free-form provenance written by the tool that produced the file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    generator: Option<serde_json::Value>,
    nodes: Vec<serde_json::Value>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BlobDoc {
    file: String,
    length: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeDoc {
    id: String,
    op: Op,
    inputs: Vec<String>,
    output: TensorSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    weight_ref: Option<WeightRef>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WeightRef {
    offset: usize,
    length: usize,
}

/// Load a manifest and the blob it names (resolved next to the manifest).
pub fn load_model(path: &Path) -> Result<Graph> {
    load_model_with_weights(path, None)
}

/// Load a manifest, optionally overriding the blob location.
pub fn load_model_with_weights(path: &Path, weights: Option<&Path>) -> Result<Graph> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let blob_path: PathBuf = match weights {
        Some(p) => p.to_path_buf(),
        None => {
            let doc: serde_json::Value = serde_json::from_str(&text)?;
            let file = doc
                .get("weights")
                .and_then(|w| w.get("file"))
                .and_then(|f| f.as_str())
                .ok_or_else(|| Error::Parse {
                    node: "<manifest>".into(),
                    field: "weights.file".into(),
                    message: "missing blob file name".into(),
                })?;
            path.parent().unwrap_or(Path::new(".")).join(file)
        }
    };
    let blob = fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
    load_model_from_bytes(&text, &blob)
}

pub fn load_model_from_bytes(manifest: &str, blob: &[u8]) -> Result<Graph> {
    let de = &mut serde_json::Deserializer::from_str(manifest);
    let doc: ManifestDoc = serde_path_to_error::deserialize(de).map_err(|e| Error::Parse {
        node: "<manifest>".into(),
        field: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    if doc.format != MODEL_FORMAT || doc.version != MODEL_VERSION {
        return Err(Error::Parse {
            node: "<manifest>".into(),
            field: "format".into(),
            message: format!(
                "expected {MODEL_FORMAT} v{MODEL_VERSION}, found {} v{}",
                doc.format, doc.version
            ),
        });
    }
    if doc.weights.length != blob.len() {
        return Err(Error::BlobMismatch(format!(
            "manifest declares {} bytes, blob holds {}",
            doc.weights.length,
            blob.len()
        )));
    }

    let mut node_docs = Vec::with_capacity(doc.nodes.len());
    for (i, raw) in doc.nodes.iter().enumerate() {
        let name = raw
            .get("id")
            .and_then(|v| v.as_str())
            .map(str::to_string)
            .unwrap_or_else(|| format!("#{i}"));
        let nd: NodeDoc = serde_path_to_error::deserialize(raw).map_err(|e| Error::Parse {
            node: name,
            field: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        node_docs.push(nd);
    }

    let mut specs: HashMap<&str, &TensorSpec> = doc.inputs.iter().map(|i| (i.id.as_str(), &i.spec)).collect();
    for n in &node_docs {
        specs.insert(&n.id, &n.output);
    }

    let mut extent_sum = 0usize;
    let mut nodes = Vec::with_capacity(node_docs.len());
    for nd in &node_docs {
        let params = match (&nd.op, nd.weight_ref) {
            (Op::Conv2d(c), Some(wr)) => {
                let end = wr.offset.checked_add(wr.length).filter(|&e| e <= blob.len());
                let Some(end) = end else {
                    return Err(Error::BlobMismatch(format!(
                        "node `{}` weight_ref [{}, +{}) extends past blob end {}",
                        nd.id,
                        wr.offset,
                        wr.length,
                        blob.len()
                    )));
                };
                extent_sum += wr.length;
                let input = nd.inputs.first().ok_or_else(|| Error::Shape {
                    node: nd.id.clone(),
                    message: "conv has no input".into(),
                })?;
                let in_spec = specs.get(input.as_str()).ok_or_else(|| Error::DanglingRef {
                    node: nd.id.clone(),
                    input: input.clone(),
                })?;
                let cout = nd.output.channels();
                let count = c.kernel[0] * c.kernel[1] * in_spec.channels() * cout;
                Some(decode_params(&nd.id, &blob[wr.offset..end], nd.output.dtype, count, cout, c.has_bias)?)
            }
            (Op::Conv2d(_), None) => {
                return Err(Error::Parse {
                    node: nd.id.clone(),
                    field: "weight_ref".into(),
                    message: "conv2d requires a weight_ref".into(),
                })
            }
            (_, Some(_)) => {
                return Err(Error::Parse {
                    node: nd.id.clone(),
                    field: "weight_ref".into(),
                    message: format!("{} takes no weights", nd.op.name()),
                })
            }
            (_, None) => None,
        };
        nodes.push(Node {
            id: nd.id.clone(),
            op: nd.op.clone(),
            inputs: nd.inputs.clone(),
            output: nd.output.clone(),
            params,
        });
    }
    if extent_sum != blob.len() {
        return Err(Error::BlobMismatch(format!(
            "weight_ref extents sum to {extent_sum} bytes, blob holds {}",
            blob.len()
        )));
    }
    Graph::new(doc.inputs, doc.outputs, nodes)
}

fn decode_params(
    node: &str,
    bytes: &[u8],
    dtype: DataType,
    count: usize,
    cout: usize,
    has_bias: bool,
) -> Result<ConvParams> {
    let (wbytes, bbytes) = match dtype {
        DataType::I8 => (count, cout * 4),
        _ => (count * 4, if has_bias { cout * 4 } else { 0 }),
    };
    if bytes.len() != wbytes + bbytes {
        return Err(Error::BlobMismatch(format!(
            "node `{node}` weight_ref holds {} bytes, layout needs {}",
            bytes.len(),
            wbytes + bbytes
        )));
    }
    let words = |b: &[u8]| -> Vec<[u8; 4]> { b.chunks_exact(4).map(|c| c.try_into().unwrap()).collect() };
    let (w, b) = bytes.split_at(wbytes);
    Ok(match dtype {
        DataType::I8 => ConvParams {
            weights: Weights::I8(w.iter().map(|&x| x as i8).collect()),
            bias: Bias::I32(words(b).into_iter().map(i32::from_le_bytes).collect()),
        },
        _ => ConvParams {
            weights: Weights::F32(words(w).into_iter().map(f32::from_le_bytes).collect()),
            bias: Bias::F32(if has_bias {
                words(b).into_iter().map(f32::from_le_bytes).collect()
            } else {
                vec![0.0; cout]
            }),
        },
    })
}

fn encode_params(c_has_bias: bool, p: &ConvParams, out: &mut Vec<u8>) {
    match &p.weights {
        Weights::I8(w) => out.extend(w.iter().map(|&x| x as u8)),
        Weights::F32(w) => w.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
    }
    match &p.bias {
        Bias::I32(b) => b.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        Bias::F32(b) if c_has_bias => b.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        Bias::F32(_) => {}
    }
}

/// Manifest text and blob bytes; `blob_file` is the name recorded in the
/// manifest.
pub fn serialize_model(g: &Graph, blob_file: &str) -> Result<(String, Vec<u8>)> {
    serialize_model_with(g, blob_file, None)
}

/// As [`serialize_model`], recording `generator` in the manifest.
pub fn serialize_model_with(
    g: &Graph,
    blob_file: &str,
    generator: Option<serde_json::Value>,
) -> Result<(String, Vec<u8>)> {
    let mut blob = Vec::new();
    let mut nodes = Vec::with_capacity(g.nodes().len());
    for n in g.nodes() {
        let weight_ref = match (&n.op, &n.params) {
            (Op::Conv2d(c), Some(p)) => {
                let offset = blob.len();
                encode_params(c.has_bias, p, &mut blob);
                Some(WeightRef {
                    offset,
                    length: blob.len() - offset,
                })
            }
            _ => None,
        };
        let doc = NodeDoc {
            id: n.id.clone(),
            op: n.op.clone(),
            inputs: n.inputs.clone(),
            output: n.output.clone(),
            weight_ref,
        };
        nodes.push(serde_json::to_value(doc)?);
    }
    let doc = ManifestDoc {
        format: MODEL_FORMAT.into(),
        version: MODEL_VERSION,
        inputs: g.inputs().to_vec(),
        outputs: g.outputs().to_vec(),
        weights: BlobDoc {
            file: blob_file.to_string(),
            length: blob.len(),
        },
        generator,
        nodes,
    };
    let mut text = serde_json::to_string_pretty(&doc)?;
    text.push('\n');
    Ok((text, blob))
}

/// Write `path` and a sibling `<stem>.bin` blob. Returns the blob path.
pub fn save_model(g: &Graph, path: &Path) -> Result<PathBuf> {
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("model");
    let blob_name = format!("{stem}.bin");
    let blob_path = path.with_file_name(&blob_name);
    let (text, blob) = serialize_model(g, &blob_name)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))?;
    fs::write(&blob_path, blob).map_err(|e| Error::io(&blob_path, e))?;
    Ok(blob_path)
}
