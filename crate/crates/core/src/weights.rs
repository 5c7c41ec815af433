//! Named-array archives in the safetensors layout: a JSON header mapping
//! each tensor name to dtype, shape and byte offsets, followed by raw
//! little-endian data.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use safetensors::tensor::{Dtype, SafeTensors, TensorView};

use crate::error::{Error, Result};
use crate::nn::{load_state, state_dict, Module, NamedArray};

fn manifest_err(path: &Path, detail: impl ToString) -> Error {
    Error::Manifest {
        path: path.to_path_buf(),
        detail: detail.to_string(),
    }
}

/// Serializes arrays as F64 with optional string metadata.
pub fn encode_arrays(
    arrays: &BTreeMap<String, NamedArray>,
    metadata: Option<&BTreeMap<String, String>>,
) -> Result<Vec<u8>> {
    let bytes: Vec<(String, Vec<usize>, Vec<u8>)> = arrays
        .iter()
        .map(|(name, arr)| {
            let raw = arr.data.iter().flat_map(|v| v.to_le_bytes()).collect();
            (name.clone(), arr.shape.clone(), raw)
        })
        .collect();
    let mut views = Vec::with_capacity(bytes.len());
    for (name, shape, raw) in &bytes {
        let view = TensorView::new(Dtype::F64, shape.clone(), raw)
            .map_err(|e| Error::InvalidArgument(format!("tensor {name}: {e}")))?;
        views.push((name.as_str(), view));
    }
    let info = metadata.map(|m| m.iter().map(|(k, v)| (k.clone(), v.clone())).collect::<HashMap<_, _>>());
    safetensors::serialize(views, info).map_err(|e| Error::InvalidArgument(e.to_string()))
}

pub fn save_arrays(
    path: &Path,
    arrays: &BTreeMap<String, NamedArray>,
    metadata: Option<&BTreeMap<String, String>>,
) -> Result<()> {
    let bytes = encode_arrays(arrays, metadata)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Named arrays plus the free-form metadata map of one archive.
pub type Archive = (BTreeMap<String, NamedArray>, BTreeMap<String, String>);

/// Reads every array (F32 or F64) and the metadata map.
pub fn load_arrays(path: &Path) -> Result<Archive> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_arrays(&bytes).map_err(|detail| manifest_err(path, detail))
}

fn decode_arrays(bytes: &[u8]) -> std::result::Result<Archive, String> {
    let (_, meta) = SafeTensors::read_metadata(bytes).map_err(|e| e.to_string())?;
    let tensors = SafeTensors::deserialize(bytes).map_err(|e| e.to_string())?;
    let mut out = BTreeMap::new();
    for (name, view) in tensors.iter() {
        let raw = view.data();
        let data: Vec<f64> = match view.dtype() {
            Dtype::F64 => raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                .collect(),
            Dtype::F32 => raw
                .chunks_exact(4)
                .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("chunk of 4"))))
                .collect(),
            other => return Err(format!("tensor {name} has unsupported dtype {other:?}")),
        };
        out.insert(
            name.to_string(),
            NamedArray {
                shape: view.shape().to_vec(),
                data,
            },
        );
    }
    let metadata = meta
        .metadata()
        .as_ref()
        .map(|m| m.iter().map(|(k, v)| (k.clone(), v.clone())).collect())
        .unwrap_or_default();
    Ok((out, metadata))
}

/// Writes every parameter and buffer of `module`.
pub fn save_module(path: &Path, module: &dyn Module) -> Result<()> {
    save_arrays(path, &state_dict(module), None)
}

/// Loads `module` from an archive; see [`load_state`] for the matching rules.
pub fn load_module(path: &Path, module: &mut dyn Module) -> Result<()> {
    let (arrays, _) = load_arrays(path)?;
    load_state(module, &arrays)
}
