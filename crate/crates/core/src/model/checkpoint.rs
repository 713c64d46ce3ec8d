//! Model checkpoints: a JSON header (kind, spec hash, fingerprint) plus
//! named little-endian f64 parameter arrays, guarded by a SHA-256 digest of
//! the payload.

use super::{ModelError, ModelState, NamedArray, Predictor};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

const MAGIC: &[u8; 8] = b"STEPCKP1";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    kind: String,
    model_id: String,
    spec_hash: String,
    trained: bool,
    training_fingerprint: Option<String>,
    payload_sha256: String,
    spec_json: String,
}

/// Canonical hash of a model spec.
pub fn spec_hash(spec: &super::ModelSpec) -> String {
    let json = serde_json::to_vec(spec).expect("spec serializes");
    hex_digest(&json)
}

fn hex_digest(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn encode_payload(params: &[NamedArray]) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for array in params {
        buf.extend_from_slice(&(array.name.len() as u64).to_le_bytes());
        buf.extend_from_slice(array.name.as_bytes());
        buf.extend_from_slice(&(array.values.len() as u64).to_le_bytes());
        for v in &array.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

fn decode_payload(buf: &[u8]) -> Result<Vec<NamedArray>, ModelError> {
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8], ModelError> {
        if *pos + n > buf.len() {
            return Err(ModelError::CorruptFile("payload truncated".into()));
        }
        let s = &buf[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    let count = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()) as usize;
    let mut params = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(&mut pos, name_len)?.to_vec())
            .map_err(|_| ModelError::CorruptFile("bad array name".into()))?;
        let len = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()) as usize;
        let mut values = Vec::with_capacity(len);
        for _ in 0..len {
            values.push(f64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()));
        }
        params.push(NamedArray { name, values });
    }
    if pos != buf.len() {
        return Err(ModelError::CorruptFile("trailing payload bytes".into()));
    }
    Ok(params)
}

/// Serializes a trained state to checkpoint bytes.
pub fn encode_checkpoint(state: &ModelState) -> Result<Vec<u8>, ModelError> {
    if !state.trained {
        return Err(ModelError::Untrained);
    }
    let payload = encode_payload(&state.params);
    let header = Header {
        kind: state.spec.kind.as_str().to_string(),
        model_id: state.spec.model_id.clone(),
        spec_hash: spec_hash(&state.spec),
        trained: state.trained,
        training_fingerprint: state.training_fingerprint.clone(),
        payload_sha256: hex_digest(&payload),
        spec_json: serde_json::to_string(&state.spec).map_err(|e| ModelError::Io(e.to_string()))?,
    };
    let header_json = serde_json::to_vec(&header).map_err(|e| ModelError::Io(e.to_string()))?;
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&header_json);
    buf.extend_from_slice(&payload);
    Ok(buf)
}

/// Saves a trained model's parameters (M_L save side).
pub fn model_save(model: &dyn Predictor, path: &Path) -> Result<(), ModelError> {
    let buf = encode_checkpoint(model.state())?;
    std::fs::write(path, buf).map_err(|e| ModelError::Io(format!("{}: {e}", path.display())))
}

/// Parses checkpoint bytes into a model state for the given spec, checking
/// kind and integrity.
pub fn decode_checkpoint(
    spec: &super::ModelSpec,
    buf: &[u8],
) -> Result<ModelState, ModelError> {
    if buf.len() < MAGIC.len() + 4 + 8 || &buf[..8] != MAGIC {
        return Err(ModelError::CorruptFile("bad magic".into()));
    }
    let version = u32::from_le_bytes(buf[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(ModelError::CorruptFile(format!("unsupported version {version}")));
    }
    let header_len = u64::from_le_bytes(buf[12..20].try_into().unwrap()) as usize;
    if 20 + header_len > buf.len() {
        return Err(ModelError::CorruptFile("header truncated".into()));
    }
    let header: Header = serde_json::from_slice(&buf[20..20 + header_len])
        .map_err(|e| ModelError::CorruptFile(format!("header: {e}")))?;
    if header.kind != spec.kind.as_str() {
        return Err(ModelError::KindMismatch {
            expected: spec.kind.as_str().into(),
            found: header.kind,
        });
    }
    let payload = &buf[20 + header_len..];
    if hex_digest(payload) != header.payload_sha256 {
        return Err(ModelError::CorruptFile("payload checksum mismatch".into()));
    }
    let params = decode_payload(payload)?;
    Ok(ModelState {
        spec: spec.clone(),
        params,
        trained: header.trained,
        training_fingerprint: header.training_fingerprint,
    })
}

/// Loads previously saved parameters into a fresh model of the given spec
/// (M_L load side). The checkpoint kind must match the spec kind.
pub fn model_load(
    spec: &super::ModelSpec,
    path: &Path,
) -> Result<Box<dyn Predictor>, ModelError> {
    let buf =
        std::fs::read(path).map_err(|e| ModelError::Io(format!("{}: {e}", path.display())))?;
    let state = decode_checkpoint(spec, &buf)?;
    let mut model = super::model_init(spec)?;
    model.restore(state)?;
    Ok(model)
}
