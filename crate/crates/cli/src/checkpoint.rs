//! Checkpoints: a JSON manifest next to a raw little-endian f32 payload.
//!
//! Training runs in f64 but checkpoints store f32, so a save/load/save
//! cycle is byte-exact. Manifests carry no wall-clock metadata; identical
//! runs write identical bytes.

use std::path::{Path, PathBuf};

use idflow_core::autodiff::{NetSpec, ParamVector};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    /// "flow" or "reward".
    pub kind: String,
    pub net: NetSpec,
    pub seed: u64,
    pub steps: u64,
    pub param_count: usize,
    /// Payload filename, relative to the manifest.
    pub payload: String,
}

fn payload_path(manifest_path: &Path, manifest: &CheckpointManifest) -> PathBuf {
    manifest_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&manifest.payload)
}

/// Write `<name>.json` + `<name>.bin` under `dir`.
pub fn save_checkpoint(
    dir: &Path,
    name: &str,
    kind: &str,
    net: &NetSpec,
    seed: u64,
    steps: u64,
    params: &ParamVector,
) -> Result<PathBuf, CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))?;
    let manifest = CheckpointManifest {
        format_version: CHECKPOINT_FORMAT_VERSION,
        kind: kind.to_string(),
        net: net.clone(),
        seed,
        steps,
        param_count: params.len(),
        payload: format!("{name}.bin"),
    };
    let manifest_path = dir.join(format!("{name}.json"));
    let bin_path = dir.join(format!("{name}.bin"));

    let mut bytes = Vec::with_capacity(params.len() * 4);
    for &v in params.values() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    std::fs::write(&bin_path, &bytes)
        .map_err(|e| CliError::Io(format!("cannot write {}: {e}", bin_path.display())))?;
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| CliError::Io(format!("manifest encode: {e}")))?;
    std::fs::write(&manifest_path, text + "\n")
        .map_err(|e| CliError::Io(format!("cannot write {}: {e}", manifest_path.display())))?;
    Ok(manifest_path)
}

/// Load a manifest + payload back into an f64 parameter vector laid out
/// per the stored net spec.
pub fn load_checkpoint(manifest_path: &Path) -> Result<(CheckpointManifest, ParamVector), CliError> {
    let text = std::fs::read_to_string(manifest_path).map_err(|e| {
        CliError::Precondition(format!("missing checkpoint {}: {e}", manifest_path.display()))
    })?;
    let manifest: CheckpointManifest = serde_json::from_str(&text)
        .map_err(|e| CliError::Precondition(format!("{}: {e}", manifest_path.display())))?;
    if manifest.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(CliError::Precondition(format!(
            "unsupported checkpoint format {}",
            manifest.format_version
        )));
    }
    let bin = payload_path(manifest_path, &manifest);
    let bytes = std::fs::read(&bin)
        .map_err(|e| CliError::Precondition(format!("missing payload {}: {e}", bin.display())))?;
    if bytes.len() != manifest.param_count * 4 {
        return Err(CliError::Precondition(format!(
            "payload {} has {} bytes, expected {}",
            bin.display(),
            bytes.len(),
            manifest.param_count * 4
        )));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    let expected = manifest.net.param_count();
    if values.len() != expected {
        return Err(CliError::Precondition(format!(
            "payload length {} does not match net spec ({expected})",
            values.len()
        )));
    }
    let params = ParamVector::new(manifest.net.param_layout(), values)
        .map_err(|e| CliError::Numerical(e.to_string()))?;
    Ok((manifest, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use idflow_core::autodiff::Activation;
    use idflow_core::rng::stream;

    #[test]
    fn checkpoint_roundtrip_is_bit_exact() {
        let spec = NetSpec {
            input_dim: 5,
            hidden_widths: vec![7],
            output_dim: 3,
            activation: Activation::Gelu,
        };
        let params = spec.init_params(&mut stream(55, 0));
        let dir = tempfile::tempdir().unwrap();

        let path = save_checkpoint(dir.path(), "net", "flow", &spec, 55, 10, &params).unwrap();
        let (manifest, loaded) = load_checkpoint(&path).unwrap();
        assert_eq!(manifest.net, spec);
        assert_eq!(manifest.steps, 10);

        // Save the loaded params again: identical bytes on disk.
        let dir2 = tempfile::tempdir().unwrap();
        let path2 = save_checkpoint(dir2.path(), "net", "flow", &spec, 55, 10, &loaded).unwrap();
        let b1 = std::fs::read(dir.path().join("net.bin")).unwrap();
        let b2 = std::fs::read(dir2.path().join("net.bin")).unwrap();
        assert_eq!(b1, b2);
        let m1 = std::fs::read(&path).unwrap();
        let m2 = std::fs::read(&path2).unwrap();
        assert_eq!(m1, m2);
    }

    #[test]
    fn missing_checkpoint_is_a_precondition_error() {
        let err = load_checkpoint(Path::new("/nonexistent/net.json")).unwrap_err();
        assert!(matches!(err, CliError::Precondition(_)));
    }
}
