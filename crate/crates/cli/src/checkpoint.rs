//! Model checkpoints.
//!
//! ```text
//! magic         8 bytes  "MABCKPT\0"
//! version       u32 LE   1
//! manifest_len  u64 LE
//! manifest      UTF-8 JSON (see `Manifest`)
//! blob          f32 LE weights, row-major, in registry order
//! ```
//!
//! The manifest records the model configuration, the normalizer and ETA
//! scaler, every parameter's name, shape and byte offset in the blob, the
//! blob's SHA-256 and how the weights were produced (command, plan, input
//! data hash, parent checkpoint hash).

use anyhow::{bail, ensure, Context, Result};
use mabert_core::model::{Model, ModelConfig};
use mabert_core::scene::Normalizer;
use mabert_core::training::{ExperimentPlan, ModelBundle, TargetScaler};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MAGIC: &[u8; 8] = b"MABCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegistryEntry {
    pub name: String,
    pub shape: [usize; 2],
    /// Byte offset into the blob.
    pub offset: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub command: String,
    pub plan: Option<ExperimentPlan>,
    pub scenes_sha256: Option<String>,
    pub parent_sha256: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub model: ModelConfig,
    pub decoder_outputs: Option<usize>,
    pub normalizer: Normalizer,
    pub eta_scaler: Option<TargetScaler>,
    pub registry: Vec<RegistryEntry>,
    pub provenance: Provenance,
    pub blob_sha256: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn registry(model: &Model) -> Vec<RegistryEntry> {
    let mut offset = 0u64;
    model
        .params()
        .into_iter()
        .map(|(name, m)| {
            let e = RegistryEntry {
                name,
                shape: [m.rows(), m.cols()],
                offset,
            };
            offset += 4 * m.len() as u64;
            e
        })
        .collect()
}

pub fn encode(bundle: &ModelBundle, provenance: Provenance) -> Result<Vec<u8>> {
    let model = &bundle.model;
    let mut blob = Vec::with_capacity(4 * model.parameter_count());
    for (_, m) in model.params() {
        for &v in m.as_slice() {
            blob.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        model: model.config.clone(),
        decoder_outputs: model.decoder.as_ref().map(|d| d.outputs()),
        normalizer: bundle.normalizer.clone(),
        eta_scaler: bundle.eta_scaler,
        registry: registry(model),
        provenance,
        blob_sha256: sha256_hex(&blob),
    };
    let json = serde_json::to_vec_pretty(&manifest)?;
    let mut out = Vec::with_capacity(20 + json.len() + blob.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&blob);
    Ok(out)
}

/// Reads the manifest without touching the weights.
pub fn read_manifest(bytes: &[u8]) -> Result<(Manifest, &[u8])> {
    ensure!(bytes.len() >= 20, "checkpoint truncated in header");
    ensure!(&bytes[..8] == MAGIC, "not a checkpoint");
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    ensure!(version == FORMAT_VERSION, "unknown checkpoint format version {version}");
    let len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
    let end = usize::try_from(len)
        .ok()
        .and_then(|l| l.checked_add(20))
        .filter(|&e| e <= bytes.len())
        .context("checkpoint truncated in manifest")?;
    let manifest: Manifest =
        serde_json::from_slice(&bytes[20..end]).context("malformed checkpoint manifest")?;
    ensure!(
        manifest.format_version == FORMAT_VERSION,
        "unknown manifest format version {}",
        manifest.format_version
    );
    Ok((manifest, &bytes[end..]))
}

pub fn decode(bytes: &[u8]) -> Result<(ModelBundle, Manifest)> {
    let (manifest, blob) = read_manifest(bytes)?;
    let mut model = Model::with_shape(manifest.model.clone(), manifest.decoder_outputs)?;
    let expected = registry(&model);
    if expected != manifest.registry {
        let want: Vec<String> = expected.iter().map(|e| format!("{}{:?}", e.name, e.shape)).collect();
        let got: Vec<String> = manifest.registry.iter().map(|e| format!("{}{:?}", e.name, e.shape)).collect();
        bail!(
            "parameter registry does not match the configuration\n  expected: {}\n  found:    {}",
            want.join(" "),
            got.join(" ")
        );
    }
    let need = 4 * model.parameter_count();
    ensure!(blob.len() >= need, "weights blob truncated ({} of {need} bytes)", blob.len());
    ensure!(blob.len() == need, "{} unexpected bytes after the weights", blob.len() - need);
    ensure!(sha256_hex(blob) == manifest.blob_sha256, "weights blob hash mismatch");
    for (m, e) in model.params_mut().into_iter().zip(&manifest.registry) {
        let start = e.offset as usize;
        for (i, v) in m.as_mut_slice().iter_mut().enumerate() {
            let b = &blob[start + 4 * i..start + 4 * i + 4];
            *v = f64::from(f32::from_le_bytes(b.try_into().expect("4 bytes")));
        }
    }
    let bundle = ModelBundle {
        model,
        normalizer: manifest.normalizer.clone(),
        eta_scaler: manifest.eta_scaler,
    };
    Ok((bundle, manifest))
}

/// Like [`decode`], refusing checkpoints built for another configuration.
pub fn decode_expecting(bytes: &[u8], expected: &ModelConfig) -> Result<(ModelBundle, Manifest)> {
    let (manifest, _) = read_manifest(bytes)?;
    if &manifest.model != expected {
        bail!(
            "checkpoint model configuration does not match the run configuration\n  checkpoint: {}\n  run:        {}",
            serde_json::to_string(&manifest.model)?,
            serde_json::to_string(expected)?
        );
    }
    decode(bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use mabert_core::model::Variant;
    use mabert_core::scene::{Scene, N_FEATURES};
    use rand::SeedableRng;

    fn tiny() -> ModelConfig {
        ModelConfig {
            d_model: 8,
            d_ff: 16,
            n_layers: 1,
            n_heads: 2,
            t_max: 8,
            ..ModelConfig::desk(Variant::AgentAware)
        }
    }

    fn scene() -> Scene {
        let mut data = Vec::new();
        for i in 0..2 * 4 {
            data.extend_from_slice(&[126.0 + 0.01 * i as f64, 37.0 - 0.01 * i as f64, 3000.0 - 50.0 * i as f64]);
        }
        Scene {
            n_agents: 2,
            n_steps: 4,
            n_features: N_FEATURES,
            dt: 10,
            window_start: 1_546_300_800,
            data,
            valid_len: vec![4, 4],
            start_step: vec![0, 0],
            time_to_arrival: vec![100.0, 200.0],
            agent_ids: vec!["X1".into(), "X2".into()],
        }
    }

    fn bundle(decoder: bool) -> ModelBundle {
        let mut b = ModelBundle::new(tiny(), &[scene()], 3).unwrap();
        if decoder {
            b.model.attach_decoder(1, &mut rand_chacha::ChaCha8Rng::seed_from_u64(1)).unwrap();
            b.eta_scaler = Some(TargetScaler { mean: 300.0, std: 50.0 });
        }
        b
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        for decoder in [false, true] {
            let b = bundle(decoder);
            let bytes = encode(&b, Provenance::default()).unwrap();
            let (loaded, manifest) = decode(&bytes).unwrap();
            assert_eq!(manifest.decoder_outputs, decoder.then_some(1));
            assert_eq!(encode(&loaded, Provenance::default()).unwrap(), bytes);
            for ((_, a), (_, b)) in b.model.params().into_iter().zip(loaded.model.params()) {
                for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                    assert!((x - y).abs() <= 1e-5 * x.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn mismatched_configuration_is_refused() {
        let bytes = encode(&bundle(false), Provenance::default()).unwrap();
        let other = ModelConfig { d_model: 16, ..tiny() };
        let err = decode_expecting(&bytes, &other).unwrap_err().to_string();
        assert!(err.contains("\"d_model\":8") && err.contains("\"d_model\":16"), "{err}");
        assert!(decode_expecting(&bytes, &tiny()).is_ok());
    }

    #[test]
    fn damaged_files_are_rejected() {
        let bytes = encode(&bundle(false), Provenance::default()).unwrap();
        let err = decode(&bytes[..bytes.len() - 4]).unwrap_err().to_string();
        assert!(err.contains("truncated"), "{err}");
        assert!(decode(&bytes[..10]).is_err());

        let mut version = bytes.clone();
        version[8] = 9;
        let err = decode(&version).unwrap_err().to_string();
        assert!(err.contains("version 9"), "{err}");

        let mut flipped = bytes.clone();
        let last = flipped.len() - 1;
        flipped[last] ^= 1;
        assert!(decode(&flipped).unwrap_err().to_string().contains("hash"));

        let mut magic = bytes;
        magic[0] = b'X';
        assert!(decode(&magic).is_err());
    }

    #[test]
    fn provenance_round_trips() {
        let p = Provenance {
            command: "pretrain".into(),
            plan: Some(ExperimentPlan::pretrain(Variant::AgentAware, 3, 7)),
            scenes_sha256: Some("ab".into()),
            parent_sha256: None,
        };
        let bytes = encode(&bundle(false), p.clone()).unwrap();
        assert_eq!(read_manifest(&bytes).unwrap().0.provenance, p);
    }
}
