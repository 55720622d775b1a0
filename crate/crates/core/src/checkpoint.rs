//! Checkpoint container: a flat manifest of hyperparameters and counters,
//! followed by named parameter groups with explicit shapes and raw
//! little-endian f64 data. Loading validates every shape and fails loudly on
//! disagreement.

use crate::discriminator::DiscriminatorParams;
use crate::error::{Error, Result};
use crate::generator::GeneratorParams;
use crate::model::{ModelArch, ModelParams};
use ndarray::Array2;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

const MAGIC: &[u8; 4] = b"TSIM";
const VERSION: u16 = 1;

/// Parsed checkpoint contents.
#[derive(Debug, Clone, Default)]
pub struct Checkpoint {
    /// Flat key=value manifest; keys iterate sorted, so serialization is
    /// deterministic.
    pub manifest: BTreeMap<String, String>,
    pub groups: Vec<(String, Array2<f64>)>,
}

impl Checkpoint {
    pub fn group(&self, name: &str) -> Option<&Array2<f64>> {
        self.groups.iter().find(|(n, _)| n == name).map(|(_, a)| a)
    }

    pub fn manifest_u64(&self, key: &str) -> Result<u64> {
        self.manifest
            .get(key)
            .ok_or_else(|| Error::Checkpoint(format!("manifest key '{key}' missing")))?
            .parse()
            .map_err(|_| Error::Checkpoint(format!("manifest key '{key}' is not an integer")))
    }

    pub fn manifest_bool(&self, key: &str) -> Result<bool> {
        match self.manifest.get(key).map(String::as_str) {
            Some("true") => Ok(true),
            Some("false") => Ok(false),
            Some(other) => Err(Error::Checkpoint(format!(
                "manifest key '{key}' is not a bool: {other}"
            ))),
            None => Err(Error::Checkpoint(format!("manifest key '{key}' missing"))),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let manifest_text: String = self
            .manifest
            .iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect();
        out.extend_from_slice(&(manifest_text.len() as u32).to_le_bytes());
        out.extend_from_slice(manifest_text.as_bytes());
        out.extend_from_slice(&(self.groups.len() as u32).to_le_bytes());
        for (name, arr) in &self.groups {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(arr.nrows() as u32).to_le_bytes());
            out.extend_from_slice(&(arr.ncols() as u32).to_le_bytes());
            for v in arr.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        let mut cursor = Cursor { bytes, pos: 0 };
        let magic = cursor.take(4)?;
        if magic != MAGIC {
            return Err(Error::Checkpoint("bad magic; not a checkpoint file".into()));
        }
        let version = u16::from_le_bytes(cursor.take(2)?.try_into().unwrap());
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let manifest_len = u32::from_le_bytes(cursor.take(4)?.try_into().unwrap()) as usize;
        let manifest_text = std::str::from_utf8(cursor.take(manifest_len)?)
            .map_err(|_| Error::Checkpoint("manifest is not UTF-8".into()))?;
        let mut manifest = BTreeMap::new();
        for line in manifest_text.lines() {
            if let Some((k, v)) = line.split_once('=') {
                manifest.insert(k.to_string(), v.to_string());
            }
        }
        let group_count = u32::from_le_bytes(cursor.take(4)?.try_into().unwrap()) as usize;
        let mut groups = Vec::with_capacity(group_count);
        for _ in 0..group_count {
            let name_len = u16::from_le_bytes(cursor.take(2)?.try_into().unwrap()) as usize;
            let name = std::str::from_utf8(cursor.take(name_len)?)
                .map_err(|_| Error::Checkpoint("group name is not UTF-8".into()))?
                .to_string();
            let rows = u32::from_le_bytes(cursor.take(4)?.try_into().unwrap()) as usize;
            let cols = u32::from_le_bytes(cursor.take(4)?.try_into().unwrap()) as usize;
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows * cols {
                data.push(f64::from_le_bytes(cursor.take(8)?.try_into().unwrap()));
            }
            let arr = Array2::from_shape_vec((rows, cols), data)
                .map_err(|e| Error::Checkpoint(format!("group '{name}': {e}")))?;
            groups.push((name, arr));
        }
        Ok(Checkpoint { manifest, groups })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut file = std::fs::File::create(path.as_ref())?;
        file.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Checkpoint> {
        let bytes = std::fs::read(path.as_ref())?;
        Checkpoint::from_bytes(&bytes)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint("truncated checkpoint file".into()));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }
}

/// SHA-256 of a byte buffer, hex-encoded.
pub fn hash_bytes(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn arch_manifest(arch: &ModelArch, manifest: &mut BTreeMap<String, String>) {
    manifest.insert("arch.feature_dim".into(), arch.feature_dim.to_string());
    manifest.insert("arch.hidden".into(), arch.hidden.to_string());
    manifest.insert("arch.disc_hidden".into(), arch.disc_hidden.to_string());
    manifest.insert("arch.heads".into(), arch.heads.to_string());
    manifest.insert("arch.use_attention".into(), arch.use_attention.to_string());
    manifest.insert("arch.bidirectional".into(), arch.bidirectional.to_string());
}

fn arch_from_manifest(ck: &Checkpoint) -> Result<ModelArch> {
    Ok(ModelArch {
        feature_dim: ck.manifest_u64("arch.feature_dim")? as usize,
        hidden: ck.manifest_u64("arch.hidden")? as usize,
        disc_hidden: ck.manifest_u64("arch.disc_hidden")? as usize,
        heads: ck.manifest_u64("arch.heads")? as usize,
        use_attention: ck.manifest_bool("arch.use_attention")?,
        bidirectional: ck.manifest_bool("arch.bidirectional")?,
    })
}

/// Model → checkpoint with the architecture in the manifest.
pub fn model_to_checkpoint(model: &ModelParams) -> Checkpoint {
    let mut manifest = BTreeMap::new();
    arch_manifest(&model.arch, &mut manifest);
    let groups = model
        .all_named()
        .into_iter()
        .map(|(n, a)| (n, a.clone()))
        .collect();
    Checkpoint { manifest, groups }
}

/// Rebuilds a model, requiring every expected group to be present with the
/// exact shape and rejecting unknown groups under the model prefixes.
pub fn model_from_checkpoint(ck: &Checkpoint) -> Result<ModelParams> {
    let arch = arch_from_manifest(ck)?;
    let mut model = ModelParams {
        gen_fwd: GeneratorParams::init(arch.feature_dim, arch.hidden, arch.heads, arch.use_attention, &mut crate::seed::rng_for(0, crate::seed::Stream::Init, &[])),
        gen_bwd: None,
        disc: DiscriminatorParams::zeros(arch.feature_dim, arch.disc_hidden),
        arch: arch.clone(),
    };
    if arch.bidirectional {
        model.gen_bwd = Some(model.gen_fwd.clone());
    }

    let expected: Vec<String> = model.all_named().into_iter().map(|(n, _)| n).collect();
    for name in &expected {
        if ck.group(name).is_none() {
            return Err(Error::Checkpoint(format!("missing parameter group '{name}'")));
        }
    }
    let model_prefixes = ["gen_fwd.", "gen_bwd.", "disc."];
    for (name, _) in &ck.groups {
        if model_prefixes.iter().any(|p| name.starts_with(p)) && !expected.contains(name) {
            return Err(Error::Checkpoint(format!("unexpected parameter group '{name}'")));
        }
    }
    {
        let mut named = Vec::new();
        model.gen_fwd.named_mut("gen_fwd", &mut named);
        if let Some(bwd) = &mut model.gen_bwd {
            bwd.named_mut("gen_bwd", &mut named);
        }
        model.disc.named_mut("disc", &mut named);
        for (name, slot) in named {
            let src = ck.group(&name).expect("presence checked above");
            if src.dim() != slot.dim() {
                return Err(Error::Checkpoint(format!(
                    "parameter group '{name}' has shape {:?}, expected {:?}",
                    src.dim(),
                    slot.dim()
                )));
            }
            slot.assign(src);
        }
    }
    Ok(model)
}

pub fn save_model(path: impl AsRef<Path>, model: &ModelParams) -> Result<()> {
    model_to_checkpoint(model).write(path)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelParams> {
    model_from_checkpoint(&Checkpoint::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_model(bidirectional: bool) -> ModelParams {
        ModelParams::init(
            ModelArch {
                feature_dim: 3,
                hidden: 4,
                disc_hidden: 5,
                heads: 2,
                use_attention: true,
                bidirectional,
            },
            17,
        )
    }

    #[test]
    fn round_trip_preserves_every_parameter() {
        for bidir in [true, false] {
            let model = toy_model(bidir);
            let ck = model_to_checkpoint(&model);
            let bytes = ck.to_bytes();
            let restored = model_from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
            assert_eq!(model, restored);
        }
    }

    #[test]
    fn serialization_is_deterministic() {
        let model = toy_model(true);
        let a = model_to_checkpoint(&model).to_bytes();
        let b = model_to_checkpoint(&model).to_bytes();
        assert_eq!(a, b);
        assert_eq!(hash_bytes(&a), hash_bytes(&b));
    }

    #[test]
    fn shape_mismatch_fails_loudly() {
        let model = toy_model(true);
        let mut ck = model_to_checkpoint(&model);
        // Corrupt one group's shape.
        let idx = ck
            .groups
            .iter()
            .position(|(n, _)| n == "gen_fwd.decay.w_gamma")
            .unwrap();
        ck.groups[idx].1 = Array2::zeros((1, 1));
        let err = model_from_checkpoint(&ck).unwrap_err();
        assert!(err.to_string().contains("gen_fwd.decay.w_gamma"));
    }

    #[test]
    fn missing_group_fails_loudly() {
        let model = toy_model(true);
        let mut ck = model_to_checkpoint(&model);
        ck.groups.retain(|(n, _)| n != "disc.out.w");
        let err = model_from_checkpoint(&ck).unwrap_err();
        assert!(err.to_string().contains("disc.out.w"));
    }

    #[test]
    fn truncated_file_is_rejected() {
        let model = toy_model(false);
        let bytes = model_to_checkpoint(&model).to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() / 2]).is_err());
        assert!(Checkpoint::from_bytes(b"NOPE").is_err());
    }
}
