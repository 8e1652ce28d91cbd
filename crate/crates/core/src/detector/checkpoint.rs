//! Binary checkpoints: every named parameter and buffer as f32, plus a JSON
//! header binding the file to a model configuration.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DetectorError, Model};
use crate::nn::Scalar;

const MAGIC: &[u8; 4] = b"RDNC";
const VERSION: u32 = 1;

/// Header stored alongside the tensors. `config_hash` must match the model
/// the checkpoint is loaded into; `gene` is present for extracted subnets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config_hash: String,
    pub gene: Option<BTreeMap<String, usize>>,
    pub epoch: usize,
    pub seed: u64,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DetectorError + '_ {
    move |source| DetectorError::Io { path: path.to_path_buf(), source }
}

fn bad(path: &Path, reason: impl Into<String>) -> DetectorError {
    DetectorError::BadCheckpoint { path: path.to_path_buf(), reason: reason.into() }
}

/// Write the model's parameters and buffers to `path`. Values are stored as
/// little-endian f32 regardless of the model's scalar type.
pub fn save_checkpoint<S: Scalar>(
    path: &Path,
    model: &Model<S>,
    meta: &CheckpointMeta,
) -> Result<(), DetectorError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let meta_json = serde_json::to_vec(meta)
        .map_err(|e| bad(path, format!("meta encode: {e}")))?;

    w.write_all(MAGIC).map_err(io_err(path))?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io_err(path))?;
    w.write_all(&(meta_json.len() as u64).to_le_bytes()).map_err(io_err(path))?;
    w.write_all(&meta_json).map_err(io_err(path))?;

    let count = model.params.len() + model.bufs.len();
    w.write_all(&(count as u64).to_le_bytes()).map_err(io_err(path))?;

    let write_tensor = |name: &str, kind: u8, dims: &[usize], data: Vec<f32>| {
        let mut buf = Vec::with_capacity(4 + name.len() + 2 + dims.len() * 8 + data.len() * 4);
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.push(kind);
        buf.push(dims.len() as u8);
        for &d in dims {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf
    };
    for id in model.params.ids() {
        let t = model.params.value(id);
        let data: Vec<f32> = t.iter().map(|&v| Scalar::to_f64(v) as f32).collect();
        let buf = write_tensor(model.params.name(id), 0, t.shape(), data);
        w.write_all(&buf).map_err(io_err(path))?;
    }
    for id in model.bufs.ids() {
        let t = model.bufs.value(id);
        let data: Vec<f32> = t.iter().map(|&v| Scalar::to_f64(v) as f32).collect();
        let buf = write_tensor(model.bufs.name(id), 1, t.shape(), data);
        w.write_all(&buf).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Load a checkpoint into `model`, verifying the config hash and that every
/// stored tensor matches a model tensor by name, kind, and shape, and that
/// every model tensor is covered.
pub fn load_checkpoint<S: Scalar>(
    path: &Path,
    model: &mut Model<S>,
) -> Result<CheckpointMeta, DetectorError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io_err(path))?;
    if &magic != MAGIC {
        return Err(bad(path, "not a checkpoint file"));
    }
    let version = read_u32(&mut r, path)?;
    if version != VERSION {
        return Err(bad(path, format!("unsupported version {version}")));
    }
    let meta_len = read_u64(&mut r, path)? as usize;
    let mut meta_json = vec![0u8; meta_len];
    r.read_exact(&mut meta_json).map_err(io_err(path))?;
    let meta: CheckpointMeta = serde_json::from_slice(&meta_json)
        .map_err(|e| bad(path, format!("meta decode: {e}")))?;

    let expect_hash = model.config.config_hash();
    if meta.config_hash != expect_hash {
        return Err(bad(
            path,
            format!("config hash {} does not match model {expect_hash}", meta.config_hash),
        ));
    }

    let count = read_u64(&mut r, path)? as usize;
    if count != model.params.len() + model.bufs.len() {
        return Err(bad(
            path,
            format!(
                "tensor count {count} does not match model ({} params + {} buffers)",
                model.params.len(),
                model.bufs.len()
            ),
        ));
    }

    for _ in 0..count {
        let name_len = read_u32(&mut r, path)? as usize;
        if name_len > 4096 {
            return Err(bad(path, "tensor name is implausibly long"));
        }
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name).map_err(io_err(path))?;
        let name = String::from_utf8(name).map_err(|_| bad(path, "tensor name is not UTF-8"))?;
        let mut kind_ndim = [0u8; 2];
        r.read_exact(&mut kind_ndim).map_err(io_err(path))?;
        let [kind, ndim] = kind_ndim;
        let mut dims = Vec::with_capacity(ndim as usize);
        for _ in 0..ndim {
            dims.push(read_u64(&mut r, path)? as usize);
        }
        let n: usize = dims.iter().product();
        let mut raw = vec![0u8; n * 4];
        r.read_exact(&mut raw).map_err(io_err(path))?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]));

        let target = match kind {
            0 => model
                .params
                .id(&name)
                .map(|id| model.params.value_mut(id))
                .ok_or_else(|| bad(path, format!("unknown parameter {name:?}")))?,
            1 => model
                .bufs
                .id(&name)
                .map(|id| model.bufs.value_mut(id))
                .ok_or_else(|| bad(path, format!("unknown buffer {name:?}")))?,
            k => return Err(bad(path, format!("unknown tensor kind {k}"))),
        };
        if target.shape() != dims.as_slice() {
            return Err(bad(
                path,
                format!("{name:?} has shape {dims:?}, model expects {:?}", target.shape()),
            ));
        }
        for (dst, v) in target.iter_mut().zip(values) {
            *dst = S::from_f64(v as f64);
        }
    }
    // Count equality plus unique names means every model tensor was filled.
    Ok(meta)
}

fn read_u32(r: &mut impl Read, path: &Path) -> Result<u32, DetectorError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(io_err(path))?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read, path: &Path) -> Result<u64, DetectorError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(io_err(path))?;
    Ok(u64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::{ModelConfig, Realization};
    use crate::nn::BnMode;
    use ndarray::Array4;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::path::PathBuf;

    fn small_config() -> ModelConfig {
        ModelConfig {
            backbone_widths: [4, 4, 8, 8, 8],
            stem_width: 4,
            neckhead_widths: [4, 4, 8],
            ..ModelConfig::default()
        }
    }

    fn meta_for(model: &Model<f32>) -> CheckpointMeta {
        CheckpointMeta {
            config_hash: model.config.config_hash(),
            gene: None,
            epoch: 3,
            seed: model.seed,
        }
    }

    #[test]
    fn round_trip_is_exact_for_params_and_buffers() {
        let cfg = small_config();
        let mut model: Model<f32> = Model::supernet(&cfg, 31).unwrap();
        // Push the running stats off their init so buffers are exercised.
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let heat = Array4::from_shape_fn((2, 3, 32, 32), |_| rng.random::<f32>());
        let gray = Array4::from_shape_fn((2, 1, 32, 32), |_| rng.random::<f32>());
        model.forward_full(&heat, &gray, BnMode::Train { momentum: 0.1 }).unwrap();

        let dir = tempdir();
        let path = dir.join("model.ckpt");
        save_checkpoint(&path, &model, &meta_for(&model)).unwrap();

        let mut restored: Model<f32> = Model::supernet(&cfg, 99).unwrap();
        let meta = load_checkpoint(&path, &mut restored).unwrap();
        assert_eq!(meta.epoch, 3);
        assert_eq!(meta.seed, 31);
        for id in model.params.ids() {
            assert_eq!(
                model.params.value(id),
                restored.params.value(id),
                "{}",
                model.params.name(id)
            );
        }
        for id in model.bufs.ids() {
            assert_eq!(model.bufs.value(id), restored.bufs.value(id), "{}", model.bufs.name(id));
        }
        std::fs::remove_dir_all(dir).ok();
    }

    #[test]
    fn wrong_config_is_rejected_by_hash() {
        let cfg = small_config();
        let model: Model<f32> = Model::supernet(&cfg, 1).unwrap();
        let dir = tempdir();
        let path = dir.join("model.ckpt");
        save_checkpoint(&path, &model, &meta_for(&model)).unwrap();

        let other = ModelConfig { num_classes: 3, ..small_config() };
        let mut victim: Model<f32> = Model::supernet(&other, 1).unwrap();
        match load_checkpoint(&path, &mut victim) {
            Err(DetectorError::BadCheckpoint { reason, .. }) => {
                assert!(reason.contains("config hash"), "{reason}");
            }
            other => panic!("expected hash mismatch, got {other:?}"),
        }
        std::fs::remove_dir_all(dir).ok();
    }

    #[test]
    fn shape_mismatch_is_named() {
        let cfg = small_config();
        let model: Model<f32> = Model::supernet(&cfg, 1).unwrap();
        let dir = tempdir();
        let path = dir.join("model.ckpt");
        save_checkpoint(&path, &model, &meta_for(&model)).unwrap();

        // A fixed half-width subnet has the same config hash but smaller
        // tensors, so loading supernet weights into it must fail loudly.
        let mut r = Realization::full_width(&cfg);
        r.backbone = [2, 2, 4, 4, 4];
        let mut narrow: Model<f32> = Model::fixed(&cfg, &r, 1).unwrap();
        match load_checkpoint(&path, &mut narrow) {
            Err(DetectorError::BadCheckpoint { reason, .. }) => {
                assert!(reason.contains("shape") || reason.contains("count"), "{reason}");
            }
            other => panic!("expected shape rejection, got {other:?}"),
        }
        std::fs::remove_dir_all(dir).ok();
    }

    #[test]
    fn truncated_file_is_an_io_error() {
        let cfg = small_config();
        let model: Model<f32> = Model::supernet(&cfg, 1).unwrap();
        let dir = tempdir();
        let path = dir.join("model.ckpt");
        save_checkpoint(&path, &model, &meta_for(&model)).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        let mut victim: Model<f32> = Model::supernet(&cfg, 1).unwrap();
        assert!(load_checkpoint(&path, &mut victim).is_err());
        std::fs::remove_dir_all(dir).ok();
    }

    fn tempdir() -> PathBuf {
        let dir = std::env::temp_dir().join(format!(
            "ckpt-test-{}-{:x}",
            std::process::id(),
            std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .unwrap()
                .as_nanos()
        ));
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }
}
