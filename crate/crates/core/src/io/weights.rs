use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::models::{ModelWeights, UNet};
use crate::tensor::{OptimizerState, Tensor};

pub const MAGIC: &[u8; 4] = b"SSEG";
pub const FORMAT_VERSION: u32 = 1;

/// Name, dimensions and data.
type Blob = (String, Vec<u32>, Vec<f32>);

/// Raw contents of a weight container.
#[derive(Clone, Debug, PartialEq)]
struct Container {
    k: u32,
    widths: [Vec<(u32, u32)>; 2],
    metadata: String,
    blobs: Vec<Blob>,
}

fn widths(net: &UNet) -> Vec<(u32, u32)> {
    net.blocks
        .iter()
        .map(|b| &b.conv)
        .chain(std::iter::once(&net.head))
        .map(|l| (l.in_channels() as u32, l.out_channels() as u32))
        .collect()
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

impl Container {
    fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, FORMAT_VERSION);
        put_u32(&mut out, self.k);
        for net in &self.widths {
            put_u32(&mut out, net.len() as u32);
            for &(i, o) in net {
                put_u32(&mut out, i);
                put_u32(&mut out, o);
            }
        }
        put_u32(&mut out, self.metadata.len() as u32);
        out.extend_from_slice(self.metadata.as_bytes());
        put_u32(&mut out, self.blobs.len() as u32);
        for (name, dims, data) in &self.blobs {
            put_u32(&mut out, name.len() as u32);
            out.extend_from_slice(name.as_bytes());
            put_u32(&mut out, dims.len() as u32);
            for &d in dims {
                put_u32(&mut out, d);
            }
            for v in data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Weights("missing SSEG magic".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Weights(format!("unsupported format version {version}")));
        }
        let k = r.u32()?;
        let mut read_widths = || -> Result<Vec<(u32, u32)>> {
            let n = r.u32()? as usize;
            if n > 64 {
                return Err(Error::Weights(format!("implausible layer count {n}")));
            }
            (0..n).map(|_| Ok((r.u32()?, r.u32()?))).collect()
        };
        let widths = [read_widths()?, read_widths()?];
        let meta_len = r.u32()? as usize;
        let metadata = String::from_utf8(r.take(meta_len)?.to_vec())
            .map_err(|_| Error::Weights("metadata is not UTF-8".into()))?;
        let count = r.u32()? as usize;
        let mut blobs = Vec::new();
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| Error::Weights("blob name is not UTF-8".into()))?;
            let ndim = r.u32()? as usize;
            if ndim > 8 {
                return Err(Error::Weights(format!("`{name}` has {ndim} dimensions")));
            }
            let dims: Vec<u32> = (0..ndim).map(|_| r.u32()).collect::<Result<_>>()?;
            let numel = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d as usize));
            let numel = numel
                .filter(|n| n.checked_mul(4).is_some_and(|b| b <= r.remaining()))
                .ok_or_else(|| Error::Weights(format!("`{name}` is truncated")))?;
            let data = r
                .take(numel * 4)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            blobs.push((name, dims, data));
        }
        if r.remaining() != 0 {
            return Err(Error::Weights(format!("{} trailing bytes", r.remaining())));
        }
        Ok(Container {
            k,
            widths,
            metadata,
            blobs,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(Error::Weights("unexpected end of data".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

fn blob(name: String, t: &Tensor) -> (String, Vec<u32>, Vec<f32>) {
    (name, t.shape().iter().map(|&d| d as u32).collect(), t.data().to_vec())
}

fn container(weights: &ModelWeights, metadata: String) -> Container {
    Container {
        k: weights.k() as u32,
        widths: [widths(&weights.alpha.net), widths(&weights.residue.net)],
        metadata,
        blobs: weights.named_tensors().into_iter().map(|(n, t)| blob(n, t)).collect(),
    }
}

/// Rebuilds the declared architecture and fills it from the blobs. Blobs
/// not belonging to the networks are returned untouched.
fn into_weights(c: Container) -> Result<(ModelWeights, Vec<Blob>, String)> {
    let mut weights = ModelWeights::new(c.k as usize, 0)?;
    let expected = [widths(&weights.alpha.net), widths(&weights.residue.net)];
    if c.widths != expected {
        return Err(Error::Weights(format!(
            "channel widths {:?} do not match the architecture for K={}",
            c.widths, c.k
        )));
    }
    let mut rest = Vec::new();
    let mut filled = std::collections::HashSet::new();
    let mut slots = weights.named_tensors_mut();
    for (name, dims, data) in c.blobs {
        let Some((_, slot)) = slots.iter_mut().find(|(n, _)| *n == name) else {
            rest.push((name, dims, data));
            continue;
        };
        let shape: Vec<usize> = dims.iter().map(|&d| d as usize).collect();
        if shape != slot.shape() {
            return Err(Error::Weights(format!(
                "`{name}` has shape {shape:?}, expected {:?}",
                slot.shape()
            )));
        }
        if !filled.insert(name.clone()) {
            return Err(Error::Weights(format!("`{name}` appears twice")));
        }
        **slot = Tensor::from_vec(&shape, data)?;
    }
    if let Some((missing, _)) = slots.iter().find(|(n, _)| !filled.contains(n)) {
        return Err(Error::Weights(format!("`{missing}` is missing")));
    }
    drop(slots);
    Ok((weights, rest, c.metadata))
}

pub fn encode_weights(weights: &ModelWeights) -> Vec<u8> {
    container(weights, "{}".into()).encode()
}

/// Decodes a weight container. Checkpoints are accepted too; their
/// optimizer state is ignored.
pub fn decode_weights(bytes: &[u8]) -> Result<ModelWeights> {
    Ok(into_weights(Container::decode(bytes)?)?.0)
}

/// Hex SHA-256 of the encoded weights.
pub fn weights_hash(weights: &ModelWeights) -> String {
    hex::encode(Sha256::digest(encode_weights(weights)))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn save_weights(weights: &ModelWeights, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_weights(weights))
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<ModelWeights> {
    let path = path.as_ref();
    decode_weights(&read_file(path)?).map_err(|e| match e {
        Error::Weights(m) => Error::Weights(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Loads weights and checks they were trained for `k` palette colors.
pub fn load_weights_for(path: impl AsRef<Path>, k: usize) -> Result<ModelWeights> {
    let w = load_weights(path)?;
    if w.k() != k {
        return Err(Error::PaletteSize { expected: w.k(), got: k });
    }
    Ok(w)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct CheckpointMeta {
    step: usize,
    adam_steps: u64,
    lr: f32,
    beta1: f32,
    beta2: f32,
    epsilon: f32,
    #[serde(default)]
    extra: serde_json::Value,
}

/// Weights plus everything needed to resume training.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub weights: ModelWeights,
    pub optimizer: OptimizerState,
    pub step: usize,
    /// Free-form record, typically the training configuration.
    pub extra: serde_json::Value,
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Result<Vec<u8>> {
    let names = ck.weights.parameter_names();
    if names.len() != ck.optimizer.first_moment.len() || names.len() != ck.optimizer.second_moment.len() {
        return Err(Error::Weights("optimizer state does not match the parameters".into()));
    }
    let meta = CheckpointMeta {
        step: ck.step,
        adam_steps: ck.optimizer.step_count,
        lr: ck.optimizer.lr,
        beta1: ck.optimizer.beta1,
        beta2: ck.optimizer.beta2,
        epsilon: ck.optimizer.epsilon,
        extra: ck.extra.clone(),
    };
    let mut c = container(&ck.weights, serde_json::to_string(&meta)?);
    for (n, m) in names.iter().zip(&ck.optimizer.first_moment) {
        c.blobs.push(blob(format!("opt.m.{n}"), m));
    }
    for (n, v) in names.iter().zip(&ck.optimizer.second_moment) {
        c.blobs.push(blob(format!("opt.v.{n}"), v));
    }
    Ok(c.encode())
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let (weights, rest, metadata) = into_weights(Container::decode(bytes)?)?;
    let meta: CheckpointMeta = serde_json::from_str(&metadata)
        .map_err(|e| Error::Weights(format!("not a checkpoint: {e}")))?;
    let names = weights.parameter_names();
    let params = weights.parameters();
    let find = |prefix: &str, name: &str, like: &Tensor| -> Result<Tensor> {
        let key = format!("{prefix}{name}");
        let (_, dims, data) = rest
            .iter()
            .find(|(n, _, _)| *n == key)
            .ok_or_else(|| Error::Weights(format!("`{key}` is missing")))?;
        let shape: Vec<usize> = dims.iter().map(|&d| d as usize).collect();
        if shape != like.shape() {
            return Err(Error::Weights(format!("`{key}` has shape {shape:?}")));
        }
        Tensor::from_vec(&shape, data.clone())
    };
    let mut first = Vec::new();
    let mut second = Vec::new();
    for (n, p) in names.iter().zip(&params) {
        first.push(find("opt.m.", n, p)?);
        second.push(find("opt.v.", n, p)?);
    }
    if rest.len() != 2 * names.len() {
        return Err(Error::Weights("unexpected extra blobs".into()));
    }
    let optimizer = OptimizerState {
        first_moment: first,
        second_moment: second,
        step_count: meta.adam_steps,
        lr: meta.lr,
        beta1: meta.beta1,
        beta2: meta.beta2,
        epsilon: meta.epsilon,
    };
    Ok(Checkpoint {
        weights,
        optimizer,
        step: meta.step,
        extra: meta.extra,
    })
}

pub fn save_checkpoint(ck: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_checkpoint(ck)?)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    decode_checkpoint(&read_file(path.as_ref())?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shapes(w: &ModelWeights) -> Vec<Vec<usize>> {
        w.parameters().iter().map(|t| t.shape().to_vec()).collect()
    }

    #[test]
    fn roundtrip_is_byte_identical() {
        let w = ModelWeights::new(3, 4).unwrap();
        let bytes = encode_weights(&w);
        assert_eq!(&bytes[..4], b"SSEG");
        let back = decode_weights(&bytes).unwrap();
        assert_eq!(back, w);
        assert_eq!(encode_weights(&back), bytes);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.sseg");
        save_weights(&w, &path).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), bytes);
        assert_eq!(weights_hash(&load_weights(&path).unwrap()), weights_hash(&w));
    }

    #[test]
    fn hash_tracks_content() {
        let w = ModelWeights::new(2, 0).unwrap();
        let mut v = w.clone();
        v.parameters_mut()[0].data_mut()[0] += 1.0;
        assert_eq!(weights_hash(&w).len(), 64);
        assert_ne!(weights_hash(&w), weights_hash(&v));
    }

    #[test]
    fn corrupt_containers_are_rejected() {
        let w = ModelWeights::new(2, 1).unwrap();
        let bytes = encode_weights(&w);
        assert!(decode_weights(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_weights(&bad).is_err());
        let mut c = Container::decode(&bytes).unwrap();
        c.k = 3;
        let err = decode_weights(&c.encode()).unwrap_err().to_string();
        assert!(err.contains("widths"), "{err}");
        let mut c = Container::decode(&bytes).unwrap();
        c.blobs[0].1[0] += 1;
        let extra = c.blobs[0].2.len() / (c.blobs[0].1[0] as usize - 1);
        c.blobs[0].2.extend(vec![0.0; extra]);
        assert!(decode_weights(&c.encode()).unwrap_err().to_string().contains("shape"));
        let mut c = Container::decode(&bytes).unwrap();
        c.blobs.pop();
        assert!(decode_weights(&c.encode()).unwrap_err().to_string().contains("missing"));
    }

    #[test]
    fn k_is_checked_on_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.sseg");
        save_weights(&ModelWeights::new(2, 1).unwrap(), &path).unwrap();
        assert!(load_weights_for(&path, 2).is_ok());
        assert!(matches!(
            load_weights_for(&path, 3),
            Err(Error::PaletteSize { expected: 2, got: 3 })
        ));
    }

    #[test]
    fn checkpoint_roundtrip() {
        let w = ModelWeights::new(2, 5).unwrap();
        let s = shapes(&w);
        let refs: Vec<&[usize]> = s.iter().map(Vec::as_slice).collect();
        let mut opt = OptimizerState::new(&refs, 2e-4, 0.0, 0.99, 1e-8);
        opt.step_count = 17;
        opt.second_moment[3].data_mut()[0] = 0.25;
        let ck = Checkpoint {
            weights: w.clone(),
            optimizer: opt,
            step: 17,
            extra: serde_json::json!({"k": 2}),
        };
        let bytes = encode_checkpoint(&ck).unwrap();
        let back = decode_checkpoint(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(encode_checkpoint(&back).unwrap(), bytes);
        assert_eq!(decode_weights(&bytes).unwrap(), w);
        assert!(decode_checkpoint(&encode_weights(&w)).is_err());
    }
}
