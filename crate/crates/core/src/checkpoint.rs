//! Binary checkpoints of a training run.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "VIGC"  u32 version  u32 len  <len bytes of TOML metadata>
//! u32 tensor count
//! per tensor: u32 name len, name, u32 ndim, u32 × ndim dims, f32 × numel
//! ```
//!
//! Parameters are stored under their own names (all distinct across the two
//! networks); RMSProp accumulators under `opt.<name>`.

use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::init_params;
use crate::params::ParamStore;
use crate::tensor::Tensor;
use crate::training::{RmsProp, TrainConfig, TrainState};

pub const MAGIC: &[u8; 4] = b"VIGC";
pub const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Meta {
    iteration: u64,
    critic_updates: u64,
    generator_updates: u64,
    config: TrainConfig,
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor<f32>) {
    put_u32(out, name.len());
    out.extend_from_slice(name.as_bytes());
    put_u32(out, t.ndim());
    for &d in t.shape() {
        put_u32(out, d);
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode(state: &TrainState<f32>, config: &TrainConfig) -> Result<Vec<u8>> {
    let meta = toml::to_string(&Meta {
        iteration: state.iteration,
        critic_updates: state.critic_updates,
        generator_updates: state.generator_updates,
        config: config.clone(),
    })
    .map_err(|e| Error::Config(format!("cannot serialize checkpoint metadata: {e}")))?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    put_u32(&mut out, meta.len());
    out.extend_from_slice(meta.as_bytes());

    let mut tensors: Vec<(String, &Tensor<f32>)> = Vec::new();
    for store in [&state.params.generator, &state.params.critic] {
        tensors.extend(store.iter().map(|(k, p)| (k.to_string(), &p.value)));
    }
    for opt in [&state.opt_generator, &state.opt_critic] {
        tensors.extend(opt.accumulators.iter().map(|(k, t)| (format!("opt.{k}"), t)));
    }
    put_u32(&mut out, tensors.len());
    for (name, t) in tensors {
        put_tensor(&mut out, &name, t);
    }
    Ok(out)
}

/// Write atomically: to a sibling temporary file, then rename.
pub fn save_checkpoint(path: impl AsRef<Path>, state: &TrainState<f32>, config: &TrainConfig) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(state, config)?;
    let tmp = path.with_extension("ckpt.partial");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.at < n {
            return Err(Error::format(
                self.path,
                format!("truncated while reading {what} at byte {}", self.at),
            ));
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()) as usize)
    }

    fn string(&mut self, n: usize, what: &str) -> Result<&'a str> {
        let raw = self.take(n, what)?;
        std::str::from_utf8(raw).map_err(|_| Error::format(self.path, format!("{what} is not UTF-8")))
    }
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<(TrainConfig, TrainState<f32>)> {
    let mut r = Reader { bytes, at: 0, path };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::format(path, "not a checkpoint (bad magic bytes)"));
    }
    let version = r.u32("version")?;
    if version as u32 != VERSION {
        return Err(Error::format(path, format!("unsupported checkpoint version {version}")));
    }
    let len = r.u32("metadata length")?;
    let meta: Meta = toml::from_str(r.string(len, "metadata")?)
        .map_err(|e| Error::format(path, format!("bad metadata: {e}")))?;
    let count = r.u32("tensor count")?;
    let mut tensors = IndexMap::new();
    for _ in 0..count {
        let n = r.u32("name length")?;
        let name = r.string(n, "tensor name")?.to_string();
        let ndim = r.u32("rank")?;
        let shape = (0..ndim).map(|_| r.u32("extent")).collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        let raw = r.take(numel * 4, &format!("data of {name}"))?;
        let data = raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
        let t = Tensor::new(shape, data).map_err(|e| Error::format(path, format!("{name}: {e}")))?;
        if tensors.insert(name.clone(), t).is_some() {
            return Err(Error::format(path, format!("duplicate tensor {name}")));
        }
    }
    if r.at != bytes.len() {
        return Err(Error::format(path, format!("{} trailing bytes", bytes.len() - r.at)));
    }

    meta.config
        .validate()
        .map_err(|e| Error::format(path, format!("invalid stored config: {e}")))?;
    let mut params = init_params::<f32>(0, &meta.config.model)?;
    let mut take = |name: String, like: &Tensor<f32>| -> Result<Tensor<f32>> {
        let t = tensors
            .shift_remove(&name)
            .ok_or_else(|| Error::format(path, format!("missing tensor {name}")))?;
        if t.shape() != like.shape() {
            return Err(Error::format(
                path,
                format!("{name} has shape {:?}, expected {:?}", t.shape(), like.shape()),
            ));
        }
        Ok(t)
    };
    let mut fill = |store: &mut ParamStore<f32>| -> Result<RmsProp<f32>> {
        let mut opt = RmsProp::new(store);
        for (k, p) in store.iter_mut() {
            p.value = take(k.to_string(), &p.value)?;
        }
        for (k, acc) in opt.accumulators.iter_mut() {
            *acc = take(format!("opt.{k}"), acc)?;
        }
        Ok(opt)
    };
    let opt_generator = fill(&mut params.generator)?;
    let opt_critic = fill(&mut params.critic)?;
    if let Some(extra) = tensors.keys().next() {
        return Err(Error::format(path, format!("unexpected tensor {extra}")));
    }
    let state = TrainState {
        params,
        opt_generator,
        opt_critic,
        iteration: meta.iteration,
        critic_updates: meta.critic_updates,
        generator_updates: meta.generator_updates,
    };
    Ok((meta.config, state))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(TrainConfig, TrainState<f32>)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::datasets::DatasetConfig;

    fn config() -> TrainConfig {
        TrainConfig {
            model: ModelConfig {
                image_size: 16,
                transforms: 2,
                latent_dim: 3,
                code_dim: 5,
                width_divisor: 16,
                ..ModelConfig::default()
            },
            dataset: DatasetConfig::default(),
            ..TrainConfig::default()
        }
    }

    fn state(cfg: &TrainConfig) -> TrainState<f32> {
        let mut s = TrainState::new(cfg).unwrap();
        s.iteration = 12;
        s.critic_updates = 60;
        s.generator_updates = 12;
        let mut x = 0.1f32;
        for (_, acc) in s.opt_critic.accumulators.iter_mut() {
            acc.data_mut().iter_mut().for_each(|v| {
                x = (x * 3.7).fract();
                *v = x;
            });
        }
        s
    }

    fn bits(s: &ParamStore<f32>) -> Vec<u32> {
        s.iter().flat_map(|(_, p)| p.value.data().iter().map(|v| v.to_bits())).collect()
    }

    #[test]
    fn round_trip_is_bitwise() {
        let cfg = config();
        let s = state(&cfg);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ckpt");
        save_checkpoint(&path, &s, &cfg).unwrap();
        let (cfg2, s2) = load_checkpoint(&path).unwrap();
        assert_eq!(cfg2, cfg);
        assert_eq!(bits(&s2.params.generator), bits(&s.params.generator));
        assert_eq!(bits(&s2.params.critic), bits(&s.params.critic));
        assert_eq!(s2.opt_critic, s.opt_critic);
        assert_eq!(s2.opt_generator, s.opt_generator);
        assert_eq!((s2.iteration, s2.critic_updates, s2.generator_updates), (12, 60, 12));
        assert!(!dir.path().join("a.ckpt.partial").exists());
    }

    #[test]
    fn corruption_is_reported_with_the_file() {
        let cfg = config();
        let bytes = encode(&state(&cfg), &cfg).unwrap();
        let p = Path::new("run/x.ckpt");
        let mut bad = bytes.clone();
        bad[0] = b'X';
        let e = decode(&bad, p).unwrap_err().to_string();
        assert!(e.contains("x.ckpt") && e.contains("magic"), "{e}");
        let mut v2 = bytes.clone();
        v2[4] = 2;
        assert!(decode(&v2, p).unwrap_err().to_string().contains("version"));
        let e = decode(&bytes[..bytes.len() - 3], p).unwrap_err().to_string();
        assert!(e.contains("truncated"), "{e}");
        let mut extra = bytes;
        extra.push(0);
        assert!(decode(&extra, p).is_err());
        assert!(load_checkpoint("/nonexistent/y.ckpt").unwrap_err().to_string().contains("y.ckpt"));
    }
}
