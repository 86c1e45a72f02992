//! Named parameter storage, deterministic initialization, and the
//! checkpoint archive format.
//!
//! Checkpoint layout (all integers little-endian):
//!
//! ```text
//! magic "VPCK" | version u8 | config_len u32 | config utf-8 bytes
//! count u32
//! per tensor: name_len u16 | name | dtype u8 (0 = f32) | ndim u8
//!             dims u32 x ndim | payload f32 x prod(dims)
//! sha256 of every preceding byte (32 bytes)
//! ```
//!
//! The trailing digest doubles as the model hash embedded in bitstream
//! headers: it depends only on the stored configuration and parameter
//! values, not on how they were produced.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::tensor::Tensor;

const MAGIC: &[u8; 4] = b"VPCK";
const VERSION: u8 = 1;

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: BTreeMap<String, Tensor<f32>>,
}

/// Derives a per-parameter RNG seed from the run seed and the parameter
/// name, so initialization does not depend on registration order.
pub fn param_seed(seed: u64, name: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(name.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore { entries: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: String, t: Tensor<f32>) {
        assert!(self.entries.insert(name.clone(), t).is_none(), "duplicate param {name}");
    }

    /// Registers a weight drawn from U(-sqrt(3/fan_in), sqrt(3/fan_in)).
    pub fn register_uniform_fanin(&mut self, name: &str, shape: Vec<usize>, fan_in: usize, seed: u64) {
        let bound = (3.0 / fan_in.max(1) as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(param_seed(seed, name));
        let n: usize = shape.iter().product();
        let data: Vec<f32> = (0..n).map(|_| rng.gen_range(-bound..bound) as f32).collect();
        self.insert(name.to_string(), Tensor::from_vec(shape, data));
    }

    /// Registers a weight drawn from U(-bound, bound).
    pub fn register_uniform(&mut self, name: &str, shape: Vec<usize>, bound: f64, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(param_seed(seed, name));
        let n: usize = shape.iter().product();
        let data: Vec<f32> = (0..n).map(|_| rng.gen_range(-bound..bound) as f32).collect();
        self.insert(name.to_string(), Tensor::from_vec(shape, data));
    }

    pub fn register_zeros(&mut self, name: &str, shape: Vec<usize>) {
        self.insert(name.to_string(), Tensor::zeros(shape));
    }

    pub fn register_full(&mut self, name: &str, shape: Vec<usize>, v: f32) {
        self.insert(name.to_string(), Tensor::full(shape, v));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<f32>> {
        self.entries.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(|t| t.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<f32>)> {
        self.entries.iter()
    }

    /// Serializes the archive, including the embedded config text.
    pub fn to_bytes(&self, config: &str) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.extend_from_slice(&(config.len() as u32).to_le_bytes());
        out.extend_from_slice(config.as_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, t) in &self.entries {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(0u8); // dtype f32
            out.push(t.shape().len() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    /// Hash identifying this (config, parameters) pair; equals the archive's
    /// trailing digest.
    pub fn model_hash(&self, config: &str) -> [u8; 32] {
        let bytes = self.to_bytes(config);
        bytes[bytes.len() - 32..].try_into().unwrap()
    }

    pub fn save(&self, path: &Path, config: &str) -> Result<()> {
        crate::pipeline::atomic_write(path, &self.to_bytes(config))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, String)> {
        let fail = |msg: &str| Error::CheckpointMismatch(msg.to_string());
        if bytes.len() < 4 + 1 + 4 + 4 + 32 {
            return Err(fail("archive too short"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(fail("manifest checksum mismatch"));
        }
        let mut r = body;
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| fail("truncated magic"))?;
        if &magic != MAGIC {
            return Err(fail("bad magic"));
        }
        let mut ver = [0u8; 1];
        r.read_exact(&mut ver).map_err(|_| fail("truncated version"))?;
        if ver[0] != VERSION {
            return Err(Error::CheckpointMismatch(format!(
                "unsupported checkpoint version {}",
                ver[0]
            )));
        }
        let read_u32 = |r: &mut &[u8]| -> Result<u32> {
            let mut b = [0u8; 4];
            r.read_exact(&mut b).map_err(|_| fail("truncated field"))?;
            Ok(u32::from_le_bytes(b))
        };
        let clen = read_u32(&mut r)? as usize;
        let mut cbytes = vec![0u8; clen];
        r.read_exact(&mut cbytes).map_err(|_| fail("truncated config"))?;
        let config =
            String::from_utf8(cbytes).map_err(|_| fail("config is not valid utf-8"))?;
        let count = read_u32(&mut r)?;
        let mut store = ParamStore::new();
        for _ in 0..count {
            let mut b2 = [0u8; 2];
            r.read_exact(&mut b2).map_err(|_| fail("truncated name length"))?;
            let nlen = u16::from_le_bytes(b2) as usize;
            let mut nbytes = vec![0u8; nlen];
            r.read_exact(&mut nbytes).map_err(|_| fail("truncated name"))?;
            let name = String::from_utf8(nbytes).map_err(|_| fail("name is not valid utf-8"))?;
            let mut meta = [0u8; 2];
            r.read_exact(&mut meta).map_err(|_| fail("truncated tensor meta"))?;
            if meta[0] != 0 {
                return Err(fail("unsupported dtype"));
            }
            let ndim = meta[1] as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(read_u32(&mut r)? as usize);
            }
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                let mut b4 = [0u8; 4];
                r.read_exact(&mut b4).map_err(|_| fail("truncated payload"))?;
                data.push(f32::from_le_bytes(b4));
            }
            store.insert(
                name,
                Tensor::new(shape, data)
                    .map_err(|e| Error::CheckpointMismatch(e.to_string()))?,
            );
        }
        if !r.is_empty() {
            return Err(fail("trailing bytes in archive"));
        }
        Ok((store, config))
    }

    pub fn load(path: &Path) -> Result<(Self, String)> {
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn save_load_round_trip_is_bitwise() {
        let mut s = ParamStore::new();
        s.register_uniform_fanin("a.w", vec![4, 3], 3, 7);
        s.register_zeros("a.b", vec![4]);
        let bytes = s.to_bytes("kind = \"joint\"");
        let (s2, cfg) = ParamStore::from_bytes(&bytes).unwrap();
        assert_eq!(cfg, "kind = \"joint\"");
        assert_eq!(s2.to_bytes("kind = \"joint\""), bytes);
    }

    #[test]
    fn corrupted_archive_is_rejected() {
        let mut s = ParamStore::new();
        s.register_zeros("w", vec![2]);
        let mut bytes = s.to_bytes("");
        let mid = bytes.len() / 2;
        bytes[mid] ^= 1;
        assert!(ParamStore::from_bytes(&bytes).is_err());
    }

    #[test]
    fn init_is_independent_of_registration_order() {
        let mut a = ParamStore::new();
        a.register_uniform_fanin("x", vec![8], 4, 99);
        a.register_uniform_fanin("y", vec![8], 4, 99);
        let mut b = ParamStore::new();
        b.register_uniform_fanin("y", vec![8], 4, 99);
        b.register_uniform_fanin("x", vec![8], 4, 99);
        assert_eq!(a.get("x"), b.get("x"));
        assert_eq!(a.get("y"), b.get("y"));
    }

    #[test]
    fn fanin_bound_is_respected() {
        let mut s = ParamStore::new();
        s.register_uniform_fanin("w", vec![1000], 25, 1);
        let bound = (3.0f64 / 25.0).sqrt() as f32;
        assert!(s.get("w").unwrap().data().iter().all(|v| v.abs() <= bound));
    }
}
