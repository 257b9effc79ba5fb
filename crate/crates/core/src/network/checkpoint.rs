//! Binary checkpoint container.
//!
//! Layout: the 8-byte magic `MFIFGAN1`, a little-endian `u64` header length,
//! a JSON header describing every tensor, then all tensor values as
//! little-endian `f32` in header order. Values are rounded to single
//! precision on save.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Discriminator, Generator, NetworkConfig, ParamStore};
use crate::autograd::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"MFIFGAN1";

/// Named tensor groups plus the architecture they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub network: NetworkConfig,
    /// Free-form provenance (training step, seed, configuration, ...).
    pub meta: serde_json::Value,
    pub stores: Vec<(String, ParamStore)>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    network: NetworkConfig,
    meta: serde_json::Value,
    stores: Vec<StoreHeader>,
}

#[derive(Serialize, Deserialize)]
struct StoreHeader {
    name: String,
    tensors: Vec<(String, Vec<usize>)>,
}

impl Checkpoint {
    pub fn from_models(
        generator: &Generator,
        critic: Option<&Discriminator>,
        meta: serde_json::Value,
    ) -> Self {
        use super::Critic;
        let mut stores = vec![
            ("generator".to_string(), generator.params().clone()),
            ("generator_buffers".to_string(), generator.buffers().clone()),
        ];
        if let Some(d) = critic {
            stores.push(("critic".to_string(), d.params().clone()));
        }
        Self {
            network: generator.config().clone(),
            meta,
            stores,
        }
    }

    pub fn store(&self, name: &str) -> Option<&ParamStore> {
        self.stores.iter().find(|(n, _)| n == name).map(|(_, s)| s)
    }

    fn require(&self, name: &str) -> Result<ParamStore> {
        self.store(name)
            .cloned()
            .ok_or_else(|| Error::Checkpoint(format!("checkpoint has no '{name}' tensors")))
    }

    pub fn generator(&self) -> Result<Generator> {
        Generator::from_parts(
            self.network.clone(),
            self.require("generator")?,
            self.require("generator_buffers")?,
        )
    }

    pub fn critic(&self) -> Result<Discriminator> {
        Discriminator::from_parts(self.network.clone(), self.require("critic")?)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            network: self.network.clone(),
            meta: self.meta.clone(),
            stores: self
                .stores
                .iter()
                .map(|(name, s)| StoreHeader {
                    name: name.clone(),
                    tensors: s
                        .iter()
                        .map(|(n, t)| (n.to_string(), t.shape().to_vec()))
                        .collect(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header)?;
        let numel: usize = self.stores.iter().map(|(_, s)| s.numel()).sum();
        let mut out = Vec::with_capacity(16 + json.len() + 4 * numel);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, s) in &self.stores {
            for t in s.tensors() {
                for v in t.data() {
                    out.extend_from_slice(&(*v as f32).to_le_bytes());
                }
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file (bad magic)"));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(16..).ok_or_else(|| bad("truncated header"))?;
        let json = body.get(..hlen).ok_or_else(|| bad("truncated header"))?;
        let header: Header =
            serde_json::from_slice(json).map_err(|e| bad(&format!("corrupt header: {e}")))?;
        let mut data = &body[hlen..];
        let mut stores = Vec::with_capacity(header.stores.len());
        for sh in header.stores {
            let mut store = ParamStore::new();
            for (name, shape) in sh.tensors {
                let n: usize = shape.iter().product();
                if data.len() < 4 * n {
                    return Err(bad("truncated tensor data"));
                }
                let values = data[..4 * n]
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                    .collect();
                data = &data[4 * n..];
                store.push(name, Tensor::new(shape, values));
            }
            stores.push((sh.name, store));
        }
        if !data.is_empty() {
            return Err(bad("trailing bytes after tensor data"));
        }
        Ok(Self {
            network: header.network,
            meta: header.meta,
            stores,
        })
    }

    /// Writes to a sibling temporary file and renames it into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".partial");
        let tmp = std::path::PathBuf::from(tmp);
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
        drop(f);
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> NetworkConfig {
        NetworkConfig {
            base_channels: 2,
            res_blocks: 1,
            se_reduction: 4,
            critic_base_channels: 2,
            resolution: 8,
            ..Default::default()
        }
    }

    fn round_to_f32(store: &mut ParamStore) {
        for t in store.tensors_mut() {
            for v in t.data_mut() {
                *v = *v as f32 as f64;
            }
        }
    }

    #[test]
    fn round_trip_is_exact_for_single_precision_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut g = Generator::new(tiny(), &mut rng).unwrap();
        let mut d = Discriminator::new(tiny(), &mut rng).unwrap();
        round_to_f32(g.params_mut());
        round_to_f32(crate::network::Critic::params_mut(&mut d));
        let ck = Checkpoint::from_models(&g, Some(&d), serde_json::json!({"step": 7}));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/model.ckpt");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.generator().unwrap(), g);
        assert_eq!(back.critic().unwrap(), d);
        assert!(!dir.path().join("nested/model.ckpt.partial").exists());
    }

    #[test]
    fn save_rounds_to_single_precision() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = Generator::new(tiny(), &mut rng).unwrap();
        let back = Checkpoint::from_bytes(
            &Checkpoint::from_models(&g, None, serde_json::Value::Null)
                .to_bytes()
                .unwrap(),
        )
        .unwrap()
        .generator()
        .unwrap();
        for (a, b) in g.params().tensors().zip(back.params().tensors()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert_eq!(*y, *x as f32 as f64);
            }
        }
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = Generator::new(tiny(), &mut rng).unwrap();
        let bytes = Checkpoint::from_models(&g, None, serde_json::Value::Null)
            .to_bytes()
            .unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(Checkpoint::from_bytes(&wrong).is_err());
        let ck = Checkpoint::from_bytes(&bytes).unwrap();
        assert!(ck.critic().is_err());
    }

    #[test]
    fn architecture_mismatch_is_detected() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = Generator::new(tiny(), &mut rng).unwrap();
        let mut ck = Checkpoint::from_models(&g, None, serde_json::Value::Null);
        ck.network.res_blocks = 2;
        assert!(ck.generator().is_err());
    }
}
