//! Named parameter collections with gradient slots, an Adam optimizer, and a
//! bit-exact binary checkpoint format.
//!
//! # Checkpoint format
//!
//! Little-endian throughout:
//!
//! ```text
//! magic   : 8 bytes  b"PSTORE01"
//! descr   : u32 length + UTF-8 initialization descriptor
//! n_rec   : u32 record count
//! record  : u32 name length + UTF-8 name
//!           u32 rank, rank x u32 dims
//!           numel x f64 row-major payload
//! ```
//!
//! Optimizer state rides along as ordinary records under reserved names
//! (`__step__`, `__m__<name>`, `__v__<name>`), so any reader of the record
//! format can exchange checkpoints.

use super::tensor::Tensor;
use std::collections::BTreeMap;
use std::io::{self, Read, Write};
use thiserror::Error;

const MAGIC: &[u8; 8] = b"PSTORE01";

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic; not a parameter store file")]
    BadMagic,
    #[error("malformed record: {0}")]
    Malformed(String),
    #[error("duplicate parameter name {0}")]
    Duplicate(String),
}

struct Slot {
    value: Tensor,
    grad: Tensor,
    m: Tensor,
    v: Tensor,
}

/// Ordered map name -> tensor with gradient slots and Adam moments.
pub struct ParamStore {
    slots: BTreeMap<String, Slot>,
    init_descr: String,
    step: u64,
}

impl ParamStore {
    pub fn new(init_descr: &str) -> Self {
        Self { slots: BTreeMap::new(), init_descr: init_descr.to_string(), step: 0 }
    }

    pub fn insert(&mut self, name: &str, value: Tensor) {
        assert!(
            !self.slots.contains_key(name),
            "duplicate parameter name {name}"
        );
        let shape = value.shape().to_vec();
        self.slots.insert(
            name.to_string(),
            Slot {
                value,
                grad: Tensor::zeros(&shape),
                m: Tensor::zeros(&shape),
                v: Tensor::zeros(&shape),
            },
        );
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.slots.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn init_descr(&self) -> &str {
        &self.init_descr
    }

    pub fn get(&self, name: &str) -> &Tensor {
        &self.slots.get(name).unwrap_or_else(|| panic!("unknown parameter {name}")).value
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor {
        &mut self.slots.get_mut(name).unwrap_or_else(|| panic!("unknown parameter {name}")).value
    }

    pub fn grad(&self, name: &str) -> &Tensor {
        &self.slots.get(name).unwrap_or_else(|| panic!("unknown parameter {name}")).grad
    }

    pub fn grad_mut(&mut self, name: &str) -> &mut Tensor {
        &mut self.slots.get_mut(name).unwrap_or_else(|| panic!("unknown parameter {name}")).grad
    }

    pub fn zero_grads(&mut self) {
        for slot in self.slots.values_mut() {
            for g in slot.grad.data_mut() {
                *g = 0.0;
            }
        }
    }

    /// One Adam update from the accumulated gradients; increments the step
    /// counter and clears the gradients.
    pub fn adam_step(&mut self, lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - ADAM_BETA1.powi(t);
        let bc2 = 1.0 - ADAM_BETA2.powi(t);
        for slot in self.slots.values_mut() {
            for i in 0..slot.value.numel() {
                let g = slot.grad.data()[i];
                let m = ADAM_BETA1 * slot.m.data()[i] + (1.0 - ADAM_BETA1) * g;
                let v = ADAM_BETA2 * slot.v.data()[i] + (1.0 - ADAM_BETA2) * g * g;
                slot.m.data_mut()[i] = m;
                slot.v.data_mut()[i] = v;
                let update = (m / bc1) / ((v / bc2).sqrt() + ADAM_EPS);
                slot.value.data_mut()[i] -= lr * update;
            }
            for g in slot.grad.data_mut() {
                *g = 0.0;
            }
        }
    }

    /// Plain gradient step `p += lr * grad` (ascent when the gradient points
    /// uphill); clears gradients, leaves the Adam state untouched.
    pub fn sgd_ascent_step(&mut self, lr: f64) {
        for slot in self.slots.values_mut() {
            for i in 0..slot.value.numel() {
                let g = slot.grad.data()[i];
                slot.value.data_mut()[i] += lr * g;
            }
            for g in slot.grad.data_mut() {
                *g = 0.0;
            }
        }
    }

    /// Deep copy of values only (fresh moments and step counter).
    pub fn clone_values(&self) -> ParamStore {
        let mut out = ParamStore::new(&self.init_descr);
        for (name, slot) in &self.slots {
            out.insert(name, slot.value.clone());
        }
        out
    }

    /// Squared L2 distance between two stores with identical layouts.
    pub fn value_distance_sq(&self, other: &ParamStore) -> f64 {
        let mut acc = 0.0;
        for (name, slot) in &self.slots {
            let o = other.get(name);
            for (a, b) in slot.value.data().iter().zip(o.data()) {
                acc += (a - b) * (a - b);
            }
        }
        acc
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<(), StoreError> {
        w.write_all(MAGIC)?;
        write_str(w, &self.init_descr)?;
        let records = self.record_list();
        w.write_all(&u32::try_from(records.len()).unwrap().to_le_bytes())?;
        for (name, tensor) in records {
            write_str(w, &name)?;
            w.write_all(&u32::try_from(tensor.rank()).unwrap().to_le_bytes())?;
            for &d in tensor.shape() {
                w.write_all(&u32::try_from(d).unwrap().to_le_bytes())?;
            }
            for &x in tensor.data() {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    fn record_list(&self) -> Vec<(String, Tensor)> {
        let mut records = Vec::new();
        records.push(("__step__".to_string(), Tensor::scalar(self.step as f64)));
        for (name, slot) in &self.slots {
            records.push((name.clone(), slot.value.clone()));
            records.push((format!("__m__{name}"), slot.m.clone()));
            records.push((format!("__v__{name}"), slot.v.clone()));
        }
        records
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self, StoreError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(StoreError::BadMagic);
        }
        let init_descr = read_str(r)?;
        let n = read_u32(r)? as usize;
        let mut values: BTreeMap<String, Tensor> = BTreeMap::new();
        for _ in 0..n {
            let name = read_str(r)?;
            let rank = read_u32(r)? as usize;
            if rank == 0 || rank > 3 {
                return Err(StoreError::Malformed(format!("rank {rank} out of range")));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(read_u32(r)? as usize);
            }
            let numel: usize = shape.iter().product();
            let mut data = Vec::with_capacity(numel);
            for _ in 0..numel {
                let mut buf = [0u8; 8];
                r.read_exact(&mut buf)?;
                data.push(f64::from_le_bytes(buf));
            }
            if values.insert(name.clone(), Tensor::new(shape, data)).is_some() {
                return Err(StoreError::Duplicate(name));
            }
        }
        let step = values
            .remove("__step__")
            .map(|t| t.item() as u64)
            .ok_or_else(|| StoreError::Malformed("missing __step__ record".into()))?;
        let mut store = ParamStore::new(&init_descr);
        store.step = step;
        let names: Vec<String> = values
            .keys()
            .filter(|k| !k.starts_with("__"))
            .cloned()
            .collect();
        for name in names {
            let value = values.remove(&name).unwrap();
            let shape = value.shape().to_vec();
            let m = values.remove(&format!("__m__{name}"));
            let v = values.remove(&format!("__v__{name}"));
            let (m, v) = match (m, v) {
                (Some(m), Some(v)) => (m, v),
                _ => (Tensor::zeros(&shape), Tensor::zeros(&shape)),
            };
            store.slots.insert(
                name,
                Slot { grad: Tensor::zeros(&shape), value, m, v },
            );
        }
        Ok(store)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), StoreError> {
        let mut f = std::fs::File::create(path)?;
        self.write_to(&mut f)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, StoreError> {
        let mut f = std::fs::File::open(path)?;
        Self::read_from(&mut f)
    }

    /// SHA-256 of the serialized store; used by the fine-tuning reset audit.
    pub fn content_hash(&self) -> [u8; 32] {
        use sha2::{Digest, Sha256};
        let mut bytes = Vec::new();
        self.write_to(&mut bytes).expect("in-memory write cannot fail");
        let digest = Sha256::digest(&bytes);
        let mut out = [0u8; 32];
        out.copy_from_slice(&digest);
        out
    }
}

fn write_str<W: Write>(w: &mut W, s: &str) -> Result<(), StoreError> {
    w.write_all(&u32::try_from(s.len()).unwrap().to_le_bytes())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, StoreError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_str<R: Read>(r: &mut R) -> Result<String, StoreError> {
    let len = read_u32(r)? as usize;
    if len > 1 << 20 {
        return Err(StoreError::Malformed("string length too large".into()));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| StoreError::Malformed("invalid utf-8".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_store() -> ParamStore {
        let mut s = ParamStore::new("test");
        s.insert("w", Tensor::matrix(2, 2, vec![1.0, -2.0, 3.5, 0.25]));
        s.insert("b", Tensor::vector(vec![0.125, -7.0]));
        s
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let mut s = sample_store();
        s.grad_mut("w").data_mut()[0] = 1.0;
        s.adam_step(0.01);
        let mut bytes = Vec::new();
        s.write_to(&mut bytes).unwrap();
        let loaded = ParamStore::read_from(&mut bytes.as_slice()).unwrap();
        let mut bytes2 = Vec::new();
        loaded.write_to(&mut bytes2).unwrap();
        assert_eq!(bytes, bytes2);
        assert_eq!(loaded.step_count(), 1);
        assert_eq!(loaded.get("w"), s.get("w"));
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut s = sample_store();
        let before = s.get("w").clone();
        s.adam_step(0.005);
        assert_eq!(s.get("w"), &before);
    }

    #[test]
    fn first_adam_step_is_bias_corrected_lr() {
        let mut s = ParamStore::new("test");
        s.insert("w", Tensor::scalar(1.0));
        s.grad_mut("w").data_mut()[0] = 1.0;
        s.adam_step(0.005);
        // First step with unit gradient: m_hat = 1, v_hat = 1, so the update
        // is lr / (1 + eps) ~= lr.
        let delta = s.get("w").item() - 1.0;
        assert!((delta + 0.005).abs() < 1e-9, "delta {delta}");
    }

    #[test]
    fn adam_is_deterministic() {
        let run = || {
            let mut s = sample_store();
            for i in 0..10 {
                for g in s.grad_mut("w").data_mut() {
                    *g = (i as f64).sin();
                }
                s.adam_step(0.01);
            }
            s.get("w").data().to_vec()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn content_hash_tracks_values() {
        let s = sample_store();
        let t = sample_store();
        assert_eq!(s.content_hash(), t.content_hash());
        let mut u = sample_store();
        u.get_mut("w").data_mut()[0] += 1e-12;
        assert_ne!(s.content_hash(), u.content_hash());
    }
}
