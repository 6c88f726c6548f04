use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::{Error, Result, Tensor};

static NEXT_UID: AtomicU64 = AtomicU64::new(1);

fn next_uid() -> u64 {
    NEXT_UID.fetch_add(1, Ordering::Relaxed)
}

/// Index of a tensor inside its [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EntryKind {
    /// Optimised by gradient descent.
    Param,
    /// Running statistics and other state that is not optimised.
    Buffer,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Entry {
    pub name: String,
    pub kind: EntryKind,
    pub value: Tensor,
}

/// Named tensors owned by one network.
///
/// Every set carries a process-unique id so that a [`crate::Graph`] can route
/// gradients of leaves back to the set that produced them. Clones get a fresh id.
#[derive(Debug, Serialize, Deserialize)]
pub struct ParamSet {
    #[serde(skip, default = "next_uid")]
    uid: u64,
    entries: Vec<Entry>,
}

impl Clone for ParamSet {
    fn clone(&self) -> Self {
        Self { uid: next_uid(), entries: self.entries.clone() }
    }
}

impl Default for ParamSet {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamSet {
    pub fn new() -> Self {
        Self { uid: next_uid(), entries: Vec::new() }
    }

    pub fn uid(&self) -> u64 {
        self.uid
    }

    fn push(&mut self, name: &str, kind: EntryKind, value: Tensor) -> ParamId {
        assert!(self.index_of(name).is_none(), "duplicate parameter name {name}");
        self.entries.push(Entry { name: name.to_string(), kind, value });
        ParamId(self.entries.len() - 1)
    }

    pub fn add_param(&mut self, name: &str, value: Tensor) -> ParamId {
        self.push(name, EntryKind::Param, value)
    }

    pub fn add_buffer(&mut self, name: &str, value: Tensor) -> ParamId {
        self.push(name, EntryKind::Buffer, value)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn kind(&self, id: ParamId) -> EntryKind {
        self.entries[id.0].kind
    }

    pub fn index_of(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|id| self.get(id))
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of trainable scalars.
    pub fn num_params(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.kind == EntryKind::Param)
            .map(|e| e.value.len())
            .sum()
    }

    /// FNV-1a over names, shapes and the bit patterns of every value.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for b in bytes {
                h ^= u64::from(*b);
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        for e in &self.entries {
            eat(e.name.as_bytes());
            for d in e.value.shape() {
                eat(&(*d as u64).to_le_bytes());
            }
            for v in e.value.data() {
                eat(&v.to_bits().to_le_bytes());
            }
        }
        h
    }

    /// Copy values from `other`, which must have identical names and shapes.
    pub fn load_from(&mut self, other: &ParamSet) -> Result<()> {
        if other.entries.len() != self.entries.len() {
            return Err(Error::Shape(format!(
                "parameter count mismatch: {} vs {}",
                self.entries.len(),
                other.entries.len()
            )));
        }
        for (mine, theirs) in self.entries.iter().zip(&other.entries) {
            if mine.name != theirs.name || mine.value.shape() != theirs.value.shape() {
                return Err(Error::Shape(format!(
                    "parameter mismatch: {} {:?} vs {} {:?}",
                    mine.name,
                    mine.value.shape(),
                    theirs.name,
                    theirs.value.shape()
                )));
            }
        }
        for (mine, theirs) in self.entries.iter_mut().zip(&other.entries) {
            mine.value = theirs.value.clone();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clone_gets_fresh_uid_and_same_fingerprint() {
        let mut p = ParamSet::new();
        p.add_param("w", Tensor::full(&[2], 1.5));
        let q = p.clone();
        assert_ne!(p.uid(), q.uid());
        assert_eq!(p.fingerprint(), q.fingerprint());
    }

    #[test]
    fn fingerprint_sees_single_bit_change() {
        let mut p = ParamSet::new();
        let id = p.add_param("w", Tensor::full(&[3], 0.25));
        let before = p.fingerprint();
        p.get_mut(id).data_mut()[1] = f64::from_bits(0.25f64.to_bits() + 1);
        assert_ne!(before, p.fingerprint());
    }

    #[test]
    fn load_from_rejects_shape_mismatch() {
        let mut p = ParamSet::new();
        p.add_param("w", Tensor::zeros(&[3]));
        let mut q = ParamSet::new();
        q.add_param("w", Tensor::zeros(&[4]));
        assert!(p.load_from(&q).is_err());
    }
}
