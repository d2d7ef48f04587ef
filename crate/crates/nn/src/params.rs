//! Named parameter storage with seeded initialisation.

use std::collections::HashMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    /// Running statistics; saved with the weights but never optimised.
    Buffer,
}

#[derive(Clone, Debug)]
pub struct ParamEntry {
    pub name: String,
    pub var: Var,
    pub kind: ParamKind,
    pub trainable: bool,
}

/// Insertion-ordered collection of every tensor a network owns.
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    index: HashMap<String, usize>,
    rng: ChaCha8Rng,
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        Self { entries: Vec::new(), index: HashMap::new(), rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn root(&mut self) -> Scope<'_> {
        Scope { store: self, prefix: String::new(), trainable: true }
    }

    fn insert(&mut self, name: String, tensor: Tensor, kind: ParamKind, trainable: bool) -> Result<Var> {
        if self.index.contains_key(&name) {
            return Err(Error::InvalidSpec(format!("duplicate parameter name {name}")));
        }
        let var = Var::from_tensor(&tensor)?;
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push(ParamEntry { name, var: var.clone(), kind, trainable });
        Ok(var)
    }

    fn normal(&mut self, shape: &[usize], std: f64) -> Result<Tensor> {
        let dist = Normal::new(0.0f32, std as f32).map_err(|e| Error::InvalidSpec(e.to_string()))?;
        let n: usize = shape.iter().product();
        let data: Vec<f32> = (0..n).map(|_| dist.sample(&mut self.rng)).collect();
        Ok(Tensor::from_vec(data, shape, &Device::Cpu)?)
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.index.get(name).map(|&i| &self.entries[i].var)
    }

    pub fn trainable_vars(&self) -> Vec<Var> {
        self.entries.iter().filter(|e| e.trainable && e.kind != ParamKind::Buffer).map(|e| e.var.clone()).collect()
    }

    /// Number of trainable scalars.
    pub fn count_trainable(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.trainable && e.kind != ParamKind::Buffer)
            .map(|e| e.var.elem_count())
            .sum()
    }

    /// Copies every tensor, for keeping the best weights in memory.
    pub fn snapshot(&self) -> Result<Vec<Tensor>> {
        Ok(self.entries.iter().map(|e| e.var.as_tensor().copy()).collect::<candle_core::Result<_>>()?)
    }

    pub fn restore(&self, snapshot: &[Tensor]) -> Result<()> {
        if snapshot.len() != self.entries.len() {
            return Err(Error::ShapeMismatch("snapshot does not match parameter list".into()));
        }
        for (e, t) in self.entries.iter().zip(snapshot) {
            e.var.set(t)?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let map: HashMap<String, Tensor> =
            self.entries.iter().map(|e| (e.name.clone(), e.var.as_tensor().clone())).collect();
        candle_core::safetensors::save(&map, path)
            .map_err(|e| Error::Checkpoint { path: path.to_path_buf(), message: e.to_string() })
    }

    /// Loads weights by name. With `strict`, every stored parameter must be present.
    pub fn load(&self, path: impl AsRef<Path>, strict: bool) -> Result<usize> {
        self.load_prefixed(path, "", strict)
    }

    /// Loads the parameters whose names start with `prefix` from a file that
    /// stores them without it, e.g. a standalone backbone.
    pub fn load_prefixed(&self, path: impl AsRef<Path>, prefix: &str, strict: bool) -> Result<usize> {
        let path = path.as_ref();
        let ck = |message: String| Error::Checkpoint { path: path.to_path_buf(), message };
        let map = candle_core::safetensors::load(path, &Device::Cpu).map_err(|e| ck(e.to_string()))?;
        let mut loaded = 0;
        for e in self.entries.iter().filter(|e| e.name.starts_with(prefix)) {
            match map.get(&e.name[prefix.len()..]) {
                Some(t) => {
                    if t.dims() != e.var.dims() {
                        return Err(ck(format!("{} has shape {:?}, expected {:?}", e.name, t.dims(), e.var.dims())));
                    }
                    e.var.set(&t.to_dtype(DType::F32)?)?;
                    loaded += 1;
                }
                None if strict => return Err(ck(format!("missing parameter {}", e.name))),
                None => {}
            }
        }
        Ok(loaded)
    }
}

/// A name prefix into a [`ParamStore`] used while building a network.
pub struct Scope<'a> {
    store: &'a mut ParamStore,
    prefix: String,
    trainable: bool,
}

impl Scope<'_> {
    pub fn pp(&mut self, name: impl std::fmt::Display) -> Scope<'_> {
        let prefix = if self.prefix.is_empty() { name.to_string() } else { format!("{}.{name}", self.prefix) };
        Scope { store: self.store, prefix, trainable: self.trainable }
    }

    /// Parameters created through the returned scope are excluded from optimisation.
    pub fn frozen(&mut self, frozen: bool) -> Scope<'_> {
        Scope { store: self.store, prefix: self.prefix.clone(), trainable: self.trainable && !frozen }
    }

    pub fn is_trainable(&self) -> bool {
        self.trainable
    }

    fn full(&self, name: &str) -> String {
        if self.prefix.is_empty() { name.to_string() } else { format!("{}.{name}", self.prefix) }
    }

    pub fn normal(&mut self, name: &str, shape: &[usize], std: f64) -> Result<Var> {
        let t = self.store.normal(shape, std)?;
        self.store.insert(self.full(name), t, ParamKind::Weight, self.trainable)
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f32, kind: ParamKind) -> Result<Var> {
        let t = Tensor::full(value, shape, &Device::Cpu)?;
        let trainable = self.trainable && kind != ParamKind::Buffer;
        self.store.insert(self.full(name), t, kind, trainable)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_seeded() {
        let mut a = ParamStore::new(3);
        let mut b = ParamStore::new(3);
        let va = a.root().pp("x").normal("w", &[4, 4], 1.0).unwrap();
        let vb = b.root().pp("x").normal("w", &[4, 4], 1.0).unwrap();
        let da: Vec<f32> = va.flatten_all().unwrap().to_vec1().unwrap();
        let db: Vec<f32> = vb.flatten_all().unwrap().to_vec1().unwrap();
        assert_eq!(da, db);
        assert!(a.get("x.w").is_some());
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::new(0);
        s.root().constant("b", &[2], 0.0, ParamKind::Bias).unwrap();
        assert!(s.root().constant("b", &[2], 0.0, ParamKind::Bias).is_err());
    }

    #[test]
    fn counting_skips_buffers_and_frozen() {
        let mut s = ParamStore::new(0);
        let mut root = s.root();
        root.normal("w", &[3, 3], 1.0).unwrap();
        root.constant("rm", &[3], 0.0, ParamKind::Buffer).unwrap();
        root.frozen(true).normal("fw", &[5], 1.0).unwrap();
        assert_eq!(s.count_trainable(), 9);
        assert_eq!(s.trainable_vars().len(), 1);
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.safetensors");
        let mut a = ParamStore::new(1);
        a.root().normal("w", &[2, 3], 1.0).unwrap();
        a.save(&path).unwrap();
        let mut b = ParamStore::new(2);
        b.root().normal("w", &[2, 3], 1.0).unwrap();
        assert_eq!(b.load(&path, true).unwrap(), 1);
        let x: Vec<f32> = a.get("w").unwrap().flatten_all().unwrap().to_vec1().unwrap();
        let y: Vec<f32> = b.get("w").unwrap().flatten_all().unwrap().to_vec1().unwrap();
        assert_eq!(x, y);

        let mut c = ParamStore::new(2);
        c.root().normal("w", &[3, 2], 1.0).unwrap();
        assert!(c.load(&path, true).is_err());
    }

    #[test]
    fn snapshot_restores_weights() {
        let mut s = ParamStore::new(4);
        let v = s.root().normal("w", &[4], 1.0).unwrap();
        let snap = s.snapshot().unwrap();
        let before: Vec<f32> = v.to_vec1().unwrap();
        v.set(&Tensor::zeros(4, DType::F32, &Device::Cpu).unwrap()).unwrap();
        s.restore(&snap).unwrap();
        assert_eq!(v.to_vec1::<f32>().unwrap(), before);
    }
}
