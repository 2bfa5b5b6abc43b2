//! Named parameter storage shared by every block of a model, plus the
//! on-disk checkpoint layout (one tensor file per entry and a manifest).

use std::collections::HashMap;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{AdamState, BnMode, Gradients, Real, RunningStats, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(usize);

#[derive(Clone, Debug)]
struct Entry<R> {
    name: String,
    tensor: Tensor<R>,
    learnable: bool,
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore<R> {
    entries: Vec<Entry<R>>,
    index: HashMap<String, usize>,
}

/// Tape leaves for the learnable entries of a store.
pub struct Bound {
    vars: Vec<Option<Var>>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0].expect("parameter is a buffer, not bound to the tape")
    }
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    file: String,
    shape: Vec<usize>,
    learnable: bool,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    precision: String,
    structure: serde_json::Value,
    entries: Vec<ManifestEntry>,
}

impl<R: Real> ParamStore<R> {
    pub fn new() -> Self {
        ParamStore { entries: Vec::new(), index: HashMap::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<R>, learnable: bool) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter name {name}");
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push(Entry { name, tensor, learnable });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<R> {
        &self.entries[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<R> {
        &mut self.entries[id.0].tensor
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<R>> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<R>, bool)> {
        self.entries.iter().map(|e| (e.name.as_str(), &e.tensor, e.learnable))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<R>, bool)> {
        self.entries.iter_mut().map(|e| (e.name.as_str(), &mut e.tensor, e.learnable))
    }

    /// Number of learnable scalars.
    pub fn learnable_count(&self) -> usize {
        self.entries.iter().filter(|e| e.learnable).map(|e| e.tensor.len()).sum()
    }

    /// Puts every learnable entry on the tape, as a gradient-tracked leaf when
    /// `track` is set and as a constant otherwise.
    pub fn bind(&self, tape: &mut Tape<R>, track: bool) -> Bound {
        let vars = self
            .entries
            .iter()
            .map(|e| match (e.learnable, track) {
                (false, _) => None,
                (true, true) => Some(tape.param(e.tensor.clone())),
                (true, false) => Some(tape.constant(e.tensor.clone())),
            })
            .collect();
        Bound { vars }
    }

    pub fn adam_step(&mut self, adam: &mut AdamState<R>, bound: &Bound, grads: &Gradients<R>) -> Result<()> {
        let pairs = self
            .entries
            .iter_mut()
            .zip(&bound.vars)
            .filter(|(e, _)| e.learnable)
            .map(|(e, v)| (&mut e.tensor, v.and_then(|v| grads.get(v))));
        adam.step(pairs)
    }

    pub fn save(&self, dir: &Path, structure: serde_json::Value) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut entries = Vec::with_capacity(self.entries.len());
        for (i, e) in self.entries.iter().enumerate() {
            let file = format!("{i:04}.bin");
            e.tensor.save(&dir.join(&file))?;
            entries.push(ManifestEntry { name: e.name.clone(), file, shape: e.tensor.shape().to_vec(), learnable: e.learnable });
        }
        let manifest = Manifest { precision: format!("f{}", R::BYTES * 8), structure, entries };
        let path = dir.join("manifest.json");
        std::fs::write(&path, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
    }

    /// Reads the structural manifest without the tensors.
    pub fn read_structure(dir: &Path) -> Result<serde_json::Value> {
        let path = dir.join("manifest.json");
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let m: Manifest = serde_json::from_slice(&bytes)?;
        Ok(m.structure)
    }

    /// Overwrites every entry of `self` from a checkpoint written by
    /// [`ParamStore::save`]. Names and shapes must agree exactly.
    pub fn load_into(&mut self, dir: &Path) -> Result<()> {
        let path = dir.join("manifest.json");
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let m: Manifest = serde_json::from_slice(&bytes)?;
        if m.entries.len() != self.entries.len() {
            return Err(Error::Invalid(format!(
                "checkpoint has {} entries, model has {}",
                m.entries.len(),
                self.entries.len()
            )));
        }
        for me in m.entries {
            let id = self.id(&me.name).ok_or_else(|| Error::Invalid(format!("unknown parameter {}", me.name)))?;
            let t = Tensor::load(&dir.join(&me.file))?;
            if t.shape() != self.get(id).shape() {
                return Err(Error::shape("checkpoint", format!("{}: {:?} vs {:?}", me.name, t.shape(), self.get(id).shape())));
            }
            *self.get_mut(id) = t;
        }
        Ok(())
    }
}

/// He-style uniform draw in `±sqrt(6 / fan_in)`.
pub fn fan_in_uniform<R: Real>(shape: &[usize], fan_in: usize, rng: &mut Rng) -> Tensor<R> {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
    Tensor::from_fn(shape, |_| R::of(rng.random_range(-bound..bound)))
}

/// One batch-norm site: learnable per-channel scale and bias plus running
/// statistics.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct BatchNormState {
    pub scale: ParamId,
    pub bias: ParamId,
    pub running: ParamId,
    pub eta: f64,
}

pub const BN_ETA: f64 = 1e-5;

impl BatchNormState {
    pub fn register<R: Real>(store: &mut ParamStore<R>, prefix: &str, channels: usize, scale_init: f64) -> Self {
        BatchNormState {
            scale: store.add(format!("{prefix}.scale"), Tensor::full(&[channels], R::of(scale_init)), true),
            bias: store.add(format!("{prefix}.bias"), Tensor::zeros(&[channels]), true),
            running: store.add(format!("{prefix}.running"), RunningStats::init(channels), false),
            eta: BN_ETA,
        }
    }

    pub fn apply<R: Real>(
        &self,
        tape: &mut Tape<R>,
        store: &mut ParamStore<R>,
        bound: &Bound,
        x: Var,
        mode: BnMode,
    ) -> Result<Var> {
        let running = store.get_mut(self.running);
        tape.batchnorm(x, bound.var(self.scale), bound.var(self.bias), running, mode, self.eta)
    }
}
