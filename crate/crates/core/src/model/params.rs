use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{Error, Result};
use crate::tensor::{SpectralState, Tensor};

/// Power iterations run when a spectral state is first created, so the
/// first forward pass already sees a sensible estimate.
pub const SPECTRAL_WARMUP: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// U[-b, b].
    Uniform(f64),
    Zeros,
    Ones,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
    /// Subject to spectral normalization when enabled.
    pub spectral: bool,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Named trainable tensors plus spectral-norm power-iteration state.
#[derive(Clone)]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor>,
    spectral: BTreeMap<String, SpectralState>,
}

impl ParamStore {
    pub fn init<R: Rng + ?Sized>(specs: &[ParamSpec], use_spectral: bool, rng: &mut R) -> Result<Self> {
        let mut tensors = BTreeMap::new();
        let mut spectral = BTreeMap::new();
        for spec in specs {
            let n = spec.numel();
            let data = match spec.init {
                Init::Zeros => vec![0.0; n],
                Init::Ones => vec![1.0; n],
                Init::Uniform(b) => {
                    let dist = Uniform::new_inclusive(-b, b)
                        .map_err(|e| Error::Config(format!("{}: {e}", spec.name)))?;
                    (0..n).map(|_| dist.sample(rng)).collect()
                }
            };
            if use_spectral && spec.spectral {
                let mut st = SpectralState::new(&spec.shape, rng);
                for _ in 0..SPECTRAL_WARMUP {
                    st.step(&data);
                }
                spectral.insert(spec.name.clone(), st);
            }
            if tensors
                .insert(spec.name.clone(), Tensor::param(spec.shape.clone(), data)?)
                .is_some()
            {
                return Err(Error::Config(format!("duplicate parameter {}", spec.name)));
            }
        }
        Ok(Self { tensors, spectral })
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter {name}")))
    }

    /// The parameter as used in the forward pass: spectrally normalized
    /// when a power-iteration state exists for it.
    pub fn weight(&self, name: &str) -> Result<Tensor> {
        let w = self.get(name)?;
        match self.spectral.get(name) {
            Some(st) => w.spectral_normalize(st),
            None => Ok(w.clone()),
        }
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn total_count(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    /// Replaces the values of a parameter with a fresh leaf.
    pub fn set_values(&mut self, name: &str, data: Vec<f64>) -> Result<()> {
        let shape = self.get(name)?.shape().to_vec();
        let t = Tensor::param(shape, data)?;
        self.tensors.insert(name.to_string(), t);
        Ok(())
    }

    /// Copy whose leaves are new tensors, so gradients deposited through it
    /// do not touch `self`.
    pub fn fork(&self) -> Self {
        let tensors = self
            .tensors
            .iter()
            .map(|(k, t)| {
                let leaf = Tensor::param(t.shape().to_vec(), t.to_vec()).expect("same shape");
                (k.clone(), leaf)
            })
            .collect();
        Self {
            tensors,
            spectral: self.spectral.clone(),
        }
    }

    pub fn zero_grads(&self) {
        self.tensors.values().for_each(Tensor::zero_grad);
    }

    /// Accumulated gradients, zero-filled for parameters that received none.
    pub fn grads(&self) -> BTreeMap<String, Vec<f64>> {
        self.tensors
            .iter()
            .map(|(k, t)| (k.clone(), t.grad().unwrap_or_else(|| vec![0.0; t.numel()])))
            .collect()
    }

    /// One power-iteration step on every spectrally normalized weight.
    pub fn power_iterate(&mut self) {
        for (name, st) in self.spectral.iter_mut() {
            st.step(self.tensors[name].data());
        }
    }

    pub fn spectral_states(&self) -> &BTreeMap<String, SpectralState> {
        &self.spectral
    }

    pub fn set_spectral_state(&mut self, name: &str, state: SpectralState) -> Result<()> {
        match self.spectral.get_mut(name) {
            Some(slot) if slot.u.len() == state.u.len() && slot.v.len() == state.v.len() => {
                *slot = state;
                Ok(())
            }
            Some(_) => Err(Error::Config(format!("{name}: spectral state size mismatch"))),
            None => Err(Error::Config(format!("{name}: no spectral state"))),
        }
    }
}
