//! Named, seeded parameters backed by candle variables.

use std::collections::BTreeMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Ones,
    /// Uniform in `±1/sqrt(fan_in)`.
    FanIn(usize),
    Normal(f64),
}

/// Parameter collection. Each tensor is initialised from a stream seeded by
/// `(seed, name)`, so values do not depend on construction order.
#[derive(Debug, Clone)]
pub struct ParamStore {
    vars: BTreeMap<String, Var>,
    seed: u64,
    dtype: DType,
    device: Device,
}

fn name_seed(seed: u64, name: &str) -> u64 {
    let digest = Sha256::new().chain_update(seed.to_le_bytes()).chain_update(name.as_bytes()).finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        Self::with_dtype(seed, DType::F32)
    }

    pub fn with_dtype(seed: u64, dtype: DType) -> Self {
        Self {
            vars: BTreeMap::new(),
            seed,
            dtype,
            device: Device::Cpu,
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn root(&mut self) -> Builder<'_> {
        Builder {
            store: self,
            prefix: String::new(),
            frozen: false,
        }
    }

    /// Like [`root`](Self::root) but returned tensors are detached, so no
    /// gradient ever flows into this store.
    pub fn frozen(&mut self) -> Builder<'_> {
        Builder {
            store: self,
            prefix: String::new(),
            frozen: true,
        }
    }

    fn get_or_init(&mut self, name: String, shape: &[usize], init: Init) -> Result<Var> {
        if let Some(v) = self.vars.get(&name) {
            if v.dims() != shape {
                return Err(Error::Shape(format!("{name}: stored {:?}, requested {shape:?}", v.dims())));
            }
            return Ok(v.clone());
        }
        let n: usize = shape.iter().product();
        let mut rng = ChaCha8Rng::seed_from_u64(name_seed(self.seed, &name));
        let values: Vec<f64> = match init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::FanIn(fan_in) => {
                let b = 1.0 / (fan_in.max(1) as f64).sqrt();
                let u = Uniform::new_inclusive(-b, b).expect("finite bound");
                (0..n).map(|_| u.sample(&mut rng)).collect()
            }
            Init::Normal(std) => {
                let d = Normal::new(0.0, std).map_err(|e| Error::Config(e.to_string()))?;
                (0..n).map(|_| d.sample(&mut rng)).collect()
            }
        };
        let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        self.vars.insert(name, var.clone());
        Ok(var)
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.vars.keys().map(String::as_str)
    }

    /// Variables whose names start with `prefix`.
    pub fn vars_with_prefix(&self, prefix: &str) -> Vec<Var> {
        self.vars
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(_, v)| v.clone())
            .collect()
    }

    pub fn all_vars(&self) -> Vec<Var> {
        self.vars.values().cloned().collect()
    }

    pub fn num_params(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    pub fn num_params_with_prefix(&self, prefix: &str) -> usize {
        self.vars
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(_, v)| v.elem_count())
            .sum()
    }

    /// Deep copy with fresh variables: training the copy leaves `self` intact.
    pub fn deep_clone(&self) -> Result<Self> {
        let vars = self
            .vars
            .iter()
            .map(|(k, v)| Ok((k.clone(), Var::from_tensor(&v.as_tensor().copy()?)?)))
            .collect::<Result<_>>()?;
        Ok(Self {
            vars,
            seed: self.seed,
            dtype: self.dtype,
            device: self.device.clone(),
        })
    }

    /// Moves every parameter under `prefix` into a new store, renamed
    /// without the prefix.
    pub fn extract(&self, prefix: &str) -> Result<Self> {
        let vars = self
            .vars
            .iter()
            .filter_map(|(k, v)| k.strip_prefix(prefix).map(|rest| (rest.to_string(), v)))
            .map(|(k, v)| Ok((k, Var::from_tensor(&v.as_tensor().copy()?)?)))
            .collect::<Result<_>>()?;
        Ok(Self {
            vars,
            seed: self.seed,
            dtype: self.dtype,
            device: self.device.clone(),
        })
    }

    /// SHA-256 over names, shapes and little-endian f32 values.
    pub fn content_hash(&self) -> Result<String> {
        let mut h = Sha256::new();
        for (name, var) in &self.vars {
            h.update(name.as_bytes());
            for d in var.dims() {
                h.update((*d as u64).to_le_bytes());
            }
            let values: Vec<f32> = var.as_tensor().flatten_all()?.to_dtype(DType::F32)?.to_vec1()?;
            for v in values {
                h.update(v.to_le_bytes());
            }
        }
        Ok(hex::encode(h.finalize()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let tensors: BTreeMap<String, Tensor> =
            self.vars.iter().map(|(k, v)| (k.clone(), v.as_tensor().clone())).collect();
        let tensors: std::collections::HashMap<_, _> = tensors.into_iter().collect();
        candle_core::safetensors::save(&tensors, path.as_ref())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>, seed: u64) -> Result<Self> {
        let device = Device::Cpu;
        let tensors = candle_core::safetensors::load(path.as_ref(), &device)?;
        let mut dtype = DType::F32;
        let mut vars = BTreeMap::new();
        for (k, t) in tensors {
            dtype = t.dtype();
            vars.insert(k, Var::from_tensor(&t)?);
        }
        Ok(Self {
            vars,
            seed,
            dtype,
            device,
        })
    }

    /// Copies every parameter of `other` into this store (names must exist
    /// in both with equal shapes).
    pub fn assign_from(&self, other: &ParamStore) -> Result<()> {
        for (k, v) in &other.vars {
            let dst = self.vars.get(k).ok_or_else(|| Error::MissingParam(k.clone()))?;
            dst.set(v.as_tensor())?;
        }
        Ok(())
    }

    /// Inserts `other`'s parameters under `prefix`.
    pub fn absorb(&mut self, prefix: &str, other: &ParamStore) -> Result<()> {
        for (k, v) in &other.vars {
            self.vars
                .insert(format!("{prefix}{k}"), Var::from_tensor(&v.as_tensor().copy()?)?);
        }
        Ok(())
    }
}

/// Scoped view into a [`ParamStore`] used while building modules.
pub struct Builder<'a> {
    store: &'a mut ParamStore,
    prefix: String,
    frozen: bool,
}

impl Builder<'_> {
    pub fn pp(&mut self, name: impl AsRef<str>) -> Builder<'_> {
        Builder {
            prefix: format!("{}{}.", self.prefix, name.as_ref()),
            store: self.store,
            frozen: self.frozen,
        }
    }

    pub fn tensor(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        let var = self.store.get_or_init(format!("{}{name}", self.prefix), shape, init)?;
        Ok(if self.frozen {
            var.as_tensor().detach()
        } else {
            var.as_tensor().clone()
        })
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype
    }

    pub fn device(&self) -> Device {
        self.store.device.clone()
    }
}
