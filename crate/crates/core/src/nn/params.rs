//! Named, seeded parameter storage.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::sync::Mutex;

use candle_core::{DType, Device, Shape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Zeros,
    Const(f64),
    Uniform(f64, f64),
    /// He normal initialisation for the given fan-in.
    He(usize),
}

/// Every trainable tensor of a model, keyed by a dotted path.
pub struct ParamStore {
    vars: Mutex<BTreeMap<String, Var>>,
    rng: Mutex<ChaCha8Rng>,
    device: Device,
    dtype: DType,
}

impl ParamStore {
    pub fn new(seed: u64, dtype: DType) -> Self {
        ParamStore {
            vars: Mutex::new(BTreeMap::new()),
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(seed)),
            device: Device::Cpu,
            dtype,
        }
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn root(&self) -> Scope<'_> {
        Scope {
            store: self,
            prefix: String::new(),
        }
    }

    pub fn names(&self) -> Vec<String> {
        self.vars.lock().unwrap().keys().cloned().collect()
    }

    pub fn get(&self, name: &str) -> Option<Var> {
        self.vars.lock().unwrap().get(name).cloned()
    }

    /// Variables whose names satisfy `keep`, in name order.
    pub fn vars_where(&self, keep: impl Fn(&str) -> bool) -> Vec<Var> {
        self.vars
            .lock()
            .unwrap()
            .iter()
            .filter(|(k, _)| keep(k))
            .map(|(_, v)| v.clone())
            .collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.vars.lock().unwrap().values().map(|v| v.elem_count()).sum()
    }

    fn create(&self, name: String, shape: Shape, init: Init) -> Result<Tensor> {
        let mut vars = self.vars.lock().unwrap();
        if let Some(v) = vars.get(&name) {
            if v.shape() != &shape {
                return Err(Error::Shape(format!(
                    "parameter {name} exists with shape {:?}, requested {:?}",
                    v.shape(),
                    shape
                )));
            }
            return Ok(v.as_tensor().clone());
        }
        let n = shape.elem_count();
        let mut rng = self.rng.lock().unwrap();
        let data: Vec<f64> = match init {
            Init::Zeros => vec![0.0; n],
            Init::Const(c) => vec![c; n],
            Init::Uniform(lo, hi) => (0..n).map(|_| rng.random_range(lo..hi)).collect(),
            Init::He(fan_in) => {
                let std = (2.0 / fan_in.max(1) as f64).sqrt();
                (0..n)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut *rng);
                        z * std
                    })
                    .collect()
            }
        };
        let t = Tensor::from_vec(data, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        let out = var.as_tensor().clone();
        vars.insert(name, var);
        Ok(out)
    }

    /// Serialises all parameters: count, then per tensor its name, shape and
    /// little-endian f32 values, in name order.
    pub fn write_to(&self, mut out: impl Write) -> Result<()> {
        let vars = self.vars.lock().unwrap();
        out.write_all(&(vars.len() as u32).to_le_bytes())?;
        for (name, v) in vars.iter() {
            out.write_all(&(name.len() as u32).to_le_bytes())?;
            out.write_all(name.as_bytes())?;
            let dims = v.dims();
            out.write_all(&(dims.len() as u32).to_le_bytes())?;
            for &d in dims {
                out.write_all(&(d as u32).to_le_bytes())?;
            }
            let data = v.flatten_all()?.to_dtype(DType::F32)?.to_vec1::<f32>()?;
            let mut buf = Vec::with_capacity(data.len() * 4);
            data.iter().for_each(|x| buf.extend(x.to_le_bytes()));
            out.write_all(&buf)?;
        }
        Ok(())
    }

    /// Loads values written by [`ParamStore::write_to`] into existing
    /// parameters. Names and shapes must match exactly.
    pub fn read_from(&self, mut input: impl Read) -> Result<()> {
        let mut u32_buf = [0u8; 4];
        let mut read_u32 = |r: &mut dyn Read| -> Result<u32> {
            r.read_exact(&mut u32_buf)
                .map_err(|_| Error::Truncated("parameter blob".into()))?;
            Ok(u32::from_le_bytes(u32_buf))
        };
        let vars = self.vars.lock().unwrap();
        let count = read_u32(&mut input)? as usize;
        if count != vars.len() {
            return Err(Error::CheckpointMismatch(format!(
                "checkpoint holds {count} tensors, model has {}",
                vars.len()
            )));
        }
        for _ in 0..count {
            let len = read_u32(&mut input)? as usize;
            let mut name = vec![0u8; len];
            input
                .read_exact(&mut name)
                .map_err(|_| Error::Truncated("parameter name".into()))?;
            let name = String::from_utf8(name).map_err(|_| Error::Parse("parameter name is not utf-8".into()))?;
            let rank = read_u32(&mut input)? as usize;
            let dims = (0..rank)
                .map(|_| read_u32(&mut input).map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let var = vars
                .get(&name)
                .ok_or_else(|| Error::CheckpointMismatch(format!("unknown parameter {name}")))?;
            if var.dims() != dims.as_slice() {
                return Err(Error::CheckpointMismatch(format!(
                    "parameter {name} has shape {dims:?} in the checkpoint, {:?} in the model",
                    var.dims()
                )));
            }
            let n: usize = dims.iter().product();
            let mut raw = vec![0u8; n * 4];
            input
                .read_exact(&mut raw)
                .map_err(|_| Error::Truncated(format!("values of {name}")))?;
            let data: Vec<f32> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let t = Tensor::from_vec(data, dims, &self.device)?.to_dtype(self.dtype)?;
            var.set(&t)?;
        }
        Ok(())
    }
}

/// A prefix into a [`ParamStore`].
#[derive(Clone)]
pub struct Scope<'a> {
    store: &'a ParamStore,
    prefix: String,
}

impl<'a> Scope<'a> {
    pub fn pp(&self, name: impl AsRef<str>) -> Scope<'a> {
        let prefix = if self.prefix.is_empty() {
            name.as_ref().to_string()
        } else {
            format!("{}.{}", self.prefix, name.as_ref())
        };
        Scope {
            store: self.store,
            prefix,
        }
    }

    pub fn path(&self) -> &str {
        &self.prefix
    }

    pub fn store(&self) -> &'a ParamStore {
        self.store
    }

    pub fn device(&self) -> &'a Device {
        &self.store.device
    }

    pub fn get(&self, shape: impl Into<Shape>, name: &str, init: Init) -> Result<Tensor> {
        self.store.create(self.pp(name).prefix, shape.into(), init)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_weights() {
        let a = ParamStore::new(7, DType::F32);
        let b = ParamStore::new(7, DType::F32);
        let ta = a.root().pp("x").get((3, 4), "w", Init::He(4)).unwrap();
        let tb = b.root().pp("x").get((3, 4), "w", Init::He(4)).unwrap();
        assert_eq!(ta.to_vec2::<f32>().unwrap(), tb.to_vec2::<f32>().unwrap());
        assert_eq!(a.names(), vec!["x.w".to_string()]);
    }

    #[test]
    fn roundtrip_and_mismatch() {
        let a = ParamStore::new(1, DType::F32);
        a.root().get((2, 2), "w", Init::Uniform(-1.0, 1.0)).unwrap();
        a.root().get(3, "b", Init::Const(0.5)).unwrap();
        let mut blob = Vec::new();
        a.write_to(&mut blob).unwrap();

        let b = ParamStore::new(2, DType::F32);
        b.root().get((2, 2), "w", Init::Zeros).unwrap();
        b.root().get(3, "b", Init::Zeros).unwrap();
        b.read_from(&blob[..]).unwrap();
        let wa = a.get("w").unwrap().to_vec2::<f32>().unwrap();
        assert_eq!(b.get("w").unwrap().to_vec2::<f32>().unwrap(), wa);

        let c = ParamStore::new(2, DType::F32);
        c.root().get((2, 3), "w", Init::Zeros).unwrap();
        c.root().get(3, "b", Init::Zeros).unwrap();
        assert!(matches!(c.read_from(&blob[..]), Err(Error::CheckpointMismatch(_))));
        assert!(matches!(b.read_from(&blob[..blob.len() - 2]), Err(Error::Truncated(_))));
    }

    #[test]
    fn existing_parameter_is_shared() {
        let a = ParamStore::new(1, DType::F32);
        let t1 = a.root().get(3, "b", Init::Const(1.0)).unwrap();
        let t2 = a.root().get(3, "b", Init::Const(2.0)).unwrap();
        assert_eq!(t1.to_vec1::<f32>().unwrap(), t2.to_vec1::<f32>().unwrap());
        assert!(a.root().get(4, "b", Init::Zeros).is_err());
    }
}
