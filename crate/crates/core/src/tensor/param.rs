use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

use super::array::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }

    pub(crate) fn from_index(i: usize) -> Self {
        ParamId(i)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Uniform in `±sqrt(1 / fan_in)`.
    FanIn(usize),
    Zeros,
    Constant(f64),
}

#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub init: Init,
    pub value: Tensor,
}

/// Named trainable tensors of one model.
///
/// Every parameter draws its initial values from a stream seeded by
/// `(seed, name)`, so two models built from the same seed agree on every
/// parameter they share, whatever else they contain.
#[derive(Debug, Clone)]
pub struct ParamStore {
    seed: u64,
    params: Vec<Parameter>,
    by_name: HashMap<String, ParamId>,
}

fn name_seed(seed: u64, name: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(name.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        ParamStore {
            seed,
            params: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn add(&mut self, name: &str, shape: &[usize], init: Init) -> Result<ParamId> {
        if self.by_name.contains_key(name) {
            return Err(Error::invalid(format!("duplicate parameter name {name}")));
        }
        let mut value = Tensor::zeros(shape.to_vec());
        match init {
            Init::FanIn(fan_in) => {
                let bound = (1.0 / fan_in.max(1) as f64).sqrt();
                let mut rng = ChaCha8Rng::seed_from_u64(name_seed(self.seed, name));
                for v in value.data_mut() {
                    *v = rng.gen_range(-bound..bound);
                }
            }
            Init::Zeros => {}
            Init::Constant(c) => value.data_mut().fill(c),
        }
        let id = ParamId(self.params.len());
        self.params.push(Parameter {
            name: name.to_string(),
            init,
            value,
        });
        self.by_name.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn total_len(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Sets every value to zero (used by fixed-point tests).
    pub fn zero_all(&mut self) {
        for p in &mut self.params {
            p.value.data_mut().fill(0.0);
        }
    }

    /// Copies values for every name present in both stores.
    pub fn copy_shared_from(&mut self, other: &ParamStore) -> usize {
        let mut n = 0;
        for p in &mut self.params {
            if let Some(&src) = other.by_name.get(&p.name) {
                let src = &other.params[src.0].value;
                if src.shape() == p.value.shape() {
                    p.value = src.clone();
                    n += 1;
                }
            }
        }
        n
    }

    /// Writes `params.bin` (little-endian f64, manifest order) and
    /// `manifest.txt` into `dir`.
    pub fn save(&self, dir: &Path, config_hash: &str) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        let mut manifest = String::new();
        writeln!(manifest, "#config_hash {config_hash}").unwrap();
        writeln!(manifest, "#seed {}", self.seed).unwrap();
        let mut bytes = Vec::with_capacity(self.total_len() * 8);
        let mut offset = 0;
        for p in &self.params {
            let shape: Vec<String> = p.value.shape().iter().map(|s| s.to_string()).collect();
            writeln!(manifest, "{}\t{}\t{}", p.name, shape.join(","), offset).unwrap();
            for v in p.value.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            offset += p.value.len();
        }
        write_file(&dir.join("manifest.txt"), manifest.as_bytes())?;
        write_file(&dir.join("params.bin"), &bytes)
    }

    /// Loads values saved by [`ParamStore::save`] into an already-built
    /// store; names and shapes must match exactly. Returns the recorded
    /// config hash.
    pub fn load(&mut self, dir: &Path) -> Result<String> {
        let manifest_path = dir.join("manifest.txt");
        let manifest = read_text(&manifest_path)?;
        let bin_path = dir.join("params.bin");
        let bytes = fs::read(&bin_path).map_err(|e| Error::io(bin_path.display().to_string(), e))?;
        let floats: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let mut hash = String::new();
        let mut seen = 0;
        for (lineno, line) in manifest.lines().enumerate() {
            let parse_err = |msg: String| Error::Parse {
                path: manifest_path.clone(),
                line: lineno + 1,
                msg,
            };
            if let Some(rest) = line.strip_prefix("#config_hash ") {
                hash = rest.trim().to_string();
                continue;
            }
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(parse_err(format!("expected 3 fields, got {}", fields.len())));
            }
            let id = self
                .id(fields[0])
                .ok_or_else(|| parse_err(format!("unknown parameter {}", fields[0])))?;
            let shape: Vec<usize> = if fields[1].is_empty() {
                Vec::new()
            } else {
                fields[1]
                    .split(',')
                    .map(|s| s.parse().map_err(|_| parse_err(format!("bad extent {s}"))))
                    .collect::<Result<_>>()?
            };
            if shape != self.tensor(id).shape() {
                return Err(parse_err(format!(
                    "shape {shape:?} does not match model {:?}",
                    self.tensor(id).shape()
                )));
            }
            let offset: usize = fields[2]
                .parse()
                .map_err(|_| parse_err(format!("bad offset {}", fields[2])))?;
            let n = self.tensor(id).len();
            let src = floats
                .get(offset..offset + n)
                .ok_or_else(|| parse_err("params.bin too short".to_string()))?;
            self.tensor_mut(id).data_mut().copy_from_slice(src);
            seen += 1;
        }
        if seen != self.len() {
            return Err(Error::Config(format!(
                "checkpoint has {seen} parameters, model has {}",
                self.len()
            )));
        }
        Ok(hash)
    }
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path.display().to_string(), e))
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fan_in_bounds_and_name_seeding() {
        let mut a = ParamStore::new(7);
        let w = a.add("layer.w", &[4, 3], Init::FanIn(4)).unwrap();
        assert!(a.tensor(w).data().iter().all(|v| v.abs() < 0.5));

        let mut b = ParamStore::new(7);
        b.add("other", &[2], Init::FanIn(2)).unwrap();
        let w2 = b.add("layer.w", &[4, 3], Init::FanIn(4)).unwrap();
        assert_eq!(a.tensor(w), b.tensor(w2));
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::new(0);
        s.add("x", &[1], Init::Zeros).unwrap();
        assert!(s.add("x", &[1], Init::Zeros).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = ParamStore::new(3);
        a.add("w", &[2, 2], Init::FanIn(2)).unwrap();
        a.add("b", &[2], Init::Constant(0.25)).unwrap();
        a.save(dir.path(), "abc").unwrap();

        let mut b = ParamStore::new(99);
        b.add("w", &[2, 2], Init::Zeros).unwrap();
        b.add("b", &[2], Init::Zeros).unwrap();
        assert_eq!(b.load(dir.path()).unwrap(), "abc");
        for ((_, p), (_, q)) in a.iter().zip(b.iter()) {
            assert_eq!(p.value, q.value);
        }
    }

    #[test]
    fn load_rejects_shape_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = ParamStore::new(3);
        a.add("w", &[2, 2], Init::FanIn(2)).unwrap();
        a.save(dir.path(), "h").unwrap();
        let mut b = ParamStore::new(3);
        b.add("w", &[2, 3], Init::Zeros).unwrap();
        assert!(matches!(b.load(dir.path()), Err(Error::Parse { .. })));
    }
}
