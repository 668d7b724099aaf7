//! Little-endian binary checkpoints.
//!
//! Layout: magic `BIPNCKPT`, u32 version, u8 dtype tag, u64-prefixed config
//! text, u64 iteration, then three parameter sections (generator,
//! discriminator, extractor). A section is a u64 Adam step count and a u64
//! record count followed by records of: u32-prefixed name, u32 rank, u64
//! dims, u8 dtype tag, then value, first and second moment data.

use std::path::Path;

use crate::error::{Error, Result};
use crate::harness::config::TrainConfig;
use crate::scalar::{DType, Scalar};
use crate::tensor::{ParamStore, Tensor};

const MAGIC: &[u8; 8] = b"BIPNCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Complete training state. The data stream and noise are pure functions of
/// `(config.seed, iteration)`, so no separate RNG state is stored.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub config: TrainConfig,
    pub iteration: u64,
    pub generator: ParamStore<T>,
    pub discriminator: ParamStore<T>,
    pub extractor: ParamStore<T>,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_store<T: Scalar>(out: &mut Vec<u8>, store: &ParamStore<T>) {
    put_u64(out, store.step_count());
    put_u64(out, store.len() as u64);
    for (name, e) in store.iter() {
        put_u32(out, name.len() as u32);
        out.extend_from_slice(name.as_bytes());
        let shape = e.value.shape();
        put_u32(out, shape.len() as u32);
        for &d in shape {
            put_u64(out, d as u64);
        }
        out.push(T::DTYPE.tag());
        for t in [&e.value, &e.first_moment, &e.second_moment] {
            for &v in t.data() {
                v.write_le(out);
            }
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(
                self.path,
                format!("truncated at byte {}", self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn len(&mut self, what: &str) -> Result<usize> {
        let n = self.u64()?;
        if n > (self.bytes.len() - self.pos) as u64 * 8 + 64 {
            return Err(Error::format(self.path, format!("implausible {what} {n}")));
        }
        Ok(n as usize)
    }

    fn tensor<T: Scalar>(&mut self, shape: &[usize]) -> Result<Tensor<T>> {
        let n: usize = shape.iter().product();
        let raw = self.take(n * T::DTYPE.size())?;
        let data = raw.chunks_exact(T::DTYPE.size()).map(T::read_le).collect();
        Tensor::new(shape, data)
    }

    fn store<T: Scalar>(&mut self) -> Result<ParamStore<T>> {
        let steps = self.u64()?;
        let count = self.len("record count")?;
        let mut store = ParamStore::new();
        for _ in 0..count {
            let name_len = self.u32()? as usize;
            let name = std::str::from_utf8(self.take(name_len)?)
                .map_err(|_| Error::format(self.path, "parameter name is not UTF-8"))?
                .to_string();
            let rank = self.u32()? as usize;
            if rank > 8 {
                return Err(Error::format(
                    self.path,
                    format!("`{name}` has rank {rank}"),
                ));
            }
            let shape = (0..rank)
                .map(|_| self.len("dimension"))
                .collect::<Result<Vec<_>>>()?;
            let tag = self.u8()?;
            if DType::from_tag(tag) != Some(T::DTYPE) {
                return Err(Error::format(
                    self.path,
                    format!(
                        "`{name}` stored with dtype tag {tag}, expected {}",
                        T::DTYPE.name()
                    ),
                ));
            }
            let value = self.tensor(&shape)?;
            let m = self.tensor(&shape)?;
            let v = self.tensor(&shape)?;
            store
                .insert(&name, value)
                .map_err(|_| Error::format(self.path, format!("duplicate record `{name}`")))?;
            let e = store.entry_mut(&name)?;
            e.first_moment = m;
            e.second_moment = v;
        }
        store.set_step_count(steps);
        Ok(store)
    }
}

impl<T: Scalar> Checkpoint<T> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, CHECKPOINT_VERSION);
        out.push(T::DTYPE.tag());
        let text = self.config.to_text();
        put_u64(&mut out, text.len() as u64);
        out.extend_from_slice(text.as_bytes());
        put_u64(&mut out, self.iteration);
        for store in [&self.generator, &self.discriminator, &self.extractor] {
            put_store(&mut out, store);
        }
        out
    }

    /// Parses checkpoint bytes; `path` only labels errors.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader {
            bytes,
            pos: 0,
            path,
        };
        let tag = header(&mut r)?;
        if tag != T::DTYPE {
            return Err(Error::format(
                path,
                format!(
                    "checkpoint holds {} parameters, requested {}",
                    tag.name(),
                    T::DTYPE.name()
                ),
            ));
        }
        let text_len = r.len("config length")?;
        let text = std::str::from_utf8(r.take(text_len)?)
            .map_err(|_| Error::format(path, "config is not UTF-8"))?;
        let config = TrainConfig::from_text(text)?;
        let iteration = r.u64()?;
        let generator = r.store()?;
        let discriminator = r.store()?;
        let extractor = r.store()?;
        if r.pos != bytes.len() {
            return Err(Error::format(
                path,
                format!("{} trailing bytes", bytes.len() - r.pos),
            ));
        }
        Ok(Self {
            config,
            iteration,
            generator,
            discriminator,
            extractor,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes =
            std::fs::read(path).map_err(|e| Error::format(path, format!("cannot read: {e}")))?;
        Self::from_bytes(&bytes, path)
    }
}

fn header(r: &mut Reader<'_>) -> Result<DType> {
    if r.take(MAGIC.len()).ok() != Some(MAGIC.as_slice()) {
        return Err(Error::format(r.path, "not a checkpoint (bad magic)"));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(
            r.path,
            format!("unsupported checkpoint version {version}"),
        ));
    }
    let tag = r.u8()?;
    DType::from_tag(tag).ok_or_else(|| Error::format(r.path, format!("unknown dtype tag {tag}")))
}

/// Element type of a checkpoint file, read from its header.
pub fn checkpoint_dtype(path: &Path) -> Result<DType> {
    let bytes =
        std::fs::read(path).map_err(|e| Error::format(path, format!("cannot read: {e}")))?;
    header(&mut Reader {
        bytes: &bytes,
        pos: 0,
        path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint<f64> {
        let mut g = ParamStore::new();
        g.insert_glorot("a/kernel", &[2, 1, 3, 3], 4).unwrap();
        g.insert_zeros("a/bias", &[2]).unwrap();
        g.entry_mut("a/bias").unwrap().first_moment =
            Tensor::from_f64(&[2], &[0.5, -0.25]).unwrap();
        g.set_step_count(7);
        let mut d = ParamStore::new();
        d.insert_glorot("disc1/fc/weight", &[1, 5], 2).unwrap();
        Checkpoint {
            config: TrainConfig::default(),
            iteration: 7,
            generator: g,
            discriminator: d,
            extractor: ParamStore::new(),
        }
    }

    #[test]
    fn bytes_roundtrip_exactly() {
        let ck = sample();
        let bytes = ck.to_bytes();
        let back = Checkpoint::<f64>::from_bytes(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), bytes);
        assert!(Checkpoint::<f32>::from_bytes(&bytes, Path::new("mem")).is_err());
    }

    #[test]
    fn corruption_is_rejected() {
        let bytes = sample().to_bytes();
        let p = Path::new("mem");
        assert!(Checkpoint::<f64>::from_bytes(&bytes[..bytes.len() - 3], p).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::<f64>::from_bytes(&bad, p).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Checkpoint::<f64>::from_bytes(&extra, p).is_err());
    }
}
