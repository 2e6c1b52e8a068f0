//! Binary checkpoints: little-endian, fixed layout.
//!
//! ```text
//! magic "DECENT01"
//! u64 x 10  d_dyn d_pstat d_pdyn patients doctors medications rooms
//!           d_static(doctor) d_static(medication) d_static(room)
//! u64 x 3   static mode code, bourgain copies (0 = default), static seed
//! f64       delta scale
//! u64 f64 u64 u64   epochs done, best loss, stale epochs, adam step
//! u64       parameter count N
//! f64 x N   parameters, then N first moments, then N second moments
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::data::Populations;
use crate::dynamics::{DeltaScale, DimsConfig, ParameterSet};
use crate::error::{Error, Result};
use crate::static_embed::{StaticMode, StaticSpec};
use crate::training::adam::OptimizerState;
use crate::training::grad::{assign_flat, to_flat};

pub const MAGIC: &[u8; 8] = b"DECENT01";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub dims: DimsConfig,
    pub static_spec: StaticSpec,
    pub scale: DeltaScale,
    pub epoch: usize,
    pub best_loss: f64,
    pub stale_epochs: usize,
    pub params: ParameterSet,
    pub optimizer: OptimizerState,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        let d = &self.dims;
        let p = &d.populations;
        let head = [
            d.d_dyn,
            d.d_pstat,
            d.d_pdyn,
            p.patients,
            p.doctors,
            p.medications,
            p.rooms,
            d.d_static[0],
            d.d_static[1],
            d.d_static[2],
        ];
        for x in head {
            out.extend_from_slice(&(x as u64).to_le_bytes());
        }
        out.extend_from_slice(&(self.static_spec.mode.code() as u64).to_le_bytes());
        out.extend_from_slice(&(self.static_spec.copies.unwrap_or(0) as u64).to_le_bytes());
        out.extend_from_slice(&self.static_spec.seed.to_le_bytes());
        out.extend_from_slice(&self.scale.0.to_le_bytes());
        out.extend_from_slice(&(self.epoch as u64).to_le_bytes());
        out.extend_from_slice(&self.best_loss.to_le_bytes());
        out.extend_from_slice(&(self.stale_epochs as u64).to_le_bytes());
        out.extend_from_slice(&self.optimizer.step.to_le_bytes());
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for set in [&self.params, &self.optimizer.m, &self.optimizer.v] {
            for x in to_flat(set) {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(8)?;
        if magic != MAGIC {
            if magic.starts_with(b"DECENT") {
                return Err(Error::Checkpoint(format!(
                    "unsupported checkpoint version {:?}",
                    String::from_utf8_lossy(&magic[6..])
                )));
            }
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let mut head = [0usize; 10];
        for h in &mut head {
            *h = r.usize()?;
        }
        let dims = DimsConfig {
            d_dyn: head[0],
            d_pstat: head[1],
            d_pdyn: head[2],
            d_static: [head[7], head[8], head[9]],
            populations: Populations {
                patients: head[3],
                doctors: head[4],
                medications: head[5],
                rooms: head[6],
            },
        };
        dims.validate()
            .map_err(|e| Error::Checkpoint(format!("bad dimensions: {e}")))?;
        let code = r.u64()?;
        let mode = u8::try_from(code)
            .ok()
            .and_then(StaticMode::from_code)
            .ok_or_else(|| Error::Checkpoint(format!("unknown static mode code {code}")))?;
        let copies = match r.usize()? {
            0 => None,
            c => Some(c),
        };
        let seed = r.u64()?;
        let scale = DeltaScale(r.f64()?);
        let epoch = r.usize()?;
        let best_loss = r.f64()?;
        let stale_epochs = r.usize()?;
        let step = r.u64()?;
        let n = r.usize()?;
        let mut params = ParameterSet::zeros(&dims);
        if n != params.len() {
            return Err(Error::Checkpoint(format!(
                "parameter count {n} does not match dimensions ({})",
                params.len()
            )));
        }
        let mut sets = Vec::with_capacity(3);
        for _ in 0..3 {
            let flat = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            sets.push(flat);
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes after checkpoint",
                bytes.len() - r.pos
            )));
        }
        let mut m = ParameterSet::zeros(&dims);
        let mut v = ParameterSet::zeros(&dims);
        assign_flat(&mut params, &sets[0])?;
        assign_flat(&mut m, &sets[1])?;
        assign_flat(&mut v, &sets[2])?;
        Ok(Checkpoint {
            dims,
            static_spec: StaticSpec { mode, copies, seed },
            scale,
            epoch,
            best_loss,
            stale_epochs,
            params,
            optimizer: OptimizerState { m, v, step },
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Checkpoint(format!(
                "truncated checkpoint: needed {n} bytes at offset {}",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn usize(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| Error::Checkpoint(format!("value {v} out of range")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
