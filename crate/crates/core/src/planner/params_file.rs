//! Binary parameter format, little-endian:
//!
//! ```text
//! magic "VLFP" | version u32
//! config: rays, goal_classes, context, horizon, d_model, hidden, layers (u32), d_max (f64)
//! tensor count u32, then per tensor: name_len u16, name, rows u32, cols u32
//! then every tensor's values as f32, row-major, in table order
//! ```

use std::fs;
use std::path::Path;

use super::network::{ModelConfig, PlannerParams};
use super::PlannerError;

pub const PARAMS_MAGIC: [u8; 4] = *b"VLFP";
pub const PARAMS_VERSION: u32 = 1;

pub fn encode_params(params: &PlannerParams) -> Vec<u8> {
    let c = &params.cfg;
    let mut buf = Vec::with_capacity(64 + params.num_params() * 4);
    buf.extend_from_slice(&PARAMS_MAGIC);
    buf.extend_from_slice(&PARAMS_VERSION.to_le_bytes());
    for v in [c.rays, c.goal_classes, c.context, c.horizon, c.d_model, c.hidden, c.layers] {
        buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    buf.extend_from_slice(&c.d_max.to_le_bytes());
    let named = params.named_tensors();
    buf.extend_from_slice(&(named.len() as u32).to_le_bytes());
    for (name, t) in &named {
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(t.nrows() as u32).to_le_bytes());
        buf.extend_from_slice(&(t.ncols() as u32).to_le_bytes());
    }
    for (_, t) in &named {
        for v in t.iter() {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    buf
}

pub fn write_params(params: &PlannerParams, path: &Path) -> Result<(), PlannerError> {
    fs::write(path, encode_params(params))?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], PlannerError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| PlannerError::Truncated(what.to_string()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u16(&mut self, what: &str) -> Result<u16, PlannerError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32, PlannerError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn decode_params(bytes: &[u8]) -> Result<PlannerParams, PlannerError> {
    let mut r = Reader { bytes, pos: 0 };
    let magic: [u8; 4] = r.take(4, "magic")?.try_into().unwrap();
    if magic != PARAMS_MAGIC {
        return Err(PlannerError::BadMagic { found: magic });
    }
    let version = r.u32("version")?;
    if version != PARAMS_VERSION {
        return Err(PlannerError::VersionUnsupported(version));
    }
    let mut dims = [0usize; 7];
    for d in &mut dims {
        *d = r.u32("config")? as usize;
    }
    let d_max = f64::from_le_bytes(r.take(8, "config")?.try_into().unwrap());
    let cfg = ModelConfig {
        rays: dims[0],
        goal_classes: dims[1],
        context: dims[2],
        horizon: dims[3],
        d_model: dims[4],
        hidden: dims[5],
        layers: dims[6],
        d_max,
    };
    cfg.validate()?;
    // Guard against absurd headers before allocating.
    if cfg.features().saturating_mul(cfg.hidden) > bytes.len() {
        return Err(PlannerError::Truncated("tensor data".into()));
    }
    let mut params = PlannerParams::zeros(cfg);
    let count = r.u32("tensor count")? as usize;
    let mut named = params.named_tensors_mut();
    if count != named.len() {
        return Err(PlannerError::InvalidParams(format!(
            "file declares {count} tensors, config implies {}",
            named.len()
        )));
    }
    for (name, t) in named.iter() {
        let len = r.u16("shape table")? as usize;
        let found = String::from_utf8_lossy(r.take(len, "shape table")?).into_owned();
        let rows = r.u32("shape table")? as usize;
        let cols = r.u32("shape table")? as usize;
        if &found != name || (rows, cols) != t.dim() {
            return Err(PlannerError::InvalidParams(format!(
                "tensor {found} {rows}x{cols} where {name} {:?} was expected",
                t.dim()
            )));
        }
    }
    for (name, t) in named.iter_mut() {
        let raw = r.take(t.len() * 4, &format!("tensor {name}"))?;
        for (v, c) in t.iter_mut().zip(raw.chunks_exact(4)) {
            let x = f32::from_le_bytes(c.try_into().unwrap());
            if !x.is_finite() {
                return Err(PlannerError::InvalidParams(format!("non-finite value in {name}")));
            }
            *v = x as f64;
        }
    }
    drop(named);
    Ok(params)
}

pub fn read_params(path: &Path) -> Result<PlannerParams, PlannerError> {
    decode_params(&fs::read(path)?)
}
