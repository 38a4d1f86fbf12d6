//! Binary policy checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "MAPT" | version u16 | agents u16
//! per agent:
//!   class u8 (0 tabular, 1 mlp)
//!   observation feature sizes: count u32, sizes u32...
//!   layer widths (hidden..., actions): count u32, widths u32...
//!   parameter count u64, parameters f64...
//! ```

use std::path::Path;

use super::{AgentPolicy, PolicyClass, PolicySet};
use crate::error::{Error, Result};
use crate::game::ObsEncoding;

const MAGIC: &[u8; 4] = b"MAPT";
pub const FORMAT_VERSION: u16 = 1;

pub fn write_checkpoint(policies: &PolicySet) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(policies.len() as u16).to_le_bytes());
    for p in policies.agents() {
        let (tag, mut widths) = match p.class() {
            PolicyClass::Tabular => (0u8, Vec::new()),
            PolicyClass::Mlp { hidden } => (1u8, hidden.clone()),
        };
        widths.push(p.num_actions());
        out.push(tag);
        put_u32_list(&mut out, p.encoding().features());
        put_u32_list(&mut out, &widths);
        out.extend_from_slice(&(p.num_params() as u64).to_le_bytes());
        for x in p.params() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

fn put_u32_list(out: &mut Vec<u8>, values: &[usize]) {
    out.extend_from_slice(&(values.len() as u32).to_le_bytes());
    for &v in values {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format(format!(
                "truncated checkpoint: needed {n} bytes at offset {}",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn u32_list(&mut self) -> Result<Vec<usize>> {
        let n = self.u32()? as usize;
        if n > (self.bytes.len() - self.pos) / 4 {
            return Err(Error::Format("list length exceeds checkpoint size".into()));
        }
        (0..n).map(|_| self.u32().map(|v| v as usize)).collect()
    }
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<PolicySet> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4).map_err(|_| Error::Format("missing magic".into()))? != MAGIC {
        return Err(Error::Format("bad magic bytes, not a policy checkpoint".into()));
    }
    let version = r.u16()?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version} (expected {FORMAT_VERSION})"
        )));
    }
    let agents = r.u16()? as usize;
    let mut policies = Vec::with_capacity(agents);
    for i in 0..agents {
        let tag = r.u8()?;
        let features = r.u32_list()?;
        let mut widths = r.u32_list()?;
        let num_actions = widths
            .pop()
            .ok_or_else(|| Error::Format(format!("agent {i}: empty layer widths")))?;
        let class = match tag {
            0 if widths.is_empty() => PolicyClass::Tabular,
            0 => return Err(Error::Format(format!("agent {i}: tabular policy with hidden layers"))),
            1 => PolicyClass::Mlp { hidden: widths },
            t => return Err(Error::Format(format!("agent {i}: unknown class tag {t}"))),
        };
        let count = r.u64()? as usize;
        if count > (bytes.len() - r.pos) / 8 {
            return Err(Error::Format(format!("agent {i}: truncated parameters")));
        }
        let params = (0..count)
            .map(|_| r.u64().map(f64::from_bits))
            .collect::<Result<Vec<_>>>()?;
        let encoding =
            ObsEncoding::new(features).map_err(|e| Error::Format(format!("agent {i}: {e}")))?;
        policies.push(
            AgentPolicy::from_params(class, encoding, num_actions, params)
                .map_err(|e| Error::Format(format!("agent {i}: {e}")))?,
        );
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after checkpoint",
            bytes.len() - r.pos
        )));
    }
    Ok(PolicySet::new(policies))
}

pub fn save_checkpoint(policies: &PolicySet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, write_checkpoint(policies)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<PolicySet> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&bytes)
}
