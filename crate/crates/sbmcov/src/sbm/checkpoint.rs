//! Versioned binary chain checkpoints.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! offset  field
//! 0       magic "SBMC" (4 bytes)
//! 4       format version, u32 (currently 1)
//! 8       p, u64
//! 16      pair count, u64
//! 24      sweep counter, u64
//! 32      refresh interval, u64
//! 40      screening threshold, f64
//! 48      Σ lower triangle, row-major, p(p+1)/2 f64
//! ...     Ω lower triangle, row-major, p(p+1)/2 f64
//! ...     pairs, sorted (j, k) with j < k, each two u32
//! ...     φ values, f64 per pair
//! ...     ζ values, f64 per pair
//! ```

use std::io::{Read, Write};

use ndarray::Array2;

use super::{GibbsState, SbmError};
use crate::screen::ScreenSet;

const MAGIC: &[u8; 4] = b"SBMC";
const VERSION: u32 = 1;

impl GibbsState {
    /// Serializes the state together with the screen set it is aligned to.
    pub fn save_checkpoint<W: Write>(
        &self,
        screen: &ScreenSet,
        mut out: W,
    ) -> Result<(), SbmError> {
        let p = self.dim();
        if screen.dim() != p || screen.len() != self.phi.len() {
            return Err(SbmError::DimMismatch(
                "screen set does not match state".into(),
            ));
        }
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(p as u64).to_le_bytes());
        buf.extend_from_slice(&(screen.len() as u64).to_le_bytes());
        buf.extend_from_slice(&self.sweep.to_le_bytes());
        buf.extend_from_slice(&self.refresh_interval.to_le_bytes());
        buf.extend_from_slice(&screen.threshold().to_le_bytes());
        write_lower_triangle(&mut buf, &self.sigma);
        write_lower_triangle(&mut buf, &self.omega);
        for &(a, b) in screen.pairs() {
            buf.extend_from_slice(&(a as u32).to_le_bytes());
            buf.extend_from_slice(&(b as u32).to_le_bytes());
        }
        for v in self.phi.iter().chain(self.zeta.iter()) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf)
            .map_err(|e| SbmError::Checkpoint(e.to_string()))
    }

    /// Restores a state and its screen set from a checkpoint.
    pub fn load_checkpoint<R: Read>(mut input: R) -> Result<(GibbsState, ScreenSet), SbmError> {
        let mut bytes = Vec::new();
        input
            .read_to_end(&mut bytes)
            .map_err(|e| SbmError::Checkpoint(e.to_string()))?;
        let mut cur = Cursor { bytes: &bytes, pos: 0 };

        if cur.take(4)? != MAGIC {
            return Err(SbmError::Checkpoint("bad magic".into()));
        }
        let version = u32::from_le_bytes(cur.take(4)?.try_into().unwrap());
        if version != VERSION {
            return Err(SbmError::Checkpoint(format!(
                "unsupported version {version}"
            )));
        }
        let p = cur.u64()? as usize;
        let npairs = cur.u64()? as usize;
        let sweep = cur.u64()?;
        let refresh_interval = cur.u64()?;
        let threshold = cur.f64()?;
        let sigma = read_lower_triangle(&mut cur, p)?;
        let omega = read_lower_triangle(&mut cur, p)?;
        let mut pairs = Vec::with_capacity(npairs);
        for _ in 0..npairs {
            let a = u32::from_le_bytes(cur.take(4)?.try_into().unwrap()) as usize;
            let b = u32::from_le_bytes(cur.take(4)?.try_into().unwrap()) as usize;
            if a >= b || b >= p {
                return Err(SbmError::Checkpoint(format!("invalid pair ({a}, {b})")));
            }
            pairs.push((a, b));
        }
        let mut phi = Vec::with_capacity(npairs);
        for _ in 0..npairs {
            phi.push(cur.f64()?);
        }
        let mut zeta = Vec::with_capacity(npairs);
        for _ in 0..npairs {
            zeta.push(cur.f64()?);
        }
        if cur.pos != bytes.len() {
            return Err(SbmError::Checkpoint("trailing bytes".into()));
        }
        let screen = ScreenSet::from_pairs(p, threshold, pairs.iter().copied());
        if screen.pairs() != pairs.as_slice() {
            return Err(SbmError::Checkpoint("pairs not sorted".into()));
        }
        Ok((
            GibbsState {
                sigma,
                omega,
                phi,
                zeta,
                sweep,
                refresh_interval,
            },
            screen,
        ))
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], SbmError> {
        if self.pos + n > self.bytes.len() {
            return Err(SbmError::Checkpoint("truncated".into()));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u64(&mut self) -> Result<u64, SbmError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, SbmError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn write_lower_triangle(buf: &mut Vec<u8>, a: &Array2<f64>) {
    for r in 0..a.nrows() {
        for c in 0..=r {
            buf.extend_from_slice(&a[[r, c]].to_le_bytes());
        }
    }
}

fn read_lower_triangle(cur: &mut Cursor, p: usize) -> Result<Array2<f64>, SbmError> {
    let mut a = Array2::zeros((p, p));
    for r in 0..p {
        for c in 0..=r {
            let v = cur.f64()?;
            a[[r, c]] = v;
            a[[c, r]] = v;
        }
    }
    Ok(a)
}
