//! Binary ensemble checkpoints.
//!
//! Layout, all little-endian:
//!
//! | bytes | content |
//! |---|---|
//! | 8 | magic `CWAVECKP` |
//! | 4 | format version |
//! | 24 | `lx, ly, lz` as u64 |
//! | 3 | boundary per axis, 0 open / 1 periodic |
//! | 56 | `j, lambda, kappa1, kappa2, kx, ky, kz` as f64 |
//! | 8 + 8 + 8 | master seed, step, time (f64 bits) |
//! | 8 + 8 | trajectories M, sites N |
//! | 9 M | per trajectory: dead flag u8, death time f64 |
//! | 16 M N | per trajectory, per site (x fastest, then y, z): Re, Im as f64 |
//! | 4 | CRC-32 of everything above |

use std::path::Path;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::lattice::{Boundary, ComplexField, LatticeGeom, ModelParams};
use crate::twa::EnsembleState;

pub const CHECKPOINT_MAGIC: [u8; 8] = *b"CWAVECKP";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub geom: LatticeGeom,
    pub params: ModelParams,
    pub ensemble: EnsembleState,
}

pub fn encode_checkpoint(geom: &LatticeGeom, params: &ModelParams, ens: &EnsembleState) -> Result<Vec<u8>> {
    if ens.sites() != geom.len() {
        return Err(Error::DimensionMismatch {
            expected: geom.len(),
            got: ens.sites(),
        });
    }
    let m = ens.len();
    let mut buf = Vec::with_capacity(160 + 9 * m + 16 * m * geom.len());
    buf.extend_from_slice(&CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for l in geom.dims() {
        buf.extend_from_slice(&(l as u64).to_le_bytes());
    }
    for b in geom.bc() {
        buf.push(match b {
            Boundary::Open => 0,
            Boundary::Periodic => 1,
        });
    }
    let p = params;
    for v in [p.j_hop, p.lambda_pair, p.gain_k1, p.loss_k2, p.k_diff[0], p.k_diff[1], p.k_diff[2]] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend_from_slice(&ens.master_seed().to_le_bytes());
    buf.extend_from_slice(&ens.step().to_le_bytes());
    buf.extend_from_slice(&ens.time().to_le_bytes());
    buf.extend_from_slice(&(m as u64).to_le_bytes());
    buf.extend_from_slice(&(geom.len() as u64).to_le_bytes());
    for d in ens.dead() {
        buf.push(d.is_some() as u8);
        buf.extend_from_slice(&d.unwrap_or(0.0).to_le_bytes());
    }
    for t in ens.trajectories() {
        for z in t.iter() {
            buf.extend_from_slice(&z.re.to_le_bytes());
            buf.extend_from_slice(&z.im.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    Ok(buf)
}

/// Writes through a temporary sibling and renames, so an interrupted write never leaves a torn file.
pub fn write_checkpoint(path: &Path, geom: &LatticeGeom, params: &ModelParams, ens: &EnsembleState) -> Result<()> {
    let bytes = encode_checkpoint(geom, params, ens)?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    std::fs::write(&tmp, &bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let out = self.bytes.get(self.pos..self.pos + n)?;
        self.pos += n;
        Some(out)
    }

    fn u8(&mut self) -> Option<u8> {
        self.take(1).map(|b| b[0])
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }

    fn f64(&mut self) -> Option<f64> {
        self.u64().map(f64::from_bits)
    }
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    let fail = |reason: String| Error::Checkpoint {
        path: path.to_path_buf(),
        reason,
    };
    let truncated = || fail("truncated file".into());
    if bytes.len() < 12 || bytes[..8] != CHECKPOINT_MAGIC {
        return Err(fail("not a checkpoint (bad magic)".into()));
    }
    let mut r = Reader { bytes, pos: 8 };
    let version = r.u32().ok_or_else(truncated)?;
    if version != CHECKPOINT_VERSION {
        return Err(fail(format!("format version {version}, expected {CHECKPOINT_VERSION}")));
    }
    let mut dims = [0usize; 3];
    for d in &mut dims {
        *d = r.u64().ok_or_else(truncated)? as usize;
    }
    let mut bc = [Boundary::Open; 3];
    for b in &mut bc {
        *b = match r.u8().ok_or_else(truncated)? {
            0 => Boundary::Open,
            1 => Boundary::Periodic,
            other => return Err(fail(format!("bad boundary code {other}"))),
        };
    }
    let mut v = [0.0; 7];
    for x in &mut v {
        *x = r.f64().ok_or_else(truncated)?;
    }
    let seed = r.u64().ok_or_else(truncated)?;
    let step = r.u64().ok_or_else(truncated)?;
    let time = r.f64().ok_or_else(truncated)?;
    let m = r.u64().ok_or_else(truncated)? as usize;
    let n = r.u64().ok_or_else(truncated)? as usize;
    let body = m
        .checked_mul(n)
        .and_then(|mn| mn.checked_mul(16))
        .and_then(|b| b.checked_add(9 * m + 4))
        .ok_or_else(|| fail("header sizes overflow".into()))?;
    if bytes.len() - r.pos < body {
        return Err(truncated());
    }
    if bytes.len() - r.pos > body {
        return Err(fail("trailing bytes after payload".into()));
    }
    let crc_at = bytes.len() - 4;
    let stored = u32::from_le_bytes(bytes[crc_at..].try_into().unwrap());
    if crc32fast::hash(&bytes[..crc_at]) != stored {
        return Err(fail("checksum mismatch".into()));
    }
    let geom = LatticeGeom::new(dims, bc).map_err(|e| fail(e.to_string()))?;
    if geom.len() != n {
        return Err(fail(format!("header has {n} sites but geometry {geom} has {}", geom.len())));
    }
    let params = ModelParams {
        j_hop: v[0],
        lambda_pair: v[1],
        gain_k1: v[2],
        loss_k2: v[3],
        k_diff: [v[4], v[5], v[6]],
    };
    let mut dead = Vec::with_capacity(m);
    for _ in 0..m {
        let flag = r.u8().ok_or_else(truncated)?;
        let t = r.f64().ok_or_else(truncated)?;
        dead.push((flag != 0).then_some(t));
    }
    let mut trajectories = Vec::with_capacity(m);
    for _ in 0..m {
        let mut vals = Vec::with_capacity(n);
        for _ in 0..n {
            let re = r.f64().ok_or_else(truncated)?;
            let im = r.f64().ok_or_else(truncated)?;
            vals.push(Complex64::new(re, im));
        }
        trajectories.push(ComplexField::from_vec(vals));
    }
    let ensemble = EnsembleState::from_parts(trajectories, dead, time, step, seed)?;
    Ok(Checkpoint { geom, params, ensemble })
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path)?;
    decode_checkpoint(&bytes, path)
}

/// Reads a checkpoint and insists it was written for `geom`.
pub fn read_checkpoint_for(path: &Path, geom: &LatticeGeom) -> Result<Checkpoint> {
    let ck = read_checkpoint(path)?;
    if ck.geom != *geom {
        return Err(Error::Config(format!(
            "checkpoint {} holds lattice {} but the configuration asks for {}",
            path.display(),
            ck.geom,
            geom
        )));
    }
    Ok(ck)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::twa::TwaStepper;

    fn sample() -> (LatticeGeom, ModelParams, EnsembleState) {
        let geom = LatticeGeom::new([3, 2, 2], [Boundary::Open, Boundary::Periodic, Boundary::Open]).unwrap();
        let p = ModelParams::traveling_wave_reference();
        let ens = EnsembleState::sample(&vec![Complex64::new(0.6, -0.6); geom.len()], &geom, 5, 42).unwrap();
        (geom, p, ens)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let (geom, p, mut ens) = sample();
        TwaStepper::new(&geom, p, 1e-3).unwrap().advance(&mut ens, 7).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ckpt");
        write_checkpoint(&path, &geom, &p, &ens).unwrap();
        let ck = read_checkpoint(&path).unwrap();
        assert_eq!(ck.geom, geom);
        assert_eq!(ck.params, p);
        assert_eq!(ck.ensemble.time().to_bits(), ens.time().to_bits());
        assert_eq!(ck.ensemble.step(), ens.step());
        assert_eq!(ck.ensemble.master_seed(), 42);
        assert_eq!(ck.ensemble.dead(), ens.dead());
        for (a, b) in ck.ensemble.trajectories().iter().zip(ens.trajectories()) {
            for (x, y) in a.iter().zip(b.iter()) {
                assert_eq!((x.re.to_bits(), x.im.to_bits()), (y.re.to_bits(), y.im.to_bits()));
            }
        }
        assert_eq!(encode_checkpoint(&ck.geom, &ck.params, &ck.ensemble).unwrap(), std::fs::read(&path).unwrap());
    }

    #[test]
    fn corruption_is_detected() {
        let (geom, p, ens) = sample();
        let bytes = encode_checkpoint(&geom, &p, &ens).unwrap();
        let path = Path::new("mem");
        let mut flipped = bytes.clone();
        flipped[200] ^= 1;
        assert!(decode_checkpoint(&flipped, path).unwrap_err().to_string().contains("checksum"));
        assert!(decode_checkpoint(&bytes[..bytes.len() - 9], path).unwrap_err().to_string().contains("truncated"));
        let mut old = bytes.clone();
        old[8] = 9;
        assert!(decode_checkpoint(&old, path).unwrap_err().to_string().contains("version"));
        assert!(decode_checkpoint(b"garbage!garbage", path).unwrap_err().to_string().contains("magic"));
    }

    #[test]
    fn foreign_geometry_is_named() {
        let (geom, p, ens) = sample();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.ckpt");
        write_checkpoint(&path, &geom, &p, &ens).unwrap();
        let other = LatticeGeom::chain(12, Boundary::Open).unwrap();
        let msg = read_checkpoint_for(&path, &other).unwrap_err().to_string();
        assert!(msg.contains(&geom.to_string()) && msg.contains(&other.to_string()), "{msg}");
    }
}
