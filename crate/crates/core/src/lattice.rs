//! Lattice geometry, boundary-aware stencils and model parameters.
//!
//! Sites are stored x-fastest, then y, then z: `index = x + lx * (y + ly * z)`.
//! Every operator here is bond-summed: a term only exists where the bond
//! it lives on exists under the axis boundary condition. Periodic axes of
//! length 2 carry two parallel bonds per line; axes of length 1 carry none.

use std::fmt;
use std::ops::{Deref, DerefMut};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const NONE: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    Open,
    Periodic,
}

impl fmt::Display for Boundary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Boundary::Open => f.write_str("open"),
            Boundary::Periodic => f.write_str("periodic"),
        }
    }
}

impl std::str::FromStr for Boundary {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "open" | "obc" => Ok(Boundary::Open),
            "periodic" | "pbc" => Ok(Boundary::Periodic),
            other => Err(Error::param("bc", format!("expected open|periodic, got {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Axis {
    X = 0,
    Y = 1,
    Z = 2,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Coupling constants of the model, in units of a reference rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Imaginary hopping along x; source of the nonreciprocity.
    pub j_hop: f64,
    /// Two-photon drive breaking U(1) down to Z2.
    pub lambda_pair: f64,
    /// Incoherent single-particle gain.
    pub gain_k1: f64,
    /// Two-particle loss.
    pub loss_k2: f64,
    /// Correlated single-particle loss along x, y, z.
    pub k_diff: [f64; 3],
}

impl ModelParams {
    /// Parameters of the traveling-wave coherence study (J=3, λ=1, Kx=0.8, Ky=Kz=4, κ₂=0.2, κ₁=1.5).
    pub fn traveling_wave_reference() -> Self {
        ModelParams {
            j_hop: 3.0,
            lambda_pair: 1.0,
            gain_k1: 1.5,
            loss_k2: 0.2,
            k_diff: [0.8, 4.0, 4.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            ("j", self.j_hop),
            ("lambda", self.lambda_pair),
            ("kappa1", self.gain_k1),
            ("kappa2", self.loss_k2),
            ("kx", self.k_diff[0]),
            ("ky", self.k_diff[1]),
            ("kz", self.k_diff[2]),
        ];
        for (key, v) in finite {
            if !v.is_finite() {
                return Err(Error::param(key, "must be finite"));
            }
        }
        if self.loss_k2 <= 0.0 {
            return Err(Error::param(
                "kappa2",
                format!("two-particle loss must satisfy kappa2 > 0, got {}", self.loss_k2),
            ));
        }
        if self.lambda_pair < 0.0 {
            return Err(Error::param("lambda", "must satisfy lambda >= 0"));
        }
        if self.gain_k1 < 0.0 {
            return Err(Error::param("kappa1", "must satisfy kappa1 >= 0"));
        }
        for (key, k) in ["kx", "ky", "kz"].iter().zip(self.k_diff) {
            if k < 0.0 {
                return Err(Error::param(key, "correlated loss rates must be >= 0"));
            }
        }
        Ok(())
    }

    /// |J| > Kx: the regime where the open-chain skin effect and the traveling wave appear.
    pub fn strong_nonreciprocity(&self) -> bool {
        self.j_hop.abs() > self.k_diff[0]
    }

    /// Nonzero uniform fixed point of the mean-field equation, `sqrt((κ₁+λ)/(2κ₂))·(1−i)`.
    pub fn uniform_fixed_point(&self) -> Complex64 {
        let m = ((self.gain_k1 + self.lambda_pair) / (2.0 * self.loss_k2)).sqrt();
        Complex64::new(m, -m)
    }

    /// Fixed point of the truncated-Wigner drift, where the gain is κ₁ + κ₂.
    pub fn wigner_fixed_point(&self) -> Complex64 {
        self.with_gain(self.gain_k1 + self.loss_k2).uniform_fixed_point()
    }

    pub fn with_gain(&self, gain_k1: f64) -> Self {
        ModelParams { gain_k1, ..*self }
    }

    pub fn with_kx(&self, kx: f64) -> Self {
        let mut p = *self;
        p.k_diff[0] = kx;
        p
    }
}

/// Rectangular lattice with per-axis boundary conditions and precomputed neighbor tables.
#[derive(Clone)]
pub struct LatticeGeom {
    dims: [usize; 3],
    bc: [Boundary; 3],
    // plus[axis][i] / minus[axis][i]: neighbor index or NONE
    plus: [Vec<u32>; 3],
    minus: [Vec<u32>; 3],
}

impl fmt::Debug for LatticeGeom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LatticeGeom")
            .field("dims", &self.dims)
            .field("bc", &self.bc)
            .finish()
    }
}

impl fmt::Display for LatticeGeom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [lx, ly, lz] = self.dims;
        let [bx, by, bz] = self.bc;
        write!(f, "{lx}x{ly}x{lz} ({bx},{by},{bz})")
    }
}

impl PartialEq for LatticeGeom {
    fn eq(&self, other: &Self) -> bool {
        self.dims == other.dims && self.bc == other.bc
    }
}

impl Eq for LatticeGeom {}

impl LatticeGeom {
    pub fn new(dims: [usize; 3], bc: [Boundary; 3]) -> Result<Self> {
        for (key, &l) in ["lx", "ly", "lz"].iter().zip(&dims) {
            if l == 0 {
                return Err(Error::param(key, "lattice dimensions must be positive"));
            }
        }
        let n = dims[0]
            .checked_mul(dims[1])
            .and_then(|v| v.checked_mul(dims[2]))
            .filter(|&n| n < NONE as usize)
            .ok_or_else(|| Error::param("lx", "lattice too large"))?;

        let mut plus: [Vec<u32>; 3] = Default::default();
        let mut minus: [Vec<u32>; 3] = Default::default();
        for axis in 0..3 {
            plus[axis] = vec![NONE; n];
            minus[axis] = vec![NONE; n];
        }
        let strides = [1, dims[0], dims[0] * dims[1]];
        for i in 0..n {
            let c = coords_of(dims, i);
            for axis in 0..3 {
                let l = dims[axis];
                if l == 1 {
                    continue;
                }
                let pos = c[axis];
                let up = if pos + 1 < l {
                    Some(i + strides[axis])
                } else if bc[axis] == Boundary::Periodic {
                    Some(i + strides[axis] - l * strides[axis])
                } else {
                    None
                };
                let down = if pos > 0 {
                    Some(i - strides[axis])
                } else if bc[axis] == Boundary::Periodic {
                    Some(i + (l - 1) * strides[axis])
                } else {
                    None
                };
                if let Some(j) = up {
                    plus[axis][i] = j as u32;
                }
                if let Some(j) = down {
                    minus[axis][i] = j as u32;
                }
            }
        }
        Ok(LatticeGeom {
            dims,
            bc,
            plus,
            minus,
        })
    }

    /// Chain along x; y and z have length 1.
    pub fn chain(lx: usize, bc: Boundary) -> Result<Self> {
        Self::new([lx, 1, 1], [bc, Boundary::Periodic, Boundary::Periodic])
    }

    /// Open or periodic along x, periodic along y and z.
    pub fn slab(dims: [usize; 3], bc_x: Boundary) -> Result<Self> {
        Self::new(dims, [bc_x, Boundary::Periodic, Boundary::Periodic])
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn bc(&self) -> [Boundary; 3] {
        self.bc
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn index(&self, [x, y, z]: [usize; 3]) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    pub fn coords(&self, i: usize) -> [usize; 3] {
        coords_of(self.dims, i)
    }

    /// Neighbor of `site` one step in the positive direction of `axis`.
    pub fn plus(&self, axis: Axis, site: usize) -> Option<usize> {
        let j = self.plus[axis.index()][site];
        (j != NONE).then_some(j as usize)
    }

    pub fn minus(&self, axis: Axis, site: usize) -> Option<usize> {
        let j = self.minus[axis.index()][site];
        (j != NONE).then_some(j as usize)
    }

    pub(crate) fn plus_table(&self, axis: usize) -> &[u32] {
        &self.plus[axis]
    }

    pub(crate) fn minus_table(&self, axis: usize) -> &[u32] {
        &self.minus[axis]
    }

    /// Number of sites per x column after averaging over y and z.
    pub fn transverse_len(&self) -> usize {
        self.dims[1] * self.dims[2]
    }

    pub fn check_field(&self, field: &[Complex64]) -> Result<()> {
        if field.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                got: field.len(),
            });
        }
        Ok(())
    }
}

fn coords_of(dims: [usize; 3], i: usize) -> [usize; 3] {
    let x = i % dims[0];
    let rest = i / dims[0];
    [x, rest % dims[1], rest / dims[1]]
}

/// All bonds `(r, r + e_axis)` present under the axis boundary condition.
pub fn enumerate_bonds(geom: &LatticeGeom, axis: Axis) -> Vec<(usize, usize)> {
    (0..geom.len())
        .filter_map(|r| geom.plus(axis, r).map(|s| (r, s)))
        .collect()
}

/// One complex amplitude per site.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexField {
    values: Vec<Complex64>,
}

impl ComplexField {
    pub fn zeros(n: usize) -> Self {
        ComplexField {
            values: vec![Complex64::new(0.0, 0.0); n],
        }
    }

    pub fn uniform(n: usize, value: Complex64) -> Self {
        ComplexField {
            values: vec![value; n],
        }
    }

    pub fn from_vec(values: Vec<Complex64>) -> Self {
        ComplexField { values }
    }

    pub fn into_vec(self) -> Vec<Complex64> {
        self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Max-norm distance to another field of the same length.
    pub fn max_diff(&self, other: &ComplexField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    /// Average over y and z: one value per x coordinate.
    pub fn column_average(&self, geom: &LatticeGeom) -> Vec<Complex64> {
        column_average(&self.values, geom)
    }
}

impl Deref for ComplexField {
    type Target = [Complex64];

    fn deref(&self) -> &[Complex64] {
        &self.values
    }
}

impl DerefMut for ComplexField {
    fn deref_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }
}

/// Average over y and z of a raw site vector.
pub fn column_average(values: &[Complex64], geom: &LatticeGeom) -> Vec<Complex64> {
    let lx = geom.dims[0];
    let mut out = vec![Complex64::new(0.0, 0.0); lx];
    for (i, v) in values.iter().enumerate() {
        out[i % lx] += v;
    }
    let norm = 1.0 / geom.transverse_len() as f64;
    for v in &mut out {
        *v *= norm;
    }
    out
}

/// Bond-summed Laplacian: `Σ_bonds K_axis (a_other − a_r)`.
pub fn apply_laplacian(field: &ComplexField, geom: &LatticeGeom, k_diff: [f64; 3]) -> Result<ComplexField> {
    geom.check_field(field)?;
    let mut out = ComplexField::zeros(field.len());
    for axis in 0..3 {
        let k = k_diff[axis];
        if k == 0.0 {
            continue;
        }
        for (r, o) in out.iter_mut().enumerate() {
            let a = field[r];
            for table in [geom.plus_table(axis), geom.minus_table(axis)] {
                let j = table[r];
                if j != NONE {
                    *o += k * (field[j as usize] - a);
                }
            }
        }
    }
    Ok(out)
}

/// Nonreciprocal hop `J (a_{r−e_x} − a_{r+e_x})`; missing neighbors contribute nothing.
pub fn apply_nonrecip_hop(field: &ComplexField, geom: &LatticeGeom, j_hop: f64) -> Result<ComplexField> {
    geom.check_field(field)?;
    let plus = geom.plus_table(0);
    let minus = geom.minus_table(0);
    let out = (0..field.len())
        .map(|r| {
            let mut acc = Complex64::new(0.0, 0.0);
            if minus[r] != NONE {
                acc += field[minus[r] as usize];
            }
            if plus[r] != NONE {
                acc -= field[plus[r] as usize];
            }
            j_hop * acc
        })
        .collect();
    Ok(ComplexField::from_vec(out))
}

/// Linear lattice part (hop plus Laplacian) of site `r`, fused for the hot loops.
#[inline(always)]
pub(crate) fn linear_coupling(field: &[Complex64], geom: &LatticeGeom, j_hop: f64, k_diff: &[f64; 3], r: usize) -> Complex64 {
    let a = field[r];
    let mut acc = Complex64::new(0.0, 0.0);
    for axis in 0..3 {
        let k = k_diff[axis];
        let p = geom.plus[axis][r];
        let m = geom.minus[axis][r];
        if axis == 0 {
            if m != NONE {
                let am = field[m as usize];
                acc += (k + j_hop) * am - k * a;
            }
            if p != NONE {
                let ap = field[p as usize];
                acc += (k - j_hop) * ap - k * a;
            }
        } else if k != 0.0 {
            if m != NONE {
                acc += k * (field[m as usize] - a);
            }
            if p != NONE {
                acc += k * (field[p as usize] - a);
            }
        }
    }
    acc
}
