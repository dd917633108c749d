//! Linear stability of the empty state `a = 0`.
//!
//! The linearized map `δa ↦ hop(δa) + lap(δa) − iλ δa* + κ₁ δa` is real-linear
//! but not complex-linear, so it is represented as a real `2N × 2N` matrix on
//! the stacked vector `(Re δa, Im δa)`.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{Axis, Boundary, LatticeGeom, ModelParams};

/// Largest matrix dimension accepted for dense storage unless overridden.
pub const DEFAULT_DENSE_CAP: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StencilVariant {
    /// Sum over existing bonds only; boundary sites lose the missing bond's diagonal.
    BondSummed,
    /// Full `−2K` diagonal on every site, including open boundaries (Toeplitz form).
    UniformDiagonal,
}

impl std::str::FromStr for StencilVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bond-summed" | "bond" => Ok(StencilVariant::BondSummed),
            "uniform-diagonal" | "uniform" | "toeplitz" => Ok(StencilVariant::UniformDiagonal),
            other => Err(Error::param("variant", format!("expected bond-summed|uniform-diagonal, got {other:?}"))),
        }
    }
}

impl std::fmt::Display for StencilVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StencilVariant::BondSummed => "bond-summed",
            StencilVariant::UniformDiagonal => "uniform-diagonal",
        })
    }
}

#[derive(Debug, Clone)]
pub struct StabilityMatrix {
    pub matrix: DMatrix<f64>,
    pub geom: LatticeGeom,
    pub params: ModelParams,
    pub variant: StencilVariant,
}

impl StabilityMatrix {
    pub fn sites(&self) -> usize {
        self.geom.len()
    }

    /// Applies the matrix to a complex field through the (Re, Im) stacking.
    pub fn apply(&self, field: &[Complex64]) -> Vec<Complex64> {
        let n = self.sites();
        let v = stack(field);
        let out = &self.matrix * v;
        (0..n).map(|r| Complex64::new(out[r], out[n + r])).collect()
    }
}

pub(crate) fn stack(field: &[Complex64]) -> nalgebra::DVector<f64> {
    let n = field.len();
    nalgebra::DVector::from_fn(2 * n, |i, _| if i < n { field[i].re } else { field[i - n].im })
}

/// Real N×N matrix of hop plus Laplacian, in the requested stencil variant.
pub(crate) fn coupling_matrix(params: &ModelParams, geom: &LatticeGeom, variant: StencilVariant) -> DMatrix<f64> {
    let n = geom.len();
    let mut m = DMatrix::zeros(n, n);
    let bc = geom.bc();
    for r in 0..n {
        for axis in Axis::ALL {
            let k = params.k_diff[axis.index()];
            let mut missing = 0;
            for (nb, hop) in [(geom.minus(axis, r), 1.0), (geom.plus(axis, r), -1.0)] {
                match nb {
                    Some(s) => {
                        m[(r, s)] += k;
                        m[(r, r)] -= k;
                        if axis == Axis::X {
                            m[(r, s)] += hop * params.j_hop;
                        }
                    }
                    None => missing += 1,
                }
            }
            if variant == StencilVariant::UniformDiagonal && bc[axis.index()] == Boundary::Open {
                m[(r, r)] -= k * missing as f64;
            }
        }
    }
    m
}

pub fn build_heff(params: &ModelParams, geom: &LatticeGeom, variant: StencilVariant) -> Result<StabilityMatrix> {
    build_heff_capped(params, geom, variant, DEFAULT_DENSE_CAP)
}

pub fn build_heff_capped(params: &ModelParams, geom: &LatticeGeom, variant: StencilVariant, cap: usize) -> Result<StabilityMatrix> {
    params.validate()?;
    let n = geom.len();
    if 2 * n > cap {
        return Err(Error::TooLarge { dim: 2 * n, cap });
    }
    let c = coupling_matrix(params, geom, variant);
    let mut m = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] = c[(i, j)];
            m[(n + i, n + j)] = c[(i, j)];
        }
        m[(i, i)] += params.gain_k1;
        m[(n + i, n + i)] += params.gain_k1;
        m[(i, n + i)] = -params.lambda_pair;
        m[(n + i, i)] = -params.lambda_pair;
    }
    Ok(StabilityMatrix {
        matrix: m,
        geom: geom.clone(),
        params: *params,
        variant,
    })
}

/// Which sign of `±λ` a mode belongs to, plus its wavevector when known.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ModeLabel {
    pub branch: Option<i8>,
    pub k: Option<[f64; 3]>,
}

#[derive(Debug, Clone)]
pub struct SpectrumResult {
    pub eigenvalues: Vec<Complex64>,
    pub labels: Vec<ModeLabel>,
    pub max_real_part: f64,
    pub bc: [Boundary; 3],
    pub variant: StencilVariant,
}

impl SpectrumResult {
    fn new(eigenvalues: Vec<Complex64>, labels: Vec<ModeLabel>, bc: [Boundary; 3], variant: StencilVariant) -> Self {
        let max_real_part = eigenvalues.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
        SpectrumResult {
            eigenvalues,
            labels,
            max_real_part,
            bc,
            variant,
        }
    }
}

pub(crate) fn eigenvalues_dense(matrix: &DMatrix<f64>) -> Result<Vec<Complex64>> {
    let schur = matrix
        .clone()
        .try_schur(1e-14, 100_000)
        .ok_or_else(|| Error::Eigen("Schur iteration did not converge".into()))?;
    let values = schur.complex_eigenvalues();
    let mut out: Vec<Complex64> = values.iter().map(|z| Complex64::new(z.re, z.im)).collect();
    if out.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::Eigen("non-finite eigenvalue".into()));
    }
    // the real Schur form yields exact conjugate pairs; order them adjacently
    let mut upper: Vec<Complex64> = out.iter().copied().filter(|z| z.im > 0.0).collect();
    let lower = out.iter().filter(|z| z.im < 0.0).count();
    if upper.len() != lower {
        return Err(Error::Eigen("unpaired complex eigenvalue".into()));
    }
    let mut real: Vec<Complex64> = out.iter().copied().filter(|z| z.im == 0.0).collect();
    let by_desc = |a: &Complex64, b: &Complex64| b.re.total_cmp(&a.re).then(b.im.total_cmp(&a.im));
    upper.sort_by(by_desc);
    real.sort_by(by_desc);
    out.clear();
    for z in upper {
        out.push(z);
        out.push(z.conj());
    }
    out.extend(real);
    Ok(out)
}

/// All `2N` eigenvalues of the dense matrix.
pub fn spectrum_numeric(mat: &StabilityMatrix) -> Result<SpectrumResult> {
    let values = eigenvalues_dense(&mat.matrix)?;
    let labels = vec![ModeLabel::default(); values.len()];
    Ok(SpectrumResult::new(values, labels, mat.geom.bc(), mat.variant))
}

/// Eigenvalues of the Laplacian along a single transverse axis of length `l`.
fn axis_laplacian_modes(k: f64, l: usize, bc: Boundary, variant: StencilVariant) -> Vec<(f64, f64)> {
    match (bc, variant) {
        (Boundary::Periodic, _) => (0..l)
            .map(|m| {
                let q = 2.0 * PI * m as f64 / l as f64;
                if l == 1 {
                    (q, 0.0)
                } else {
                    (q, 2.0 * k * (q.cos() - 1.0))
                }
            })
            .collect(),
        // Neumann chain
        (Boundary::Open, StencilVariant::BondSummed) => (0..l)
            .map(|m| {
                let q = PI * m as f64 / l as f64;
                (q, 2.0 * k * (q.cos() - 1.0))
            })
            .collect(),
        // Dirichlet chain
        (Boundary::Open, StencilVariant::UniformDiagonal) => (1..=l)
            .map(|m| {
                let q = PI * m as f64 / (l + 1) as f64;
                (q, 2.0 * k * (q.cos() - 1.0))
            })
            .collect(),
    }
}

fn transverse_modes(params: &ModelParams, geom: &LatticeGeom, variant: StencilVariant) -> Vec<([f64; 2], f64)> {
    let [_, ly, lz] = geom.dims();
    let bc = geom.bc();
    let ys = axis_laplacian_modes(params.k_diff[1], ly, bc[1], variant);
    let zs = axis_laplacian_modes(params.k_diff[2], lz, bc[2], variant);
    let mut out = Vec::with_capacity(ys.len() * zs.len());
    for &(kz, ez) in &zs {
        for &(ky, ey) in &ys {
            out.push(([ky, kz], ey + ez));
        }
    }
    out
}

/// Spectrum of a slab lattice from the dense x-chain spectrum plus transverse Laplacian shifts.
pub fn spectrum_separable(params: &ModelParams, geom: &LatticeGeom, variant: StencilVariant) -> Result<SpectrumResult> {
    let chain = LatticeGeom::chain(geom.dims()[0], geom.bc()[0])?;
    let chain_spec = spectrum_numeric(&build_heff(params, &chain, variant)?)?;
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (k, shift) in transverse_modes(params, geom, variant) {
        for &z in &chain_spec.eigenvalues {
            values.push(z + shift);
            labels.push(ModeLabel {
                branch: None,
                k: Some([f64::NAN, k[0], k[1]]),
            });
        }
    }
    Ok(SpectrumResult::new(values, labels, geom.bc(), variant))
}

/// Closed-form spectrum on the discrete k-grid of the geometry.
///
/// Periodic x: `κ₁ + 2ΣK_i(cos k_i − 1) + 2iJ sin kx ± λ`, `kx = 2πm/Lx`.
/// Open x (uniform-diagonal stencil): `κ₁ − 2Kx + 2i√(J²−Kx²) sin kx ± λ + transverse`,
/// with `kx = πm/(Lx+1) − π/2` so that `sin kx` runs over `−cos(πm/(Lx+1))`.
pub fn spectrum_analytic(params: &ModelParams, geom: &LatticeGeom, bc_x: Boundary) -> Result<SpectrumResult> {
    let lx = geom.dims()[0];
    let (kxs, variant): (Vec<(f64, Complex64)>, StencilVariant) = match bc_x {
        Boundary::Periodic => {
            let kx = params.k_diff[0];
            let modes = (0..lx)
                .map(|m| {
                    let q = 2.0 * PI * m as f64 / lx as f64;
                    let lap = if lx == 1 { 0.0 } else { 2.0 * kx * (q.cos() - 1.0) };
                    let hop = if lx == 1 { 0.0 } else { 2.0 * params.j_hop * q.sin() };
                    (q, Complex64::new(lap, hop))
                })
                .collect();
            (modes, StencilVariant::BondSummed)
        }
        Boundary::Open => {
            let (j, kx) = (params.j_hop, params.k_diff[0]);
            if j.abs() < kx {
                return Err(Error::OutsideRegime(format!(
                    "open-chain formula needs |J| >= Kx, got J = {j}, Kx = {kx}"
                )));
            }
            let s = (j * j - kx * kx).sqrt();
            let modes = (1..=lx)
                .map(|m| {
                    let q = PI * m as f64 / (lx + 1) as f64 - PI / 2.0;
                    (q, Complex64::new(-2.0 * kx, 2.0 * s * q.sin()))
                })
                .collect();
            (modes, StencilVariant::UniformDiagonal)
        }
    };
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (k, shift) in transverse_modes(params, geom, variant) {
        for &(qx, ex) in &kxs {
            for branch in [1i8, -1] {
                values.push(params.gain_k1 + ex + shift + branch as f64 * params.lambda_pair);
                labels.push(ModeLabel {
                    branch: Some(branch),
                    k: Some([qx, k[0], k[1]]),
                });
            }
        }
    }
    let mut bc = geom.bc();
    bc[0] = bc_x;
    Ok(SpectrumResult::new(values, labels, bc, variant))
}

/// Gain at which the empty state loses stability under open x: `κ₁ = 2Kx − λ`.
pub fn critical_gain(params: &ModelParams) -> f64 {
    2.0 * params.k_diff[0] - params.lambda_pair
}

/// Gain at which the numeric spectrum's largest real part crosses zero, found by bisection.
pub fn critical_gain_numeric(params: &ModelParams, geom: &LatticeGeom, variant: StencilVariant) -> Result<f64> {
    let growth = |k1: f64| -> Result<f64> {
        Ok(spectrum_separable(&params.with_gain(k1), geom, variant)?.max_real_part)
    };
    let (mut lo, mut hi) = (0.0, 1.0);
    while growth(hi)? < 0.0 {
        hi *= 2.0;
        if hi > 1e6 {
            return Err(Error::Eigen("no instability found".into()));
        }
    }
    if growth(lo)? > 0.0 {
        return Ok(0.0);
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if growth(mid)? < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Right eigenvector of a real matrix for a known (complex) eigenvalue, by inverse iteration.
pub fn eigenvector(matrix: &DMatrix<f64>, eigenvalue: Complex64) -> Result<Vec<Complex64>> {
    let dim = matrix.nrows();
    let scale = 1.0 + matrix.amax();
    let shift = eigenvalue + Complex64::new(1e-10 * scale, 1e-10 * scale);
    let shifted = DMatrix::from_fn(dim, dim, |i, j| {
        let v = Complex64::new(matrix[(i, j)], 0.0);
        if i == j {
            v - shift
        } else {
            v
        }
    });
    let lu = shifted.lu();
    let mut v = nalgebra::DVector::from_fn(dim, |i, _| Complex64::new(1.0 + 0.01 * i as f64, 0.3));
    for _ in 0..4 {
        v = lu
            .solve(&v)
            .ok_or_else(|| Error::Eigen("singular shifted matrix in inverse iteration".into()))?;
        let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::Eigen("inverse iteration diverged".into()));
        }
        v /= Complex64::new(norm, 0.0);
    }
    Ok(v.iter().copied().collect())
}

/// Weight of a stacked `(Re, Im)` eigenvector on each lattice site.
pub fn site_weights(vector: &[Complex64]) -> Vec<f64> {
    let n = vector.len() / 2;
    (0..n).map(|r| vector[r].norm_sqr() + vector[n + r].norm_sqr()).collect()
}
