//! Shared fixtures for the benchmarks: the traveling-wave parameter set on a few lattice sizes.

use chiralwave_core::{Boundary, Complex64, ComplexField, LatticeGeom, ModelParams};

pub fn params() -> ModelParams {
    ModelParams::traveling_wave_reference()
}

/// Open along x, periodic across.
pub fn slab(lx: usize, ly: usize, lz: usize) -> LatticeGeom {
    LatticeGeom::new([lx, ly, lz], [Boundary::Open, Boundary::Periodic, Boundary::Periodic]).expect("valid lattice")
}

/// Deterministic non-uniform field so the stencil cannot short-circuit on symmetry.
pub fn ripple(geom: &LatticeGeom) -> ComplexField {
    ComplexField::from_vec(
        (0..geom.len())
            .map(|i| {
                let t = i as f64 * 0.37;
                Complex64::new(0.6 + 0.1 * t.sin(), -0.6 + 0.1 * t.cos())
            })
            .collect(),
    )
}
