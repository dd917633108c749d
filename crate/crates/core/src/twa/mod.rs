//! Truncated-Wigner Langevin ensembles.
//!
//! Itô convention throughout: the Fokker–Planck operator `∂γ∂μ(D W)` corresponds to
//! `dα = A(α) dt + B̃(α) η √dt` with the diffusion evaluated at the start of the step.
//! The noise factor is built from incidence columns: one per site with amplitude
//! `√max(0, κ₁ − κ₂ + 2κ₂|α|²)` and one per bond with `±√K_q` on its endpoints, so
//! `B̃B̃ᵀ = D̃` holds exactly without a dense square root.

pub mod rng;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lattice::{enumerate_bonds, Axis, ComplexField, LatticeGeom, ModelParams};
use crate::meanfield::rhs_with_gain;
pub use rng::{complex_normal, NoiseStream};

pub const DEFAULT_TWA_DT: f64 = 1e-3;
pub const DEFAULT_TRAJECTORIES: usize = 512;

/// Wigner drift: the mean-field right-hand side with κ₁ replaced by κ₁ + κ₂.
pub fn drift(field: &ComplexField, params: &ModelParams, geom: &LatticeGeom) -> Result<ComplexField> {
    geom.check_field(field)?;
    if !field.is_finite() {
        return Err(Error::NonFinite { time: f64::NAN });
    }
    let mut out = ComplexField::zeros(field.len());
    rhs_with_gain(field, &mut out, geom, params, params.gain_k1 + params.loss_k2);
    Ok(out)
}

/// Site residual `κ₁ − κ₂ + 2κ₂|α|²` of the diffusion diagonal.
#[inline]
fn site_residual(params: &ModelParams, a: Complex64) -> f64 {
    params.gain_k1 - params.loss_k2 + 2.0 * params.loss_k2 * a.norm_sqr()
}

/// Incidence-column square root of the diffusion matrix D̃.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionFactor {
    pub site_amplitudes: Vec<f64>,
    /// `√K_q` per axis.
    pub bond_amplitudes: [f64; 3],
    pub clamp_count: usize,
}

pub fn diffusion_factor(field: &ComplexField, params: &ModelParams, geom: &LatticeGeom) -> Result<DiffusionFactor> {
    geom.check_field(field)?;
    let mut clamp_count = 0;
    let site_amplitudes = field
        .iter()
        .map(|&a| {
            let s = site_residual(params, a);
            if s < 0.0 {
                clamp_count += 1;
                0.0
            } else {
                s.sqrt()
            }
        })
        .collect();
    Ok(DiffusionFactor {
        site_amplitudes,
        bond_amplitudes: params.k_diff.map(f64::sqrt),
        clamp_count,
    })
}

impl DiffusionFactor {
    /// Dense `N × (N + bonds)` noise matrix; site columns first, then bonds axis by axis.
    pub fn incidence(&self, geom: &LatticeGeom) -> DMatrix<f64> {
        let n = geom.len();
        let bonds: Vec<(usize, usize, f64)> = Axis::ALL
            .iter()
            .filter(|ax| self.bond_amplitudes[ax.index()] > 0.0)
            .flat_map(|&ax| {
                let amp = self.bond_amplitudes[ax.index()];
                enumerate_bonds(geom, ax).into_iter().map(move |(r, s)| (r, s, amp))
            })
            .collect();
        let mut b = DMatrix::zeros(n, n + bonds.len());
        for (r, &s) in self.site_amplitudes.iter().enumerate() {
            b[(r, r)] = s;
        }
        for (c, &(r, s, amp)) in bonds.iter().enumerate() {
            b[(r, n + c)] += amp;
            b[(s, n + c)] -= amp;
        }
        b
    }

    /// `B̃B̃ᵀ`, assembled sparsely.
    pub fn reconstruct(&self, geom: &LatticeGeom) -> DMatrix<f64> {
        let n = geom.len();
        let mut d = DMatrix::zeros(n, n);
        for (r, &s) in self.site_amplitudes.iter().enumerate() {
            d[(r, r)] = s * s;
        }
        for ax in Axis::ALL {
            let k = self.bond_amplitudes[ax.index()].powi(2);
            if k == 0.0 {
                continue;
            }
            for (r, s) in enumerate_bonds(geom, ax) {
                d[(r, r)] += k;
                d[(s, s)] += k;
                d[(r, s)] -= k;
                d[(s, r)] -= k;
            }
        }
        d
    }
}

/// Coherent-state Wigner sample: `α₀ + (n₁ + i n₂)/2` per site.
pub fn sample_initial(alpha0: Complex64, geom: &LatticeGeom, stream: &NoiseStream) -> ComplexField {
    sample_profile(&vec![alpha0; geom.len()], stream)
}

/// As [`sample_initial`] with a site-dependent centre.
pub fn sample_profile(alpha0: &[Complex64], stream: &NoiseStream) -> ComplexField {
    let mut rng = stream.at_step(0);
    let values = alpha0
        .iter()
        .map(|&a| {
            let n1: f64 = rng.sample(StandardNormal);
            let n2: f64 = rng.sample(StandardNormal);
            a + 0.5 * Complex64::new(n1, n2)
        })
        .collect();
    ComplexField::from_vec(values)
}

/// M stochastic trajectories sharing a geometry and a master seed.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleState {
    trajectories: Vec<ComplexField>,
    dead: Vec<Option<f64>>,
    time: f64,
    step: u64,
    master_seed: u64,
}

impl EnsembleState {
    /// Samples `m` trajectories around `alpha0` (one value per site); trajectory `i` uses stream `i`.
    pub fn sample(alpha0: &[Complex64], geom: &LatticeGeom, m: usize, master_seed: u64) -> Result<Self> {
        geom.check_field(alpha0)?;
        if m == 0 {
            return Err(Error::param("trajectories", "need at least one trajectory"));
        }
        let trajectories = (0..m as u64)
            .map(|i| sample_profile(alpha0, &NoiseStream::new(master_seed, i)))
            .collect();
        Ok(EnsembleState {
            trajectories,
            dead: vec![None; m],
            time: 0.0,
            step: 0,
            master_seed,
        })
    }

    /// Rebuilds a state, e.g. from a checkpoint or a hand-made test ensemble.
    pub fn from_parts(
        trajectories: Vec<ComplexField>,
        dead: Vec<Option<f64>>,
        time: f64,
        step: u64,
        master_seed: u64,
    ) -> Result<Self> {
        let Some(first) = trajectories.first() else {
            return Err(Error::param("trajectories", "need at least one trajectory"));
        };
        let n = first.len();
        if let Some(bad) = trajectories.iter().find(|t| t.len() != n) {
            return Err(Error::DimensionMismatch { expected: n, got: bad.len() });
        }
        if dead.len() != trajectories.len() {
            return Err(Error::DimensionMismatch {
                expected: trajectories.len(),
                got: dead.len(),
            });
        }
        Ok(EnsembleState {
            trajectories,
            dead,
            time,
            step,
            master_seed,
        })
    }

    /// Appends trajectories sampled from their own streams; existing ones are untouched.
    /// Only meaningful before the first step.
    pub fn extend(&mut self, alpha0: &[Complex64], extra: usize) -> Result<()> {
        if self.step != 0 {
            return Err(Error::param("trajectories", "cannot add trajectories after stepping"));
        }
        if alpha0.len() != self.sites() {
            return Err(Error::DimensionMismatch {
                expected: self.sites(),
                got: alpha0.len(),
            });
        }
        let start = self.trajectories.len() as u64;
        for i in start..start + extra as u64 {
            self.trajectories.push(sample_profile(alpha0, &NoiseStream::new(self.master_seed, i)));
            self.dead.push(None);
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn sites(&self) -> usize {
        self.trajectories[0].len()
    }

    pub fn trajectories(&self) -> &[ComplexField] {
        &self.trajectories
    }

    /// Death time of each trajectory, if it blew up.
    pub fn dead(&self) -> &[Option<f64>] {
        &self.dead
    }

    pub fn live_count(&self) -> usize {
        self.dead.iter().filter(|d| d.is_none()).count()
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    /// Number of completed steps; also the RNG step counter.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    /// Per-trajectory y,z-averaged order parameter, indexed `[trajectory][x]`.
    pub fn column_records(&self, geom: &LatticeGeom) -> Vec<Vec<Complex64>> {
        self.trajectories.iter().map(|t| t.column_average(geom)).collect()
    }
}

/// Diagnostics accumulated over one call to [`TwaStepper::advance`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepReport {
    pub steps: u64,
    /// Site-steps at which the diffusion residual was negative and clamped.
    pub clamp_events: u64,
    pub newly_dead: usize,
}

/// Euler–Maruyama integrator for an ensemble.
#[derive(Debug, Clone)]
pub struct TwaStepper<'a> {
    geom: &'a LatticeGeom,
    params: ModelParams,
    dt: f64,
    noise: bool,
    bonds: Vec<(u32, u32, f64)>,
}

/// Crude bound on the linear rates; explicit stepping needs `dt · bound ≤ 2`.
pub fn linear_rate_bound(params: &ModelParams) -> f64 {
    2.0 * params.j_hop.abs()
        + 4.0 * params.k_diff.iter().sum::<f64>()
        + params.gain_k1.abs()
        + params.loss_k2
        + params.lambda_pair.abs()
}

impl<'a> TwaStepper<'a> {
    pub fn new(geom: &'a LatticeGeom, params: ModelParams, dt: f64) -> Result<Self> {
        params.validate()?;
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::param("dt", "must be positive"));
        }
        let bound = linear_rate_bound(&params);
        if dt * bound > 2.0 {
            return Err(Error::param(
                "dt",
                format!("dt = {dt} exceeds the explicit stability bound 2/{bound:.3}"),
            ));
        }
        let bonds = Axis::ALL
            .iter()
            .filter(|ax| params.k_diff[ax.index()] > 0.0)
            .flat_map(|&ax| {
                let amp = params.k_diff[ax.index()].sqrt();
                enumerate_bonds(geom, ax)
                    .into_iter()
                    .map(move |(r, s)| (r as u32, s as u32, amp))
            })
            .collect();
        Ok(TwaStepper {
            geom,
            params,
            dt,
            noise: true,
            bonds,
        })
    }

    /// Deterministic drift-only stepping; a test hook.
    pub fn without_noise(mut self) -> Self {
        self.noise = false;
        self
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Advances every live trajectory by `steps` steps. Trajectories run in parallel
    /// on the current rayon pool; each touches only its own stream, so the result is
    /// independent of the worker count.
    pub fn advance(&self, ens: &mut EnsembleState, steps: u64) -> Result<StepReport> {
        if ens.sites() != self.geom.len() {
            return Err(Error::DimensionMismatch {
                expected: self.geom.len(),
                got: ens.sites(),
            });
        }
        let (t0, s0, seed) = (ens.time, ens.step, ens.master_seed);
        let (clamps, dead): (u64, usize) = ens
            .trajectories
            .par_iter_mut()
            .zip(ens.dead.par_iter_mut())
            .enumerate()
            .map(|(i, (field, death))| {
                if death.is_some() {
                    return (0, 0);
                }
                let stream = NoiseStream::new(seed, i as u64);
                let mut incr = vec![Complex64::new(0.0, 0.0); field.len()];
                let mut t = t0;
                let mut clamps = 0u64;
                for s in 1..=steps {
                    t += self.dt;
                    clamps += self.step_one(field, &mut incr, &stream, s0 + s);
                    if !field.is_finite() {
                        *death = Some(t);
                        return (clamps, 1);
                    }
                }
                (clamps, 0)
            })
            .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
        for _ in 0..steps {
            ens.time += self.dt;
        }
        ens.step += steps;
        Ok(StepReport {
            steps,
            clamp_events: clamps,
            newly_dead: dead,
        })
    }

    fn step_one(&self, field: &mut [Complex64], incr: &mut [Complex64], stream: &NoiseStream, step: u64) -> u64 {
        let p = &self.params;
        let dt = self.dt;
        rhs_with_gain(field, incr, self.geom, p, p.gain_k1 + p.loss_k2);
        let mut clamps = 0;
        if self.noise {
            let mut rng = stream.at_step(step);
            let sqdt = dt.sqrt();
            for (r, inc) in incr.iter_mut().enumerate() {
                let res = site_residual(p, field[r]);
                let amp = if res < 0.0 {
                    clamps += 1;
                    0.0
                } else {
                    res.sqrt()
                };
                *inc = *inc * dt + (amp * sqdt) * complex_normal(&mut rng);
            }
            for &(r, s, amp) in &self.bonds {
                let z = (amp * sqdt) * complex_normal(&mut rng);
                incr[r as usize] += z;
                incr[s as usize] -= z;
            }
        } else {
            for inc in incr.iter_mut() {
                *inc *= dt;
            }
        }
        for (a, inc) in field.iter_mut().zip(incr.iter()) {
            *a += inc;
        }
        clamps
    }
}

/// One Euler–Maruyama step of the whole ensemble.
pub fn step_euler_maruyama(ens: &mut EnsembleState, params: &ModelParams, geom: &LatticeGeom, dt: f64) -> Result<StepReport> {
    TwaStepper::new(geom, *params, dt)?.advance(ens, 1)
}

/// Ensemble means with standard errors; dead trajectories are excluded.
#[derive(Debug, Clone, PartialEq)]
pub struct Observables {
    /// `⟨a⟩ = ⟨α⟩`.
    pub order: Vec<Complex64>,
    pub order_stderr_re: Vec<f64>,
    pub order_stderr_im: Vec<f64>,
    /// `⟨n⟩ = ⟨|α|²⟩ − 1/2`.
    pub density: Vec<f64>,
    pub density_stderr: Vec<f64>,
    pub samples: usize,
}

/// Per-site observables.
pub fn observables(ens: &EnsembleState) -> Result<Observables> {
    reduce(ens, ens.sites(), |t, a, n| {
        for (r, v) in t.iter().enumerate() {
            a[r] = *v;
            n[r] = v.norm_sqr();
        }
    })
}

/// Observables of the y,z-averaged fields, one entry per x.
pub fn column_observables(ens: &EnsembleState, geom: &LatticeGeom) -> Result<Observables> {
    let lx = geom.dims()[0];
    let w = 1.0 / geom.transverse_len() as f64;
    reduce(ens, lx, |t, a, n| {
        a.fill(Complex64::new(0.0, 0.0));
        n.fill(0.0);
        for (r, v) in t.iter().enumerate() {
            a[r % lx] += v * w;
            n[r % lx] += v.norm_sqr() * w;
        }
    })
}

fn reduce<F>(ens: &EnsembleState, width: usize, project: F) -> Result<Observables>
where
    F: Fn(&[Complex64], &mut [Complex64], &mut [f64]),
{
    let live: Vec<&ComplexField> = ens
        .trajectories
        .iter()
        .zip(&ens.dead)
        .filter(|(_, d)| d.is_none())
        .map(|(t, _)| t)
        .collect();
    let m = live.len();
    if m < 2 {
        return Err(Error::InsufficientData(format!("observables need at least 2 live trajectories, have {m}")));
    }
    let mut a_rows = vec![Complex64::new(0.0, 0.0); m * width];
    let mut n_rows = vec![0.0; m * width];
    for (i, t) in live.iter().enumerate() {
        let span = i * width..(i + 1) * width;
        project(t, &mut a_rows[span.clone()], &mut n_rows[span]);
    }
    let mf = m as f64;
    let mut obs = Observables {
        order: vec![Complex64::new(0.0, 0.0); width],
        order_stderr_re: vec![0.0; width],
        order_stderr_im: vec![0.0; width],
        density: vec![0.0; width],
        density_stderr: vec![0.0; width],
        samples: m,
    };
    for c in 0..width {
        // Shifted by the first sample: better conditioned, and exact for identical samples.
        let (a0, n0) = (a_rows[c], n_rows[c]);
        let mut sa = Complex64::new(0.0, 0.0);
        let mut sn = 0.0;
        for i in 1..m {
            sa += a_rows[i * width + c] - a0;
            sn += n_rows[i * width + c] - n0;
        }
        let (ma, mn) = (a0 + sa / mf, n0 + sn / mf);
        let (mut vr, mut vi, mut vn) = (0.0, 0.0, 0.0);
        for i in 0..m {
            let d = a_rows[i * width + c] - ma;
            vr += d.re * d.re;
            vi += d.im * d.im;
            vn += (n_rows[i * width + c] - mn).powi(2);
        }
        let se = |v: f64| (v / (mf - 1.0) / mf).sqrt();
        obs.order[c] = ma;
        obs.order_stderr_re[c] = se(vr);
        obs.order_stderr_im[c] = se(vi);
        obs.density[c] = mn - 0.5;
        obs.density_stderr[c] = se(vn);
    }
    Ok(obs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::Boundary;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn periodic(d: [usize; 3]) -> LatticeGeom {
        LatticeGeom::new(d, [Boundary::Periodic; 3]).unwrap()
    }

    fn random_field(n: usize, seed: u64, scale: f64) -> ComplexField {
        let mut rng = NoiseStream::new(seed, 99).at_step(0);
        ComplexField::from_vec(
            (0..n)
                .map(|_| c(rng.random_range(-scale..scale), rng.random_range(-scale..scale)))
                .collect(),
        )
    }

    // Term by term, neighbors by explicit coordinate arithmetic.
    fn drift_oracle(f: &ComplexField, p: &ModelParams, g: &LatticeGeom) -> Vec<Complex64> {
        let d = g.dims();
        let nb = |r: usize, ax: usize, s: isize| -> Option<usize> {
            let mut x = g.coords(r);
            let v = x[ax] as isize + s;
            if (v < 0 || v >= d[ax] as isize) && g.bc()[ax] == Boundary::Open {
                return None;
            }
            x[ax] = v.rem_euclid(d[ax] as isize) as usize;
            if d[ax] == 1 {
                return None;
            }
            Some(g.index(x))
        };
        (0..g.len())
            .map(|r| {
                let a = f[r];
                let at = |o: Option<usize>| o.map(|i| f[i]).unwrap_or_default();
                let mut v = p.j_hop * (at(nb(r, 0, -1)) - at(nb(r, 0, 1)));
                for ax in 0..3 {
                    for s in [-1, 1] {
                        if let Some(i) = nb(r, ax, s) {
                            v += p.k_diff[ax] * (f[i] - a);
                        }
                    }
                }
                v += -Complex64::i() * p.lambda_pair * a.conj() + p.gain_k1 * a + p.loss_k2 * (a - a.norm_sqr() * a);
                v
            })
            .collect()
    }

    #[test]
    fn drift_vanishes_at_zero_and_wigner_fixed_point() {
        let p = ModelParams::traveling_wave_reference();
        let g = periodic([3, 2, 2]);
        let z = drift(&ComplexField::zeros(g.len()), &p, &g).unwrap();
        assert_eq!(z.max_abs(), 0.0);
        let a = p.wigner_fixed_point();
        assert!((a.re - 6.75f64.sqrt()).abs() < 1e-12 && (a.im + 6.75f64.sqrt()).abs() < 1e-12);
        let d = drift(&ComplexField::uniform(g.len(), a), &p, &g).unwrap();
        assert!(d.max_abs() < 1e-12, "{}", d.max_abs());
    }

    #[test]
    fn drift_matches_term_by_term_oracle() {
        let p = ModelParams::traveling_wave_reference();
        for bc in [Boundary::Open, Boundary::Periodic] {
            let g = LatticeGeom::new([2, 2, 2], [bc, Boundary::Periodic, bc]).unwrap();
            let f = random_field(g.len(), 3, 1.5);
            let d = drift(&f, &p, &g).unwrap();
            let o = drift_oracle(&f, &p, &g);
            for (x, y) in d.iter().zip(&o) {
                assert!((x - y).norm() < 1e-13, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn drift_rejects_bad_input() {
        let p = ModelParams::traveling_wave_reference();
        let g = periodic([2, 1, 1]);
        assert!(matches!(drift(&ComplexField::zeros(3), &p, &g), Err(Error::DimensionMismatch { .. })));
        let f = ComplexField::from_vec(vec![c(f64::NAN, 0.0), c(0.0, 0.0)]);
        assert!(matches!(drift(&f, &p, &g), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn diffusion_diagonal_at_vacuum() {
        let p = ModelParams::traveling_wave_reference();
        let g = periodic([3, 3, 3]);
        let f = diffusion_factor(&ComplexField::zeros(g.len()), &p, &g).unwrap();
        let d = f.reconstruct(&g);
        for r in 0..g.len() {
            assert!((d[(r, r)] - 18.9).abs() < 1e-12);
        }
        assert_eq!(f.clamp_count, 0);
    }

    #[test]
    fn clamping_is_counted() {
        let mut p = ModelParams::traveling_wave_reference();
        p.gain_k1 = 0.0;
        p.loss_k2 = 1.0;
        let g = periodic([2, 2, 1]);
        let f = diffusion_factor(&ComplexField::zeros(g.len()), &p, &g).unwrap();
        assert_eq!(f.clamp_count, g.len());
        assert!(f.site_amplitudes.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn incidence_product_equals_sparse_reconstruction() {
        let p = ModelParams::traveling_wave_reference();
        let g = LatticeGeom::new([3, 2, 2], [Boundary::Open, Boundary::Periodic, Boundary::Periodic]).unwrap();
        let f = diffusion_factor(&random_field(g.len(), 5, 1.0), &p, &g).unwrap();
        let b = f.incidence(&g);
        let diff = (&b * b.transpose() - f.reconstruct(&g)).abs().max();
        assert!(diff < 1e-12);
    }

    #[test]
    fn sampling_moments() {
        let g = periodic([10, 10, 10]);
        let a0 = c(0.6, -0.6);
        let n = 100;
        let mut xs = Vec::new();
        for i in 0..n {
            xs.extend(sample_initial(a0, &g, &NoiseStream::new(11, i)).into_vec());
        }
        let m = xs.len() as f64;
        let mean: Complex64 = xs.iter().sum::<Complex64>() / m;
        let var_re = xs.iter().map(|z| (z.re - mean.re).powi(2)).sum::<f64>() / (m - 1.0);
        let var_im = xs.iter().map(|z| (z.im - mean.im).powi(2)).sum::<f64>() / (m - 1.0);
        let se = (0.25 / m).sqrt();
        assert!((mean.re - 0.6).abs() < 3.0 * se && (mean.im + 0.6).abs() < 3.0 * se);
        assert!((var_re - 0.25).abs() < 0.0025 && (var_im - 0.25).abs() < 0.0025, "{var_re} {var_im}");
        let again = sample_initial(a0, &g, &NoiseStream::new(11, 3));
        assert_eq!(again, sample_initial(a0, &g, &NoiseStream::new(11, 3)));
    }

    #[test]
    fn extending_keeps_existing_trajectories() {
        let g = periodic([4, 1, 1]);
        let a0 = vec![c(0.1, 0.2); 4];
        let small = EnsembleState::sample(&a0, &g, 3, 8).unwrap();
        let mut grown = small.clone();
        grown.extend(&a0, 5).unwrap();
        assert_eq!(&grown.trajectories()[..3], small.trajectories());
        assert_eq!(grown, EnsembleState::sample(&a0, &g, 8, 8).unwrap());
    }

    #[test]
    fn noiseless_step_keeps_fixed_point() {
        let p = ModelParams::traveling_wave_reference();
        let g = periodic([3, 3, 3]);
        let a = p.wigner_fixed_point();
        let fields = vec![ComplexField::uniform(g.len(), a); 2];
        let mut ens = EnsembleState::from_parts(fields, vec![None; 2], 0.0, 0, 1).unwrap();
        TwaStepper::new(&g, p, 1e-3).unwrap().without_noise().advance(&mut ens, 200).unwrap();
        for t in ens.trajectories() {
            assert!(t.iter().all(|z| (z - a).norm() < 1e-12));
        }
        assert_eq!(ens.step(), 200);
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let p = ModelParams::traveling_wave_reference();
        let g = LatticeGeom::slab([4, 2, 2], Boundary::Open).unwrap();
        let a0 = vec![c(0.6, -0.6); g.len()];
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| {
                let mut ens = EnsembleState::sample(&a0, &g, 6, 42).unwrap();
                let st = TwaStepper::new(&g, p, 2e-3).unwrap();
                st.advance(&mut ens, 50).unwrap();
                st.advance(&mut ens, 50).unwrap();
                ens
            })
        };
        let one = run(1);
        assert_eq!(one, run(3));
        let mut chunked = EnsembleState::sample(&a0, &g, 6, 42).unwrap();
        TwaStepper::new(&g, p, 2e-3).unwrap().advance(&mut chunked, 100).unwrap();
        assert_eq!(one, chunked);
    }

    #[test]
    fn blow_up_marks_trajectory_dead() {
        let mut p = ModelParams::traveling_wave_reference();
        p.k_diff = [0.0; 3];
        p.j_hop = 0.0;
        let g = periodic([1, 1, 1]);
        let fields = vec![ComplexField::uniform(1, c(1e6, 0.0)), ComplexField::uniform(1, c(0.5, 0.0))];
        let mut ens = EnsembleState::from_parts(fields, vec![None; 2], 0.0, 0, 1).unwrap();
        let rep = TwaStepper::new(&g, p, 0.01).unwrap().advance(&mut ens, 20).unwrap();
        assert_eq!(rep.newly_dead, 1);
        assert!(ens.dead()[0].is_some() && ens.dead()[1].is_none());
        assert_eq!(ens.live_count(), 1);
    }

    #[test]
    fn dt_is_checked() {
        let p = ModelParams::traveling_wave_reference();
        let g = periodic([2, 2, 2]);
        assert!(TwaStepper::new(&g, p, 0.0).is_err());
        assert!(TwaStepper::new(&g, p, 0.5).is_err());
    }

    #[test]
    fn observables_of_simple_ensembles() {
        let g = periodic([2, 2, 1]);
        let vac = EnsembleState::sample(&[c(0.0, 0.0); 4], &g, 20_000, 5).unwrap();
        let o = observables(&vac).unwrap();
        for r in 0..4 {
            assert!(o.density[r].abs() < 3.5 * o.density_stderr[r], "{} {}", o.density[r], o.density_stderr[r]);
        }
        let coh = EnsembleState::sample(&[c(0.6, -0.6); 4], &g, 20_000, 6).unwrap();
        let o = observables(&coh).unwrap();
        for r in 0..4 {
            assert!((o.density[r] - 0.72).abs() < 3.5 * o.density_stderr[r]);
        }
        let one = random_field(4, 1, 1.0);
        let copies = EnsembleState::from_parts(vec![one.clone(); 5], vec![None; 5], 0.0, 0, 0).unwrap();
        let o = observables(&copies).unwrap();
        assert_eq!(o.order, one.into_vec());
        assert!(o.order_stderr_re.iter().all(|&s| s == 0.0));
        let single = EnsembleState::from_parts(vec![ComplexField::zeros(4)], vec![None], 0.0, 0, 0).unwrap();
        assert!(matches!(observables(&single), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn column_observables_average_transverse_sites() {
        let g = periodic([2, 2, 1]);
        let f = ComplexField::from_vec(vec![c(1.0, 0.0), c(0.0, 2.0), c(3.0, 0.0), c(0.0, 4.0)]);
        let ens = EnsembleState::from_parts(vec![f.clone(), f], vec![None; 2], 0.0, 0, 0).unwrap();
        let o = column_observables(&ens, &g).unwrap();
        assert_eq!(o.order, vec![c(2.0, 0.0), c(0.0, 3.0)]);
        assert_eq!(o.density, vec![5.0 - 0.5, 10.0 - 0.5]);
    }

    // Stationary density of u = |α|² for one site with λ = 0, solved on a grid:
    // p(u) ∝ exp(∫ 2g/D du) / D with g = (κ₁+κ₂) − κ₂u and D = κ₁ − κ₂ + 2κ₂u.
    fn single_site_mean_u(k1: f64, k2: f64) -> f64 {
        let (du, umax) = (1e-4, 40.0);
        let n = (umax / du) as usize;
        let (mut expo, mut z, mut m1) = (0.0, 0.0, 0.0);
        let rate = |u: f64| 2.0 * ((k1 + k2) - k2 * u) / (k1 - k2 + 2.0 * k2 * u);
        for i in 0..n {
            let u = (i as f64 + 0.5) * du;
            if i > 0 {
                expo += 0.5 * (rate(u - du) + rate(u)) * du;
            }
            let w = expo.exp() / (k1 - k2 + 2.0 * k2 * u);
            z += w;
            m1 += w * u;
        }
        m1 / z
    }

    #[test]
    fn single_site_stationary_density_matches_fokker_planck() {
        let p = ModelParams {
            j_hop: 0.0,
            lambda_pair: 0.0,
            gain_k1: 0.5,
            loss_k2: 0.2,
            k_diff: [0.0; 3],
        };
        let g = periodic([1, 1, 1]);
        let mut ens = EnsembleState::sample(&[c(1.0, 0.0)], &g, 10_000, 2024).unwrap();
        let st = TwaStepper::new(&g, p, 1e-3).unwrap();
        st.advance(&mut ens, 15_000).unwrap();
        let mut acc = 0.0;
        let mut count = 0;
        for _ in 0..10 {
            st.advance(&mut ens, 500).unwrap();
            acc += ens.trajectories().iter().map(|t| t[0].norm_sqr()).sum::<f64>();
            count += ens.len();
        }
        let sim = acc / count as f64;
        let exact = single_site_mean_u(p.gain_k1, p.loss_k2);
        assert!(((sim - exact) / exact).abs() < 0.02, "sim {sim} exact {exact}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn factor_reproduces_diffusion_matrix(seed in 0u64..1000, open in any::<bool>(), k1 in 0.3f64..3.0) {
            let bc = if open { Boundary::Open } else { Boundary::Periodic };
            let g = LatticeGeom::new([3, 3, 2], [bc, bc, Boundary::Periodic]).unwrap();
            let p = ModelParams { gain_k1: k1, ..ModelParams::traveling_wave_reference() };
            let f = random_field(g.len(), seed, 2.0);
            let fac = diffusion_factor(&f, &p, &g).unwrap();
            prop_assert_eq!(fac.clamp_count, 0);
            let b = fac.incidence(&g);
            let d = &b * b.transpose();
            for r in 0..g.len() {
                for s in 0..g.len() {
                    let mut want = 0.0;
                    if r == s {
                        want += site_residual(&p, f[r]);
                    }
                    for ax in Axis::ALL {
                        for nb in [g.plus(ax, r), g.minus(ax, r)].into_iter().flatten() {
                            if r == s { want += p.k_diff[ax.index()]; }
                            if nb == s { want -= p.k_diff[ax.index()]; }
                        }
                    }
                    prop_assert!((d[(r, s)] - want).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn drift_is_odd(seed in 0u64..1000) {
            let p = ModelParams::traveling_wave_reference();
            let g = LatticeGeom::slab([3, 2, 2], Boundary::Open).unwrap();
            let f = random_field(g.len(), seed, 2.0);
            let neg = ComplexField::from_vec(f.iter().map(|z| -z).collect());
            let a = drift(&f, &p, &g).unwrap();
            let b = drift(&neg, &p, &g).unwrap();
            for (x, y) in a.iter().zip(b.iter()) {
                prop_assert_eq!(*x, -*y);
            }
        }
    }
}
