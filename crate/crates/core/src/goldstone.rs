//! Fluctuations around a time-periodic mean-field solution and the Goldstone phase field.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::lattice::{linear_coupling, Axis, ComplexField, LatticeGeom, ModelParams};
use crate::meanfield::{rhs_with_gain, Rk4Stepper};
use crate::stability::{eigenvalues_dense, eigenvector, stack};

/// Relative mismatch `‖w(T) − w(0)‖∞ / max‖w‖∞` accepted for a stored background.
pub const CLOSURE_TOLERANCE: f64 = 1e-6;

/// Sites with `|∂_t w|` below this fraction of the largest rate are singular in a slice.
pub const SINGULAR_FLOOR: f64 = 1e-8;

fn linearized_into(dw: &[Complex64], w: &[Complex64], out: &mut [Complex64], geom: &LatticeGeom, params: &ModelParams) {
    let (lambda, k1, k2) = (params.lambda_pair, params.gain_k1, params.loss_k2);
    for (r, o) in out.iter_mut().enumerate() {
        let (d, b) = (dw[r], w[r]);
        let lin = linear_coupling(dw, geom, params.j_hop, &params.k_diff, r);
        let pair = Complex64::new(-lambda * d.im, -lambda * d.re);
        *o = lin + pair + k1 * d - k2 * b * b * d.conj() - 2.0 * k2 * b.norm_sqr() * d;
    }
}

/// Mean-field equation linearized around `background`, applied to `dw`.
pub fn linearized_rhs(dw: &ComplexField, background: &ComplexField, params: &ModelParams, geom: &LatticeGeom) -> Result<ComplexField> {
    geom.check_field(dw)?;
    geom.check_field(background)?;
    let mut out = ComplexField::zeros(dw.len());
    linearized_into(dw, background, &mut out, geom, params);
    Ok(out)
}

/// RK4 for the background together with a tangent vector; the tangent update is the exact
/// derivative of the background step.
struct TangentStepper<'a> {
    geom: &'a LatticeGeom,
    params: ModelParams,
    kw: [Vec<Complex64>; 4],
    kv: [Vec<Complex64>; 4],
    tw: Vec<Complex64>,
    tv: Vec<Complex64>,
}

impl<'a> TangentStepper<'a> {
    fn new(geom: &'a LatticeGeom, params: ModelParams) -> Self {
        let z = vec![Complex64::new(0.0, 0.0); geom.len()];
        TangentStepper {
            geom,
            params,
            kw: [z.clone(), z.clone(), z.clone(), z.clone()],
            kv: [z.clone(), z.clone(), z.clone(), z.clone()],
            tw: z.clone(),
            tv: z,
        }
    }

    fn step(&mut self, w: &mut [Complex64], v: &mut [Complex64], h: f64) {
        let (geom, p) = (self.geom, &self.params);
        let n = w.len();
        let (tw, tv) = (&mut self.tw, &mut self.tv);
        tw.copy_from_slice(w);
        tv.copy_from_slice(v);
        for stage in 0..4 {
            rhs_with_gain(tw, &mut self.kw[stage], geom, p, p.gain_k1);
            linearized_into(tv, tw, &mut self.kv[stage], geom, p);
            let c = match stage {
                0 | 1 => 0.5 * h,
                2 => h,
                _ => break,
            };
            for i in 0..n {
                tw[i] = w[i] + c * self.kw[stage][i];
                tv[i] = v[i] + c * self.kv[stage][i];
            }
        }
        let s = h / 6.0;
        let [a, b, c, d] = &self.kw;
        for i in 0..n {
            w[i] += s * (a[i] + 2.0 * (b[i] + c[i]) + d[i]);
        }
        let [a, b, c, d] = &self.kv;
        for i in 0..n {
            v[i] += s * (a[i] + 2.0 * (b[i] + c[i]) + d[i]);
        }
    }
}

/// One period of a time-periodic mean-field solution at uniform substeps.
#[derive(Debug, Clone)]
pub struct PeriodicBackground {
    pub period: f64,
    /// `w(k T / n)` for `k = 0..n`; the closing sample `w(T)` is not stored.
    pub snapshots: Vec<ComplexField>,
    /// `∂_t w` at each snapshot from fourth-order periodic central differences.
    pub derivatives: Vec<ComplexField>,
    /// Relative closure mismatch of the orbit that produced the snapshots.
    pub closure: f64,
    pub params: ModelParams,
    pub geom: LatticeGeom,
}

impl PeriodicBackground {
    /// Builds a background from `n + 1` samples spanning exactly one period, the last closing the orbit.
    pub fn from_samples(samples: Vec<ComplexField>, period: f64, params: ModelParams, geom: LatticeGeom) -> Result<Self> {
        params.validate()?;
        if !(period > 0.0 && period.is_finite()) {
            return Err(Error::param("period", "must be positive"));
        }
        if samples.len() < 6 {
            return Err(Error::InsufficientData("a background needs at least 5 substeps".into()));
        }
        for s in &samples {
            geom.check_field(s)?;
            if !s.is_finite() {
                return Err(Error::NonFinite { time: f64::NAN });
            }
        }
        let mut snapshots = samples;
        let last = snapshots.pop().expect("checked length");
        let scale = snapshots.iter().map(|s| s.max_abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        let closure = last.max_diff(&snapshots[0]) / scale;
        if closure > CLOSURE_TOLERANCE {
            return Err(Error::NotClosed {
                mismatch: closure,
                tolerance: CLOSURE_TOLERANCE,
            });
        }
        let derivatives = central_differences(&snapshots, period / snapshots.len() as f64);
        Ok(PeriodicBackground {
            period,
            snapshots,
            derivatives,
            closure,
            params,
            geom,
        })
    }

    /// Refines a period estimate starting from a state on (or very near) the limit cycle and
    /// stores one period at `substeps` RK4 steps.
    ///
    /// Each refinement integrates one trial period, corrects `T` by projecting the closure
    /// defect on the flow direction and restarts from the end point, so transverse
    /// deviations keep contracting.
    pub fn from_orbit(start: &ComplexField, params: ModelParams, geom: LatticeGeom, period_guess: f64, substeps: usize) -> Result<Self> {
        params.validate()?;
        geom.check_field(start)?;
        if !(period_guess > 0.0 && period_guess.is_finite()) {
            return Err(Error::param("period", "must be positive"));
        }
        if substeps < 5 {
            return Err(Error::param("substeps", "need at least 5"));
        }
        let mut period = period_guess;
        let mut w0 = start.to_vec();
        let mut stepper = Rk4Stepper::new(&geom, params);
        let mut flow = vec![Complex64::new(0.0, 0.0); w0.len()];
        for _ in 0..200 {
            let mut w = w0.clone();
            let h = period / substeps as f64;
            for _ in 0..substeps {
                stepper.step(&mut w, h);
            }
            rhs_with_gain(&w, &mut flow, &geom, &params, params.gain_k1);
            let speed: f64 = flow.iter().map(|z| z.norm_sqr()).sum();
            if speed == 0.0 {
                return Err(Error::ZeroMode);
            }
            let defect: f64 = w.iter().zip(&w0).zip(&flow).map(|((a, b), f)| ((a - b) * f.conj()).re).sum();
            let scale = w.iter().map(|z| z.norm()).fold(0.0, f64::max);
            let mismatch = w.iter().zip(&w0).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max) / scale;
            period -= defect / speed;
            if !(period > 0.0 && period.is_finite()) {
                return Err(Error::NotClosed {
                    mismatch,
                    tolerance: CLOSURE_TOLERANCE,
                });
            }
            w0 = w;
            if mismatch < 1e-12 {
                break;
            }
        }
        let h = period / substeps as f64;
        let mut w = w0;
        let mut samples = Vec::with_capacity(substeps + 1);
        samples.push(ComplexField::from_vec(w.clone()));
        for _ in 0..substeps {
            stepper.step(&mut w, h);
            samples.push(ComplexField::from_vec(w.clone()));
        }
        Self::from_samples(samples, period, params, geom)
    }

    pub fn substeps(&self) -> usize {
        self.snapshots.len()
    }

    pub fn step(&self) -> f64 {
        self.period / self.substeps() as f64
    }

    /// `∂_t w` at snapshot `k` evaluated from the equation of motion.
    pub fn exact_derivative(&self, k: usize) -> ComplexField {
        let mut out = ComplexField::zeros(self.geom.len());
        rhs_with_gain(&self.snapshots[k], &mut out, &self.geom, &self.params, self.params.gain_k1);
        out
    }

    /// Propagates a fluctuation over one period along the background.
    pub fn propagate(&self, dw: &[Complex64]) -> Result<Vec<Complex64>> {
        self.geom.check_field(dw)?;
        let mut stepper = TangentStepper::new(&self.geom, self.params);
        let mut w = self.snapshots[0].to_vec();
        let mut v = dw.to_vec();
        let h = self.step();
        for _ in 0..self.substeps() {
            stepper.step(&mut w, &mut v, h);
        }
        Ok(v)
    }
}

fn central_differences(snapshots: &[ComplexField], h: f64) -> Vec<ComplexField> {
    let n = snapshots.len();
    let at = |k: isize| &snapshots[k.rem_euclid(n as isize) as usize];
    (0..n as isize)
        .map(|k| {
            let (m2, m1, p1, p2) = (at(k - 2), at(k - 1), at(k + 1), at(k + 2));
            let vals = (0..m1.len())
                .map(|r| (m2[r] - p2[r] + 8.0 * (p1[r] - m1[r])) / (12.0 * h))
                .collect();
            ComplexField::from_vec(vals)
        })
        .collect()
}

/// Relative return error of the time-translation mode after one period:
/// `‖δw(T) − ∂_t w(0)‖∞ / ‖∂_t w(0)‖∞` with `δw(0) = ∂_t w(0)`.
pub fn goldstone_residual(bg: &PeriodicBackground) -> Result<f64> {
    let mode = bg.exact_derivative(0);
    let norm = mode.max_abs();
    let scale = bg.snapshots.iter().map(|s| s.max_abs()).fold(0.0, f64::max);
    if norm <= 1e-12 * (1.0 + scale) {
        return Err(Error::ZeroMode);
    }
    let back = bg.propagate(&mode)?;
    Ok(back.iter().zip(mode.iter()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max) / norm)
}

/// Residual together with its discretization floor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibratedResidual {
    pub residual: f64,
    /// Residual on the same orbit at half the substep.
    pub refined: f64,
    /// Richardson estimate of the discretization error at the original substep, assuming
    /// second-order convergence (conservative for RK4).
    pub floor: f64,
}

/// Re-samples the orbit at half the substep and estimates how much of the residual is discretization error.
pub fn calibrated_residual(bg: &PeriodicBackground) -> Result<CalibratedResidual> {
    let residual = goldstone_residual(bg)?;
    let fine = PeriodicBackground::from_orbit(&bg.snapshots[0], bg.params, bg.geom.clone(), bg.period, 2 * bg.substeps())?;
    let refined = goldstone_residual(&fine)?;
    Ok(CalibratedResidual {
        residual,
        refined,
        floor: (residual - refined).abs() / 0.75,
    })
}

/// Real `2N × 2N` one-period propagator of fluctuations in (Re, Im) stacking.
pub fn monodromy(bg: &PeriodicBackground) -> Result<DMatrix<f64>> {
    let n = bg.geom.len();
    let mut m = DMatrix::zeros(2 * n, 2 * n);
    for col in 0..2 * n {
        let mut e = vec![Complex64::new(0.0, 0.0); n];
        e[col % n] = if col < n { Complex64::new(1.0, 0.0) } else { Complex64::new(0.0, 1.0) };
        let out = bg.propagate(&e)?;
        for r in 0..n {
            m[(r, col)] = out[r].re;
            m[(n + r, col)] = out[r].im;
        }
    }
    Ok(m)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FloquetMode {
    /// Floquet multiplier closest to 1.
    pub multiplier: Complex64,
    /// Cosine similarity between its eigenvector and `∂_t w(0)`.
    pub overlap: f64,
    /// Next-largest multiplier modulus, for the spectral gap.
    pub next_modulus: f64,
}

/// Multiplier of the time-translation mode and how well its eigenvector matches `∂_t w`.
pub fn goldstone_multiplier(bg: &PeriodicBackground) -> Result<FloquetMode> {
    let m = monodromy(bg)?;
    let values = eigenvalues_dense(&m)?;
    let (best, &multiplier) = values
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - 1.0).norm().total_cmp(&(b.1 - 1.0).norm()))
        .ok_or_else(|| Error::Eigen("empty spectrum".into()))?;
    let next_modulus = values
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != best)
        .map(|(_, z)| z.norm())
        .fold(0.0, f64::max);
    let v = eigenvector(&m, multiplier)?;
    let u = stack(&bg.exact_derivative(0));
    let dot: Complex64 = v.iter().zip(u.iter()).map(|(a, b)| a.conj() * b).sum();
    let nv = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let overlap = dot.norm() / (nv * u.norm());
    Ok(FloquetMode {
        multiplier,
        overlap,
        next_modulus,
    })
}

/// Nonzero coefficients of the phase equation at one site: `(neighbor, coefficient)`.
fn phase_couplings(params: &ModelParams, geom: &LatticeGeom, r: usize) -> impl Iterator<Item = (usize, f64)> {
    let mut out = Vec::with_capacity(6);
    for axis in Axis::ALL {
        let k = params.k_diff[axis.index()];
        let (cm, cp) = if axis == Axis::X {
            (k + params.j_hop, k - params.j_hop)
        } else {
            (k, k)
        };
        if let Some(m) = geom.minus(axis, r) {
            out.push((m, cm));
        }
        if let Some(p) = geom.plus(axis, r) {
            out.push((p, cp));
        }
    }
    out.into_iter().filter(|&(_, c)| c != 0.0)
}

fn check_floor(wdot: &[Complex64]) -> Result<f64> {
    let floor = SINGULAR_FLOOR * wdot.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if floor == 0.0 {
        return Err(Error::ZeroMode);
    }
    Ok(floor)
}

/// Time derivative of the phase field at one slice of the background.
///
/// Both sides of the complex phase equation are projected on `∂_t w_r`, which turns the
/// neighbor ratios into `Re(∂_t w_n / ∂_t w_r)`.
pub fn phase_rhs_discrete(dtheta: &[f64], wdot: &[Complex64], params: &ModelParams, geom: &LatticeGeom) -> Result<Vec<f64>> {
    geom.check_field(wdot)?;
    if dtheta.len() != geom.len() {
        return Err(Error::DimensionMismatch {
            expected: geom.len(),
            got: dtheta.len(),
        });
    }
    let floor = check_floor(wdot)?;
    (0..geom.len())
        .map(|r| {
            let here = wdot[r];
            if here.norm() < floor {
                return Err(Error::SingularSlice {
                    site: r,
                    value: here.norm(),
                    floor,
                });
            }
            Ok(phase_couplings(params, geom, r)
                .map(|(n, c)| c * (wdot[n] / here).re * (dtheta[n] - dtheta[r]))
                .sum())
        })
        .collect()
}

/// Period-averaged phase operator with the count of skipped singular (site, slice) pairs.
#[derive(Debug, Clone)]
pub struct AveragedPhaseOperator {
    pub matrix: DMatrix<f64>,
    pub singular_pairs: usize,
}

/// Period average of the projected phase equation.
///
/// Numerators `c Re(∂_t w_r* ∂_t w_n)` and the norm `|∂_t w_r|²` are averaged separately, the
/// least-squares fit of a constant-rate phase operator over one period. Instantaneous
/// zeros of `∂_t w_r` then carry no weight instead of dividing by zero; they are only counted.
pub fn phase_operator_averaged(bg: &PeriodicBackground) -> Result<AveragedPhaseOperator> {
    let geom = &bg.geom;
    let n = geom.len();
    let mut matrix = DMatrix::zeros(n, n);
    let mut weight = vec![0.0; n];
    let mut singular_pairs = 0;
    for wdot in &bg.derivatives {
        let floor = check_floor(wdot)?;
        for r in 0..n {
            let here = wdot[r];
            if here.norm() < floor {
                singular_pairs += 1;
            }
            weight[r] += here.norm_sqr();
            for (nb, c) in phase_couplings(&bg.params, geom, r) {
                let w = c * (here.conj() * wdot[nb]).re;
                matrix[(r, nb)] += w;
                matrix[(r, r)] -= w;
            }
        }
    }
    for (r, &w) in weight.iter().enumerate() {
        if w == 0.0 {
            return Err(Error::SingularSlice {
                site: r,
                value: 0.0,
                floor: 0.0,
            });
        }
        matrix.row_mut(r).scale_mut(1.0 / w);
    }
    Ok(AveragedPhaseOperator { matrix, singular_pairs })
}

/// Eigenvalues of a real phase operator, largest real part first.
pub fn phase_operator_spectrum(op: &DMatrix<f64>) -> Result<Vec<Complex64>> {
    let mut values = eigenvalues_dense(op)?;
    values.sort_by(|a, b| b.re.total_cmp(&a.re).then(b.im.total_cmp(&a.im)));
    Ok(values)
}

/// Relaxation rate of a phase-field plane wave `e^{i k·r}` when `∂_t w` is uniform in space.
pub fn phase_dispersion_uniform(params: &ModelParams, k: [f64; 3], discrete: bool) -> Complex64 {
    let j = params.j_hop;
    if discrete {
        let diff: f64 = (0..3).map(|i| 2.0 * params.k_diff[i] * (1.0 - k[i].cos())).sum();
        Complex64::new(-diff, -2.0 * j * k[0].sin())
    } else {
        let diff: f64 = (0..3).map(|i| params.k_diff[i] * k[i] * k[i]).sum();
        Complex64::new(-diff, -2.0 * j * k[0])
    }
}
