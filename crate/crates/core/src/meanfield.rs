//! Deterministic mean-field dynamics, period detection and phase labels.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{column_average, linear_coupling, Boundary, ComplexField, LatticeGeom, ModelParams};

pub const DEFAULT_DT: f64 = 1e-3;

/// Writes the mean-field right-hand side with an arbitrary on-site gain into `out`.
///
/// `gain` is κ₁ for the mean-field equation and κ₁ + κ₂ for the Wigner drift.
#[inline]
pub(crate) fn rhs_with_gain(field: &[Complex64], out: &mut [Complex64], geom: &LatticeGeom, params: &ModelParams, gain: f64) {
    let lambda = params.lambda_pair;
    let k2 = params.loss_k2;
    for (r, o) in out.iter_mut().enumerate() {
        let a = field[r];
        let lin = linear_coupling(field, geom, params.j_hop, &params.k_diff, r);
        // −iλ a* = −iλ (re − i im) = −λ im − iλ re
        let pair = Complex64::new(-lambda * a.im, -lambda * a.re);
        *o = lin + pair + (gain - k2 * a.norm_sqr()) * a;
    }
}

/// Mean-field time derivative of every site.
pub fn rhs_meanfield(field: &ComplexField, params: &ModelParams, geom: &LatticeGeom) -> Result<ComplexField> {
    geom.check_field(field)?;
    if !field.is_finite() {
        return Err(Error::NonFinite { time: f64::NAN });
    }
    let mut out = ComplexField::zeros(field.len());
    rhs_with_gain(field, &mut out, geom, params, params.gain_k1);
    Ok(out)
}

/// Classical fourth-order Runge–Kutta stepper that owns its scratch buffers.
pub struct Rk4Stepper<'a> {
    geom: &'a LatticeGeom,
    params: ModelParams,
    gain: f64,
    k: [Vec<Complex64>; 4],
    tmp: Vec<Complex64>,
}

impl<'a> Rk4Stepper<'a> {
    pub fn new(geom: &'a LatticeGeom, params: ModelParams) -> Self {
        Self::with_gain(geom, params, params.gain_k1)
    }

    pub fn with_gain(geom: &'a LatticeGeom, params: ModelParams, gain: f64) -> Self {
        let n = geom.len();
        let z = vec![Complex64::new(0.0, 0.0); n];
        Rk4Stepper {
            geom,
            params,
            gain,
            k: [z.clone(), z.clone(), z.clone(), z.clone()],
            tmp: z,
        }
    }

    pub fn step(&mut self, field: &mut [Complex64], dt: f64) {
        let (geom, p, g) = (self.geom, &self.params, self.gain);
        let [k1, k2, k3, k4] = &mut self.k;
        let tmp = &mut self.tmp;
        rhs_with_gain(field, k1, geom, p, g);
        for i in 0..field.len() {
            tmp[i] = field[i] + 0.5 * dt * k1[i];
        }
        rhs_with_gain(tmp, k2, geom, p, g);
        for i in 0..field.len() {
            tmp[i] = field[i] + 0.5 * dt * k2[i];
        }
        rhs_with_gain(tmp, k3, geom, p, g);
        for i in 0..field.len() {
            tmp[i] = field[i] + dt * k3[i];
        }
        rhs_with_gain(tmp, k4, geom, p, g);
        let w = dt / 6.0;
        for i in 0..field.len() {
            field[i] += w * (k1[i] + 2.0 * (k2[i] + k3[i]) + k4[i]);
        }
    }
}

/// Sampled mean-field trajectory.
#[derive(Debug, Clone)]
pub struct MeanFieldTrajectory {
    pub times: Vec<f64>,
    pub snapshots: Vec<ComplexField>,
    pub dt: f64,
}

impl MeanFieldTrajectory {
    pub fn last(&self) -> &ComplexField {
        self.snapshots.last().expect("trajectory holds at least the initial sample")
    }

    /// Time series of one site.
    pub fn site_series(&self, site: usize) -> Vec<Complex64> {
        self.snapshots.iter().map(|s| s[site]).collect()
    }

    /// y,z-averaged profiles, one `Vec` of length Lx per sample.
    pub fn column_profiles(&self, geom: &LatticeGeom) -> Vec<Vec<Complex64>> {
        self.snapshots.iter().map(|s| column_average(s, geom)).collect()
    }
}

fn check_step(dt: f64, t_end: f64, sample_every: usize) -> Result<()> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::param("dt", "time step must be positive"));
    }
    if !(t_end >= 0.0 && t_end.is_finite()) {
        return Err(Error::param("t_end", "must be a finite non-negative time"));
    }
    if sample_every == 0 {
        return Err(Error::param("sample_every", "must be at least 1"));
    }
    Ok(())
}

/// Number of fixed steps of size `dt` covering `[0, t_end]`.
pub fn step_count(t_end: f64, dt: f64) -> u64 {
    (t_end / dt - 1e-9).ceil().max(0.0) as u64
}

/// Integrates from `field0` and calls `observe(t, field)` at step 0 and every `sample_every` steps.
pub fn integrate_observed<F>(
    field0: &ComplexField,
    params: &ModelParams,
    geom: &LatticeGeom,
    t_end: f64,
    dt: f64,
    sample_every: usize,
    mut observe: F,
) -> Result<ComplexField>
where
    F: FnMut(f64, &[Complex64]),
{
    geom.check_field(field0)?;
    check_step(dt, t_end, sample_every)?;
    if !field0.is_finite() {
        return Err(Error::NonFinite { time: 0.0 });
    }
    let mut field = field0.clone();
    let mut stepper = Rk4Stepper::new(geom, *params);
    let steps = step_count(t_end, dt);
    observe(0.0, &field);
    for s in 1..=steps {
        stepper.step(&mut field, dt);
        let t = s as f64 * dt;
        if !field.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
            return Err(Error::NonFinite { time: t });
        }
        if (s as usize).is_multiple_of(sample_every) {
            observe(t, &field);
        }
    }
    Ok(field)
}

/// Fixed-step RK4 integration of the mean-field equation.
pub fn integrate(
    field0: &ComplexField,
    params: &ModelParams,
    geom: &LatticeGeom,
    t_end: f64,
    dt: f64,
    sample_every: usize,
) -> Result<MeanFieldTrajectory> {
    let mut times = Vec::new();
    let mut snapshots = Vec::new();
    integrate_observed(field0, params, geom, t_end, dt, sample_every, |t, f| {
        times.push(t);
        snapshots.push(ComplexField::from_vec(f.to_vec()));
    })?;
    Ok(MeanFieldTrajectory { times, snapshots, dt })
}

/// Default relative mismatch accepted by [`detect_period`].
pub const PERIOD_TOLERANCE: f64 = 0.05;

/// Norm used to compare a signal with its shifted copy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PeriodMetric {
    /// Worst-case mismatch relative to the largest deviation from the mean; for deterministic data.
    #[default]
    Sup,
    /// Normalized autocorrelation; the tolerance bounds its shortfall from one at the period.
    /// Tolerates sampling noise and phase jitter.
    Rms,
}

/// Finds the fundamental period of a uniformly sampled complex signal.
///
/// Returns `None` for constant or aperiodic input. `tolerance` is relative to
/// the oscillation amplitude.
pub fn detect_period_samples(signal: &[Complex64], sample_dt: f64, tolerance: f64) -> Option<f64> {
    detect_period_with(signal, sample_dt, tolerance, PeriodMetric::Sup)
}

pub fn detect_period_with(signal: &[Complex64], sample_dt: f64, tolerance: f64, metric: PeriodMetric) -> Option<f64> {
    let n = signal.len();
    if n < 8 {
        return None;
    }
    let mean: Complex64 = signal.iter().sum::<Complex64>() / n as f64;
    let amp = signal.iter().map(|z| (z - mean).norm()).fold(0.0, f64::max);
    if amp <= 1e-9 * (1.0 + mean.norm()) {
        return None;
    }
    let scale = match metric {
        PeriodMetric::Sup => amp,
        PeriodMetric::Rms => (signal.iter().map(|z| (z - mean).norm_sqr()).sum::<f64>() / n as f64).sqrt(),
    };
    let max_lag = n / 3;
    let mut dist = vec![0.0; max_lag + 1];
    let mut msq = vec![0.0; max_lag + 1];
    for lag in 1..=max_lag {
        let mut worst: f64 = 0.0;
        let mut acc = 0.0;
        for t in 0..n - lag {
            let d = (signal[t + lag] - signal[t]).norm_sqr();
            worst = worst.max(d);
            acc += d;
        }
        msq[lag] = acc / (n - lag) as f64;
        dist[lag] = match metric {
            PeriodMetric::Sup => worst.sqrt(),
            PeriodMetric::Rms => msq[lag].sqrt(),
        };
    }
    // leave the trivial small-lag basin before searching for the first return
    let (high, low) = match metric {
        PeriodMetric::Sup => (scale, 0.5 * scale),
        // anticorrelated, then positively correlated again
        PeriodMetric::Rms => (2f64.sqrt() * scale, 2f64.sqrt() * scale),
    };
    let rise = (1..=max_lag).find(|&l| dist[l] > high)?;
    let fall = (rise..=max_lag).find(|&l| dist[l] < low)?;
    let mut best = fall;
    let mut l = fall;
    while l <= max_lag && dist[l] < low {
        if msq[l] < msq[best] {
            best = l;
        }
        l += 1;
    }
    let mut lag = best as f64;
    if best > 1 && best < max_lag {
        let (a, b, c) = (msq[best - 1], msq[best], msq[best + 1]);
        let denom = a - 2.0 * b + c;
        if denom > 0.0 {
            lag += (0.5 * (a - c) / denom).clamp(-0.5, 0.5);
        }
    }
    let accepted = match metric {
        PeriodMetric::Sup => shifted_sup(signal, lag) <= tolerance * scale,
        // one minus the normalized autocorrelation at the period
        PeriodMetric::Rms => msq[best] / (2.0 * scale * scale) <= tolerance,
    };
    if !accepted {
        return None;
    }
    Some(lag * sample_dt)
}

/// Largest mismatch between `w(t + lag)` and `w(t)`, linearly interpolating fractional lags.
fn shifted_sup(signal: &[Complex64], lag: f64) -> f64 {
    let whole = lag.floor() as usize;
    let frac = lag - whole as f64;
    (0..signal.len().saturating_sub(whole + 1))
        .map(|t| (signal[t + whole] * (1.0 - frac) + signal[t + whole + 1] * frac - signal[t]).norm())
        .fold(0.0, f64::max)
}

/// Period of the late-time signal at `site`, searched within the final `window` time units.
pub fn detect_period(traj: &MeanFieldTrajectory, site: usize, window: f64) -> Result<Option<f64>> {
    let (signal, sample_dt) = late_window(traj, window, |s| s[site])?;
    Ok(detect_period_samples(&signal, sample_dt, PERIOD_TOLERANCE))
}

fn late_window<F>(traj: &MeanFieldTrajectory, window: f64, pick: F) -> Result<(Vec<Complex64>, f64)>
where
    F: Fn(&ComplexField) -> Complex64,
{
    let n = traj.times.len();
    if n < 2 {
        return Err(Error::InsufficientData("trajectory has fewer than two samples".into()));
    }
    let span = traj.times[n - 1] - traj.times[0];
    if window > span + 1e-12 {
        return Err(Error::InsufficientData(format!(
            "window {window} exceeds trajectory span {span}"
        )));
    }
    let sample_dt = traj.times[1] - traj.times[0];
    let start_t = traj.times[n - 1] - window;
    let first = traj.times.iter().position(|&t| t >= start_t - 1e-12).unwrap_or(0);
    Ok((traj.snapshots[first..].iter().map(pick).collect(), sample_dt))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phase {
    Uniform,
    TravelingWave,
    ChiralDamping,
    Undetermined,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Uniform => "uniform",
            Phase::TravelingWave => "traveling_wave",
            Phase::ChiralDamping => "chiral_damping",
            Phase::Undetermined => "undetermined",
        }
    }
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Phase label together with the diagnostics it was derived from.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseLabel {
    pub phase: Phase,
    /// max |a| over the late window.
    pub late_amplitude: f64,
    /// Largest temporal deviation from the time mean, relative to the RMS amplitude.
    pub oscillation: f64,
    /// Largest bulk deviation of the time-mean profile from its bulk average, relative to the RMS amplitude.
    pub nonuniformity: f64,
    pub period: Option<f64>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Thresholds {
    /// Late amplitude below which the state counts as damped.
    pub eps_damped: f64,
    /// Relative temporal oscillation below which the state counts as static.
    pub eps_oscillation: f64,
    /// Relative bulk nonuniformity below which the state counts as uniform.
    pub eps_uniformity: f64,
    /// Sites excluded at each open x boundary.
    pub boundary_margin: usize,
    /// Relative drift of the late amplitude between the two halves of the late window.
    pub stationarity: f64,
    /// Relative mismatch accepted by period detection.
    pub period_tolerance: f64,
    pub period_metric: PeriodMetric,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            eps_damped: 1e-3,
            eps_oscillation: 0.05,
            eps_uniformity: 0.05,
            boundary_margin: 2,
            stationarity: 0.1,
            period_tolerance: PERIOD_TOLERANCE,
            period_metric: PeriodMetric::Sup,
        }
    }
}

impl Thresholds {
    /// Looser preset for records that carry sampling noise, such as single
    /// truncated-Wigner trajectories or ensemble means.
    pub fn stochastic() -> Self {
        Thresholds {
            eps_damped: 0.5,
            eps_oscillation: 0.3,
            eps_uniformity: 0.3,
            boundary_margin: 2,
            stationarity: 0.25,
            period_tolerance: 0.5,
            period_metric: PeriodMetric::Rms,
        }
    }
}

/// Labels the late-time behaviour of a trajectory.
pub fn classify_phase(traj: &MeanFieldTrajectory, geom: &LatticeGeom, thresholds: &Thresholds) -> PhaseLabel {
    let profiles = traj.column_profiles(geom);
    let sample_dt = if traj.times.len() > 1 { traj.times[1] - traj.times[0] } else { traj.dt };
    classify_profiles(&profiles, sample_dt, geom.bc()[0], thresholds)
}

/// Labels a series of x-profiles (already averaged over y and z) sampled every `sample_dt`.
pub fn classify_profiles(profiles: &[Vec<Complex64>], sample_dt: f64, bc_x: Boundary, th: &Thresholds) -> PhaseLabel {
    let mut label = PhaseLabel {
        phase: Phase::Undetermined,
        late_amplitude: f64::NAN,
        oscillation: f64::NAN,
        nonuniformity: f64::NAN,
        period: None,
        note: None,
    };
    let n = profiles.len();
    if n < 16 {
        label.note = Some("too few samples".into());
        return label;
    }
    let late = &profiles[n - n / 4..];
    let lx = late[0].len();
    let amp_of = |w: &[Vec<Complex64>]| w.iter().flat_map(|p| p.iter().map(|z| z.norm())).fold(0.0, f64::max);
    label.late_amplitude = amp_of(late);
    if label.late_amplitude < th.eps_damped {
        label.phase = Phase::ChiralDamping;
        label.oscillation = 0.0;
        label.nonuniformity = 0.0;
        return label;
    }

    let half = late.len() / 2;
    let (h1, h2) = (amp_of(&late[..half]), amp_of(&late[half..]));
    if (h1 - h2).abs() > th.stationarity * h1.max(h2) {
        label.note = Some(format!("not stationary: late amplitude {h1:.3e} -> {h2:.3e}"));
        return label;
    }

    let margin = if bc_x == Boundary::Open { th.boundary_margin } else { 0 };
    let bulk: Vec<usize> = if lx > 2 * margin { (margin..lx - margin).collect() } else { (0..lx).collect() };
    let nt = late.len() as f64;
    let means: Vec<Complex64> = bulk.iter().map(|&x| late.iter().map(|p| p[x]).sum::<Complex64>() / nt).collect();
    let rms = (bulk.iter().map(|&x| late.iter().map(|p| p[x].norm_sqr()).sum::<f64>()).sum::<f64>()
        / (nt * bulk.len() as f64))
        .sqrt();
    let oscillation = bulk
        .iter()
        .zip(&means)
        .map(|(&x, m)| late.iter().map(|p| (p[x] - m).norm()).fold(0.0, f64::max))
        .fold(0.0, f64::max);
    let bulk_mean: Complex64 = means.iter().sum::<Complex64>() / means.len() as f64;
    let nonuniformity = means.iter().map(|m| (m - bulk_mean).norm()).fold(0.0, f64::max);
    label.oscillation = oscillation / rms;
    label.nonuniformity = nonuniformity / rms;
    if label.oscillation < th.eps_oscillation && label.nonuniformity < th.eps_uniformity {
        label.phase = Phase::Uniform;
        return label;
    }

    let mid = bulk[bulk.len() / 2];
    let signal: Vec<Complex64> = late.iter().map(|p| p[mid]).collect();
    let Some(period) = detect_period_with(&signal, sample_dt, th.period_tolerance, th.period_metric) else {
        label.note = Some("oscillating but no period detected".into());
        return label;
    };
    label.period = Some(period);
    if bulk.len() < 2 {
        label.note = Some("bulk too small to resolve propagation".into());
        return label;
    }
    let lags: Vec<f64> = bulk
        .windows(2)
        .map(|w| {
            let a: Vec<Complex64> = late.iter().map(|p| p[w[0]]).collect();
            let b: Vec<Complex64> = late.iter().map(|p| p[w[1]]).collect();
            delay(&a, &b, sample_dt, period)
        })
        .collect();
    if lags.iter().all(|&d| d > 0.0) {
        label.phase = Phase::TravelingWave;
    } else {
        label.note = Some(format!("periodic but oscillation phase does not advance along x: {lags:?}"));
    }
    label
}

/// Delay d in (−T/2, T/2] maximizing the overlap of b(t) with a(t − d).
fn delay(a: &[Complex64], b: &[Complex64], sample_dt: f64, period: f64) -> f64 {
    let per = (period / sample_dt).round().max(1.0) as usize;
    let usable = a.len().saturating_sub(per);
    let mut best = (f64::NEG_INFINITY, 0usize);
    for lag in 0..per {
        let mut acc = 0.0;
        for t in 0..usable {
            acc += (a[t] * b[t + lag].conj()).re;
        }
        if acc > best.0 {
            best = (acc, lag);
        }
    }
    let d = best.1 as f64 * sample_dt;
    if d > 0.5 * period {
        d - period
    } else {
        d
    }
}
