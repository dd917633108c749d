//! Autocorrelation, coherence-time fits, finite-size scaling and phase sweeps.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{ComplexField, LatticeGeom, ModelParams};
use crate::meanfield::{classify_profiles, integrate_observed, step_count, Phase, PhaseLabel, Thresholds};
use crate::twa::{column_observables, EnsembleState, TwaStepper};

/// Extrema below this fraction of |C(0)| are treated as noise.
pub const ENVELOPE_FLOOR: f64 = 0.02;

/// Time series of y,z-averaged Re α for every trajectory, uniformly sampled.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ColumnRecords {
    pub times: Vec<f64>,
    lx: usize,
    /// `values[trajectory][sample * lx + x]`.
    values: Vec<Vec<f64>>,
}

impl ColumnRecords {
    pub fn new(trajectories: usize, lx: usize) -> Self {
        ColumnRecords {
            times: Vec::new(),
            lx,
            values: vec![Vec::new(); trajectories],
        }
    }

    /// Appends one sample; `rows[trajectory][x]`.
    pub fn push(&mut self, t: f64, rows: &[Vec<f64>]) -> Result<()> {
        if rows.len() != self.values.len() {
            return Err(Error::DimensionMismatch {
                expected: self.values.len(),
                got: rows.len(),
            });
        }
        if let Some(bad) = rows.iter().find(|r| r.len() != self.lx) {
            return Err(Error::DimensionMismatch {
                expected: self.lx,
                got: bad.len(),
            });
        }
        self.times.push(t);
        for (v, r) in self.values.iter_mut().zip(rows) {
            v.extend_from_slice(r);
        }
        Ok(())
    }

    pub fn push_ensemble(&mut self, ens: &EnsembleState, geom: &LatticeGeom) -> Result<()> {
        let rows: Vec<Vec<f64>> = ens
            .column_records(geom)
            .into_iter()
            .map(|c| c.into_iter().map(|z| z.re).collect())
            .collect();
        self.push(ens.time(), &rows)
    }

    pub fn trajectories(&self) -> usize {
        self.values.len()
    }

    pub fn lx(&self) -> usize {
        self.lx
    }

    pub fn samples(&self) -> usize {
        self.times.len()
    }

    pub fn value(&self, trajectory: usize, sample: usize, x: usize) -> f64 {
        self.values[trajectory][sample * self.lx + x]
    }

    pub fn series(&self, trajectory: usize) -> &[f64] {
        &self.values[trajectory]
    }

    fn sample_dt(&self) -> Result<f64> {
        if self.times.len() < 2 {
            return Err(Error::InsufficientData("need at least two record samples".into()));
        }
        let dt = self.times[1] - self.times[0];
        let uniform = self
            .times
            .windows(2)
            .all(|w| ((w[1] - w[0]) - dt).abs() <= 1e-9 * dt.abs().max(1.0));
        if !(dt > 0.0) || !uniform {
            return Err(Error::InsufficientData("record times must be uniformly spaced".into()));
        }
        Ok(dt)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AutocorrResult {
    pub tau_grid: Vec<f64>,
    pub c_values: Vec<f64>,
    pub tau0: Option<f64>,
    pub fit_r2: Option<f64>,
    pub diagnostic: Option<String>,
    /// First and last time origin averaged over.
    pub origin_window: (f64, f64),
    pub trajectories_used: usize,
}

/// `C(τ) = ⟨Re α_x(t) Re α_x(t+τ)⟩`: y,z average per trajectory (already in the
/// records), then the ensemble average at fixed `(t, τ, x)`, then the mean over `t` and `x`.
pub fn autocorrelation(records: &ColumnRecords, t_start: f64, tau_max: f64) -> Result<AutocorrResult> {
    let dt = records.sample_dt()?;
    if !(tau_max > 0.0) {
        return Err(Error::param("tau_max", "must be positive"));
    }
    let n = records.samples();
    let i0 = records
        .times
        .iter()
        .position(|&t| t >= t_start - 1e-9 * dt)
        .ok_or_else(|| Error::InsufficientData(format!("records end before t_start = {t_start}")))?;
    let k_max = (tau_max / dt).round() as usize;
    if i0 + 2 * k_max > n - 1 {
        return Err(Error::InsufficientData(format!(
            "records cover [{:.3}, {:.3}], need [{t_start}, {}]",
            records.times[0],
            records.times[n - 1],
            t_start + 2.0 * tau_max
        )));
    }
    let live: Vec<&[f64]> = (0..records.trajectories())
        .map(|m| records.series(m))
        .filter(|s| s.iter().all(|v| v.is_finite()))
        .collect();
    if live.is_empty() {
        return Err(Error::InsufficientData("no finite trajectories".into()));
    }
    let lx = records.lx();
    let origins = i0..n - k_max;
    let inv_m = 1.0 / live.len() as f64;
    let norm = 1.0 / (origins.len() * lx) as f64;
    let c_values: Vec<f64> = (0..=k_max)
        .map(|k| {
            let mut acc = 0.0;
            for i in origins.clone() {
                for x in 0..lx {
                    let (a, b) = (i * lx + x, (i + k) * lx + x);
                    let ens: f64 = live.iter().map(|s| s[a] * s[b]).sum::<f64>() * inv_m;
                    acc += ens;
                }
            }
            acc * norm
        })
        .collect();
    let tau_grid: Vec<f64> = (0..=k_max).map(|k| k as f64 * dt).collect();
    let fit = fit_envelope(&tau_grid, &c_values);
    Ok(AutocorrResult {
        tau_grid,
        c_values,
        tau0: fit.tau0,
        fit_r2: fit.fit_r2,
        diagnostic: fit.diagnostic,
        origin_window: (records.times[i0], records.times[n - 1 - k_max]),
        trajectories_used: live.len(),
    })
}

/// Exponential-envelope fit of an oscillating correlation function.
#[derive(Debug, Clone, PartialEq)]
pub struct DecayFit {
    pub tau0: Option<f64>,
    pub fit_r2: Option<f64>,
    /// `(τ, |C|)` of the extrema entering the fit.
    pub extrema: Vec<(f64, f64)>,
    pub diagnostic: Option<String>,
}

pub fn fit_decay(ac: &AutocorrResult) -> DecayFit {
    fit_envelope(&ac.tau_grid, &ac.c_values)
}

/// One extremum per lobe between sign changes of C; the lobe at τ = 0 and the
/// truncated final lobe are skipped, and collection stops at the first lobe whose
/// peak is below [`ENVELOPE_FLOOR`]·|C(0)|.
pub fn fit_envelope(tau: &[f64], c: &[f64]) -> DecayFit {
    let mut fit = DecayFit {
        tau0: None,
        fit_r2: None,
        extrema: Vec::new(),
        diagnostic: None,
    };
    if tau.len() != c.len() || c.len() < 3 {
        fit.diagnostic = Some("correlation too short".into());
        return fit;
    }
    let floor = ENVELOPE_FLOOR * c[0].abs();
    let mut lobes = Vec::new();
    let mut start = 0;
    for i in 1..c.len() {
        if c[i].signum() != c[i - 1].signum() || c[i] == 0.0 {
            lobes.push(start..i);
            start = i;
        }
    }
    for lobe in lobes.into_iter().skip(1) {
        if lobe.len() < 2 {
            break;
        }
        let (k, a) = lobe
            .clone()
            .map(|i| (i, c[i].abs()))
            .fold((lobe.start, 0.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        if a < floor || k == lobe.start {
            break;
        }
        fit.extrema.push((tau[k], a));
    }
    if fit.extrema.len() < 4 {
        fit.diagnostic = Some(format!("only {} resolvable extrema, need 4", fit.extrema.len()));
        return fit;
    }
    let xs: Vec<f64> = fit.extrema.iter().map(|e| e.0).collect();
    // relative to the first extremum, so rescaling C by a power of two changes nothing
    let a0 = fit.extrema[0].1;
    let ys: Vec<f64> = fit.extrema.iter().map(|e| (e.1 / a0).ln()).collect();
    let line = least_squares(&xs, &ys).expect("distinct extremum times");
    fit.fit_r2 = Some(line.r2);
    let span = xs[xs.len() - 1] - xs[0];
    if line.slope >= 0.0 || -line.slope * span < 0.01 {
        fit.diagnostic = Some(format!("no measurable decay (slope {:.3e})", line.slope));
        return fit;
    }
    fit.tau0 = Some(-1.0 / line.slope);
    fit
}

struct Line {
    slope: f64,
    intercept: f64,
    slope_stderr: f64,
    r2: f64,
}

fn least_squares(x: &[f64], y: &[f64]) -> Option<Line> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let slope_stderr = if x.len() > 2 { (sse / (n - 2.0) / sxx).sqrt() } else { f64::NAN };
    let r2 = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    Some(Line {
        slope,
        intercept,
        slope_stderr,
        r2,
    })
}

/// Power law `τ₀ = prefactor · L^exponent` from a log-log least-squares fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingFit {
    pub exponent: f64,
    pub exponent_stderr: f64,
    pub prefactor: f64,
    pub r2: f64,
}

pub fn scaling_fit(points: &[(f64, f64)]) -> Result<ScalingFit> {
    if points.len() < 3 {
        return Err(Error::InsufficientData(format!("scaling fit needs 3 points, got {}", points.len())));
    }
    if points.iter().any(|&(l, t)| !(l > 0.0 && t > 0.0 && l.is_finite() && t.is_finite())) {
        return Err(Error::param("points", "sizes and decay times must be positive"));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let line = least_squares(&xs, &ys).ok_or_else(|| Error::param("points", "all sizes are equal"))?;
    Ok(ScalingFit {
        exponent: line.slope,
        exponent_stderr: line.slope_stderr,
        prefactor: line.intercept.exp(),
        r2: line.r2,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Engine {
    #[serde(alias = "meanfield")]
    MeanField,
    Twa,
}

impl std::str::FromStr for Engine {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean-field" | "meanfield" | "mf" => Ok(Engine::MeanField),
            "twa" => Ok(Engine::Twa),
            _ => Err(Error::param("engine", format!("unknown engine {s:?}"))),
        }
    }
}

impl std::fmt::Display for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Engine::MeanField => "mean-field",
            Engine::Twa => "twa",
        })
    }
}

/// Everything a sweep needs besides the engine choice.
#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub base: ModelParams,
    pub geom: LatticeGeom,
    pub k1_values: Vec<f64>,
    pub kx_values: Vec<f64>,
    pub t_end: f64,
    pub dt: f64,
    /// Steps between recorded profiles.
    pub sample_every: usize,
    /// Uniform initial value (mean-field) or Wigner centre (TWA).
    pub initial: Complex64,
    pub thresholds: Thresholds,
    pub trajectories: usize,
    pub seed: u64,
    /// Trajectories whose individual records are classified in a TWA point.
    pub votes: usize,
}

impl SweepConfig {
    /// Mean-field defaults around `base` on `geom`: seed offset 1e-3(1 − i), dt 0.005.
    pub fn new(base: ModelParams, geom: LatticeGeom, k1_values: Vec<f64>, kx_values: Vec<f64>) -> Self {
        SweepConfig {
            base,
            geom,
            k1_values,
            kx_values,
            t_end: 1500.0,
            dt: 5e-3,
            sample_every: 10,
            initial: Complex64::new(1e-3, -1e-3),
            thresholds: Thresholds::default(),
            trajectories: 64,
            seed: 0,
            votes: 9,
        }
    }
}

/// Evenly spaced values `start, start + step, …` up to `stop` inclusive.
pub fn grid(start: f64, stop: f64, step: f64) -> Vec<f64> {
    let n = ((stop - start) / step + 1e-9).floor().max(0.0) as usize;
    (0..=n).map(|i| start + i as f64 * step).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub kappa1: f64,
    pub kx: f64,
    pub label: PhaseLabel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub engine: Engine,
    pub k1_values: Vec<f64>,
    pub kx_values: Vec<f64>,
    /// Row-major with Kx outer: index `ikx * k1_values.len() + ik1`.
    pub points: Vec<SweepPoint>,
    /// `(Kx, 2Kx − λ)` for every Kx of the grid.
    pub analytic_line: Vec<(f64, f64)>,
}

impl SweepResult {
    pub fn at(&self, ik1: usize, ikx: usize) -> &SweepPoint {
        &self.points[ikx * self.k1_values.len() + ik1]
    }

    /// Labels of one fixed-Kx column in increasing κ₁.
    pub fn column(&self, ikx: usize) -> Vec<Phase> {
        (0..self.k1_values.len()).map(|i| self.at(i, ikx).label.phase).collect()
    }
}

fn phase_rank(p: Phase) -> Option<u8> {
    match p {
        Phase::ChiralDamping => Some(0),
        Phase::TravelingWave => Some(1),
        Phase::Uniform => Some(2),
        Phase::Undetermined => None,
    }
}

/// True when the determined labels never step back in the order
/// ChiralDamping → TravelingWave → Uniform.
pub fn is_monotone_ordering(labels: &[Phase]) -> bool {
    let ranks: Vec<u8> = labels.iter().filter_map(|&p| phase_rank(p)).collect();
    ranks.windows(2).all(|w| w[0] <= w[1])
}

/// Midpoint between the last `from` label and the first `to` label, when `to` follows `from`.
pub fn transition_point(values: &[f64], labels: &[Phase], from: Phase, to: Phase) -> Option<f64> {
    let last_from = labels.iter().rposition(|&p| p == from)?;
    let first_to = labels.iter().position(|&p| p == to)?;
    (first_to > last_from).then(|| 0.5 * (values[last_from] + values[first_to]))
}

pub fn sweep_phase_diagram(cfg: &SweepConfig, engine: Engine) -> Result<SweepResult> {
    cfg.base.validate()?;
    if cfg.k1_values.is_empty() || cfg.kx_values.is_empty() {
        return Err(Error::param("sweep", "empty parameter range"));
    }
    if cfg.sample_every == 0 {
        return Err(Error::param("sample_every", "must be at least 1"));
    }
    let grid: Vec<(f64, f64)> = cfg
        .kx_values
        .iter()
        .flat_map(|&kx| cfg.k1_values.iter().map(move |&k1| (k1, kx)))
        .collect();
    let points = grid
        .par_iter()
        .map(|&(k1, kx)| SweepPoint {
            kappa1: k1,
            kx,
            label: run_point(cfg, engine, k1, kx),
        })
        .collect();
    Ok(SweepResult {
        engine,
        k1_values: cfg.k1_values.clone(),
        kx_values: cfg.kx_values.clone(),
        points,
        analytic_line: cfg
            .kx_values
            .iter()
            .map(|&kx| (kx, 2.0 * kx - cfg.base.lambda_pair))
            .collect(),
    })
}

fn failed(note: String) -> PhaseLabel {
    PhaseLabel {
        phase: Phase::Undetermined,
        late_amplitude: f64::NAN,
        oscillation: f64::NAN,
        nonuniformity: f64::NAN,
        period: None,
        note: Some(note),
    }
}

/// Labels a single `(κ₁, Kx)` point; failures come back as Undetermined with a note.
pub fn run_point(cfg: &SweepConfig, engine: Engine, k1: f64, kx: f64) -> PhaseLabel {
    let params = cfg.base.with_gain(k1).with_kx(kx);
    if let Err(e) = params.validate() {
        return failed(e.to_string());
    }
    let sample_dt = cfg.dt * cfg.sample_every as f64;
    let bc_x = cfg.geom.bc()[0];
    match engine {
        Engine::MeanField => {
            let field0 = ComplexField::uniform(cfg.geom.len(), cfg.initial);
            let mut profiles = Vec::new();
            let run = integrate_observed(&field0, &params, &cfg.geom, cfg.t_end, cfg.dt, cfg.sample_every, |_, f| {
                profiles.push(crate::lattice::column_average(f, &cfg.geom))
            });
            match run {
                Ok(_) => classify_profiles(&profiles, sample_dt, bc_x, &cfg.thresholds),
                Err(e) => failed(e.to_string()),
            }
        }
        Engine::Twa => match twa_point(cfg, &params) {
            Ok(label) => label,
            Err(e) => failed(e.to_string()),
        },
    }
}

/// TWA point: single trajectories decide between oscillating and uniform order, which the
/// ensemble mean washes out as trajectories dephase; the ensemble mean decides damping,
/// which single noisy trajectories cannot show.
fn twa_point(cfg: &SweepConfig, params: &ModelParams) -> Result<PhaseLabel> {
    let geom = &cfg.geom;
    let mut ens = EnsembleState::sample(&vec![cfg.initial; geom.len()], geom, cfg.trajectories.max(2), cfg.seed)?;
    let stepper = TwaStepper::new(geom, *params, cfg.dt)?;
    let votes = cfg.votes.clamp(1, ens.len());
    let mut records: Vec<Vec<Vec<Complex64>>> = vec![Vec::new(); votes];
    let mut means = Vec::new();
    let mut push = |ens: &EnsembleState| -> Result<()> {
        for (v, rec) in records.iter_mut().enumerate() {
            rec.push(ens.trajectories()[v].column_average(geom));
        }
        means.push(column_observables(ens, geom)?.order);
        Ok(())
    };
    push(&ens)?;
    let chunks = step_count(cfg.t_end, cfg.dt) / cfg.sample_every as u64;
    for _ in 0..chunks {
        stepper.advance(&mut ens, cfg.sample_every as u64)?;
        push(&ens)?;
    }
    let sample_dt = cfg.dt * cfg.sample_every as f64;
    let labels: Vec<PhaseLabel> = records
        .iter()
        .enumerate()
        .map(|(v, rec)| {
            if ens.dead()[v].is_some() {
                failed("trajectory diverged".into())
            } else {
                classify_profiles(rec, sample_dt, geom.bc()[0], &cfg.thresholds)
            }
        })
        .collect();
    let vote = majority(labels);
    if matches!(vote.phase, Phase::TravelingWave | Phase::Uniform) {
        return Ok(vote);
    }
    let mean = classify_profiles(&means, sample_dt, geom.bc()[0], &cfg.thresholds);
    if mean.phase == Phase::ChiralDamping {
        let note = vote.note.unwrap_or_default();
        return Ok(PhaseLabel {
            note: Some(format!("ensemble mean damped; {note}")),
            ..mean
        });
    }
    Ok(vote)
}

/// Most frequent label; ties and a missing strict majority give Undetermined.
fn majority(labels: Vec<PhaseLabel>) -> PhaseLabel {
    let n = labels.len();
    let count = |p: Phase| labels.iter().filter(|l| l.phase == p).count();
    let tally: Vec<(Phase, usize)> = [Phase::ChiralDamping, Phase::TravelingWave, Phase::Uniform, Phase::Undetermined]
        .into_iter()
        .map(|p| (p, count(p)))
        .collect();
    let summary = tally
        .iter()
        .filter(|t| t.1 > 0)
        .map(|(p, c)| format!("{p}:{c}"))
        .collect::<Vec<_>>()
        .join(" ");
    let (winner, votes) = tally.iter().copied().max_by_key(|t| t.1).unwrap();
    let mut out = labels.into_iter().find(|l| l.phase == winner).unwrap();
    if 2 * votes <= n {
        out.phase = Phase::Undetermined;
    }
    out.note = Some(match out.note {
        Some(note) => format!("votes {summary}; {note}"),
        None => format!("votes {summary}"),
    });
    out
}
