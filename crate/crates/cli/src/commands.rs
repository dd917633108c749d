use std::path::{Path, PathBuf};
use std::time::Instant;

use chiralwave_core::analysis::{self, ColumnRecords, SweepConfig};
use chiralwave_core::goldstone::{self, PeriodicBackground};
use chiralwave_core::io::csv;
use chiralwave_core::io::{self, Heatmap, RunConfig, RunMetadata};
use chiralwave_core::meanfield::{self, step_count};
use chiralwave_core::stability::{self, StencilVariant, DEFAULT_DENSE_CAP};
use chiralwave_core::twa::{column_observables, EnsembleState, TwaStepper};
use chiralwave_core::{ComplexField, Error, LatticeGeom, Result};

use crate::{Command, GoldstoneMode, Method, SCRATCH_ENV};

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Meanfield {
            config,
            t_end,
            dt,
            sample_every,
            out,
            checkpoint,
        } => {
            let mut cfg = io::read_config(&config)?;
            set(&mut cfg.engine.t_end, t_end);
            set(&mut cfg.engine.dt, dt);
            set(&mut cfg.engine.record_every, sample_every);
            cfg.validate()?;
            meanfield_cmd(&cfg, &output(out, "meanfield.csv"), checkpoint.as_deref())
        }
        Command::Twa {
            config,
            trajectories,
            seed,
            t_end,
            dt,
            record_every,
            checkpoint,
            resume,
            out,
            records,
        } => {
            let mut cfg = io::read_config(&config)?;
            set(&mut cfg.engine.trajectories, trajectories);
            if seed.is_some() {
                cfg.engine.seed = seed;
            }
            set(&mut cfg.engine.t_end, t_end);
            set(&mut cfg.engine.dt, dt);
            set(&mut cfg.engine.record_every, record_every);
            cfg.validate()?;
            twa_cmd(&cfg, &output(out, "twa.csv"), checkpoint.as_deref(), resume.as_deref(), records.as_deref())
        }
        Command::Spectrum {
            config,
            bc,
            variant,
            method,
            out,
        } => {
            let mut cfg = io::read_config(&config)?;
            if let Some(b) = bc {
                cfg.lattice.bc_x = b.into();
            }
            if let Some(v) = variant {
                cfg.analysis.stencil = v.into();
            }
            cfg.validate()?;
            spectrum_cmd(&cfg, method, &output(out, "spectrum.csv"))
        }
        Command::Sweep {
            config,
            engine,
            k1_range,
            kx_range,
            out,
            heatmap,
        } => {
            let mut cfg = io::read_config(&config)?;
            if let Some(e) = engine {
                cfg.engine.kind = e.into();
            }
            if let Some(r) = k1_range {
                cfg.analysis.k1_range = Some(parse_range("k1-range", &r)?);
            }
            if let Some(r) = kx_range {
                cfg.analysis.kx_range = Some(parse_range("kx-range", &r)?);
            }
            if heatmap.is_some() {
                cfg.output.heatmap = heatmap;
            }
            cfg.validate()?;
            sweep_cmd(&cfg, &output(out, "sweep.csv"))
        }
        Command::Autocorr {
            input,
            t_start,
            tau_max,
            out,
        } => autocorr_cmd(&input, t_start, tau_max, &output(out, "autocorr.csv")),
        Command::Goldstone {
            background,
            mode,
            transient,
            substeps,
            out,
        } => goldstone_cmd(&background, mode, transient, substeps, &output(out, "goldstone.csv")),
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn output(explicit: Option<PathBuf>, default_name: &str) -> PathBuf {
    explicit.unwrap_or_else(|| {
        let dir = std::env::var_os(SCRATCH_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("."));
        dir.join(default_name)
    })
}

fn parse_range(key: &str, text: &str) -> Result<[f64; 3]> {
    let parts: Vec<&str> = text.split(':').collect();
    let nums: Option<Vec<f64>> = parts.iter().map(|p| p.trim().parse().ok()).collect();
    match nums.as_deref() {
        Some(&[start, stop, step]) => Ok([start, stop, step]),
        Some(&[value]) => Ok([value, value, 1.0]),
        _ => Err(Error::Config(format!("--{key}: expected start:stop:step, got {text:?}"))),
    }
}

fn finish(meta: &mut RunMetadata, started: Instant, cfg: Option<&RunConfig>, artifact: &Path) -> Result<()> {
    meta.wall_time_seconds = started.elapsed().as_secs_f64();
    if cfg.is_none_or(|c| c.output.metadata) {
        meta.write_beside(artifact)?;
    }
    Ok(())
}

fn meanfield_cmd(cfg: &RunConfig, out: &Path, checkpoint: Option<&Path>) -> Result<()> {
    let started = Instant::now();
    let geom = cfg.geom()?;
    let params = cfg.params()?;
    let e = &cfg.engine;
    let field0 = ComplexField::from_vec(cfg.initial_profile(&geom));
    let mut times = Vec::new();
    let mut profiles = Vec::new();
    let last = meanfield::integrate_observed(&field0, &params, &geom, e.t_end, e.dt, e.record_every, |t, f| {
        times.push(t);
        profiles.push(chiralwave_core::column_average(f, &geom));
    })?;
    csv::write_text(out, &csv::profiles_csv(&times, &profiles))?;
    let mut meta = RunMetadata::new("meanfield", Some(cfg));
    let label = meanfield::classify_profiles(&profiles, e.dt * e.record_every as f64, geom.bc()[0], &cfg.thresholds());
    meta.note("phase", label.phase);
    meta.note("late_amplitude", label.late_amplitude);
    if let Some(t) = label.period {
        meta.note("period", t);
    }
    if let Some(n) = &label.note {
        meta.note("classification", n);
    }
    if let Some(path) = checkpoint {
        let steps = step_count(e.t_end, e.dt);
        let t = times.last().copied().unwrap_or(0.0).max(steps as f64 * e.dt);
        let ens = EnsembleState::from_parts(vec![last], vec![None], t, steps, cfg.seed())?;
        io::write_checkpoint(path, &geom, &params, &ens)?;
        meta.note("checkpoint", path.display());
    }
    finish(&mut meta, started, Some(cfg), out)
}

fn twa_cmd(cfg: &RunConfig, out: &Path, checkpoint: Option<&Path>, resume: Option<&Path>, records_out: Option<&Path>) -> Result<()> {
    let started = Instant::now();
    let geom = cfg.geom()?;
    let params = cfg.params()?;
    let e = &cfg.engine;
    let mut ens = match resume {
        Some(path) => {
            let ck = io::read_checkpoint_for(path, &geom)?;
            if ck.params != params {
                return Err(Error::Config(format!("checkpoint {} was written with different model parameters", path.display())));
            }
            if ck.ensemble.master_seed() != cfg.seed() {
                return Err(Error::Config(format!(
                    "checkpoint seed {} differs from the configured seed {}",
                    ck.ensemble.master_seed(),
                    cfg.seed()
                )));
            }
            ck.ensemble
        }
        None => EnsembleState::sample(&cfg.initial_profile(&geom), &geom, e.trajectories, cfg.seed())?,
    };
    let stepper = TwaStepper::new(&geom, params, e.dt)?;
    let total = step_count(e.t_end, e.dt);
    let mut rows = vec![(ens.time(), column_observables(&ens, &geom)?)];
    let mut records = records_out.map(|_| ColumnRecords::new(ens.len(), geom.dims()[0]));
    if let Some(r) = records.as_mut() {
        r.push_ensemble(&ens, &geom)?;
    }
    let mut clamp_events = 0;
    while ens.step() < total {
        let chunk = (e.record_every as u64).min(total - ens.step());
        let report = stepper.advance(&mut ens, chunk)?;
        clamp_events += report.clamp_events;
        rows.push((ens.time(), column_observables(&ens, &geom)?));
        if let Some(r) = records.as_mut() {
            r.push_ensemble(&ens, &geom)?;
        }
    }
    csv::write_text(out, &csv::observables_csv(&rows))?;
    let mut meta = RunMetadata::new("twa", Some(cfg));
    meta.note("trajectories", ens.len());
    meta.note("dead_trajectories", ens.len() - ens.live_count());
    meta.note("clamp_events", clamp_events);
    meta.note("final_step", ens.step());
    if let Some(path) = resume {
        meta.note("resumed_from", path.display());
    }
    if let (Some(path), Some(r)) = (records_out, records.as_ref()) {
        csv::write_text(path, &csv::records_csv(r))?;
        meta.write_beside(path)?;
    }
    if let Some(path) = checkpoint {
        io::write_checkpoint(path, &geom, &params, &ens)?;
        meta.note("checkpoint", path.display());
    }
    finish(&mut meta, started, Some(cfg), out)
}

fn spectrum_cmd(cfg: &RunConfig, method: Method, out: &Path) -> Result<()> {
    let started = Instant::now();
    let geom = cfg.geom()?;
    let params = cfg.params()?;
    let variant = cfg.analysis.stencil;
    let spec = match method {
        Method::Numeric => stability::spectrum_numeric(&stability::build_heff_capped(&params, &geom, variant, DEFAULT_DENSE_CAP)?)?,
        Method::Separable => stability::spectrum_separable(&params, &geom, variant)?,
        Method::Analytic => {
            if geom.bc()[0] == chiralwave_core::Boundary::Open && variant != StencilVariant::UniformDiagonal {
                return Err(Error::Config("the closed-form open-chain spectrum exists only for --variant uniform-diagonal".into()));
            }
            stability::spectrum_analytic(&params, &geom, geom.bc()[0])?
        }
    };
    csv::write_text(out, &csv::spectrum_csv(&spec))?;
    let mut meta = RunMetadata::new("spectrum", Some(cfg));
    meta.note("method", format!("{method:?}").to_lowercase());
    meta.note("max_real_part", spec.max_real_part);
    meta.note("critical_gain_bulk", stability::critical_gain(&params));
    finish(&mut meta, started, Some(cfg), out)
}

fn sweep_cmd(cfg: &RunConfig, out: &Path) -> Result<()> {
    let started = Instant::now();
    let geom = cfg.geom()?;
    let params = cfg.params()?;
    let a = &cfg.analysis;
    let range = |r: Option<[f64; 3]>, fixed: f64| match r {
        Some([start, stop, step]) => analysis::grid(start, stop, step),
        None => vec![fixed],
    };
    let mut sc = SweepConfig::new(params, geom, range(a.k1_range, params.gain_k1), range(a.kx_range, params.k_diff[0]));
    let e = &cfg.engine;
    sc.t_end = e.t_end;
    sc.dt = e.dt;
    sc.sample_every = e.record_every;
    sc.initial = cfg.initial_value();
    sc.thresholds = cfg.thresholds();
    sc.trajectories = e.trajectories;
    sc.seed = cfg.seed();
    sc.votes = a.votes;
    let res = analysis::sweep_phase_diagram(&sc, e.kind)?;
    csv::write_text(out, &csv::sweep_csv(&res))?;
    let mut meta = RunMetadata::new("sweep", Some(cfg));
    meta.note("engine", e.kind);
    meta.note("points", res.points.len());
    let undetermined = res.points.iter().filter(|p| p.label.phase == meanfield::Phase::Undetermined).count();
    meta.note("undetermined_points", undetermined);
    for ikx in 0..res.kx_values.len() {
        meta.note(
            &format!("monotone_kx_{}", res.kx_values[ikx]),
            analysis::is_monotone_ordering(&res.column(ikx)),
        );
    }
    if let Some(path) = &cfg.output.heatmap {
        io::render_heatmap(&Heatmap::from_sweep(&res, params.lambda_pair), path)?;
        meta.note("heatmap", path.display());
    }
    finish(&mut meta, started, Some(cfg), out)
}

fn autocorr_cmd(input: &Path, t_start: f64, tau_max: f64, out: &Path) -> Result<()> {
    let started = Instant::now();
    let text = std::fs::read_to_string(input)?;
    let records = csv::parse_records_csv(&text)?;
    let ac = analysis::autocorrelation(&records, t_start, tau_max)?;
    csv::write_text(out, &csv::autocorr_csv(&ac))?;
    let mut meta = RunMetadata::new("autocorr", None);
    meta.note("input", input.display());
    meta.note("t_start", t_start);
    meta.note("tau_max", tau_max);
    meta.note("origin_window", format!("{} {}", ac.origin_window.0, ac.origin_window.1));
    meta.note("trajectories_used", ac.trajectories_used);
    match ac.tau0 {
        Some(t) => meta.note("tau0", t),
        None => meta.note("tau0", "none"),
    }
    if let Some(r2) = ac.fit_r2 {
        meta.note("fit_r2", r2);
    }
    if let Some(d) = &ac.diagnostic {
        meta.note("fit_warning", d);
    }
    finish(&mut meta, started, None, out)
}

fn goldstone_cmd(background: &Path, mode: GoldstoneMode, transient: f64, substeps: usize, out: &Path) -> Result<()> {
    let started = Instant::now();
    let ck = io::read_checkpoint(background)?;
    let (geom, params) = (ck.geom, ck.params);
    let mut meta = RunMetadata::new("goldstone", None);
    meta.note("background", background.display());
    let table = match mode {
        GoldstoneMode::Dispersion => {
            let lx = geom.dims()[0];
            let rows: Vec<Vec<f64>> = (0..lx)
                .map(|m| {
                    let k = 2.0 * std::f64::consts::PI * m as f64 / lx as f64;
                    let z = goldstone::phase_dispersion_uniform(&params, [k, 0.0, 0.0], true);
                    vec![k, z.re, z.im]
                })
                .collect();
            csv::table_csv(&["k", "re_rate", "im_rate"], &rows)
        }
        GoldstoneMode::Residual | GoldstoneMode::Spectrum => {
            let bg = periodic_background(&geom, &params, &ck.ensemble.trajectories()[0], transient, substeps)?;
            meta.note("period", bg.period);
            meta.note("closure", bg.closure);
            if mode == GoldstoneMode::Residual {
                let cal = goldstone::calibrated_residual(&bg)?;
                let fm = goldstone::goldstone_multiplier(&bg)?;
                let header = ["residual", "refined_residual", "floor", "multiplier_re", "multiplier_im", "overlap", "next_modulus"];
                let row = vec![cal.residual, cal.refined, cal.floor, fm.multiplier.re, fm.multiplier.im, fm.overlap, fm.next_modulus];
                csv::table_csv(&header, &[row])
            } else {
                let op = goldstone::phase_operator_averaged(&bg)?;
                meta.note("singular_pairs", op.singular_pairs);
                meta.note("averaging", "rate-weighted projection over one period");
                let rows: Vec<Vec<f64>> = goldstone::phase_operator_spectrum(&op.matrix)?.iter().map(|z| vec![z.re, z.im]).collect();
                csv::table_csv(&["re_rate", "im_rate"], &rows)
            }
        }
    };
    csv::write_text(out, &table)?;
    finish(&mut meta, started, None, out)
}

/// Relaxes onto the limit cycle, measures the period at the middle site and stores one period.
fn periodic_background(geom: &LatticeGeom, params: &chiralwave_core::ModelParams, start: &ComplexField, transient: f64, substeps: usize) -> Result<PeriodicBackground> {
    let dt = 1e-3;
    let traj = meanfield::integrate(start, params, geom, transient, dt, 5)?;
    let site = geom.index([geom.dims()[0] / 2, 0, 0]);
    let window = (transient / 2.0).min(100.0);
    let period = meanfield::detect_period(&traj, site, window)?
        .ok_or_else(|| Error::OutsideRegime("background is not periodic (no traveling wave detected)".into()))?;
    PeriodicBackground::from_orbit(traj.last(), *params, geom.clone(), period, substeps)
}
