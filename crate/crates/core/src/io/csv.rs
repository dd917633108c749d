//! CSV tables. Floats use Rust's shortest round-trip formatting, so identical values give
//! identical bytes. Per-x rows hold y,z-averaged quantities.

use std::fmt::Write as _;
use std::path::Path;

use num_complex::Complex64;

use crate::analysis::{AutocorrResult, ColumnRecords, SweepResult};
use crate::error::{Error, Result};
use crate::stability::SpectrumResult;
use crate::twa::Observables;

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Keeps free text from breaking the column structure.
fn quote(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text)?;
    Ok(())
}

/// `t,x,re_a,im_a` per recorded profile.
pub fn profiles_csv(times: &[f64], profiles: &[Vec<Complex64>]) -> String {
    let mut out = String::from("t,x,re_a,im_a\n");
    for (t, prof) in times.iter().zip(profiles) {
        for (x, a) in prof.iter().enumerate() {
            let _ = writeln!(out, "{t},{x},{},{}", a.re, a.im);
        }
    }
    out
}

/// `t,x,re_a,im_a,n,stderr_re_a,stderr_im_a,stderr_n`.
pub fn observables_csv(rows: &[(f64, Observables)]) -> String {
    let mut out = String::from("t,x,re_a,im_a,n,stderr_re_a,stderr_im_a,stderr_n\n");
    for (t, o) in rows {
        for x in 0..o.order.len() {
            let _ = writeln!(
                out,
                "{t},{x},{},{},{},{},{},{}",
                o.order[x].re, o.order[x].im, o.density[x], o.order_stderr_re[x], o.order_stderr_im[x], o.density_stderr[x]
            );
        }
    }
    out
}

/// Per-trajectory y,z-averaged `Re α`: `t,trajectory,x,re_alpha`.
pub fn records_csv(rec: &ColumnRecords) -> String {
    let mut out = String::from("t,trajectory,x,re_alpha\n");
    for (s, t) in rec.times.iter().enumerate() {
        for m in 0..rec.trajectories() {
            for x in 0..rec.lx() {
                let _ = writeln!(out, "{t},{m},{x},{}", rec.value(m, s, x));
            }
        }
    }
    out
}

/// Inverse of [`records_csv`]; rows must come sample by sample, trajectory-major, x fastest.
pub fn parse_records_csv(text: &str) -> Result<ColumnRecords> {
    let bad = |line: usize, why: &str| Error::Config(format!("records line {line}: {why}"));
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "t,trajectory,x,re_alpha" => {}
        _ => return Err(bad(1, "expected header t,trajectory,x,re_alpha")),
    }
    let mut rows: Vec<(f64, usize, usize, f64)> = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return Err(bad(i + 1, "expected 4 columns"));
        }
        let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad(i + 1, "bad number"));
        let idx = |s: &str| s.trim().parse::<usize>().map_err(|_| bad(i + 1, "bad index"));
        rows.push((num(f[0])?, idx(f[1])?, idx(f[2])?, num(f[3])?));
    }
    let m = rows.iter().map(|r| r.1).max().map_or(0, |v| v + 1);
    let lx = rows.iter().map(|r| r.2).max().map_or(0, |v| v + 1);
    if m == 0 || lx == 0 || !rows.len().is_multiple_of(m * lx) {
        return Err(Error::Config("records table is empty or ragged".into()));
    }
    let mut rec = ColumnRecords::new(m, lx);
    for (s, chunk) in rows.chunks(m * lx).enumerate() {
        let t = chunk[0].0;
        let mut block = vec![vec![0.0; lx]; m];
        for (k, &(tt, traj, x, v)) in chunk.iter().enumerate() {
            if tt != t || traj != k / lx || x != k % lx {
                return Err(Error::Config(format!("records sample {s} is out of order")));
            }
            block[traj][x] = v;
        }
        rec.push(t, &block)?;
    }
    Ok(rec)
}

/// `re,im,branch,kx,ky,kz`; wavevector columns stay empty when unknown.
pub fn spectrum_csv(spec: &SpectrumResult) -> String {
    let mut out = String::from("re,im,branch,kx,ky,kz\n");
    for (z, l) in spec.eigenvalues.iter().zip(&spec.labels) {
        let branch = l.branch.map(|b| b.to_string()).unwrap_or_default();
        let k = l.k.map(|k| k.map(|v| v.to_string())).unwrap_or_default();
        let _ = writeln!(out, "{},{},{branch},{},{},{}", z.re, z.im, k[0], k[1], k[2]);
    }
    out
}

/// `kappa1,kx,label,late_amplitude,period,diagnostics`, Kx outer.
pub fn sweep_csv(res: &SweepResult) -> String {
    let mut out = String::from("kappa1,kx,label,late_amplitude,period,diagnostics\n");
    for p in &res.points {
        let l = &p.label;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            p.kappa1,
            p.kx,
            l.phase,
            l.late_amplitude,
            opt(l.period),
            quote(l.note.as_deref().unwrap_or(""))
        );
    }
    out
}

/// `tau,c`.
pub fn autocorr_csv(ac: &AutocorrResult) -> String {
    let mut out = String::from("tau,c\n");
    for (t, c) in ac.tau_grid.iter().zip(&ac.c_values) {
        let _ = writeln!(out, "{t},{c}");
    }
    out
}

/// Generic numeric table.
pub fn table_csv(header: &[&str], rows: &[Vec<f64>]) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for r in rows {
        let cells: Vec<String> = r.iter().map(|v| v.to_string()).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}
