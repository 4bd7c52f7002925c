use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use mdpcg::game::JointDistribution;
use mdpcg::mdp::{Dims, StageTensor};
use mdpcg::rollout::RolloutReport;
use mdpcg::solver::ConvergenceTrace;

pub const TRACE_FILE: &str = "trace.csv";
pub const ROLLOUT_FILE: &str = "rollout.csv";
pub const COLLISIONS_FILE: &str = "collisions.csv";

/// 17 significant digits, enough for an exact `f64` round trip.
pub fn real(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn distribution_path(dir: &Path, player: usize) -> PathBuf {
    dir.join(format!("x_player{player}.csv"))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(file))
}

pub fn write_distribution(path: &Path, x: &StageTensor<f64>) -> Result<()> {
    let dims = x.dims();
    let mut w = create(path)?;
    writeln!(w, "t,s,a,mass")?;
    for t in 0..dims.stages() {
        for s in 0..dims.states {
            for (a, m) in x.row(t, s).iter().enumerate() {
                writeln!(w, "{t},{s},{a},{}", real(*m))?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn reader(path: &Path) -> Result<csv::Reader<File>> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .with_context(|| format!("opening {}", path.display()))
}

fn expect_header(rdr: &mut csv::Reader<File>, path: &Path, want: &[&str]) -> Result<()> {
    let header = rdr.headers().with_context(|| format!("reading header of {}", path.display()))?;
    let got: Vec<&str> = header.iter().collect();
    ensure!(
        got.len() >= want.len() && got[..want.len()] == *want,
        "{}: expected columns {:?}, got {:?}",
        path.display(),
        want,
        got
    );
    Ok(())
}

/// Reads one player's distribution; every `(t, s, a)` row must be present in
/// the order `write_distribution` emits them.
pub fn read_distribution(path: &Path, dims: Dims) -> Result<StageTensor<f64>> {
    let mut rdr = reader(path)?;
    expect_header(&mut rdr, path, &["t", "s", "a", "mass"])?;
    let mut data = Vec::with_capacity(dims.len());
    for (idx, rec) in rdr.records().enumerate() {
        let rec = rec.with_context(|| format!("{}: row {}", path.display(), idx + 1))?;
        ensure!(idx < dims.len(), "{}: more than {} rows", path.display(), dims.len());
        ensure!(rec.len() == 4, "{}: row {} has {} fields", path.display(), idx + 1, rec.len());
        let (t, s, a) = dims.coords(idx);
        let coords: Vec<usize> = (0..3)
            .map(|j| rec[j].trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .with_context(|| format!("{}: row {} coordinates", path.display(), idx + 1))?;
        ensure!(
            coords == [t, s, a],
            "{}: row {} is ({}, {}, {}), expected ({t}, {s}, {a})",
            path.display(),
            idx + 1,
            coords[0],
            coords[1],
            coords[2]
        );
        let m: f64 = rec[3]
            .trim()
            .parse()
            .with_context(|| format!("{}: row {} mass", path.display(), idx + 1))?;
        ensure!(m.is_finite(), "{}: row {} mass is not finite", path.display(), idx + 1);
        data.push(m);
    }
    if data.len() != dims.len() {
        bail!("{}: truncated, {} of {} rows", path.display(), data.len(), dims.len());
    }
    Ok(StageTensor::from_vec(dims, data)?)
}

pub fn read_joint(dir: &Path, players: usize, dims: Dims) -> Result<JointDistribution<f64>> {
    let xs = (0..players)
        .map(|i| read_distribution(&distribution_path(dir, i), dims))
        .collect::<Result<Vec<_>>>()?;
    Ok(JointDistribution::new(xs)?)
}

pub fn write_trace(path: &Path, trace: &ConvergenceTrace<f64>, players: usize) -> Result<()> {
    let mut w = create(path)?;
    write!(w, "k,potential,fw_gap")?;
    for i in 0..players {
        write!(w, ",movement_{i}")?;
    }
    for i in 0..players {
        write!(w, ",norm_{i}")?;
    }
    writeln!(w)?;
    for r in &trace.records {
        write!(w, "{},{},{}", r.k, real(r.potential), real(r.fw_gap))?;
        for v in r.movement.iter().chain(&r.norms) {
            write!(w, ",{}", real(*v))?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub k: usize,
    pub potential: f64,
    pub fw_gap: f64,
    pub movement: Vec<f64>,
    pub norms: Vec<f64>,
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRow>> {
    let mut rdr = reader(path)?;
    expect_header(&mut rdr, path, &["k", "potential", "fw_gap"])?;
    let width = rdr.headers()?.len();
    ensure!((width - 3) % 2 == 0, "{}: movement and norm columns must pair up", path.display());
    let players = (width - 3) / 2;
    let mut rows = Vec::new();
    for (idx, rec) in rdr.records().enumerate() {
        let rec = rec.with_context(|| format!("{}: row {}", path.display(), idx + 1))?;
        let num = |j: usize| -> Result<f64> {
            rec[j].trim().parse().with_context(|| format!("{}: row {} column {}", path.display(), idx + 1, j + 1))
        };
        let vals = (3..width).map(num).collect::<Result<Vec<_>>>()?;
        rows.push(TraceRow {
            k: rec[0].trim().parse().with_context(|| format!("{}: row {} k", path.display(), idx + 1))?,
            potential: num(1)?,
            fw_gap: num(2)?,
            movement: vals[..players].to_vec(),
            norms: vals[players..].to_vec(),
        });
    }
    Ok(rows)
}

pub fn write_rollout(dir: &Path, report: Option<&RolloutReport>, alpha: &[f64], horizon_stages: usize) -> Result<()> {
    let players = alpha.len();
    let mut w = create(&dir.join(ROLLOUT_FILE))?;
    writeln!(w, "player,alpha,trials,mean_collisions,mean_wait,worst_wait,completed,incomplete")?;
    let mut c = create(&dir.join(COLLISIONS_FILE))?;
    write!(c, "t")?;
    for i in 0..players {
        write!(c, ",player_{i}")?;
    }
    writeln!(c)?;
    if let Some(r) = report {
        for i in 0..players {
            let mean_wait = r.mean_wait[i].map(real).unwrap_or_default();
            let worst = r.worst_wait[i].map(|v| v.to_string()).unwrap_or_default();
            writeln!(
                w,
                "{i},{},{},{},{mean_wait},{worst},{},{}",
                real(alpha[i]),
                r.trials,
                real(r.mean_collisions[i]),
                r.completed[i],
                r.incomplete[i]
            )?;
        }
        for t in 0..horizon_stages {
            write!(c, "{t}")?;
            for series in &r.collisions_per_t {
                write!(c, ",{}", real(series[t]))?;
            }
            writeln!(c)?;
        }
    }
    w.flush()?;
    c.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutRow {
    pub player: usize,
    pub mean_collisions: f64,
    pub mean_wait: Option<f64>,
    pub worst_wait: Option<usize>,
}

pub fn read_rollout(path: &Path) -> Result<Vec<RolloutRow>> {
    let mut rdr = reader(path)?;
    expect_header(&mut rdr, path, &["player", "alpha", "trials", "mean_collisions", "mean_wait", "worst_wait"])?;
    let mut rows = Vec::new();
    for (idx, rec) in rdr.records().enumerate() {
        let rec = rec.with_context(|| format!("{}: row {}", path.display(), idx + 1))?;
        let ctx = || format!("{}: row {}", path.display(), idx + 1);
        let opt = |v: &str| -> Result<Option<f64>> {
            let v = v.trim();
            Ok(if v.is_empty() { None } else { Some(v.parse().with_context(ctx)?) })
        };
        rows.push(RolloutRow {
            player: rec[0].trim().parse().with_context(ctx)?,
            mean_collisions: rec[3].trim().parse().with_context(ctx)?,
            mean_wait: opt(&rec[4])?,
            worst_wait: opt(&rec[5])?.map(|v| v as usize),
        });
    }
    Ok(rows)
}

/// `[player][t]` collision series.
pub fn read_collisions(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut rdr = reader(path)?;
    expect_header(&mut rdr, path, &["t"])?;
    let players = rdr.headers()?.len() - 1;
    let mut series = vec![Vec::new(); players];
    for (idx, rec) in rdr.records().enumerate() {
        let rec = rec.with_context(|| format!("{}: row {}", path.display(), idx + 1))?;
        for (i, s) in series.iter_mut().enumerate() {
            s.push(rec[i + 1].trim().parse().with_context(|| format!("{}: row {}", path.display(), idx + 1))?);
        }
    }
    Ok(series)
}
