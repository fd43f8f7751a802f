//! Subcommand bodies. Each returns whether every requested set was nonempty.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context};
use log::{info, warn};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use stochreach::geometry::{affine_map, VPolytope};
use stochreach::montecarlo::{validate_vertices, ValidationReport};
use stochreach::reachalgo::io::{read_reach_json, write_boundary_csv, write_dp_csv, write_json, write_reach_json, write_vertices_csv, InterpolationJson};
use stochreach::reachalgo::{compute_reach_set, dp_level_set, dp_values, interpolate_sets, ReachSetResult};

use crate::config::Prepared;

pub enum Outcome {
    Done,
    /// At least one set came out empty; certificates were written.
    Empty,
}

pub fn label(x: f64) -> String {
    format!("{x}")
}

fn reach_path(dir: &Path, alpha: f64) -> PathBuf {
    dir.join(format!("reach_{}.json", label(alpha)))
}

/// Wall-clock times live here so the result files stay reproducible.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct RunLog {
    pub entries: Vec<LogEntry>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LogEntry {
    pub command: String,
    pub label: String,
    pub seconds: BTreeMap<String, f64>,
}

impl RunLog {
    fn path(dir: &Path) -> PathBuf {
        dir.join("run_log.json")
    }

    pub fn load(dir: &Path) -> anyhow::Result<Self> {
        let p = Self::path(dir);
        if !p.exists() {
            return Ok(Self::default());
        }
        let text = std::fs::read_to_string(&p)?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))
    }

    /// Replaces an earlier entry with the same command and label.
    fn record(dir: &Path, command: &str, label: String, seconds: BTreeMap<String, f64>) -> anyhow::Result<()> {
        let mut log = Self::load(dir)?;
        log.entries.retain(|e| !(e.command == command && e.label == label));
        log.entries.push(LogEntry {
            command: command.into(),
            label,
            seconds,
        });
        write_json(&log, &Self::path(dir))?;
        Ok(())
    }
}

fn ensure_dir(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// Projects onto the plot plane when the state has more than two coordinates.
fn plot_polytope(poly: &VPolytope, dims: (usize, usize)) -> anyhow::Result<VPolytope> {
    let n = poly.dim();
    if n <= 2 {
        return Ok(poly.clone());
    }
    let mut m = DMatrix::zeros(2, n);
    m[(0, dims.0)] = 1.0;
    m[(1, dims.1)] = 1.0;
    Ok(affine_map(poly, &m, &DVector::zeros(2))?)
}

pub fn compute(p: &Prepared, jobs: usize) -> anyhow::Result<Outcome> {
    ensure_dir(&p.output_dir)?;
    let mut outcome = Outcome::Done;
    for &alpha in &p.alphas {
        let opts = p.reach_options(alpha, jobs);
        info!("computing the {alpha}-level set with {} directions", p.directions.len());
        let r = compute_reach_set(&p.problem, &p.directions, &opts)?;
        let tag = label(alpha);
        write_reach_json(&r, &reach_path(&p.output_dir, alpha))?;
        write_vertices_csv(&r, &p.output_dir.join(format!("vertices_{tag}.csv")))?;
        match (&r.polytope, &r.empty) {
            (Some(poly), _) => {
                let shown = plot_polytope(poly, p.plot_dims())?;
                write_boundary_csv(&shown, &p.output_dir.join(format!("boundary_{tag}.csv")))?;
                println!("alpha {tag}: {} vertices", poly.len());
            }
            (None, cert) => {
                if let Some(c) = cert {
                    write_json(c, &p.output_dir.join(format!("empty_{tag}.json")))?;
                    println!("alpha {tag}: empty ({})", c.message);
                } else {
                    println!("alpha {tag}: empty");
                }
                outcome = Outcome::Empty;
            }
        }
        let failed = r.boundary_points.iter().filter(|b| !b.is_certified()).count();
        if failed > 0 {
            warn!("{failed} of {} directions did not yield a certified point", r.boundary_points.len());
        }
        let seconds = BTreeMap::from([
            ("anchor".to_string(), r.timings.anchor_s),
            ("directions".to_string(), r.timings.directions_s),
            ("total".to_string(), r.timings.total_s),
        ]);
        RunLog::record(&p.output_dir, "compute", tag, seconds)?;
    }
    Ok(outcome)
}

fn load_set(p: &Prepared, alpha: f64) -> anyhow::Result<ReachSetResult> {
    let path = reach_path(&p.output_dir, alpha);
    if !path.exists() {
        bail!(stochreach::Error::InvalidArgument(format!(
            "{} is missing; run `compute` first",
            path.display()
        )));
    }
    Ok(read_reach_json(&path)?)
}

/// The closest configured thresholds below and above `beta`.
fn bracket(alphas: &[f64], beta: f64) -> Option<(f64, f64)> {
    let lo = alphas.iter().copied().filter(|a| *a <= beta).fold(None, |m: Option<f64>, a| Some(m.map_or(a, |m| m.max(a))));
    let hi = alphas.iter().copied().filter(|a| *a >= beta).fold(None, |m: Option<f64>, a| Some(m.map_or(a, |m| m.min(a))));
    match (lo, hi) {
        (Some(l), Some(h)) if l < h => Some((l, h)),
        _ => None,
    }
}

pub fn interpolate(p: &Prepared, beta: f64, alpha1: Option<f64>, alpha2: Option<f64>) -> anyhow::Result<Outcome> {
    let (a1, a2) = match (alpha1, alpha2) {
        (Some(a), Some(b)) => (a, b),
        (None, None) => bracket(&p.alphas, beta).ok_or_else(|| {
            stochreach::Error::InvalidArgument(format!("no pair of configured thresholds brackets beta = {beta}"))
        })?,
        _ => bail!(stochreach::Error::InvalidArgument("give both --alpha1 and --alpha2 or neither".into())),
    };
    let (s1, s2) = (load_set(p, a1)?, load_set(p, a2)?);
    let start = Instant::now();
    let it = interpolate_sets(&s1, &s2, beta)?;
    let elapsed = start.elapsed().as_secs_f64();
    let tag = label(beta);
    write_json(&InterpolationJson::from(&it), &p.output_dir.join(format!("interp_{tag}.json")))?;
    let shown = plot_polytope(&it.polytope, p.plot_dims())?;
    write_boundary_csv(&shown, &p.output_dir.join(format!("interp_boundary_{tag}.csv")))?;
    println!("gamma = {:.7}", it.gamma);
    println!("beta {tag}: {} vertices from alpha {} and {}", it.polytope.len(), label(a1), label(a2));
    RunLog::record(&p.output_dir, "interpolate", tag, BTreeMap::from([("total".to_string(), elapsed)]))?;
    Ok(Outcome::Done)
}

#[derive(Serialize)]
struct LevelSetJson<'a> {
    alpha: f64,
    grid_points: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    interval: Option<(f64, f64)>,
    contour: &'a [Vec<[f64; 2]>],
}

pub fn dp(p: &Prepared) -> anyhow::Result<Outcome> {
    let Some(cfg) = &p.config.dp else {
        bail!(stochreach::Error::InvalidArgument("config has no `dp` section".into()));
    };
    ensure_dir(&p.output_dir)?;
    let start = Instant::now();
    let table = dp_values(&p.system, &p.tube, cfg.state_spacing, cfg.input_spacing)?;
    let elapsed = start.elapsed().as_secs_f64();
    write_dp_csv(&table, &p.output_dir.join("dp_table.csv"))?;
    let mut outcome = Outcome::Done;
    for &alpha in &p.alphas {
        let level = dp_level_set(&table, p.tube.set(0), alpha)?;
        let tag = label(alpha);
        write_json(
            &LevelSetJson {
                alpha,
                grid_points: level.count(),
                interval: level.interval,
                contour: &level.contour,
            },
            &p.output_dir.join(format!("dp_level_{tag}.json")),
        )?;
        let mut w = BufWriter::new(File::create(p.output_dir.join(format!("dp_contour_{tag}.csv")))?);
        writeln!(w, "segment,x0,x1")?;
        for (i, line) in level.contour.iter().enumerate() {
            for pt in line {
                writeln!(w, "{i},{:.12e},{:.12e}", pt[0], pt[1])?;
            }
        }
        w.flush()?;
        println!("alpha {tag}: {} grid points in the DP level set", level.count());
        if level.count() == 0 {
            outcome = Outcome::Empty;
        }
    }
    RunLog::record(&p.output_dir, "dp", "values".into(), BTreeMap::from([("total".to_string(), elapsed)]))?;
    Ok(outcome)
}

pub fn validate(p: &Prepared) -> anyhow::Result<Outcome> {
    let v = &p.config.validation;
    let mut outcome = Outcome::Done;
    for &alpha in &p.alphas {
        let r = load_set(p, alpha)?;
        let tag = label(alpha);
        if r.is_empty() {
            println!("alpha {tag}: empty set, nothing to validate");
            outcome = Outcome::Empty;
            continue;
        }
        let start = Instant::now();
        let rep = validate_vertices(&r, &p.system, &p.tube, v.trajectories, v.seed)?;
        let elapsed = start.elapsed().as_secs_f64();
        rep.write_csv(&p.output_dir.join(format!("validation_{tag}.csv")))?;
        write_json(&rep, &p.output_dir.join(format!("validation_{tag}.json")))?;
        let below = rep
            .records
            .iter()
            .filter(|r| r.empirical_probability < r.alpha - 3.0 * r.binomial_std)
            .count();
        println!(
            "alpha {tag}: mean error {:.4} (pooled std {:.1e}), {below} of {} vertices below alpha - 3 std",
            rep.mean_error,
            rep.pooled_std,
            rep.records.len()
        );
        RunLog::record(&p.output_dir, "validate", tag, BTreeMap::from([("total".to_string(), elapsed)]))?;
    }
    Ok(outcome)
}

#[derive(Serialize)]
struct SetSummary {
    alpha: f64,
    empty: bool,
    vertices: usize,
    anchor_lower_bound: Option<f64>,
    min_vertex_bound: Option<f64>,
    certified_directions: usize,
    directions: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    validation_mean_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    validation_pooled_std: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    dp_grid_points: Option<usize>,
}

#[derive(Serialize)]
struct InterpSummary {
    beta: f64,
    gamma: f64,
    alpha1: f64,
    alpha2: f64,
    vertices: usize,
}

#[derive(Serialize)]
struct Summary {
    sets: Vec<SetSummary>,
    interpolations: Vec<InterpSummary>,
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> anyhow::Result<Option<T>> {
    if !path.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(path)?;
    Ok(Some(serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?))
}

pub fn report(p: &Prepared) -> anyhow::Result<Outcome> {
    let dir = &p.output_dir;
    let mut sets = Vec::new();
    for &alpha in &p.alphas {
        let tag = label(alpha);
        let r = load_set(p, alpha)?;
        let val: Option<ValidationReport> = read_json(&dir.join(format!("validation_{tag}.json")))?;
        let dp: Option<serde_json::Value> = read_json(&dir.join(format!("dp_level_{tag}.json")))?;
        sets.push(SetSummary {
            alpha,
            empty: r.is_empty(),
            vertices: r.polytope.as_ref().map_or(0, |q| q.len()),
            anchor_lower_bound: r.anchor().map(|a| a.lower_bound),
            min_vertex_bound: r.vertex_bounds.iter().copied().reduce(f64::min),
            certified_directions: r.boundary_points.iter().filter(|b| b.is_certified()).count(),
            directions: r.boundary_points.len(),
            validation_mean_error: val.as_ref().map(|v| v.mean_error),
            validation_pooled_std: val.as_ref().map(|v| v.pooled_std),
            dp_grid_points: dp.and_then(|v| v["grid_points"].as_u64()).map(|c| c as usize),
        });
    }
    let mut names: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("interp_") && n.ends_with(".json"))
        })
        .collect();
    names.sort();
    let mut interpolations = Vec::new();
    for path in names {
        if let Some(j) = read_json::<InterpolationJson>(&path)? {
            interpolations.push(InterpSummary {
                beta: j.beta,
                gamma: j.gamma,
                alpha1: j.alpha1,
                alpha2: j.alpha2,
                vertices: j.vertices.len(),
            });
        }
    }
    let summary = Summary { sets, interpolations };
    write_json(&summary, &dir.join("summary.json"))?;

    let log = RunLog::load(dir)?;
    let mut md = String::from("| level | vertices | anchor bound | validation mean error |\n|---|---|---|---|\n");
    for s in &summary.sets {
        md += &format!(
            "| {} | {} | {} | {} |\n",
            label(s.alpha),
            if s.empty { "empty".to_string() } else { s.vertices.to_string() },
            s.anchor_lower_bound.map_or("-".into(), |b| format!("{b:.4}")),
            s.validation_mean_error.map_or("-".into(), |e| format!("{e:.4}")),
        );
    }
    for it in &summary.interpolations {
        md += &format!("| {} (γ = {:.5}) | {} | - | - |\n", label(it.beta), it.gamma, it.vertices);
    }
    md += "\n| step | label | anchor (s) | directions (s) | total (s) |\n|---|---|---|---|---|\n";
    for e in &log.entries {
        let cell = |k: &str| e.seconds.get(k).map_or("-".to_string(), |s| format!("{s:.4}"));
        md += &format!("| {} | {} | {} | {} | {} |\n", e.command, e.label, cell("anchor"), cell("directions"), cell("total"));
    }
    std::fs::write(dir.join("report.md"), &md)?;
    print!("{md}");
    Ok(Outcome::Done)
}
