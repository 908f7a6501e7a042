use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use rayon::prelude::*;
use serde_json::json;

use geoverify::baselines::{capped_grid_size, grid_search, match_metric, random_pick, OracleResult};
use geoverify::engine::{run, BudgetConfig, RunSummary, RunTrace, Verdict, TRACE_SCHEMA};
use geoverify::estimator::BoundMode;
use geoverify::fixtures;
use geoverify::geometry::{GrayImage, MatrixMode, TransformParams};
use geoverify::imageio::read_image;
use geoverify::netfwd::NetSpec;
use geoverify::objective::{test_function, test_function_nd, MarginObjective, TransformSpace};
use geoverify::partition::ParamSpace;

use crate::config::{parse_bounds, Settings};

pub const VERIFY_SCHEMA: &str = "# geoverify verify v1";
pub const COMPARE_SCHEMA: &str = "# geoverify compare v1";
pub const SUMMARY_SCHEMA: &str = "geoverify summary v1";

const DEFAULT_OUT: &str = "geoverify-out";

fn budget(s: &Settings) -> Result<BudgetConfig> {
    let d = BudgetConfig::default();
    let bound = match s.get::<f64>("lipschitz")? {
        Some(lipschitz) => BoundMode::Certified { lipschitz },
        None => BoundMode::Estimated,
    };
    let b = BudgetConfig {
        max_iters: s.get_or("max-iters", d.max_iters)?,
        max_queries: s.get_or("max-queries", d.max_queries)?,
        max_depth: s.get_or("depth", d.max_depth)?,
        alpha: s.get_or("alpha", d.alpha)?,
        tau: s.get_or("tau", d.tau)?,
        bound,
    };
    b.validate()?;
    Ok(b)
}

fn out_dir(s: &mut Settings) -> Result<PathBuf> {
    s.set_default("out", DEFAULT_OUT);
    let dir = s.path("out")?;
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    write(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

pub fn optimize(mut s: Settings) -> Result<()> {
    let name = s.require("fn")?.to_string();
    let Some(bounds) = s.raw("bounds").map(parse_bounds).transpose()? else {
        bail!("missing --bounds: give one `lo,hi` per dimension, or one with --dim");
    };
    let dim = match (s.get::<usize>("dim")?, bounds.len()) {
        (Some(d), 1) => d,
        (Some(d), n) if d != n => bail!("--dim {d} disagrees with {n} bounds"),
        (_, n) => n,
    };
    ensure!(dim >= 1, "--dim must be at least 1");
    let bounds = if bounds.len() == 1 { vec![bounds[0]; dim] } else { bounds };
    let f = if test_function(&name)?.dim() == dim {
        test_function(&name)?
    } else {
        test_function_nd(&name, dim)?
    };
    let space = ParamSpace::new(&bounds)?;
    let budget = budget(&s)?;
    let dir = out_dir(&mut s)?;

    let trace = run(&f, &space, &budget)?;
    write(&dir.join("trace.csv"), &trace_file(&s, &trace))?;
    let summary = json!({
        "schema": SUMMARY_SCHEMA,
        "command": "optimize",
        "config": s.to_json(),
        "function": {
            "name": f.name,
            "dim": dim,
            "bounds": bounds,
            "lipschitz": f.lipschitz,
            "min_value": f.min_value,
            "argmin": f.argmin,
        },
        "run": RunSummary::new(&trace),
    });
    write_json(&dir.join("summary.json"), &summary)?;
    println!(
        "{}: l_min {:.6e} at {:?}, l* {:.6e}, {} queries, {} iterations, {:?}",
        f.name,
        trace.l_min(),
        trace.c_min(),
        trace.l_star_min(),
        trace.queries(),
        trace.iterations(),
        trace.termination
    );
    Ok(())
}

/// Schema line, config lines, then the trace table.
fn trace_file(s: &Settings, trace: &RunTrace) -> String {
    let csv = trace.to_csv();
    let body = csv.strip_prefix(TRACE_SCHEMA).map(|r| r.trim_start_matches('\n')).unwrap_or(&csv);
    format!("{TRACE_SCHEMA}\n{}{body}", s.header())
}

struct Dataset {
    net: NetSpec,
    names: Vec<String>,
    images: Vec<GrayImage>,
    labels: Vec<usize>,
    space: TransformSpace,
    mode: MatrixMode,
}

fn image_paths(list: &Path) -> Result<Vec<PathBuf>> {
    if list.is_dir() {
        let mut paths: Vec<PathBuf> = std::fs::read_dir(list)?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()?;
        paths.retain(|p| p.is_file());
        paths.sort();
        return Ok(paths);
    }
    let text = std::fs::read_to_string(list).with_context(|| format!("reading {}", list.display()))?;
    let base = list.parent().unwrap_or(Path::new(""));
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| base.join(l))
        .collect())
}

fn read_labels(path: &Path) -> Result<Vec<usize>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.split_whitespace()
        .map(|t| t.parse().with_context(|| format!("label `{t}` in {}", path.display())))
        .collect()
}

fn transform_space(s: &Settings) -> Result<TransformSpace> {
    let rotation = s.get_or("rotation", 0.0)?;
    let scale = s.get_or("scale", 0.0)?;
    let (th, tv) = match s.reals("translate")?.as_deref() {
        None => (0.0, 0.0),
        Some(&[t]) => (t, t),
        Some(&[a, b]) => (a, b),
        Some(_) => bail!("--translate takes `a,b`"),
    };
    ensure!(scale < 1.0, "--scale must be below 1 so factors stay positive");
    Ok(TransformSpace::symmetric(rotation, scale, th, tv)?)
}

fn matrix_mode(s: &Settings) -> Result<MatrixMode> {
    match s.raw("matrix").unwrap_or("cosine-scaled") {
        "cosine-scaled" => Ok(MatrixMode::CosineScaled),
        "composed" => Ok(MatrixMode::Composed),
        other => bail!("unknown --matrix `{other}` (cosine-scaled, composed)"),
    }
}

fn dataset(s: &Settings) -> Result<Dataset> {
    let net = NetSpec::load(&s.path("weights")?).context("loading weights")?;
    let paths = image_paths(&s.path("images")?)?;
    let labels = read_labels(&s.path("labels")?)?;
    ensure!(
        labels.len() == paths.len(),
        "{} images but {} labels",
        paths.len(),
        labels.len()
    );
    let images = paths
        .iter()
        .map(|p| read_image(p).with_context(|| format!("reading {}", p.display())))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        net,
        names: paths.iter().map(|p| p.display().to_string()).collect(),
        images,
        labels,
        space: transform_space(s)?,
        mode: matrix_mode(s)?,
    })
}

impl Dataset {
    fn objective(&self, i: usize) -> MarginObjective<'_, NetSpec> {
        MarginObjective::new(&self.net, self.images[i].clone(), self.labels[i], self.space.clone()).with_mode(self.mode)
    }
}

/// One example searched by the optimiser.
struct Outcome {
    clean_margin: f64,
    verdict: String,
    l_min: f64,
    l_star_min: f64,
    witness: TransformParams,
    queries: usize,
    iterations: usize,
    termination: String,
    wall_ms: f64,
}

impl Outcome {
    fn verified(&self) -> bool {
        self.verdict == "verified-estimate"
    }
}

fn search(data: &Dataset, i: usize, budget: &BudgetConfig, skip: bool) -> Result<Outcome> {
    let start = Instant::now();
    let obj = data.objective(i);
    let clean = obj.clean_margin()?;
    let base = data.space.base();
    let elapsed = |t: Instant| t.elapsed().as_secs_f64() * 1e3;
    if skip && clean <= 0.0 {
        return Ok(Outcome {
            clean_margin: clean,
            verdict: "clean-error".into(),
            l_min: clean,
            l_star_min: clean,
            witness: base,
            queries: 1,
            iterations: 0,
            termination: "skipped".into(),
            wall_ms: elapsed(start),
        });
    }
    let Some(space) = data.space.param_space() else {
        // Nothing to search; the clean margin decides.
        let verdict = if clean < 0.0 {
            "falsified"
        } else if clean > 0.0 {
            "verified-estimate"
        } else {
            "undecided"
        };
        return Ok(Outcome {
            clean_margin: clean,
            verdict: verdict.into(),
            l_min: clean,
            l_star_min: clean,
            witness: base,
            queries: 1,
            iterations: 0,
            termination: "exhausted".into(),
            wall_ms: elapsed(start),
        });
    };
    let trace = run(&obj, space, budget)?;
    Ok(Outcome {
        clean_margin: clean,
        verdict: Verdict::from_trace(&trace).label().into(),
        l_min: trace.l_min(),
        l_star_min: trace.l_star_min(),
        witness: data.space.to_params(trace.c_min())?,
        queries: trace.queries(),
        iterations: trace.iterations(),
        termination: serde_json::to_value(trace.termination)?.as_str().unwrap_or_default().to_string(),
        wall_ms: elapsed(start),
    })
}

fn search_all(data: &Dataset, budget: &BudgetConfig, skip: bool) -> Result<Vec<Outcome>> {
    (0..data.images.len())
        .into_par_iter()
        .map(|i| search(data, i, budget, skip).with_context(|| format!("example {i} ({})", data.names[i])))
        .collect()
}

fn versioned(schema: &str, s: &Settings) -> String {
    format!("{schema}\n{}", s.header())
}

pub fn verify(mut s: Settings) -> Result<()> {
    let budget = budget(&s)?;
    let data = dataset(&s)?;
    let skip = s.flag("skip-misclassified")?;
    let dir = out_dir(&mut s)?;
    let outcomes = search_all(&data, &budget, skip)?;

    let mut csv = versioned(VERIFY_SCHEMA, &s);
    csv.push_str(
        "index,image,label,clean_margin,verdict,l_min,l_star_min,\
         w_rotation,w_scale,w_t_hor,w_t_vrt,queries,iterations,termination,wall_ms\n",
    );
    for (i, o) in outcomes.iter().enumerate() {
        let w = o.witness;
        writeln!(
            csv,
            "{i},{},{},{:e},{},{:e},{:e},{},{},{},{},{},{},{},{:.3}",
            data.names[i],
            data.labels[i],
            o.clean_margin,
            o.verdict,
            o.l_min,
            o.l_star_min,
            w.rotation,
            w.scale,
            w.t_hor,
            w.t_vrt,
            o.queries,
            o.iterations,
            o.termination,
            o.wall_ms
        )?;
    }
    write(&dir.join("verify.csv"), &csv)?;

    let count = |v: &str| outcomes.iter().filter(|o| o.verdict == v).count();
    let total = outcomes.len();
    let verified = count("verified-estimate");
    let summary = json!({
        "schema": SUMMARY_SCHEMA,
        "command": "verify",
        "config": s.to_json(),
        "examples": total,
        "verified": verified,
        "falsified": count("falsified"),
        "undecided": count("undecided"),
        "clean_errors": count("clean-error"),
        "verified_accuracy": if total == 0 { 0.0 } else { verified as f64 / total as f64 },
        "mean_queries": mean(outcomes.iter().map(|o| o.queries as f64)),
    });
    write_json(&dir.join("summary.json"), &summary)?;
    println!(
        "{verified}/{total} verified, {} falsified, {} undecided, {} clean errors",
        count("falsified"),
        count("undecided"),
        count("clean-error")
    );
    Ok(())
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// An oracle's result on one example; `None` when the example was skipped.
struct OracleRow {
    result: Option<OracleResult>,
    wall_ms: f64,
}

fn oracle(
    data: &Dataset,
    i: usize,
    clean_error: bool,
    f: impl Fn(&MarginObjective<'_, NetSpec>, &ParamSpace) -> geoverify::Result<OracleResult>,
) -> Result<OracleRow> {
    let start = Instant::now();
    let result = match data.space.param_space() {
        Some(space) if !clean_error => Some(f(&data.objective(i), space)?),
        _ => None,
    };
    Ok(OracleRow {
        result,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

struct MethodStats {
    name: &'static str,
    verified: usize,
    queries: f64,
    runtime_ms: f64,
    matches: Option<usize>,
}

pub fn compare(mut s: Settings) -> Result<()> {
    let budget = budget(&s)?;
    let data = dataset(&s)?;
    let skip = s.flag("skip-misclassified")?;
    s.set_default("oracle-grid", 729);
    s.set_default("oracle-grid-cap", 200_000);
    s.set_default("oracle-random", 10_000);
    s.set_default("seed", 0);
    s.set_default("match-tol", 0);
    let grid_max: usize = s.get_or("oracle-grid", 729)?;
    let grid_cap: usize = s.get_or("oracle-grid-cap", 200_000)?;
    let n_random: usize = s.get_or("oracle-random", 10_000)?;
    let seed: u64 = s.get_or("seed", 0)?;
    let tol: f64 = s.get_or("match-tol", 0.0)?;
    ensure!(grid_max >= 2, "--oracle-grid must be at least 2");
    ensure!(n_random >= 1, "--oracle-random must be at least 1");
    let dir = out_dir(&mut s)?;

    let dim = data.space.active().len();
    let per_dim = if dim == 0 { 1 } else { capped_grid_size(dim, grid_max, grid_cap) };
    let geo = search_all(&data, &budget, skip)?;
    let rows = (0..data.images.len())
        .into_par_iter()
        .map(|i| -> Result<(OracleRow, OracleRow)> {
            let clean_error = geo[i].verdict == "clean-error";
            let grid = oracle(&data, i, clean_error, |o, sp| grid_search(o, sp, per_dim))?;
            let random = oracle(&data, i, clean_error, |o, sp| random_pick(o, sp, n_random, seed))?;
            Ok((grid, random))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut detail = versioned(COMPARE_SCHEMA, &s);
    detail.push_str(
        "index,image,label,clean_margin,geo_verdict,geo_l_min,geo_l_star_min,geo_queries,\
         grid_min,grid_queries,random_min,random_queries,geo_match,random_match\n",
    );
    let opt = |r: &OracleRow, f: &dyn Fn(&OracleResult) -> String| r.result.as_ref().map(f).unwrap_or_default();
    for (i, (o, (g, r))) in geo.iter().zip(&rows).enumerate() {
        let grid_min = g.result.as_ref().map(|x| x.min_value);
        let matched = |v: Option<f64>| match (v, grid_min) {
            (Some(v), Some(gm)) => match_metric(v, gm, tol).to_string(),
            _ => String::new(),
        };
        writeln!(
            detail,
            "{i},{},{},{:e},{},{:e},{:e},{},{},{},{},{},{},{}",
            data.names[i],
            data.labels[i],
            o.clean_margin,
            o.verdict,
            o.l_min,
            o.l_star_min,
            o.queries,
            opt(g, &|x| format!("{:e}", x.min_value)),
            opt(g, &|x| x.evaluations.to_string()),
            opt(r, &|x| format!("{:e}", x.min_value)),
            opt(r, &|x| x.evaluations.to_string()),
            if o.verdict == "clean-error" { String::new() } else { matched(Some(o.l_min)) },
            matched(r.result.as_ref().map(|x| x.min_value)),
        )?;
    }
    write(&dir.join("compare_examples.csv"), &detail)?;

    // An oracle verifies an example when its minimum margin stays positive.
    let oracle_stats = |name, pick: &dyn Fn(&(OracleRow, OracleRow)) -> &OracleRow, compare_to_grid: bool| {
        let results: Vec<&OracleRow> = rows.iter().map(pick).collect();
        MethodStats {
            name,
            verified: results.iter().filter(|r| r.result.as_ref().is_some_and(|x| x.min_value > 0.0)).count()
                + geo.iter().zip(&results).filter(|(o, r)| r.result.is_none() && o.verified()).count(),
            queries: mean(results.iter().map(|r| r.result.as_ref().map_or(1.0, |x| x.evaluations as f64))),
            runtime_ms: results.iter().map(|r| r.wall_ms).sum(),
            matches: compare_to_grid.then(|| {
                rows.iter()
                    .filter(|(g, r)| match (&r.result, &g.result) {
                        (Some(r), Some(g)) => match_metric(r.min_value, g.min_value, tol),
                        _ => false,
                    })
                    .count()
            }),
        }
    };
    let searched: Vec<bool> = rows.iter().map(|(g, _)| g.result.is_some()).collect();
    let methods = [
        MethodStats {
            name: "geoverify",
            verified: geo.iter().filter(|o| o.verified()).count(),
            queries: mean(geo.iter().map(|o| o.queries as f64)),
            runtime_ms: geo.iter().map(|o| o.wall_ms).sum(),
            matches: Some(
                geo.iter()
                    .zip(&rows)
                    .filter(|(o, (g, _))| g.result.as_ref().is_some_and(|g| match_metric(o.l_min, g.min_value, tol)))
                    .count(),
            ),
        },
        oracle_stats("random-pick", &|row| &row.1, true),
        oracle_stats("grid-search", &|row| &row.0, false),
    ];

    let total = data.images.len();
    let compared = searched.iter().filter(|&&b| b).count();
    let mut table = versioned(COMPARE_SCHEMA, &s);
    writeln!(table, "# grid points per dimension = {per_dim}")?;
    table.push_str("method,examples,verified,verified_accuracy,mean_queries,runtime_s,match_rate\n");
    if total > 0 {
        for m in &methods {
            let rate = m
                .matches
                .map(|k| if compared == 0 { String::new() } else { format!("{:.4}", k as f64 / compared as f64) })
                .unwrap_or_default();
            writeln!(
                table,
                "{},{total},{},{:.4},{:.1},{:.3},{rate}",
                m.name,
                m.verified,
                m.verified as f64 / total as f64,
                m.queries,
                m.runtime_ms / 1e3,
            )?;
        }
    }
    write(&dir.join("compare.csv"), &table)?;
    print!("{}", table.lines().filter(|l| !l.starts_with('#')).map(|l| format!("{l}\n")).collect::<String>());
    Ok(())
}

pub fn fixture(dir: &Path, count: usize, seed: u64) -> Result<()> {
    let paths = fixtures::write(dir, count, seed)?;
    let config = "\
weights = weights.txt
images = images.txt
labels = labels.txt
depth = 6
alpha = 2
max-iters = 3000
max-queries = 100000
out = results

[rotation]
range = 20
[scale]
range = 0.1
[translate]
range = 1.6, 1.6
";
    write(&dir.join("verify.cfg"), config)?;
    println!(
        "wrote {count} images to {}, weights {}, labels {}, config {}",
        paths.images.display(),
        paths.weights.display(),
        paths.labels.display(),
        dir.join("verify.cfg").display()
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn budget_reads_defaults_and_overrides() {
        let mut s = Settings::default();
        assert_eq!(budget(&s).unwrap(), BudgetConfig::default());
        s.set("alpha", 3);
        s.set("lipschitz", 2.5);
        let b = budget(&s).unwrap();
        assert_eq!(b.alpha, 3);
        assert_eq!(b.bound, BoundMode::Certified { lipschitz: 2.5 });
        s.set("tau", 0);
        assert!(budget(&s).is_err());
    }

    #[test]
    fn translate_accepts_one_or_two_values() {
        let mut s = Settings::default();
        s.set("translate", "1.5");
        assert_eq!(transform_space(&s).unwrap().active().len(), 2);
        s.set("translate", "0,2");
        assert_eq!(transform_space(&s).unwrap().active().len(), 1);
        s.set("translate", "1,2,3");
        assert!(transform_space(&s).is_err());
    }

    #[test]
    fn matrix_names() {
        let mut s = Settings::default();
        assert_eq!(matrix_mode(&s).unwrap(), MatrixMode::CosineScaled);
        s.set("matrix", "composed");
        assert_eq!(matrix_mode(&s).unwrap(), MatrixMode::Composed);
        s.set("matrix", "shear");
        assert!(matrix_mode(&s).is_err());
    }
}
