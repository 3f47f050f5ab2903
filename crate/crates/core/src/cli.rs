//! Command-line front end. `run` does the work and returns the exit code with
//! the text for stdout and stderr, so it can be driven in-process.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::approximant::well_supported_approximant;
use crate::cuntz::{self, check_grid, ComparisonVerdict, Mode};
use crate::error::Error;
use crate::matfield::{sup_distance, Field, MatrixField};
use crate::simplicial::{BarycentricPoint, Complex};
use crate::traces::{self, RcConfig, StageAlgebra, StageBlock, TraceSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_REFUTED: i32 = 2;
pub const EXIT_UNKNOWN: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "cuntzlab", version, about = "Cuntz comparison of positive matrix fields over simplicial complexes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    #[arg(long, default_value_t = 1e-3)]
    pub eps: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 6)]
    pub max_subdivisions: usize,
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
pub enum ModeArg {
    Strict,
    Oracle,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Decide a ≾ b
    Compare {
        a: PathBuf,
        b: PathBuf,
        #[arg(long, value_enum, default_value = "strict")]
        mode: ModeArg,
        #[command(flatten)]
        common: Common,
    },
    /// Well-supported approximant and cutdown chain
    Approx {
        a: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Trivial majorant
    Majorant {
        a: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Trivial minorant of b below the trivial majorant of the target field
    Minorant {
        b: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Dimension function of a field under a trace (Lebesgue by default)
    Ldf {
        a: PathBuf,
        #[arg(long)]
        trace: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Comparison-radius estimate of a stage algebra
    Rc {
        stage: PathBuf,
        #[arg(long, default_value_t = 3)]
        samples: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Rank along the edges of a 1-complex as CSV and SVG
    Plot {
        a: PathBuf,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Serialize)]
struct InputHash {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
pub struct RunReport {
    command: &'static str,
    inputs: Vec<InputHash>,
    seed: u64,
    eps: f64,
    tol: f64,
    result: Value,
    wall_time_s: f64,
}

pub struct Outcome {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

enum Failure {
    Input(String),
    Compute(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Compute(e.to_string())
    }
}

struct Loader {
    inputs: Vec<InputHash>,
}

impl Loader {
    fn read(&mut self, path: &Path) -> Result<String, Failure> {
        let text = std::fs::read_to_string(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
        self.inputs.push(InputHash { path: path.display().to_string(), sha256: format!("{:x}", Sha256::digest(text.as_bytes())) });
        Ok(text)
    }

    fn field(&mut self, path: &Path) -> Result<MatrixField, Failure> {
        let text = self.read(path)?;
        MatrixField::from_json(&text, path.parent()).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
    }

    fn complex(&mut self, v: &Value, base: Option<&Path>) -> Result<Complex, Failure> {
        match v {
            Value::String(p) => {
                let p = base.map(|d| d.join(p)).unwrap_or_else(|| p.into());
                let text = self.read(&p)?;
                Complex::from_json(&text).map_err(|e| Failure::Input(format!("{}: {e}", p.display())))
            }
            Value::Object(_) => Complex::from_json(&v.to_string()).map_err(|e| Failure::Input(e.to_string())),
            _ => Err(Failure::Input("complex must be a path or an object".into())),
        }
    }
}

fn json_error(path: &Path, e: serde_json::Error) -> Failure {
    Failure::Input(format!("{}: line {} column {}: {e}", path.display(), e.line(), e.column()))
}

fn point_json(k: &Complex, p: &BarycentricPoint) -> Value {
    json!({ "simplex": p.simplex, "vertices": k.simplex(p.simplex), "coords": p.coords, "position": k.point_coords(p) })
}

fn verdict_json(k: &Complex, v: &ComparisonVerdict) -> Value {
    match v {
        ComparisonVerdict::Witnessed(w) => json!({
            "verdict": "witnessed",
            "residual": w.residual,
            "eps": w.eps,
            "grid_points": w.grid.len(),
            "stages": w.trace,
        }),
        ComparisonVerdict::Refuted { point, rank_a, rank_b } => json!({
            "verdict": "refuted",
            "point": point_json(k, point),
            "rank_a": rank_a,
            "rank_b": rank_b,
        }),
        ComparisonVerdict::Unknown(reason) => json!({ "verdict": "unknown", "reason": reason }),
    }
}

fn verdict_code(v: &ComparisonVerdict) -> i32 {
    match v {
        ComparisonVerdict::Witnessed(_) => EXIT_OK,
        ComparisonVerdict::Refuted { .. } => EXIT_REFUTED,
        ComparisonVerdict::Unknown(_) => EXIT_UNKNOWN,
    }
}

/// Caps the global rayon pool from `CUNTZLAB_THREADS`; later calls are no-ops.
pub fn init_threads() {
    if let Some(n) = std::env::var("CUNTZLAB_THREADS").ok().and_then(|s| s.parse::<usize>().ok()) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

pub fn run<I, T>(args: I) -> Outcome
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let text = e.render().to_string();
            return if code == EXIT_OK {
                Outcome { code, stdout: text, stderr: String::new() }
            } else {
                Outcome { code, stdout: String::new(), stderr: text }
            };
        }
    };
    let start = Instant::now();
    let mut loader = Loader { inputs: Vec::new() };
    let (name, common) = match &cli.command {
        Command::Compare { common, .. } => ("compare", common),
        Command::Approx { common, .. } => ("approx", common),
        Command::Majorant { common, .. } => ("majorant", common),
        Command::Minorant { common, .. } => ("minorant", common),
        Command::Ldf { common, .. } => ("ldf", common),
        Command::Rc { common, .. } => ("rc", common),
        Command::Plot { common, .. } => ("plot", common),
    };
    let common = common.clone();
    if !(common.eps > 0.0) || !(common.tol > 0.0) {
        return Outcome { code: EXIT_INPUT, stdout: String::new(), stderr: "eps and tol must be positive\n".into() };
    }
    match execute(&cli.command, &common, &mut loader) {
        Ok((code, result)) => {
            let report = RunReport {
                command: name,
                inputs: loader.inputs,
                seed: common.seed,
                eps: common.eps,
                tol: common.tol,
                result,
                wall_time_s: start.elapsed().as_secs_f64(),
            };
            let text = serde_json::to_string_pretty(&report).expect("report serialises");
            Outcome { code, stdout: text + "\n", stderr: String::new() }
        }
        Err(Failure::Input(msg)) => Outcome { code: EXIT_INPUT, stdout: String::new(), stderr: format!("error: {msg}\n") },
        Err(Failure::Compute(msg)) => {
            let report = RunReport {
                command: name,
                inputs: loader.inputs,
                seed: common.seed,
                eps: common.eps,
                tol: common.tol,
                result: json!({ "error": msg }),
                wall_time_s: start.elapsed().as_secs_f64(),
            };
            let text = serde_json::to_string_pretty(&report).expect("report serialises");
            Outcome { code: EXIT_UNKNOWN, stdout: text + "\n", stderr: format!("error: {msg}\n") }
        }
    }
}

fn execute(cmd: &Command, o: &Common, loader: &mut Loader) -> Result<(i32, Value), Failure> {
    match cmd {
        Command::Compare { a, b, mode, .. } => {
            let (fa, fb) = (loader.field(a)?, loader.field(b)?);
            let mode = match mode {
                ModeArg::Strict => Mode::Strict,
                ModeArg::Oracle => Mode::Oracle,
            };
            let v = cuntz::decide_subequivalence(&fa, &fb, o.eps, mode, o.tol, o.seed)?;
            let mut out = verdict_json(&fa.mesh().root, &v);
            out["mode"] = json!(mode);
            Ok((verdict_code(&v), out))
        }
        Command::Approx { a, .. } => {
            let fa = loader.field(a)?;
            let f = well_supported_approximant(&fa, o.eps, o.tol)?;
            let grid = check_grid(&[fa.mesh()]);
            let dist = sup_distance(&f, &fa, &grid)?;
            let (low, high) = cuntz::chain_witnesses(Arc::new(fa.clone()), o.eps, o.eps / 10.0, o.max_subdivisions)?;
            let chain = json!({
                "lower_residual": low.residual,
                "upper_residual": high.residual,
                "stages": [low.trace, high.trace],
            });
            Ok((EXIT_OK, json!({
                "rank_values": f.values,
                "distance": dist,
                "certificate": f.certificate,
                "chain": chain,
            })))
        }
        Command::Majorant { a, .. } => {
            let fa = loader.field(a)?;
            let m = cuntz::trivial_majorant(&fa, o.eps, o.tol)?;
            let grid = check_grid(&[fa.mesh()]);
            let mut excess = 0usize;
            for x in &grid.points {
                let ra = crate::linalg::Eigh::new(&fa.eval(x))?.rank(o.tol);
                excess = excess.max(m.r.rank_at(x).saturating_sub(ra));
            }
            Ok((EXIT_OK, json!({
                "lines": m.r.lines.rank,
                "blocks": m.r.blocks.iter().map(|b| b.cols.end).collect::<Vec<_>>(),
                "error": m.error,
                "containment_residual": m.witness.residual,
                "max_rank_excess": excess,
                "refinements": m.depth,
            })))
        }
        Command::Minorant { b, target, .. } => {
            let fb = loader.field(b)?;
            let ft = loader.field(target)?;
            let m = cuntz::trivial_majorant(&ft, o.eps, o.tol)?;
            let v = cuntz::trivial_minorant(&fb, &m.r, o.eps, o.tol)?;
            let mut out = verdict_json(&fb.mesh().root, &v);
            out["target_lines"] = json!(m.r.lines.rank);
            Ok((verdict_code(&v), out))
        }
        Command::Ldf { a, trace, .. } => {
            let fa = loader.field(a)?;
            let tau = match trace {
                Some(p) => {
                    let text = loader.read(p)?;
                    TraceSpec::from_json(&text, fa.mesh().root.clone()).map_err(|e| Failure::Input(e.to_string()))?
                }
                None => TraceSpec::lebesgue(fa.mesh().root.clone()),
            };
            let v = traces::ldf_value(&tau, &fa, o.tol)?;
            Ok((EXIT_OK, json!({ "value": v.value, "trace_limit": v.trace_limit })))
        }
        Command::Rc { stage, samples, .. } => {
            let text = loader.read(stage)?;
            let raw: Value = serde_json::from_str(&text).map_err(|e| json_error(stage, e))?;
            let blocks = raw
                .get("blocks")
                .and_then(Value::as_array)
                .ok_or_else(|| Failure::Input("stage needs a \"blocks\" array".into()))?;
            let mut parsed = Vec::new();
            for b in blocks {
                let k = loader.complex(b.get("complex").unwrap_or(&Value::Null), stage.parent())?;
                let rank = b.get("rank").and_then(Value::as_u64).ok_or_else(|| Failure::Input("block needs a rank".into()))? as usize;
                let n = b.get("n").and_then(Value::as_u64).map_or(rank, |n| n as usize);
                parsed.push(StageBlock { complex: Arc::new(k), n, rank });
            }
            let st = StageAlgebra::new(parsed).map_err(|e| Failure::Input(e.to_string()))?;
            let cfg = RcConfig { samples: *samples, eps: o.eps, tol: o.tol, ..RcConfig::default() };
            let e = traces::rc_estimate(&st, &cfg, o.seed)?;
            Ok((EXIT_OK, json!({ "rc_estimate": e.value, "drr": traces::drr(&st), "blocks": e.blocks, "calls": e.calls })))
        }
        Command::Plot { a, out_dir, .. } => {
            let fa = loader.field(a)?;
            let k = fa.mesh().root.clone();
            if k.dim() > 1 {
                return Err(Failure::Input(format!("plot needs a complex of dimension <= 1, got {}", k.dim())));
            }
            let rows = edge_ranks(&fa, o.max_subdivisions, o.tol)?;
            std::fs::create_dir_all(out_dir).map_err(|e| Failure::Input(format!("{}: {e}", out_dir.display())))?;
            let csv = out_dir.join("rank.csv");
            let svg = out_dir.join("rank.svg");
            let mut text = String::from("edge,t,rank\n");
            for (e, t, r) in &rows {
                text.push_str(&format!("{e},{t},{r}\n"));
            }
            std::fs::write(&csv, text).map_err(|e| Failure::Input(e.to_string()))?;
            std::fs::write(&svg, step_svg(&rows)).map_err(|e| Failure::Input(e.to_string()))?;
            Ok((EXIT_OK, json!({ "csv": csv.display().to_string(), "svg": svg.display().to_string(), "rows": rows.len() })))
        }
    }
}

/// `(edge, t, rank)` at `2^{depth+1} + 1` points per edge; the vertices of a
/// 0-complex come out as `(vertex, 0, rank)`.
fn edge_ranks(a: &MatrixField, depth: usize, tol: f64) -> Result<Vec<(usize, f64, usize)>, Failure> {
    let k = a.mesh().root.clone();
    let edges: Vec<usize> = k.top_simplices().filter(|&s| k.simplex_dim(s) == 1).collect();
    let mut rows = Vec::new();
    let rank = |p: &BarycentricPoint| -> Result<usize, Failure> { Ok(crate::linalg::Eigh::new(&a.eval(p))?.rank(tol)) };
    if edges.is_empty() {
        for v in 0..k.num_vertices() {
            rows.push((v, 0.0, rank(&BarycentricPoint::vertex(v))?));
        }
        return Ok(rows);
    }
    let steps = 1usize << (depth + 1);
    for (e, &s) in edges.iter().enumerate() {
        for i in 0..=steps {
            let t = i as f64 / steps as f64;
            let p = BarycentricPoint { simplex: s, coords: vec![1.0 - t, t] }.canonical(&k);
            rows.push((e, t, rank(&p)?));
        }
    }
    Ok(rows)
}

fn step_svg(rows: &[(usize, f64, usize)]) -> String {
    let (w, h, pad) = (640.0, 240.0, 30.0);
    let edges = rows.iter().map(|r| r.0).max().map_or(1, |m| m + 1) as f64;
    let top = rows.iter().map(|r| r.2).max().unwrap_or(0).max(1) as f64;
    let x = |e: usize, t: f64| pad + (e as f64 + t) / edges * (w - 2.0 * pad);
    let y = |r: usize| h - pad - r as f64 / top * (h - 2.0 * pad);
    let mut s = format!("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\">\n");
    s.push_str(&format!(
        "<line x1=\"{pad}\" y1=\"{0}\" x2=\"{1}\" y2=\"{0}\" stroke=\"black\"/>\n",
        h - pad,
        w - pad
    ));
    for e in 0..edges as usize {
        let mut pts = Vec::new();
        let mut last = None;
        for r in rows.iter().filter(|r| r.0 == e) {
            if let Some(prev) = last {
                pts.push(format!("{:.2},{:.2}", x(e, r.1), y(prev)));
            }
            pts.push(format!("{:.2},{:.2}", x(e, r.1), y(r.2)));
            last = Some(r.2);
        }
        s.push_str(&format!("<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"{}\"/>\n", pts.join(" ")));
    }
    for r in 0..=top as usize {
        s.push_str(&format!("<text x=\"4\" y=\"{:.2}\" font-size=\"10\">{r}</text>\n", y(r) + 3.0));
    }
    s.push_str("</svg>\n");
    s
}
