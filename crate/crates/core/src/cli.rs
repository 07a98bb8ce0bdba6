//! Command-line front end: config loading, mode dispatch and artifact output.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path as FsPath, PathBuf};

use clap::{Parser, ValueEnum};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::classical::classical_riccati_oracle;
use crate::closed_rep::{synthesize_rep, verify_rep, Synthesis};
use crate::closed_strategy::{compare_rep_vs_strategy, synthesize_strategy, verify_strategy, Divergence};
use crate::error::{Error, Result};
use crate::export::{fmt, write_rows};
use crate::mc::{estimate_cost, perturbation_quotient, steepest_direction, McParams, PerturbationProbe, ProbeMode, QuotientTable};
use crate::open_loop::{check_open, deterministic_part};
use crate::problem::{parse_problem, CoefficientSet, FeedbackControl, Path, TimeGrid};
use crate::report::{EquilibriumReport, Tolerances};
use crate::strategy::{StrategyKind, StrategyPair};

/// Environment variable capping the worker count.
pub const THREADS_ENV: &str = "TILQ_THREADS";

const PROBE_EPS_STEPS: [usize; 3] = [2, 4, 8];
const STEEPEST_MIN_NORM: f64 = 1e-6;
const DEFAULT_SLOPE_TOL: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    SolveRep,
    SolveStrategy,
    CheckOpen,
    VerifyMc,
    Compare,
    ReduceClassical,
}

impl Mode {
    pub fn needs_seed(self) -> bool {
        self == Mode::VerifyMc
    }

    /// Modes whose exit status does not depend on a verdict.
    pub fn is_computational(self) -> bool {
        matches!(self, Mode::Compare | Mode::ReduceClassical)
    }
}

#[derive(Clone, Debug, Parser)]
#[command(name = "tilq", version, about = "Equilibrium solvers and verifiers for time-inconsistent LQ control")]
pub struct RunConfig {
    /// Problem JSON file.
    #[arg(long)]
    pub config: PathBuf,

    #[arg(long, value_enum)]
    pub mode: Mode,

    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,

    /// Base seed of the random streams.
    #[arg(long)]
    pub seed: Option<u64>,

    /// Outer Monte Carlo batches.
    #[arg(long)]
    pub paths: Option<usize>,

    /// Paths per batch.
    #[arg(long)]
    pub inner: Option<usize>,

    #[arg(long)]
    pub tol_psd: Option<f64>,

    #[arg(long)]
    pub tol_res: Option<f64>,

    #[arg(long)]
    pub tol_range: Option<f64>,

    /// Strategy or control CSV to check instead of synthesizing.
    #[arg(long)]
    pub candidate: Option<PathBuf>,
}

/// Optional `verify` section of the problem file.
#[derive(Clone, Copy, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct VerifySection {
    seed: Option<u64>,
    paths: Option<usize>,
    inner: Option<usize>,
    slope_tol: Option<f64>,
}

pub struct Outcome {
    pub verdict: bool,
    /// Process exit status.
    pub status: i32,
    pub summary: String,
}

struct Loaded {
    problem: CoefficientSet<f64>,
    tol: Tolerances,
    verify: VerifySection,
}

fn section<D: for<'de> Deserialize<'de> + Default>(doc: &Value, key: &str) -> Result<D> {
    match doc.get(key) {
        None => Ok(D::default()),
        Some(v) => serde_json::from_value(v.clone()).map_err(|e| Error::Parse {
            field: key.into(),
            message: e.to_string(),
        }),
    }
}

fn load(cfg: &RunConfig) -> Result<Loaded> {
    let text = fs::read_to_string(&cfg.config)?;
    let doc: Value = serde_json::from_str(&text).map_err(|e| Error::Parse {
        field: "<document>".into(),
        message: e.to_string(),
    })?;
    let problem = parse_problem::<f64>(&doc)?.validate()?;
    let mut tol: Tolerances = section(&doc, "tolerances")?;
    if let Some(v) = cfg.tol_psd {
        tol.psd_tol = v;
    }
    if let Some(v) = cfg.tol_res {
        tol.res_tol = v;
    }
    if let Some(v) = cfg.tol_range {
        tol.range_tol = v;
    }
    let verify = section(&doc, "verify")?;
    Ok(Loaded { problem, tol, verify })
}

/// Sets the global worker count from [`THREADS_ENV`] when present.
pub fn init_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("{THREADS_ENV} must be a positive integer, got {raw:?}")))?;
    if n == 0 {
        return Err(Error::Config(format!("{THREADS_ENV} must be positive")));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(e.to_string()))
}

/// Executes one mode and writes its artifacts under `cfg.out`.
pub fn run(cfg: &RunConfig) -> Result<Outcome> {
    let loaded = load(cfg)?;
    let seed = cfg.seed.or(loaded.verify.seed);
    if cfg.mode.needs_seed() && seed.is_none() {
        return Err(Error::Config(
            "a base seed is required for Monte Carlo modes (--seed or verify.seed)".into(),
        ));
    }
    fs::create_dir_all(&cfg.out)?;
    let probe = fs::File::create(cfg.out.join(".write-test"));
    match probe {
        Ok(_) => fs::remove_file(cfg.out.join(".write-test"))?,
        Err(e) => return Err(Error::Config(format!("output directory {} is not writable: {e}", cfg.out.display()))),
    }

    let (verdict, body, summary) = match cfg.mode {
        Mode::SolveRep | Mode::SolveStrategy => solve(cfg, &loaded)?,
        Mode::CheckOpen => open(cfg, &loaded, seed.unwrap_or(0))?,
        Mode::VerifyMc => verify_mc(cfg, &loaded, seed.expect("seed checked above"))?,
        Mode::Compare => compare(cfg, &loaded)?,
        Mode::ReduceClassical => reduce_classical(cfg, &loaded)?,
    };

    let p = &loaded.problem;
    let mut report = json!({
        "mode": cfg.mode,
        "verdict": verdict,
        "problem": { "n": p.n(), "m": p.m(), "T": p.horizon(), "N": p.grid().steps() },
        "tolerances": loaded.tol,
    });
    let obj = report.as_object_mut().unwrap();
    for (k, v) in body.as_object().into_iter().flatten() {
        obj.insert(k.clone(), v.clone());
    }
    let text = serde_json::to_string_pretty(&report)?;
    fs::write(cfg.out.join("report.json"), text + "\n")?;

    let status = if verdict || cfg.mode.is_computational() { 0 } else { 1 };
    Ok(Outcome {
        verdict,
        status,
        summary,
    })
}

fn header(prefix: &str, rows: usize, cols: usize) -> Vec<String> {
    let mut h = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            h.push(format!("{prefix}_{i}_{j}"));
        }
    }
    h
}

fn vheader(prefix: &str, len: usize) -> Vec<String> {
    (0..len).map(|i| format!("{prefix}_{i}")).collect()
}

fn mat_cells(m: &DMatrix<f64>) -> impl Iterator<Item = String> + '_ {
    (0..m.nrows()).flat_map(move |i| (0..m.ncols()).map(move |j| fmt(m[(i, j)])))
}

fn vec_cells(v: &DVector<f64>) -> impl Iterator<Item = String> + '_ {
    v.iter().map(|x| fmt(*x))
}

fn strategy_grid(problem: &CoefficientSet<f64>, s: &StrategyPair<f64>) -> TimeGrid<f64> {
    s.grid().unwrap_or_else(|| problem.grid().refine(2))
}

pub fn write_strategy_csv(path: &FsPath, problem: &CoefficientSet<f64>, s: &StrategyPair<f64>) -> Result<()> {
    let (n, m) = (problem.n(), problem.m());
    let mut h = vec!["t".to_string()];
    h.extend(header("theta", m, n));
    h.extend(vheader("phi", m));
    let grid = strategy_grid(problem, s);
    let rows = grid
        .nodes()
        .into_iter()
        .map(|t| {
            let (theta, phi) = s.at(t)?;
            let mut r = vec![fmt(t)];
            r.extend(mat_cells(&theta));
            r.extend(vec_cells(&phi));
            Ok(r)
        })
        .collect::<Result<Vec<_>>>()?;
    write_rows(path, &h, rows)
}

fn write_kernel_csv(path: &FsPath, problem: &CoefficientSet<f64>, syn: &Synthesis<f64>) -> Result<()> {
    let n = problem.n();
    let mut h = vec!["t".to_string()];
    h.extend(header("p1", n, n));
    h.extend(header("p2", n, n));
    h.extend(vheader("p3", n));
    h.extend(vheader("p4", n));
    let grid = problem.grid();
    let rows = syn.kernel.states.iter().enumerate().map(|(k, st)| {
        let mut r = vec![fmt(grid.node(k))];
        r.extend(mat_cells(&st.p1));
        r.extend(mat_cells(&st.p2));
        r.extend(vec_cells(&st.p3));
        r.extend(vec_cells(&st.p4));
        r
    });
    write_rows(path, &h, rows)
}

fn write_report_csv(path: &FsPath, r: &EquilibriumReport) -> Result<()> {
    let h: Vec<String> = ["t", "second_order_margin", "first_order_residual", "range_slack_gain", "range_slack_affine", "nullity"]
        .map(String::from)
        .to_vec();
    let cell = |v: &[f64], k: usize| v.get(k).map_or_else(String::new, |x| fmt(*x));
    let rows = (0..r.times.len()).map(|k| {
        vec![
            fmt(r.times[k]),
            cell(&r.second_order_margin, k),
            cell(&r.first_order_residual, k),
            cell(&r.range_slack_gain, k),
            cell(&r.range_slack_affine, k),
            r.nullity.get(k).map_or_else(String::new, |d| d.to_string()),
        ]
    });
    write_rows(path, &h, rows)
}

fn describe(label: &str, r: &EquilibriumReport) -> String {
    let mut s = format!(
        "{label}: verdict {}\n  min second-order margin {:.6e}\n  max first-order residual {:.6e}\n  max range slack {:.6e}\n",
        if r.verdict { "PASS" } else { "FAIL" },
        r.min_margin,
        r.max_residual,
        r.max_range_slack
    );
    for d in &r.diagnostics {
        let _ = writeln!(s, "  note: {d}");
    }
    s
}

/// Reads a strategy (`t, theta_i_j.., phi_i..`) or control (`t, u_i..`) CSV on a uniform grid.
pub fn read_candidate(path: &FsPath, problem: &CoefficientSet<f64>) -> Result<FeedbackControl<f64>> {
    let (n, m) = (problem.n(), problem.m());
    let mut rd = csv::Reader::from_path(path)?;
    let head: Vec<String> = rd.headers()?.iter().map(|s| s.trim().to_string()).collect();
    let col = |name: &str| head.iter().position(|h| h == name);
    let t_col = col("t").ok_or_else(|| Error::parse("t", "candidate CSV has no `t` column"))?;
    let has_theta = head.iter().any(|h| h.starts_with("theta_"));
    let affine = if head.iter().any(|h| h.starts_with("phi_")) { "phi" } else { "u" };
    let mut theta_cols = Vec::new();
    if has_theta {
        for i in 0..m {
            for j in 0..n {
                let name = format!("theta_{i}_{j}");
                theta_cols.push(col(&name).ok_or_else(|| Error::parse(name.clone(), "missing column"))?);
            }
        }
    }
    let mut phi_cols = Vec::new();
    for i in 0..m {
        let name = format!("{affine}_{i}");
        phi_cols.push(col(&name).ok_or_else(|| Error::parse(name.clone(), "missing column"))?);
    }

    let mut times = Vec::new();
    let mut thetas = Vec::new();
    let mut phis = Vec::new();
    for (line, rec) in rd.records().enumerate() {
        let rec = rec?;
        let num = |c: usize, name: &str| -> Result<f64> {
            rec.get(c)
                .and_then(|s| s.trim().parse::<f64>().ok())
                .filter(|x| x.is_finite())
                .ok_or_else(|| Error::parse(format!("{name} (row {})", line + 1), "expected a finite number"))
        };
        times.push(num(t_col, "t")?);
        let th = if has_theta {
            let vals = theta_cols.iter().map(|&c| num(c, "theta")).collect::<Result<Vec<_>>>()?;
            DMatrix::from_row_slice(m, n, &vals)
        } else {
            DMatrix::zeros(m, n)
        };
        thetas.push(th);
        let ph = phi_cols.iter().map(|&c| num(c, affine)).collect::<Result<Vec<_>>>()?;
        phis.push(DVector::from_vec(ph));
    }
    if times.len() < 2 {
        return Err(Error::parse("t", "candidate needs at least two rows"));
    }
    let grid = TimeGrid::new(*times.last().unwrap(), times.len() - 1)?;
    let scale = grid.horizon().abs().max(1.0);
    for (k, &t) in times.iter().enumerate() {
        if (t - grid.node(k)).abs() > 1e-12 * scale {
            return Err(Error::parse(format!("t (row {})", k + 1), "times must form a uniform grid starting at 0"));
        }
    }
    if (grid.horizon() - problem.horizon()).abs() > 1e-12 * scale {
        return Err(Error::parse("t", "candidate horizon differs from the problem horizon"));
    }
    // Snap to the problem horizon so grid checks compare exactly.
    let grid = TimeGrid::new(problem.horizon(), times.len() - 1)?;
    let theta = Path::sampled(grid, thetas)?;
    let phi = Path::sampled(grid, phis)?;
    let zero = theta.map(|t| DMatrix::zeros(t.nrows(), t.ncols()));
    Ok(FeedbackControl::new(theta, zero, phi))
}

fn candidate_strategy(cfg: &RunConfig, problem: &CoefficientSet<f64>, kind: StrategyKind) -> Result<Option<StrategyPair<f64>>> {
    let Some(path) = &cfg.candidate else {
        return Ok(None);
    };
    let fc = read_candidate(path, problem)?;
    Ok(Some(StrategyPair::new(fc.theta1, fc.phi, kind)))
}

fn solve(cfg: &RunConfig, l: &Loaded) -> Result<(bool, Value, String)> {
    let p = &l.problem;
    let (kind, label) = match cfg.mode {
        Mode::SolveRep => (StrategyKind::OpenRep, "closed-loop representation"),
        _ => (StrategyKind::ClosedStrategy, "closed-loop strategy"),
    };
    let candidate = candidate_strategy(cfg, p, kind)?;
    let checked = candidate.is_some();
    let syn = match (kind, candidate) {
        (StrategyKind::OpenRep, Some(s)) => verify_rep(p, &s, &l.tol)?,
        (StrategyKind::OpenRep, None) => synthesize_rep(p, &l.tol)?,
        (StrategyKind::ClosedStrategy, Some(s)) => verify_strategy(p, &s, &l.tol)?,
        (StrategyKind::ClosedStrategy, None) => synthesize_strategy(p, &l.tol)?,
    };
    write_strategy_csv(&cfg.out.join("strategy.csv"), p, &syn.strategy)?;
    write_kernel_csv(&cfg.out.join("kernel.csv"), p, &syn)?;
    write_report_csv(&cfg.out.join("conditions.csv"), &syn.report)?;
    let body = json!({
        "kind": kind,
        "candidate_checked": checked,
        "report": syn.report,
        "symmetry_correction": syn.kernel.symmetry_correction,
    });
    Ok((syn.report.verdict, body, describe(label, &syn.report)))
}

fn open(cfg: &RunConfig, l: &Loaded, seed: u64) -> Result<(bool, Value, String)> {
    let p = &l.problem;
    let path = cfg
        .candidate
        .as_ref()
        .ok_or_else(|| Error::Config("check-open needs --candidate with a control CSV".into()))?;
    let u = deterministic_part(&read_candidate(path, p)?)?;
    let report = check_open(p, &u, &l.tol, seed)?;
    write_report_csv(&cfg.out.join("conditions.csv"), &report)?;
    let body = json!({ "seed": seed, "report": report });
    Ok((report.verdict, body, describe("open-loop control", &report)))
}

fn probes(problem: &CoefficientSet<f64>, strategy: &StrategyPair<f64>, mode: ProbeMode, rtol: f64) -> Result<Vec<PerturbationProbe<f64>>> {
    let steps = problem.grid().steps();
    let mut nodes = vec![0, steps / 4, steps / 2];
    nodes.dedup();
    let mut out = Vec::new();
    for node in nodes {
        let eps: Vec<usize> = PROBE_EPS_STEPS.into_iter().filter(|e| node + e <= steps).collect();
        if eps.is_empty() {
            continue;
        }
        for i in 0..problem.m() {
            for sign in [1.0, -1.0] {
                let mut v = DVector::zeros(problem.m());
                v[i] = sign;
                out.push(PerturbationProbe::new(node, v, eps.clone(), mode));
            }
        }
        let d = steepest_direction(problem, strategy, node, mode, rtol)?;
        if d.norm() > STEEPEST_MIN_NORM {
            out.push(PerturbationProbe::new(node, d, eps, mode));
        }
    }
    Ok(out)
}

fn write_quotients(path: &FsPath, m: usize, q: &QuotientTable) -> Result<()> {
    let mut h: Vec<String> = ["t", "node", "mode", "eps", "eps_steps"].map(String::from).to_vec();
    h.extend(vheader("v", m));
    h.extend(["quotient", "stderr", "slope", "threshold", "predicted", "pass"].map(String::from));
    let rows = q.rows.iter().map(|r| {
        let mut c = vec![
            fmt(r.t),
            r.node.to_string(),
            match r.mode {
                ProbeMode::Open => "open".into(),
                ProbeMode::Closed => "closed".into(),
            },
            fmt(r.eps),
            r.eps_steps.to_string(),
        ];
        c.extend(r.v.iter().map(|x| fmt(*x)));
        c.extend([fmt(r.quotient), fmt(r.stderr), fmt(r.slope), fmt(r.threshold), fmt(r.predicted), r.pass.to_string()]);
        c
    });
    write_rows(path, &h, rows)
}

fn verify_mc(cfg: &RunConfig, l: &Loaded, seed: u64) -> Result<(bool, Value, String)> {
    let p = &l.problem;
    let params = McParams {
        outer: cfg.paths.or(l.verify.paths).unwrap_or(McParams::DEFAULT_OUTER),
        inner: cfg.inner.or(l.verify.inner).unwrap_or(McParams::DEFAULT_INNER),
        seed,
    };
    let slope_tol = l.verify.slope_tol.unwrap_or(DEFAULT_SLOPE_TOL);
    let syn = match candidate_strategy(cfg, p, StrategyKind::ClosedStrategy)? {
        Some(s) => verify_strategy(p, &s, &l.tol)?,
        None => synthesize_strategy(p, &l.tol)?,
    };
    let mode = ProbeMode::Closed;
    let probes = probes(p, &syn.strategy, mode, l.tol.rtol)?;
    let table = perturbation_quotient(p, &syn.strategy, &probes, &params, slope_tol)?;
    let control = syn.strategy.control();
    let cost = estimate_cost(p, 0, p.x0(), &control, &params)?;
    write_quotients(&cfg.out.join("quotients.csv"), p.m(), &table)?;
    write_strategy_csv(&cfg.out.join("strategy.csv"), p, &syn.strategy)?;
    write_report_csv(&cfg.out.join("conditions.csv"), &syn.report)?;

    let failing = table.rows.iter().filter(|r| !r.pass).count();
    let mut summary = describe("closed-loop strategy", &syn.report);
    let _ = writeln!(
        summary,
        "Monte Carlo ({} x {} paths, seed {seed}): {} quotients, {failing} below threshold, verdict {}\n  cost J(0, x0) = {:.6e} +/- {:.2e}\n  note: {}",
        params.outer,
        params.inner,
        table.rows.len(),
        if table.verdict { "consistent with equilibrium" } else { "NOT consistent with equilibrium" },
        cost.mean,
        cost.stderr,
        table.note
    );
    let body = json!({
        "mc": params,
        "slope_tol": slope_tol,
        "cost": cost,
        "quotients": table,
        "equilibrium_report": syn.report,
    });
    Ok((table.verdict, body, summary))
}

fn write_divergence(path: &FsPath, d: &Divergence) -> Result<()> {
    let h: Vec<String> = ["t", "p1_gap", "gain_gap", "rep_asymmetry", "strategy_asymmetry"].map(String::from).to_vec();
    let rows = (0..d.times.len()).map(|k| {
        vec![
            fmt(d.times[k]),
            fmt(d.p1_gap[k]),
            fmt(d.gain_gap[k]),
            fmt(d.rep_asymmetry[k]),
            fmt(d.strategy_asymmetry[k]),
        ]
    });
    write_rows(path, &h, rows)
}

fn compare(cfg: &RunConfig, l: &Loaded) -> Result<(bool, Value, String)> {
    let p = &l.problem;
    let (rep, strat, div) = compare_rep_vs_strategy(p, &l.tol)?;
    write_strategy_csv(&cfg.out.join("rep_strategy.csv"), p, &rep.strategy)?;
    write_strategy_csv(&cfg.out.join("strategy.csv"), p, &strat.strategy)?;
    write_divergence(&cfg.out.join("divergence.csv"), &div)?;
    let verdict = rep.report.verdict && strat.report.verdict;
    let mut summary = describe("closed-loop representation", &rep.report);
    summary += &describe("closed-loop strategy", &strat.report);
    let _ = writeln!(
        summary,
        "divergence: max |P1 gap| {:.6e}, max gain gap {:.6e}, representation asymmetry {:.6e}, strategy asymmetry {:.6e}",
        div.max_p1_gap, div.max_gain_gap, div.max_rep_asymmetry, div.max_strategy_asymmetry
    );
    let body = json!({
        "rep_report": rep.report,
        "strategy_report": strat.report,
        "divergence": div,
    });
    Ok((verdict, body, summary))
}

fn reduce_classical(cfg: &RunConfig, l: &Loaded) -> Result<(bool, Value, String)> {
    let p = &l.problem;
    let classical = classical_riccati_oracle(p, l.tol.rtol)?;
    let syn = synthesize_strategy(p, &l.tol)?;
    let grid = p.grid();
    let (n, m) = (p.n(), p.m());
    let mut gain_err = Vec::new();
    let mut p1_err = Vec::new();
    let mut rows = Vec::new();
    for k in 0..=grid.steps() {
        let t = grid.node(k);
        let (theta, _) = syn.strategy.at(t)?;
        let ge = (&theta - &classical.gain[k]).amax();
        let pe = (syn.kernel.p1(k) + &classical.p[k]).amax();
        gain_err.push(ge);
        p1_err.push(pe);
        let mut r = vec![fmt(t)];
        r.extend(mat_cells(&classical.p[k]));
        r.extend(mat_cells(&classical.gain[k]));
        r.extend(mat_cells(&theta));
        r.extend([fmt(ge), fmt(pe)]);
        rows.push(r);
    }
    let mut h = vec!["t".to_string()];
    h.extend(header("riccati", n, n));
    h.extend(header("classical_gain", m, n));
    h.extend(header("strategy_gain", m, n));
    h.extend(["gain_error", "p1_error"].map(String::from));
    write_rows(&cfg.out.join("classical.csv"), &h, rows)?;
    write_report_csv(&cfg.out.join("conditions.csv"), &syn.report)?;
    let gain_match = gain_err.iter().copied().fold(0.0, f64::max);
    let p1_match = p1_err.iter().copied().fold(0.0, f64::max);
    let summary = format!(
        "{}classical reduction: max gain error {gain_match:.6e}, max |P1 + P| {p1_match:.6e}\n",
        describe("closed-loop strategy", &syn.report)
    );
    let body = json!({
        "gain_match_error": gain_match,
        "p1_match_error": p1_match,
        "strategy_report": syn.report,
    });
    Ok((syn.report.verdict, body, summary))
}
