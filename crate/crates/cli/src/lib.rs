//! Command implementations behind the `danc` binary. Every command returns
//! an exit code; human-readable output goes to stdout/stderr.

use std::fs;
use std::path::{Path, PathBuf};

use danc_core::analysis::{
    check_theorem_bounds, dissipation_audit, lemma1_random_suite, lemma2_random_suite,
    lyapunov_positivity, ms_output_error, tail_max_abs, BoundInputs, BoundReport, TAIL_FRACTION,
};
use danc_core::error_geometry::FilterSpec;
use danc_core::scenario::Scenario;
use danc_core::sim::{da_audit, fmt_sci, run_setup, ClosedLoopSetup, SimAbort, SimTrace};
use danc_core::Error;
use rayon::prelude::*;

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_BOUND: i32 = 4;

/// Incremental-law residuals above this fail verification.
pub const RESIDUAL_TOL: f64 = 1e-12;
/// Randomised lemma suite sizes.
pub const LEMMA1_PAIRS: usize = 10;
pub const LEMMA2_SEQUENCES: usize = 100;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Core(#[from] Error),
    #[error("{0}")]
    Sim(#[from] SimAbort),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("csv error on {path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) | CliError::Sim(SimAbort { error: e, .. }) => match e {
                Error::NumericBlowup { .. } | Error::GainSign { .. } => EXIT_NUMERIC,
                Error::Config(_)
                | Error::InvalidFilter(_)
                | Error::InvalidPlan(_)
                | Error::Fit(_)
                | Error::Shape { .. }
                | Error::TraceFormat(_) => EXIT_CONFIG,
                _ => EXIT_IO,
            },
            CliError::Usage(_) => EXIT_CONFIG,
            CliError::Io { .. } | CliError::Csv { .. } => EXIT_IO,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> CliError + '_ {
    move |source| CliError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

/// Options shared by the run-based commands.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    pub verbose_trace: bool,
    pub seed: Option<u64>,
}

pub fn load_scenario(path: &Path, seed: Option<u64>) -> Result<Scenario, CliError> {
    let mut sc = Scenario::load(path)?;
    if let Some(s) = seed {
        sc.seed = s;
    }
    sc.validate()?;
    Ok(sc)
}

/// Writes a trace as CSV with a header row and `%.12e` numbers.
pub fn write_trace(trace: &SimTrace, path: &Path, verbose: bool) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(trace.column_names(verbose)).map_err(csv_err(path))?;
    for k in 0..trace.len() {
        w.write_record(trace.row(k, verbose).iter().map(|v| fmt_sci(*v)))
            .map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Reads any numeric CSV with a header row.
pub fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>), CliError> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let header: Vec<String> = r
        .headers()
        .map_err(csv_err(path))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err(path))?;
        let row = rec
            .iter()
            .map(|f| {
                f.trim().parse::<f64>().map_err(|_| {
                    CliError::Core(Error::TraceFormat(format!("non-numeric field '{f}'")))
                })
            })
            .collect::<Result<Vec<f64>, _>>()?;
        rows.push(row);
    }
    Ok((header, rows))
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

fn trace_path(sc: &Scenario, out_dir: &Path) -> PathBuf {
    out_dir.join(sc.output.trace.as_deref().unwrap_or("trace.csv"))
}

fn report_stem(sc: &Scenario, out_dir: &Path) -> PathBuf {
    out_dir.join(sc.output.report.as_deref().unwrap_or("report"))
}

fn run_summary(setup: &ClosedLoopSetup, trace: &SimTrace) -> String {
    let end = trace.times.last().copied().unwrap_or(0.0);
    let ms = if end > 0.0 { ms_output_error(trace, end).unwrap_or(f64::NAN) } else { 0.0 };
    format!(
        "plant {} scheme {} nodes {} steps {}\n\
         fit: |W_f*| = {:.4e} eps_f = {:.4e} (ridge {:e}); |W_g*| = {:.4e} eps_g = {:.4e} (ridge {:e})\n\
         final |e_f| = {:.4e}, tail max |e_f| = {:.4e}, mean square e_1 = {:.4e}\n\
         max incremental residual = {:.3e}\n",
        setup.scenario.plant.name,
        setup.scheme(),
        setup.net.len(),
        setup.steps,
        setup.fit_f.w_norm_sq().sqrt(),
        setup.fit_f.eps_bar,
        setup.ridge_f,
        setup.fit_g.w_norm_sq().sqrt(),
        setup.fit_g.eps_bar,
        setup.ridge_g,
        trace.ef.last().map_or(f64::NAN, |v| v.abs()),
        tail_max_abs(&trace.times, &trace.ef, TAIL_FRACTION),
        ms,
        trace.inc_residual.iter().fold(0.0f64, |m, v| m.max(*v)),
    )
}

/// Runs a scenario, writing the trace (partial on abort) and a summary.
fn simulate_to(
    sc: &Scenario,
    opts: &RunOptions,
) -> Result<(ClosedLoopSetup, SimTrace, PathBuf), CliError> {
    ensure_dir(&opts.out_dir)?;
    let setup = ClosedLoopSetup::build(sc)?;
    let path = trace_path(sc, &opts.out_dir);
    match run_setup(&setup) {
        Ok(trace) => {
            write_trace(&trace, &path, opts.verbose_trace)?;
            let summary = run_summary(&setup, &trace);
            let spath = path.with_extension("summary.txt");
            fs::write(&spath, &summary).map_err(io_err(&spath))?;
            print!("{summary}");
            Ok((setup, trace, path))
        }
        Err(abort) => {
            if let Some(partial) = &abort.partial {
                write_trace(partial, &path, opts.verbose_trace)?;
            }
            Err(abort.into())
        }
    }
}

pub fn cmd_simulate(config: &Path, opts: &RunOptions) -> Result<i32, CliError> {
    let sc = load_scenario(config, opts.seed)?;
    let (_, _, path) = simulate_to(&sc, opts)?;
    println!("trace written to {}", path.display());
    Ok(EXIT_OK)
}

/// Outcome of the full verification pipeline.
#[derive(Debug, Clone)]
pub struct Verification {
    pub report: BoundReport,
    pub residual_max: f64,
    pub da_ok: bool,
    pub ef_tilde0: f64,
    pub notes: Vec<String>,
}

impl Verification {
    pub fn pass(&self) -> bool {
        self.report.pass() && self.residual_max <= RESIDUAL_TOL && self.da_ok && self.ef_tilde0 == 0.0
    }
}

/// Bound report plus the structural checks, for an already simulated run.
pub fn verify_trace(setup: &ClosedLoopSetup, trace: &SimTrace) -> Result<Verification, CliError> {
    let sc = &setup.scenario;
    let filter = FilterSpec::new(setup.lambda.clone(), sc.sim.horizon, sc.seed)?;
    let inputs = BoundInputs::from_setup(setup, &filter.constants);
    let report = check_theorem_bounds(trace, &inputs)?;
    let lp = lyapunov_positivity(trace, &setup.plant);
    let dis = dissipation_audit(trace, &inputs, &setup.plant);
    let notes = vec![
        format!(
            "audit {}: {} (worst slack {:.3e} at t = {:.3})",
            lp.name,
            if lp.ok { "ok" } else { "not satisfied" },
            lp.worst,
            lp.worst_t
        ),
        format!(
            "audit {}: {} (worst slack {:.3e} at t = {:.3})",
            dis.name,
            if dis.ok { "ok" } else { "not satisfied" },
            dis.worst,
            dis.worst_t
        ),
    ];
    Ok(Verification {
        report,
        residual_max: trace.inc_residual.iter().fold(0.0f64, |m, v| m.max(*v)),
        da_ok: da_audit(trace, &setup.traj),
        ef_tilde0: trace.ef_tilde.first().copied().unwrap_or(f64::NAN),
        notes,
    })
}

pub fn write_report_csv(report: &BoundReport, path: &Path) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(["check", "t", "lhs", "rhs", "margin"]).map_err(csv_err(path))?;
    let rows = report
        .worst
        .iter()
        .chain(&report.info)
        .map(|r| (r.check.clone(), r))
        .chain(report.violations.iter().map(|r| (format!("violation:{}", r.check), r)));
    for (name, r) in rows {
        w.write_record([name, fmt_sci(r.t), fmt_sci(r.lhs), fmt_sci(r.rhs), fmt_sci(r.margin())])
            .map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

fn lemma_lines(seed: u64) -> Result<(bool, String), CliError> {
    let l1 = lemma1_random_suite(LEMMA1_PAIRS, seed)?;
    let l2 = lemma2_random_suite(LEMMA2_SEQUENCES, seed.wrapping_add(1))?;
    let ok = l1 == LEMMA1_PAIRS && l2 == LEMMA2_SEQUENCES;
    Ok((
        ok,
        format!(
            "lemma 1 (integral positivity): {l1}/{LEMMA1_PAIRS} random pairs positive\n\
             lemma 2 (sequence bound): {l2}/{LEMMA2_SEQUENCES} random sequences pass\n"
        ),
    ))
}

pub fn cmd_verify(config: &Path, opts: &RunOptions) -> Result<i32, CliError> {
    let sc = load_scenario(config, opts.seed)?;
    let (setup, trace, _) = simulate_to(&sc, opts)?;
    let v = verify_trace(&setup, &trace)?;
    let (lemmas_ok, lemma_text) = lemma_lines(sc.seed)?;
    let mut text = v.report.summary();
    text.push_str(&format!(
        "  initial e~_f = {:e}\n  max incremental residual = {:.3e} (limit {RESIDUAL_TOL:e})\n  basis inputs equal x_d: {}\n",
        v.ef_tilde0, v.residual_max, v.da_ok
    ));
    for n in &v.notes {
        text.push_str(&format!("  {n}\n"));
    }
    text.push_str(&lemma_text);
    let pass = v.pass() && lemmas_ok;
    text.push_str(if pass { "VERDICT PASS\n" } else { "VERDICT FAIL\n" });
    let stem = report_stem(&sc, &opts.out_dir);
    let txt = stem.with_extension("txt");
    fs::write(&txt, &text).map_err(io_err(&txt))?;
    write_report_csv(&v.report, &stem.with_extension("csv"))?;
    print!("{text}");
    Ok(if pass { EXIT_OK } else { EXIT_BOUND })
}

/// One aggregated sweep row.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub tail_max_ef: f64,
    pub ms_error: f64,
    pub bound: f64,
    pub pass: bool,
}

fn sweep_one(base: &Scenario, axis: &str, value: f64, idx: usize, opts: &RunOptions) -> Result<SweepRow, CliError> {
    let mut sc = base.with_axis(axis, value)?;
    sc.output.trace = Some(format!("sweep_{axis}_{idx}.csv"));
    let setup = ClosedLoopSetup::build(&sc)?;
    let trace = match run_setup(&setup) {
        Ok(t) => t,
        Err(abort) => {
            eprintln!("sweep {axis} = {value}: {abort}");
            return Ok(SweepRow {
                value,
                tail_max_ef: f64::NAN,
                ms_error: f64::NAN,
                bound: f64::NAN,
                pass: false,
            });
        }
    };
    write_trace(&trace, &trace_path(&sc, &opts.out_dir), opts.verbose_trace)?;
    let v = verify_trace(&setup, &trace)?;
    let end = trace.times.last().copied().unwrap_or(0.0);
    Ok(SweepRow {
        value,
        tail_max_ef: tail_max_abs(&trace.times, &trace.ef, TAIL_FRACTION),
        ms_error: ms_output_error(&trace, end)?,
        bound: v.report.b_ef,
        pass: v.pass(),
    })
}

/// Runs one sub-scenario per value (in parallel with `jobs` threads) and
/// returns the rows in input order.
pub fn run_sweep(
    base: &Scenario,
    axis: &str,
    values: &[f64],
    jobs: Option<usize>,
    opts: &RunOptions,
) -> Result<Vec<SweepRow>, CliError> {
    if values.is_empty() {
        return Err(CliError::Usage("sweep needs at least one value".into()));
    }
    for v in values {
        base.with_axis(axis, *v)?.validate()?;
    }
    ensure_dir(&opts.out_dir)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start worker pool: {e}")))?;
    pool.install(|| {
        values
            .par_iter()
            .enumerate()
            .map(|(i, v)| sweep_one(base, axis, *v, i, opts))
            .collect()
    })
}

pub fn cmd_sweep(
    config: &Path,
    axis: &str,
    values: &[f64],
    jobs: Option<usize>,
    opts: &RunOptions,
) -> Result<i32, CliError> {
    let sc = load_scenario(config, opts.seed)?;
    let rows = run_sweep(&sc, axis, values, jobs, opts)?;
    let path = opts.out_dir.join(format!("sweep_{axis}.csv"));
    let mut w = csv::Writer::from_path(&path).map_err(csv_err(&path))?;
    w.write_record(["value", "tail_max_ef", "ms_error", "bound", "pass"])
        .map_err(csv_err(&path))?;
    for r in &rows {
        w.write_record([
            fmt_sci(r.value),
            fmt_sci(r.tail_max_ef),
            fmt_sci(r.ms_error),
            fmt_sci(r.bound),
            r.pass.to_string(),
        ])
        .map_err(csv_err(&path))?;
        println!(
            "{axis} = {:<10} tail max |e_f| = {:.4e}  ms e1 = {:.4e}  bound = {:.4e}  {}",
            r.value,
            r.tail_max_ef,
            r.ms_error,
            r.bound,
            if r.pass { "pass" } else { "fail" }
        );
    }
    w.flush().map_err(io_err(&path))?;
    println!("sweep table written to {}", path.display());
    let blown = rows.iter().any(|r| r.tail_max_ef.is_nan());
    Ok(if blown { EXIT_NUMERIC } else { EXIT_OK })
}

/// Writes one `(t, column)` CSV per requested column.
pub fn cmd_plotdata(trace: &Path, columns: &[String], out_dir: &Path) -> Result<i32, CliError> {
    let (header, rows) = read_table(trace)?;
    let t_idx = header
        .iter()
        .position(|c| c == "t")
        .ok_or_else(|| CliError::Usage(format!("{} has no 't' column", trace.display())))?;
    let mut picks = Vec::new();
    for c in columns {
        match header.iter().position(|h| h == c) {
            Some(i) => picks.push((c, i)),
            None => {
                return Err(CliError::Usage(format!(
                    "column '{c}' not in trace; available: {}",
                    header.join(", ")
                )))
            }
        }
    }
    if picks.is_empty() {
        return Err(CliError::Usage("no columns requested".into()));
    }
    ensure_dir(out_dir)?;
    let stem = trace
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "trace".into());
    for (name, idx) in picks {
        let path = out_dir.join(format!("{stem}_{name}.csv"));
        let mut w = csv::Writer::from_path(&path).map_err(csv_err(&path))?;
        w.write_record(["t", name.as_str()]).map_err(csv_err(&path))?;
        for r in &rows {
            w.write_record([fmt_sci(r[t_idx]), fmt_sci(r[idx])])
                .map_err(csv_err(&path))?;
        }
        w.flush().map_err(io_err(&path))?;
        println!("{}", path.display());
    }
    Ok(EXIT_OK)
}

pub fn cmd_lemmas(seed: u64) -> Result<i32, CliError> {
    let (ok, text) = lemma_lines(seed)?;
    print!("{text}");
    Ok(if ok { EXIT_OK } else { EXIT_BOUND })
}
