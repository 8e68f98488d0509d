//! Experiment runner, metrics CSV format, parameter sweeps and run comparison.
//!
//! A metrics file starts with `#` comment lines holding the resolved config
//! (between `# config:` and `# end config`), the smoothness estimate and the
//! step-condition report, followed by a CSV table with the columns in
//! [`METRICS_COLUMNS`]. Floats are written with 17 significant digits so a
//! file read back reproduces the in-memory values exactly.

use std::fmt;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use log::info;

use crate::algorithms::{
    run_centralized_pgd_from, run_fedcef, run_prox_fedavg, RunOptions, RunOutput,
};
use crate::config::{override_key, parse_config, Algorithm, RunConfig};
use crate::error::{Error, Result};
use crate::metrics::{MetricsRow, MetricsSeries};
use crate::problem::{generate_synthetic, FederatedProblem};
use crate::rng::derive_stream;
use crate::vector::ParamVector;

pub const METRICS_COLUMNS: [&str; 8] = [
    "t",
    "F",
    "prox_grad_sq",
    "uplink_bytes_cum",
    "downlink_bytes_cum",
    "nnz",
    "lyapunov",
    "condition_ok",
];

const CONFIG_BEGIN: &str = "# config:";
const CONFIG_END: &str = "# end config";

#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: RunConfig,
    pub problem: FederatedProblem,
    pub output: RunOutput,
}

/// Generate the configured synthetic problem from the `problem` stream.
pub fn build_problem(cfg: &RunConfig) -> Result<FederatedProblem> {
    generate_synthetic(&cfg.problem, &derive_stream(cfg.seed, "problem")?)
}

pub fn run_experiment(cfg: &RunConfig) -> Result<Experiment> {
    let problem = build_problem(cfg)?;
    let opts = RunOptions {
        initial: None,
        lyapunov: cfg.diagnostics.lyapunov,
        keep_transcripts: cfg.diagnostics.transcripts,
    };
    let output = match cfg.algorithm {
        Algorithm::Fedcef => run_fedcef(
            &problem,
            &cfg.regularizer,
            &cfg.hyper,
            &cfg.compressor,
            cfg.seed,
            &opts,
        )?,
        Algorithm::ProxFedavg => {
            run_prox_fedavg(&problem, &cfg.regularizer, &cfg.hyper, cfg.seed, &opts)?
        }
        Algorithm::Pgd => {
            info!("pgd is centralized; the compressor section is ignored");
            run_pgd(&problem, cfg)?
        }
    };
    Ok(Experiment {
        config: cfg.clone(),
        problem,
        output,
    })
}

fn run_pgd(problem: &FederatedProblem, cfg: &RunConfig) -> Result<RunOutput> {
    cfg.hyper.validate()?;
    let step = cfg.hyper.beta();
    let reg = &cfg.regularizer;
    let iterates = run_centralized_pgd_from(
        problem,
        reg,
        step,
        cfg.hyper.rounds,
        &ParamVector::zeros(problem.dim()),
    )?;
    let rows = iterates
        .iter()
        .enumerate()
        .map(|(t, z)| MetricsRow::measure(problem, reg, z, step, t, 0, 0, None, true))
        .collect::<Result<Vec<_>>>()?;
    Ok(RunOutput {
        series: MetricsSeries { rows },
        iterates,
        transcripts: Vec::new(),
        step_report: None,
        control_deviation: Vec::new(),
    })
}

/// Write the commented header and the metrics table.
pub fn write_metrics<W: Write>(exp: &Experiment, mut out: W) -> Result<()> {
    writeln!(out, "# fedcef metrics")?;
    writeln!(out, "{CONFIG_BEGIN}")?;
    for line in exp.config.to_toml().lines() {
        writeln!(out, "# {line}")?;
    }
    writeln!(out, "{CONFIG_END}")?;
    let l = exp.problem.smoothness();
    writeln!(out, "# smoothness_L = {:.16e}", l.value)?;
    writeln!(out, "# smoothness_converged = {}", l.converged)?;
    writeln!(out, "# beta = {:.16e}", exp.config.hyper.beta())?;
    if let Some(r) = &exp.output.step_report {
        writeln!(
            out,
            "# beta_bound = {:.16e} ok = {}",
            r.beta_bound, r.beta_ok
        )?;
        writeln!(
            out,
            "# eta_g_bound = {:.16e} ok = {}",
            r.eta_g_bound, r.eta_g_ok
        )?;
        writeln!(
            out,
            "# alpha_local_bound = {:.16e} ok = {}",
            r.alpha_local_bound, r.alpha_ok
        )?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(METRICS_COLUMNS)?;
    for r in &exp.output.series.rows {
        w.write_record([
            r.round.to_string(),
            format!("{:.16e}", r.objective),
            format!("{:.16e}", r.prox_grad_sq),
            r.uplink_bytes.to_string(),
            r.downlink_bytes.to_string(),
            r.nnz.to_string(),
            r.lyapunov.map(|v| format!("{v:.16e}")).unwrap_or_default(),
            r.condition_ok.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_metrics_file(exp: &Experiment, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let file = fs::File::create(path)?;
    write_metrics(exp, std::io::BufWriter::new(file))
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, line: u64) -> Result<T> {
    let raw = rec.get(i).unwrap_or("");
    raw.parse().map_err(|_| {
        Error::Csv(format!(
            "line {line}: cannot parse {} value {raw:?}",
            METRICS_COLUMNS[i]
        ))
    })
}

/// Read the table of a metrics file. A header that does not match
/// [`METRICS_COLUMNS`] is a schema error.
pub fn read_metrics<R: Read>(input: R) -> Result<MetricsSeries> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(input);
    let header = rdr.headers()?.clone();
    if header.iter().ne(METRICS_COLUMNS) {
        return Err(Error::Csv(format!(
            "schema mismatch: expected columns {}, found {}",
            METRICS_COLUMNS.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let lyap = rec.get(6).unwrap_or("");
        rows.push(MetricsRow {
            round: field(&rec, 0, line)?,
            objective: field(&rec, 1, line)?,
            prox_grad_sq: field(&rec, 2, line)?,
            uplink_bytes: field(&rec, 3, line)?,
            downlink_bytes: field(&rec, 4, line)?,
            nnz: field(&rec, 5, line)?,
            lyapunov: if lyap.is_empty() {
                None
            } else {
                Some(field(&rec, 6, line)?)
            },
            condition_ok: field(&rec, 7, line)?,
        });
    }
    Ok(MetricsSeries { rows })
}

pub fn read_metrics_file(path: &Path) -> Result<MetricsSeries> {
    read_metrics(fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?)
}

/// Recover the config echoed in a metrics file header.
pub fn config_from_metrics(text: &str) -> Result<RunConfig> {
    let mut lines = text.lines().skip_while(|l| l.trim_end() != CONFIG_BEGIN);
    if lines.next().is_none() {
        return Err(Error::Config("metrics file has no config echo".into()));
    }
    let mut body = String::new();
    for line in lines {
        if line.trim_end() == CONFIG_END {
            return parse_config(&body);
        }
        let content = line
            .strip_prefix('#')
            .ok_or_else(|| Error::Config("unterminated config echo".into()))?;
        body.push_str(content.strip_prefix(' ').unwrap_or(content));
        body.push('\n');
    }
    Err(Error::Config("unterminated config echo".into()))
}

fn file_stem_for(key: &str, value: &str) -> String {
    let clean: String = value
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '.' || c == '-' {
                c
            } else {
                '_'
            }
        })
        .collect();
    format!("{key}={clean}.csv")
}

/// Run the base config once per value of `key` and write one metrics file
/// per run into `out_dir`. Returns the written paths in input order.
pub fn sweep(base: &str, key: &str, values: &[String], out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::with_capacity(values.len());
    for value in values {
        let text = override_key(base, key, value)?;
        let cfg = parse_config(&text)?;
        info!("sweep {key} = {value}");
        let exp = run_experiment(&cfg)?;
        let path = out_dir.join(file_stem_for(key, value));
        write_metrics_file(&exp, &path)?;
        written.push(path);
    }
    Ok(written)
}

/// Side-by-side view of two metric series aligned on the round index.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    /// `(t, row of a, row of b)`; a missing side means that run was shorter.
    pub rows: Vec<(usize, Option<MetricsRow>, Option<MetricsRow>)>,
    pub final_uplink: (u64, u64),
    /// `1 - uplink_b / uplink_a` at the last round of each run.
    pub uplink_savings: Option<f64>,
    pub threshold: Option<f64>,
    /// Total bytes (uplink plus downlink) at the first round whose objective
    /// is at or below the threshold.
    pub bytes_to_threshold: (Option<u64>, Option<u64>),
}

fn total_bytes(r: &MetricsRow) -> u64 {
    r.uplink_bytes + r.downlink_bytes
}

fn first_reaching(s: &MetricsSeries, threshold: f64) -> Option<u64> {
    s.rows
        .iter()
        .find(|r| r.objective <= threshold)
        .map(total_bytes)
}

pub fn compare_runs(
    a: &MetricsSeries,
    b: &MetricsSeries,
    threshold: Option<f64>,
) -> Result<Comparison> {
    let (Some(la), Some(lb)) = (a.last(), b.last()) else {
        return Err(Error::Csv("cannot compare an empty metrics series".into()));
    };
    let mut rounds: Vec<usize> = a.rows.iter().chain(&b.rows).map(|r| r.round).collect();
    rounds.sort_unstable();
    rounds.dedup();
    let find = |s: &MetricsSeries, t: usize| s.rows.iter().find(|r| r.round == t).cloned();
    let rows = rounds
        .into_iter()
        .map(|t| (t, find(a, t), find(b, t)))
        .collect();
    let uplink_savings =
        (la.uplink_bytes > 0).then(|| 1.0 - lb.uplink_bytes as f64 / la.uplink_bytes as f64);
    let bytes_to_threshold = match threshold {
        Some(th) => (first_reaching(a, th), first_reaching(b, th)),
        None => (None, None),
    };
    Ok(Comparison {
        rows,
        final_uplink: (la.uplink_bytes, lb.uplink_bytes),
        uplink_savings,
        threshold,
        bytes_to_threshold,
    })
}

impl fmt::Display for Comparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:>6}  {:>14} {:>14} {:>12}  {:>14} {:>14} {:>12}",
            "t", "bytes_a", "F_a", "G2_a", "bytes_b", "F_b", "G2_b"
        )?;
        let side = |r: &Option<MetricsRow>| match r {
            Some(r) => format!(
                "{:>14} {:>14.6e} {:>12.4e}",
                total_bytes(r),
                r.objective,
                r.prox_grad_sq
            ),
            None => format!("{:>14} {:>14} {:>12}", "-", "-", "-"),
        };
        for (t, a, b) in &self.rows {
            writeln!(f, "{t:>6}  {}  {}", side(a), side(b))?;
        }
        writeln!(
            f,
            "final uplink bytes: a = {}, b = {}",
            self.final_uplink.0, self.final_uplink.1
        )?;
        match self.uplink_savings {
            Some(s) => writeln!(f, "uplink savings of b over a: {:.2}%", 100.0 * s)?,
            None => writeln!(f, "uplink savings of b over a: n/a")?,
        }
        if let Some(th) = self.threshold {
            let show = |v: Option<u64>| v.map_or("not reached".to_string(), |b| b.to_string());
            writeln!(
                f,
                "bytes to F <= {th:e}: a = {}, b = {}",
                show(self.bytes_to_threshold.0),
                show(self.bytes_to_threshold.1)
            )?;
        }
        Ok(())
    }
}
