//! Run configuration.
//!
//! Configs are TOML documents with the sections `problem`, `hyper`,
//! `regularizer`, `compressor` and `diagnostics` plus a few top-level keys.
//! Unknown keys are rejected and out-of-domain values are reported with
//! their line. Omitted values come from a named preset (`cifar-like` by
//! default); [`RunConfig::to_toml`] echoes the fully resolved config.

use std::fmt::Write as _;
use std::path::PathBuf;

use serde::de::{self, Deserializer, Visitor};
use serde::Deserialize;

use crate::algorithms::HyperParams;
use crate::compressor::{CompressorKind, CompressorSpec, Retain};
use crate::error::{Error, Result};
use crate::problem::{BatchSize, HeteroSpread, LossKind, PartitionSpec, SyntheticSpec};
use crate::regularizer::Regularizer;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
pub enum Preset {
    #[serde(rename = "cifar-like")]
    CifarLike,
    #[serde(rename = "mnist-like")]
    MnistLike,
}

impl Preset {
    pub fn name(&self) -> &'static str {
        match self {
            Preset::CifarLike => "cifar-like",
            Preset::MnistLike => "mnist-like",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Fedcef,
    ProxFedavg,
    Pgd,
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::Fedcef => "fedcef",
            Algorithm::ProxFedavg => "prox_fedavg",
            Algorithm::Pgd => "pgd",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Diagnostics {
    pub lyapunov: bool,
    pub transcripts: bool,
}

/// Fully resolved and validated configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub preset: Preset,
    pub algorithm: Algorithm,
    pub seed: u64,
    pub output: Option<PathBuf>,
    pub problem: SyntheticSpec,
    pub hyper: HyperParams,
    pub regularizer: Regularizer,
    pub compressor: CompressorSpec,
    pub diagnostics: Diagnostics,
}

// --- validated scalar fields --------------------------------------------

macro_rules! checked_f64 {
    ($name:ident, $check:expr, $what:literal) => {
        #[derive(Debug, Clone, Copy, Deserialize)]
        #[serde(try_from = "f64")]
        struct $name(f64);

        impl TryFrom<f64> for $name {
            type Error = String;

            fn try_from(v: f64) -> std::result::Result<Self, String> {
                let ok: fn(f64) -> bool = $check;
                if v.is_finite() && ok(v) {
                    Ok($name(v))
                } else {
                    Err(format!("{v} is not {}", $what))
                }
            }
        }
    };
}

checked_f64!(Positive, |v| v > 0.0, "a positive number");
checked_f64!(NonNegative, |v| v >= 0.0, "a nonnegative number");
checked_f64!(UnitRatio, |v| v > 0.0 && v <= 1.0, "in (0, 1]");

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(try_from = "i64")]
struct Count(usize);

impl TryFrom<i64> for Count {
    type Error = String;

    fn try_from(v: i64) -> std::result::Result<Self, String> {
        if v >= 1 {
            Ok(Count(v as usize))
        } else {
            Err(format!("{v} is not a positive integer"))
        }
    }
}

/// `"full"` or a positive sample count.
#[derive(Debug, Clone, Copy)]
struct BatchField(BatchSize);

impl<'de> Deserialize<'de> for BatchField {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = BatchField;

            fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
                f.write_str("\"full\" or a positive integer")
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<BatchField, E> {
                if v >= 1 {
                    Ok(BatchField(BatchSize::Samples(v as usize)))
                } else {
                    Err(E::custom(format!(
                        "batch size {v} is not a positive integer"
                    )))
                }
            }

            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<BatchField, E> {
                if v == "full" {
                    Ok(BatchField(BatchSize::Full))
                } else {
                    Err(E::custom(format!(
                        "batch must be \"full\" or an integer, got {v:?}"
                    )))
                }
            }
        }
        d.deserialize_any(V)
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "snake_case")]
enum LossField {
    SquaredError,
    Logistic,
    SigmoidNonconvex,
    HeteroQuadratic,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "snake_case")]
enum PartitionField {
    Iid,
    Dirichlet,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "snake_case")]
enum RegKind {
    Zero,
    L1,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "snake_case")]
enum CompKind {
    Identity,
    Topk,
    Randk,
}

// --- file form ------------------------------------------------------------

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    preset: Option<Preset>,
    algorithm: Option<Algorithm>,
    seed: Option<u64>,
    output: Option<PathBuf>,
    #[serde(default)]
    problem: ProblemSection,
    #[serde(default)]
    hyper: HyperSection,
    #[serde(default)]
    regularizer: RegSection,
    #[serde(default)]
    compressor: CompSection,
    #[serde(default)]
    diagnostics: DiagSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProblemSection {
    loss: Option<LossField>,
    dim: Option<Count>,
    samples: Option<Count>,
    clients: Option<Count>,
    partition: Option<PartitionField>,
    alpha_d: Option<Positive>,
    center_range: Option<NonNegative>,
    curvature_min: Option<Positive>,
    curvature_max: Option<Positive>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct HyperSection {
    alpha: Option<Positive>,
    eta_g: Option<Positive>,
    #[serde(rename = "K")]
    local_steps: Option<Count>,
    eta: Option<UnitRatio>,
    #[serde(rename = "B")]
    batch: Option<BatchField>,
    #[serde(rename = "T")]
    rounds: Option<Count>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RegSection {
    kind: Option<RegKind>,
    lambda: Option<NonNegative>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct CompSection {
    kind: Option<CompKind>,
    ratio: Option<UnitRatio>,
    count: Option<Count>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct DiagSection {
    lyapunov: Option<bool>,
    transcripts: Option<bool>,
}

// --- presets --------------------------------------------------------------

impl Preset {
    /// Defaults for every field. The cifar-like preset mirrors the larger
    /// benchmark's schedule (T = 400, K = 30, alpha = 0.06, eta_g = 1, B = 64,
    /// Dir(0.6)); mnist-like mirrors the smaller one (T = 65, K = 10,
    /// alpha = 0.1, Dir(0.5)). Both use l1 weight 1e-5 and a synthetic
    /// logistic problem in place of image data.
    pub fn defaults(&self) -> RunConfig {
        let (dim, samples, alpha_d, alpha, k, t) = match self {
            Preset::CifarLike => (100, 2000, 0.6, 0.06, 30, 400),
            Preset::MnistLike => (50, 1000, 0.5, 0.1, 10, 65),
        };
        RunConfig {
            preset: *self,
            algorithm: Algorithm::Fedcef,
            seed: 0,
            output: None,
            problem: SyntheticSpec {
                loss: LossKind::Logistic,
                dim,
                samples,
                clients: 10,
                partition: PartitionSpec::Dirichlet { alpha: alpha_d },
                spread: HeteroSpread::default(),
            },
            hyper: HyperParams {
                alpha,
                eta_g: 1.0,
                local_steps: k,
                momentum: 0.1,
                batch: BatchSize::Samples(64),
                rounds: t,
            },
            regularizer: Regularizer::L1 { lambda: 1e-5 },
            compressor: CompressorSpec::top_ratio(0.1),
            diagnostics: Diagnostics::default(),
        }
    }
}

/// Parse and validate a TOML config.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let file: FileConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    resolve(file)
}

fn resolve(file: FileConfig) -> Result<RunConfig> {
    let preset = file.preset.unwrap_or(Preset::CifarLike);
    let mut cfg = preset.defaults();
    if let Some(a) = file.algorithm {
        cfg.algorithm = a;
    }
    if let Some(s) = file.seed {
        cfg.seed = s;
    }
    cfg.output = file.output;

    let p = file.problem;
    let spec = &mut cfg.problem;
    if let Some(l) = p.loss {
        spec.loss = match l {
            LossField::SquaredError => LossKind::SquaredError,
            LossField::Logistic => LossKind::Logistic,
            LossField::SigmoidNonconvex => LossKind::SigmoidNonconvex,
            LossField::HeteroQuadratic => LossKind::HeteroQuadratic,
        };
    }
    if let Some(Count(d)) = p.dim {
        spec.dim = d;
    }
    if let Some(Count(s)) = p.samples {
        spec.samples = s;
    }
    if let Some(Count(n)) = p.clients {
        spec.clients = n;
    }
    let default_alpha_d = match spec.partition {
        PartitionSpec::Dirichlet { alpha } => alpha,
        PartitionSpec::Iid => 0.6,
    };
    let alpha_d = p.alpha_d.map_or(default_alpha_d, |a| a.0);
    spec.partition = match p.partition {
        Some(PartitionField::Iid) => PartitionSpec::Iid,
        Some(PartitionField::Dirichlet) => PartitionSpec::Dirichlet { alpha: alpha_d },
        None => match spec.partition {
            PartitionSpec::Iid => PartitionSpec::Iid,
            PartitionSpec::Dirichlet { .. } => PartitionSpec::Dirichlet { alpha: alpha_d },
        },
    };
    if let Some(c) = p.center_range {
        spec.spread.center_range = c.0;
    }
    if let Some(c) = p.curvature_min {
        spec.spread.curvature_min = c.0;
    }
    if let Some(c) = p.curvature_max {
        spec.spread.curvature_max = c.0;
    }
    if spec.spread.curvature_max < spec.spread.curvature_min {
        return Err(Error::Config(
            "problem.curvature_max must be at least problem.curvature_min".into(),
        ));
    }
    if spec.loss != LossKind::HeteroQuadratic && spec.samples < spec.clients {
        return Err(Error::Config(format!(
            "problem.samples ({}) must be at least problem.clients ({})",
            spec.samples, spec.clients
        )));
    }

    let h = file.hyper;
    let hp = &mut cfg.hyper;
    if let Some(v) = h.alpha {
        hp.alpha = v.0;
    }
    if let Some(v) = h.eta_g {
        hp.eta_g = v.0;
    }
    if let Some(Count(v)) = h.local_steps {
        hp.local_steps = v;
    }
    if let Some(v) = h.eta {
        hp.momentum = v.0;
    }
    if let Some(BatchField(b)) = h.batch {
        hp.batch = b;
    }
    if let Some(Count(v)) = h.rounds {
        hp.rounds = v;
    }

    let r = file.regularizer;
    let lambda = r.lambda.map_or(cfg.regularizer.lambda(), |l| l.0);
    cfg.regularizer = match r.kind {
        Some(RegKind::Zero) => Regularizer::Zero,
        Some(RegKind::L1) => Regularizer::L1 { lambda },
        None => match cfg.regularizer {
            Regularizer::Zero => Regularizer::Zero,
            Regularizer::L1 { .. } => Regularizer::L1 { lambda },
        },
    };

    let c = file.compressor;
    if c.ratio.is_some() && c.count.is_some() {
        return Err(Error::Config(
            "compressor: set either ratio or count, not both".into(),
        ));
    }
    if let Some(k) = c.kind {
        cfg.compressor.kind = match k {
            CompKind::Identity => CompressorKind::Identity,
            CompKind::Topk => CompressorKind::TopK,
            CompKind::Randk => CompressorKind::RandK,
        };
    }
    if let Some(r) = c.ratio {
        cfg.compressor.retain = Retain::Ratio(r.0);
    }
    if let Some(Count(k)) = c.count {
        cfg.compressor.retain = Retain::Count(k);
    }
    if cfg.compressor.kind == CompressorKind::Identity {
        cfg.compressor = CompressorSpec::identity();
    }
    if cfg.algorithm == Algorithm::Fedcef {
        cfg.compressor
            .resolve(cfg.problem.dim)
            .map_err(|e| Error::Config(format!("compressor: {e}")))?;
    }

    if let Some(l) = file.diagnostics.lyapunov {
        cfg.diagnostics.lyapunov = l;
    }
    if let Some(t) = file.diagnostics.transcripts {
        cfg.diagnostics.transcripts = t;
    }
    Ok(cfg)
}

fn float(v: f64) -> String {
    // Debug prints the shortest representation that round-trips
    let s = format!("{v:?}");
    if s.contains(['.', 'e', 'E']) || s.contains("inf") || s.contains("NaN") {
        s
    } else {
        format!("{s}.0")
    }
}

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for ch in s.chars() {
        match ch {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            c if c.is_control() => {
                let _ = write!(out, "\\u{:04X}", c as u32);
            }
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

impl RunConfig {
    /// Complete TOML form; parsing it yields an identical config.
    pub fn to_toml(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "preset = {}", quote(self.preset.name()));
        let _ = writeln!(s, "algorithm = {}", quote(self.algorithm.name()));
        let _ = writeln!(s, "seed = {}", self.seed);
        if let Some(o) = &self.output {
            let _ = writeln!(s, "output = {}", quote(&o.to_string_lossy()));
        }
        let p = &self.problem;
        let _ = writeln!(s, "\n[problem]");
        let _ = writeln!(s, "loss = {}", quote(p.loss.name()));
        let _ = writeln!(s, "dim = {}", p.dim);
        let _ = writeln!(s, "samples = {}", p.samples);
        let _ = writeln!(s, "clients = {}", p.clients);
        match p.partition {
            PartitionSpec::Iid => {
                let _ = writeln!(s, "partition = \"iid\"");
            }
            PartitionSpec::Dirichlet { alpha } => {
                let _ = writeln!(s, "partition = \"dirichlet\"");
                let _ = writeln!(s, "alpha_d = {}", float(alpha));
            }
        }
        let _ = writeln!(s, "center_range = {}", float(p.spread.center_range));
        let _ = writeln!(s, "curvature_min = {}", float(p.spread.curvature_min));
        let _ = writeln!(s, "curvature_max = {}", float(p.spread.curvature_max));

        let h = &self.hyper;
        let _ = writeln!(s, "\n[hyper]");
        let _ = writeln!(s, "alpha = {}", float(h.alpha));
        let _ = writeln!(s, "eta_g = {}", float(h.eta_g));
        let _ = writeln!(s, "K = {}", h.local_steps);
        let _ = writeln!(s, "eta = {}", float(h.momentum));
        match h.batch {
            BatchSize::Full => {
                let _ = writeln!(s, "B = \"full\"");
            }
            BatchSize::Samples(b) => {
                let _ = writeln!(s, "B = {b}");
            }
        }
        let _ = writeln!(s, "T = {}", h.rounds);

        let _ = writeln!(s, "\n[regularizer]");
        match self.regularizer {
            Regularizer::Zero => {
                let _ = writeln!(s, "kind = \"zero\"");
            }
            Regularizer::L1 { lambda } => {
                let _ = writeln!(s, "kind = \"l1\"");
                let _ = writeln!(s, "lambda = {}", float(lambda));
            }
        }

        let c = &self.compressor;
        let _ = writeln!(s, "\n[compressor]");
        let kind = match c.kind {
            CompressorKind::Identity => "identity",
            CompressorKind::TopK => "topk",
            CompressorKind::RandK => "randk",
        };
        let _ = writeln!(s, "kind = \"{kind}\"");
        match c.retain {
            Retain::Ratio(r) => {
                let _ = writeln!(s, "ratio = {}", float(r));
            }
            Retain::Count(k) => {
                let _ = writeln!(s, "count = {k}");
            }
        }

        let _ = writeln!(s, "\n[diagnostics]");
        let _ = writeln!(s, "lyapunov = {}", self.diagnostics.lyapunov);
        let _ = writeln!(s, "transcripts = {}", self.diagnostics.transcripts);
        s
    }
}

/// Set a dotted key (`section.key` or `key`) in a TOML document to a value
/// written in TOML syntax, e.g. `hyper.alpha` = `0.05` or `compressor.kind` =
/// `"topk"`. Bare words that are not valid TOML values are taken as strings.
pub fn override_key(text: &str, key: &str, value: &str) -> Result<String> {
    let mut doc: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    let parsed: toml::Value = match format!("v = {value}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("just inserted"),
        Err(_) => toml::Value::String(value.to_string()),
    };
    let parts: Vec<&str> = key.split('.').collect();
    let (last, sections) = parts
        .split_last()
        .ok_or_else(|| Error::Config("empty key".into()))?;
    let mut table = &mut doc;
    for sec in sections {
        table = table
            .entry(sec.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("{sec} is not a section")))?;
    }
    table.insert(last.to_string(), parsed);
    Ok(doc.to_string())
}
