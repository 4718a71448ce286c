//! Config-driven batch verification.
//!
//! A config is one JSON document:
//!
//! ```json
//! {
//!   "metric": "funk",
//!   "dimension": 2,
//!   "sampling": { "count": 500, "seed": 7 },
//!   "checks": ["symmetry", "rapcsak", { "name": "curvature", "params": { "lambda": -0.25 } }],
//!   "tolerances": { "symmetry": 1e-9 }
//! }
//! ```
//!
//! `metric` is a builtin name, `{"name", "params"}`, `{"phi": "<expr in r,u,v>"}`,
//! `{"family": {"f", "g", "h", "baseline", "domain_radius"}}` or
//! `{"general": {"F": "<expr in x1..,y1..>", "n"}}`. Checks may also be written
//! `"curvature(lambda=-0.25)"`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::ser::{Error as _, SerializeMap};
use serde::{Serialize, Serializer};
use serde_json::value::RawValue;
use serde_json::{Map, Value};
use thiserror::Error;

use crate::error::Error;
use crate::family::{build_projective_metric, ProjectiveFamilySpec};
use crate::geodesics::{checked_geodesic, spray_projectivity_residual, GeodesicError};
use crate::metric::{
    convexity_report, det_g_closed_form, fundamental_tensor_ad, homogeneity_residual, is_positive_definite,
    reversibility_residual, riemannian_probe, GeneralMetric, Metric, MetricSample, SphericalMetric, BUILTIN_NAMES,
};
use crate::projective::{
    constant_curvature_verdict, lemma_residual, max_component, projective_pde_residuals, rapcsak_residual,
    CurvatureStatus, CurvatureTolerances,
};
use crate::sampling::{sample_domain, SampleSpec};
use crate::symmetry::{killing_scalar_residual, killing_tensor_residual, RotationField};

pub const CHECK_NAMES: [&str; 12] = [
    "symmetry",
    "killing_tensor",
    "convexity",
    "homogeneity",
    "determinant",
    "rapcsak",
    "projective_pde",
    "curvature",
    "componentwise_curvature",
    "spray",
    "geodesics",
    "conjecture",
];

/// Keys accepted under `tolerances`, with their defaults.
pub const DEFAULT_TOLERANCES: [(&str, f64); 14] = [
    ("symmetry", 1e-9),
    ("killing_tensor", 1e-8),
    ("convexity", 0.0),
    ("homogeneity", 1e-10),
    ("determinant", 1e-8),
    ("rapcsak", 1e-8),
    ("projective_pde", 1e-8),
    ("curvature", 1e-6),
    ("curvature_pde", 1e-8),
    ("componentwise_curvature", 1e-8),
    ("spray", 1e-8),
    ("geodesics", 1e-6),
    ("conjecture", 1e-9),
    ("riemannian", 1e-9),
];

const HOMOGENEITY_FACTORS: [f64; 3] = [0.5, 2.0, 3.7];

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("invalid JSON: {0}")]
    Json(String),
    #[error("{0}")]
    Invalid(String),
    #[error("unknown {kind} \"{name}\"{}", suggestion_text(.suggestion))]
    Unknown { kind: &'static str, name: String, suggestion: Option<String> },
    #[error("metric: {0}")]
    Metric(#[from] Error),
}

impl ConfigError {
    fn unknown(kind: &'static str, name: &str, candidates: &[&str]) -> Self {
        ConfigError::Unknown { kind, name: name.to_string(), suggestion: suggest(name, candidates) }
    }
}

fn suggestion_text(s: &Option<String>) -> String {
    s.as_ref().map(|s| format!("; did you mean \"{s}\"?")).unwrap_or_default()
}

/// Closest candidate by Damerau–Levenshtein distance, if close enough to be a typo.
pub fn suggest(name: &str, candidates: &[&str]) -> Option<String> {
    candidates
        .iter()
        .map(|c| (strsim::damerau_levenshtein(name, c), *c))
        .filter(|(d, c)| *d <= 2.max(c.len() / 3))
        .min()
        .map(|(_, c)| c.to_string())
}

type Params = BTreeMap<String, f64>;

#[derive(Debug, Clone)]
pub enum MetricConfig {
    Builtin { name: String, params: Params },
    Phi { name: String, phi: String, domain_radius: f64 },
    Family { name: String, f: String, g: Option<String>, h: Option<String>, domain_radius: f64 },
    General { name: String, source: String, n: usize, domain_radius: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckConfig {
    pub name: String,
    pub params: Params,
}

#[derive(Debug, Clone)]
pub struct Config {
    pub metric: MetricConfig,
    pub dimension: usize,
    pub count: usize,
    pub seed: u64,
    pub checks: Vec<CheckConfig>,
    pub tolerances: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub samples: Option<usize>,
    pub dump_geodesics: Option<PathBuf>,
}

fn check_keys(obj: &Map<String, Value>, allowed: &[&str], what: &'static str) -> Result<(), ConfigError> {
    for key in obj.keys() {
        if !allowed.contains(&key.as_str()) {
            return Err(ConfigError::unknown(what, key, allowed));
        }
    }
    Ok(())
}

fn as_number(v: &Value, what: &str) -> Result<f64, ConfigError> {
    v.as_f64().ok_or_else(|| ConfigError::Invalid(format!("{what} must be a number")))
}

fn as_count(v: &Value, what: &str) -> Result<u64, ConfigError> {
    v.as_u64().ok_or_else(|| ConfigError::Invalid(format!("{what} must be a non-negative integer")))
}

fn as_string(v: &Value, what: &str) -> Result<String, ConfigError> {
    v.as_str().map(str::to_string).ok_or_else(|| ConfigError::Invalid(format!("{what} must be a string")))
}

fn radius_of(obj: &Map<String, Value>) -> Result<f64, ConfigError> {
    match obj.get("domain_radius") {
        None | Some(Value::Null) => Ok(f64::INFINITY),
        Some(v) => {
            let r = as_number(v, "domain_radius")?;
            if r > 0.0 {
                Ok(r)
            } else {
                Err(ConfigError::Invalid("domain_radius must be positive".into()))
            }
        }
    }
}

fn parse_params(v: &Value, what: &str) -> Result<Params, ConfigError> {
    let obj = v.as_object().ok_or_else(|| ConfigError::Invalid(format!("{what} must be an object")))?;
    obj.iter().map(|(k, v)| Ok((k.clone(), as_number(v, &format!("{what}.{k}"))?))).collect()
}

fn parse_metric(v: &Value) -> Result<MetricConfig, ConfigError> {
    if let Some(name) = v.as_str() {
        return Ok(MetricConfig::Builtin { name: name.to_string(), params: Params::new() });
    }
    let obj = v.as_object().ok_or_else(|| ConfigError::Invalid("metric must be a string or an object".into()))?;
    let label = obj.get("name").map(|n| as_string(n, "metric.name")).transpose()?;
    if let Some(fam) = obj.get("family") {
        check_keys(obj, &["family", "name"], "metric key")?;
        let fam = fam.as_object().ok_or_else(|| ConfigError::Invalid("metric.family must be an object".into()))?;
        check_keys(fam, &["f", "g", "h", "baseline", "domain_radius"], "family key")?;
        let f = as_string(fam.get("f").ok_or_else(|| ConfigError::Invalid("family needs f".into()))?, "family.f")?;
        let g = fam.get("g").map(|g| as_string(g, "family.g")).transpose()?;
        let h = fam.get("h").map(|h| as_string(h, "family.h")).transpose()?;
        let baseline = fam.get("baseline").map(|b| as_string(b, "family.baseline")).transpose()?;
        match (baseline.as_deref(), &h) {
            (None, _) | (Some("abs_corrected"), Some(_)) | (Some("plain"), None) => {}
            (Some("abs_corrected"), None) => return Err(ConfigError::Invalid("abs_corrected baseline needs h".into())),
            (Some("plain"), Some(_)) => return Err(ConfigError::Invalid("plain baseline takes no h".into())),
            (Some(other), _) => return Err(ConfigError::unknown("baseline", other, &["plain", "abs_corrected"])),
        }
        return Ok(MetricConfig::Family {
            name: label.unwrap_or_else(|| "family".into()),
            f,
            g,
            h,
            domain_radius: radius_of(fam)?,
        });
    }
    if let Some(general) = obj.get("general") {
        check_keys(obj, &["general", "name"], "metric key")?;
        let gen = general.as_object().ok_or_else(|| ConfigError::Invalid("metric.general must be an object".into()))?;
        check_keys(gen, &["F", "n", "domain_radius"], "general key")?;
        let source =
            as_string(gen.get("F").ok_or_else(|| ConfigError::Invalid("general needs F".into()))?, "general.F")?;
        let n = gen.get("n").map(|n| as_count(n, "general.n")).transpose()?.unwrap_or(2) as usize;
        return Ok(MetricConfig::General {
            name: label.unwrap_or_else(|| source.clone()),
            source,
            n,
            domain_radius: radius_of(gen)?,
        });
    }
    if let Some(phi) = obj.get("phi") {
        check_keys(obj, &["phi", "name", "domain_radius"], "metric key")?;
        let phi = as_string(phi, "metric.phi")?;
        return Ok(MetricConfig::Phi {
            name: label.unwrap_or_else(|| phi.clone()),
            phi,
            domain_radius: radius_of(obj)?,
        });
    }
    check_keys(obj, &["name", "params"], "metric key")?;
    let name = label.ok_or_else(|| ConfigError::Invalid("metric needs name, phi, family or general".into()))?;
    let params = obj.get("params").map(|p| parse_params(p, "metric.params")).transpose()?.unwrap_or_default();
    Ok(MetricConfig::Builtin { name, params })
}

/// `name` or `name(key=value, ...)`.
fn parse_check_string(s: &str) -> Result<CheckConfig, ConfigError> {
    let s = s.trim();
    let Some(open) = s.find('(') else {
        return Ok(CheckConfig { name: s.to_string(), params: Params::new() });
    };
    let inner =
        s[open + 1..].strip_suffix(')').ok_or_else(|| ConfigError::Invalid(format!("check \"{s}\": missing ')'")))?;
    let mut params = Params::new();
    for part in inner.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| ConfigError::Invalid(format!("check \"{s}\": expected key=value, got \"{part}\"")))?;
        let value = v
            .trim()
            .parse::<f64>()
            .map_err(|_| ConfigError::Invalid(format!("check \"{s}\": \"{}\" is not a number", v.trim())))?;
        params.insert(k.trim().to_string(), value);
    }
    Ok(CheckConfig { name: s[..open].trim().to_string(), params })
}

fn parse_check(v: &Value) -> Result<CheckConfig, ConfigError> {
    let mut check = if let Some(s) = v.as_str() {
        parse_check_string(s)?
    } else {
        let obj =
            v.as_object().ok_or_else(|| ConfigError::Invalid("each check must be a string or an object".into()))?;
        check_keys(obj, &["name", "params"], "check key")?;
        let name =
            as_string(obj.get("name").ok_or_else(|| ConfigError::Invalid("check needs a name".into()))?, "check.name")?;
        let params = obj.get("params").map(|p| parse_params(p, "check.params")).transpose()?.unwrap_or_default();
        CheckConfig { name, params }
    };
    if !CHECK_NAMES.contains(&check.name.as_str()) {
        return Err(ConfigError::unknown("check", &check.name, &CHECK_NAMES));
    }
    if let Some(l) = check.params.remove("λ") {
        check.params.insert("lambda".into(), l);
    }
    let allowed = allowed_params(&check.name);
    for key in check.params.keys() {
        if !allowed.contains(&key.as_str()) {
            return Err(ConfigError::unknown("parameter", key, allowed));
        }
    }
    Ok(check)
}

fn allowed_params(check: &str) -> &'static [&'static str] {
    match check {
        "curvature" => &["lambda", "tolerance", "pde_tolerance"],
        "componentwise_curvature" => &["lambda", "tolerance", "count"],
        "geodesics" => &["tolerance", "count", "horizon", "steps"],
        "conjecture" => &["tolerance", "riemannian_tolerance", "curvature_tolerance"],
        "convexity" => &[],
        _ => &["tolerance"],
    }
}

pub fn parse_config(text: &str) -> Result<Config, ConfigError> {
    let root: Value = serde_json::from_str(text).map_err(|e| ConfigError::Json(e.to_string()))?;
    let obj = root.as_object().ok_or_else(|| ConfigError::Invalid("config must be a JSON object".into()))?;
    check_keys(obj, &["metric", "dimension", "n", "sampling", "count", "seed", "checks", "tolerances"], "config key")?;
    let metric = parse_metric(obj.get("metric").ok_or_else(|| ConfigError::Invalid("config needs a metric".into()))?)?;
    let dimension = match (obj.get("dimension").or(obj.get("n")), &metric) {
        (Some(v), _) => as_count(v, "dimension")? as usize,
        (None, MetricConfig::General { n, .. }) => *n,
        (None, _) => 2,
    };
    if let MetricConfig::General { n, .. } = &metric {
        if *n != dimension {
            return Err(ConfigError::Invalid(format!("dimension {dimension} differs from general metric n = {n}")));
        }
    }
    let mut count = 500u64;
    let mut seed = 0u64;
    if let Some(s) = obj.get("sampling") {
        let s = s.as_object().ok_or_else(|| ConfigError::Invalid("sampling must be an object".into()))?;
        check_keys(s, &["count", "seed"], "sampling key")?;
        if let Some(c) = s.get("count") {
            count = as_count(c, "sampling.count")?;
        }
        if let Some(c) = s.get("seed") {
            seed = as_count(c, "sampling.seed")?;
        }
    }
    if let Some(c) = obj.get("count") {
        count = as_count(c, "count")?;
    }
    if let Some(c) = obj.get("seed") {
        seed = as_count(c, "seed")?;
    }
    let checks = obj
        .get("checks")
        .and_then(Value::as_array)
        .ok_or_else(|| ConfigError::Invalid("checks must be an array".into()))?
        .iter()
        .map(parse_check)
        .collect::<Result<Vec<_>, _>>()?;
    if checks.is_empty() {
        return Err(ConfigError::Invalid("no checks requested".into()));
    }
    let mut tolerances: BTreeMap<String, f64> = DEFAULT_TOLERANCES.iter().map(|(k, v)| (k.to_string(), *v)).collect();
    if let Some(t) = obj.get("tolerances") {
        let keys: Vec<&str> = DEFAULT_TOLERANCES.iter().map(|(k, _)| *k).collect();
        for (k, v) in parse_params(t, "tolerances")? {
            if !keys.contains(&k.as_str()) {
                return Err(ConfigError::unknown("tolerance", &k, &keys));
            }
            tolerances.insert(k, v);
        }
    }
    Ok(Config { metric, dimension, count: count as usize, seed, checks, tolerances })
}

pub fn load_config(path: &Path) -> Result<Config, ConfigError> {
    let text = fs::read_to_string(path)
        .map_err(|e| ConfigError::Io { path: path.display().to_string(), message: e.to_string() })?;
    parse_config(&text)
}

pub fn build_metric(config: &MetricConfig, dimension: usize) -> Result<Metric, ConfigError> {
    Ok(match config {
        MetricConfig::Builtin { name, params } => {
            if !BUILTIN_NAMES.contains(&name.as_str()) {
                return Err(ConfigError::unknown("metric", name, &BUILTIN_NAMES));
            }
            Metric::builtin(name, params)?
        }
        MetricConfig::Phi { name, phi, domain_radius } => {
            Metric::from(SphericalMetric::from_phi_expr(name, phi, *domain_radius)?)
        }
        MetricConfig::Family { name, f, g, h, domain_radius } => {
            let spec = ProjectiveFamilySpec::parse(f, g.as_deref(), h.as_deref())?.with_domain_radius(*domain_radius);
            Metric::from(build_projective_metric(spec, name)?)
        }
        MetricConfig::General { name, source, n, domain_radius } => {
            if *n != dimension {
                return Err(ConfigError::Invalid(format!("dimension {dimension} differs from general metric n = {n}")));
            }
            Metric::from(GeneralMetric::from_expr(name, source, *n, *domain_radius)?)
        }
    })
}

/// A float serialized with 17 significant digits; non-finite values become `null`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Num(pub f64);

impl Serialize for Num {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if self.0.is_finite() {
            RawValue::from_string(format!("{:.16e}", self.0)).map_err(S::Error::custom)?.serialize(s)
        } else {
            s.serialize_none()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Detail {
    Number(f64),
    Text(String),
    Flag(bool),
}

impl Serialize for Detail {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Detail::Number(x) => Num(*x).serialize(s),
            Detail::Text(t) => s.serialize_str(t),
            Detail::Flag(b) => s.serialize_bool(*b),
        }
    }
}

impl std::fmt::Display for Detail {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Detail::Number(x) => write!(f, "{x:.6e}"),
            Detail::Text(t) => f.write_str(t),
            Detail::Flag(b) => write!(f, "{b}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorstPoint {
    pub index: usize,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl Serialize for WorstPoint {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut m = s.serialize_map(Some(3))?;
        m.serialize_entry("index", &self.index)?;
        m.serialize_entry("x", &self.x.iter().map(|c| Num(*c)).collect::<Vec<_>>())?;
        m.serialize_entry("y", &self.y.iter().map(|c| Num(*c)).collect::<Vec<_>>())?;
        m.end()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckRecord {
    pub check: String,
    pub metric: String,
    pub samples: usize,
    pub max_residual: f64,
    pub tolerance: f64,
    pub worst: Option<WorstPoint>,
    pub pass: bool,
    pub details: Vec<(String, Detail)>,
    pub error: Option<String>,
}

impl Serialize for CheckRecord {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut m = s.serialize_map(None)?;
        m.serialize_entry("check", &self.check)?;
        m.serialize_entry("metric", &self.metric)?;
        m.serialize_entry("samples", &self.samples)?;
        m.serialize_entry("max_residual", &Num(self.max_residual))?;
        m.serialize_entry("tolerance", &Num(self.tolerance))?;
        m.serialize_entry("worst_point", &self.worst)?;
        m.serialize_entry("pass", &self.pass)?;
        if !self.details.is_empty() {
            let details: Vec<_> = self.details.iter().map(|(k, v)| (k.as_str(), v)).collect();
            m.serialize_entry("details", &OrderedMap(&details))?;
        }
        if let Some(e) = &self.error {
            m.serialize_entry("error", e)?;
        }
        m.end()
    }
}

struct OrderedMap<'a>(&'a [(&'a str, &'a Detail)]);

impl Serialize for OrderedMap<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_map(self.0.iter().map(|(k, v)| (*k, *v)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub metric: String,
    pub dimension: usize,
    pub seed: u64,
    pub samples: usize,
    pub checks: Vec<CheckRecord>,
}

impl Serialize for Report {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut m = s.serialize_map(Some(6))?;
        m.serialize_entry("metric", &self.metric)?;
        m.serialize_entry("dimension", &self.dimension)?;
        m.serialize_entry("seed", &self.seed)?;
        m.serialize_entry("samples", &self.samples)?;
        m.serialize_entry("checks", &self.checks)?;
        m.serialize_entry("pass", &self.pass())?;
        m.end()
    }
}

impl Report {
    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn exit_code(&self) -> i32 {
        if self.pass() {
            0
        } else {
            1
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ =
            writeln!(out, "metric {}  n={}  samples={}  seed={}", self.metric, self.dimension, self.samples, self.seed);
        let width = self.checks.iter().map(|c| c.check.len()).max().unwrap_or(5).max(5);
        let _ =
            writeln!(out, "{:<width$}  {:>8}  {:>14}  {:>10}  result", "check", "samples", "max residual", "tolerance");
        for c in &self.checks {
            let _ = writeln!(
                out,
                "{:<width$}  {:>8}  {:>14.6e}  {:>10.1e}  {}",
                c.check,
                c.samples,
                c.max_residual,
                c.tolerance,
                if c.pass { "PASS" } else { "FAIL" }
            );
            for (k, v) in &c.details {
                let _ = writeln!(out, "{:<width$}    {k}: {v}", "");
            }
            if let Some(w) = &c.worst {
                let _ = writeln!(out, "{:<width$}    worst sample {}: x = {:?}, y = {:?}", "", w.index, w.x, w.y);
            }
            if let Some(e) = &c.error {
                let _ = writeln!(out, "{:<width$}    error: {e}", "");
            }
        }
        let _ = writeln!(out, "overall: {}", if self.pass() { "PASS" } else { "FAIL" });
        out
    }
}

/// Largest value with its index; NaN ranks above everything; ties keep the first.
fn ordered_max(values: &[f64]) -> (f64, Option<usize>) {
    let mut best: (f64, Option<usize>) = (0.0, None);
    for (i, &v) in values.iter().enumerate() {
        let key = if v.is_nan() { f64::INFINITY } else { v };
        let cur = if best.0.is_nan() { f64::INFINITY } else { best.0 };
        if best.1.is_none() || key > cur {
            best = (v, Some(i));
        }
    }
    best
}

struct Context<'a> {
    metric: &'a Metric,
    samples: &'a [MetricSample],
    tolerances: &'a BTreeMap<String, f64>,
    dump_dir: Option<&'a Path>,
}

impl Context<'_> {
    fn record(&self, check: &str, tolerance: f64) -> CheckRecord {
        CheckRecord {
            check: check.to_string(),
            metric: self.metric.name().to_string(),
            samples: self.samples.len(),
            max_residual: 0.0,
            tolerance,
            worst: None,
            pass: false,
            details: Vec::new(),
            error: None,
        }
    }

    fn worst(&self, index: Option<usize>) -> Option<WorstPoint> {
        index.map(|i| WorstPoint { index: i, x: self.samples[i].x.clone(), y: self.samples[i].y.clone() })
    }

    fn spherical(&self, check: &str) -> Result<&SphericalMetric, ConfigError> {
        self.metric
            .as_spherical()
            .ok_or_else(|| ConfigError::Invalid(format!("check {check} needs a metric given by φ(r, u, v)")))
    }

    /// Per-sample residuals reduced in sample order; the first failing sample aborts the record.
    fn per_sample<F>(&self, check: &str, tolerance: f64, f: F) -> CheckRecord
    where
        F: Fn(&MetricSample) -> crate::Result<f64> + Sync,
    {
        let values: Vec<crate::Result<f64>> = self.samples.par_iter().map(&f).collect();
        let mut rec = self.record(check, tolerance);
        let mut ok = Vec::with_capacity(values.len());
        for (i, v) in values.into_iter().enumerate() {
            match v {
                Ok(v) => ok.push(v),
                Err(e) => {
                    rec.max_residual = f64::NAN;
                    rec.worst = self.worst(Some(i));
                    rec.error = Some(format!("sample {i}: {e}"));
                    return rec;
                }
            }
        }
        let (max, idx) = ordered_max(&ok);
        rec.max_residual = max;
        rec.worst = self.worst(idx);
        rec.pass = max <= tolerance;
        rec
    }
}

fn tol(ctx: &Context, check: &CheckConfig, key: &str) -> f64 {
    check.params.get("tolerance").copied().unwrap_or(ctx.tolerances[key])
}

fn run_check(ctx: &Context, check: &CheckConfig) -> Result<CheckRecord, ConfigError> {
    let name = check.name.as_str();
    let metric = ctx.metric;
    Ok(match name {
        "symmetry" => {
            let n = ctx.samples[0].dim();
            let fields = RotationField::all(n);
            let mut rec = ctx.per_sample(name, tol(ctx, check, name), |s| {
                fields.iter().try_fold(0.0f64, |m, f| Ok(m.max(killing_scalar_residual(metric, f, &s.x, &s.y)?)))
            });
            rec.details.push(("fields".into(), Detail::Number(fields.len() as f64)));
            rec.details.push(("verdict".into(), Detail::Text(symmetry_word(rec.pass).into())));
            rec
        }
        "killing_tensor" => {
            let fields = RotationField::all(ctx.samples[0].dim());
            ctx.per_sample(name, tol(ctx, check, name), |s| {
                fields
                    .iter()
                    .try_fold(0.0f64, |m, f| Ok(m.max(killing_tensor_residual(metric, f, &s.x, &s.y)?.relative)))
            })
        }
        "convexity" => {
            let sph = metric.as_spherical();
            let mut rec = ctx.per_sample(name, 0.0, |s| {
                let ok = match sph {
                    Some(m) => convexity_report(m, &s.x, &s.y)?.direct_pd,
                    None => is_positive_definite(&fundamental_tensor_ad(metric, &s.x, &s.y)?),
                };
                Ok(if ok { 0.0 } else { 1.0 })
            });
            if let Some(m) = sph {
                let lemma_misses = ctx
                    .samples
                    .iter()
                    .filter(|s| convexity_report(m, &s.x, &s.y).map(|r| !r.lemma_ok).unwrap_or(true))
                    .count();
                rec.details
                    .push(("samples failing the sufficient condition".into(), Detail::Number(lemma_misses as f64)));
            }
            rec
        }
        "homogeneity" => {
            let sph = metric.as_spherical();
            ctx.per_sample(name, tol(ctx, check, name), |s| {
                let f = metric.evaluate(&s.x, &s.y)?;
                let mut worst: f64 = 0.0;
                for lam in HOMOGENEITY_FACTORS {
                    let scaled: Vec<f64> = s.y.iter().map(|c| lam * c).collect();
                    worst = worst.max((metric.evaluate(&s.x, &scaled)? - lam * f).abs() / f);
                }
                if let Some(m) = sph {
                    worst = worst.max(homogeneity_residual(m, s.r, s.u, s.v)?);
                }
                Ok(worst)
            })
        }
        "determinant" => {
            let sph = ctx.spherical(name)?;
            ctx.per_sample(name, tol(ctx, check, name), |s| {
                let direct = fundamental_tensor_ad(metric, &s.x, &s.y)?.determinant();
                let closed = det_g_closed_form(sph, &s.x, &s.y)?;
                Ok((closed - direct).abs() / direct.abs())
            })
        }
        "rapcsak" => {
            ctx.per_sample(name, tol(ctx, check, name), |s| Ok(max_component(&rapcsak_residual(metric, &s.x, &s.y)?)))
        }
        "projective_pde" => {
            let sph = ctx.spherical(name)?;
            ctx.per_sample(name, tol(ctx, check, name), |s| {
                let (a, b) = projective_pde_residuals(sph, s.r, s.u, s.v)?;
                Ok(a.max(b))
            })
        }
        "curvature" => curvature_record(ctx, check, ctx.spherical(name)?),
        "componentwise_curvature" => {
            let count = check.params.get("count").map_or(20, |c| *c as usize).clamp(1, ctx.samples.len());
            let lambda = match check.params.get("lambda") {
                Some(l) => *l,
                None => {
                    constant_curvature_verdict(ctx.spherical(name)?, ctx.samples, None, Default::default())?
                        .lambda_estimate
                }
            };
            let sub = Context { samples: &ctx.samples[..count], ..*ctx };
            let mut rec = sub.per_sample(name, tol(ctx, check, name), |s| lemma_residual(metric, &s.x, &s.y, lambda));
            rec.details.push(("lambda".into(), Detail::Number(lambda)));
            rec
        }
        "spray" => ctx.per_sample(name, tol(ctx, check, name), |s| spray_projectivity_residual(metric, &s.x, &s.y)),
        "geodesics" => geodesic_record(ctx, check)?,
        "conjecture" => conjecture_record(ctx, check, ctx.spherical(name)?)?,
        other => return Err(ConfigError::unknown("check", other, &CHECK_NAMES)),
    })
}

fn symmetry_word(pass: bool) -> &'static str {
    if pass {
        "consistent with spherical symmetry"
    } else {
        "not spherically symmetric"
    }
}

fn curvature_tolerances(ctx: &Context, check: &CheckConfig) -> CurvatureTolerances {
    CurvatureTolerances {
        deviation: tol(ctx, check, "curvature"),
        pde: check.params.get("pde_tolerance").copied().unwrap_or(ctx.tolerances["curvature_pde"]),
        gate: ctx.tolerances["rapcsak"].max(crate::projective::PROJECTIVITY_GATE),
    }
}

fn curvature_record(ctx: &Context, check: &CheckConfig, sph: &SphericalMetric) -> CheckRecord {
    let tols = curvature_tolerances(ctx, check);
    let mut rec = ctx.record(&check.name, tols.pde);
    let verdict = match constant_curvature_verdict(sph, ctx.samples, check.params.get("lambda").copied(), tols) {
        Ok(v) => v,
        Err(e) => {
            rec.max_residual = f64::NAN;
            rec.error = Some(e.to_string());
            return rec;
        }
    };
    rec.pass = verdict.pass();
    rec.worst = ctx.worst(verdict.worst_sample);
    rec.details.push(("status".into(), Detail::Text(verdict.status.label().into())));
    if verdict.status == CurvatureStatus::NotProjective {
        rec.max_residual = verdict.rapcsak_max;
        rec.tolerance = tols.gate;
        rec.details.push(("rapcsak residual".into(), Detail::Number(verdict.rapcsak_max)));
        return rec;
    }
    rec.max_residual = verdict.max_eq5();
    rec.details.push(("lambda estimate".into(), Detail::Number(verdict.lambda_estimate)));
    rec.details.push(("lambda tested".into(), Detail::Number(verdict.lambda_tested)));
    rec.details.push(("max deviation".into(), Detail::Number(verdict.max_deviation)));
    rec.details.push(("deviation tolerance".into(), Detail::Number(tols.deviation)));
    if let Some(ok) = verdict.hypothesis_ok {
        rec.details.push(("hypothesis accepted".into(), Detail::Flag(ok)));
    }
    rec
}

fn sanitize(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' }).collect()
}

fn geodesic_record(ctx: &Context, check: &CheckConfig) -> Result<CheckRecord, ConfigError> {
    let count = check.params.get("count").map_or(20, |c| *c as usize).clamp(1, ctx.samples.len());
    let horizon = check.params.get("horizon").copied().unwrap_or(1.0);
    let steps = check.params.get("steps").map_or(200, |s| *s as usize);
    if !(horizon > 0.0) || steps == 0 {
        return Err(ConfigError::Invalid("geodesics needs horizon > 0 and steps >= 1".into()));
    }
    let metric = ctx.metric;
    let runs: Vec<Result<(crate::geodesics::GeodesicPath, f64), GeodesicError>> =
        ctx.samples[..count].par_iter().map(|s| checked_geodesic(metric, &s.x, &s.y, horizon, steps)).collect();
    let mut rec = ctx.record(&check.name, tol(ctx, check, "geodesics"));
    rec.samples = count;
    let mut devs = Vec::with_capacity(count);
    for (i, run) in runs.into_iter().enumerate() {
        match run {
            Ok((path, dev)) => {
                if let Some(dir) = ctx.dump_dir {
                    let file = dir.join(format!("{}_geodesic_{i:03}.csv", sanitize(metric.name())));
                    let written = fs::File::create(&file).and_then(|f| path.write_csv(std::io::BufWriter::new(f)));
                    if let Err(e) = written {
                        rec.error = Some(format!("writing {}: {e}", file.display()));
                    }
                }
                devs.push(dev);
            }
            Err(e) => {
                rec.max_residual = f64::NAN;
                rec.worst = ctx.worst(Some(i));
                rec.error = Some(format!("geodesic {i}: {e}"));
                return Ok(rec);
            }
        }
    }
    let (max, idx) = ordered_max(&devs);
    rec.max_residual = max;
    rec.worst = ctx.worst(idx);
    rec.pass = max <= rec.tolerance && rec.error.is_none();
    rec.details.push(("steps".into(), Detail::Number(steps as f64)));
    Ok(rec)
}

fn conjecture_record(ctx: &Context, check: &CheckConfig, sph: &SphericalMetric) -> Result<CheckRecord, ConfigError> {
    let rev_tol = tol(ctx, check, "conjecture");
    let riem_tol = check.params.get("riemannian_tolerance").copied().unwrap_or(ctx.tolerances["riemannian"]);
    let mut rec = ctx.record(&check.name, riem_tol);
    let rev: Vec<crate::Result<f64>> =
        ctx.samples.par_iter().map(|s| reversibility_residual(sph, s.r, s.u, s.v)).collect();
    let rev = rev.into_iter().collect::<crate::Result<Vec<f64>>>()?;
    let (rev_max, _) = ordered_max(&rev);
    let reversible = rev_max <= rev_tol;
    rec.details.push(("reversibility residual".into(), Detail::Number(rev_max)));
    rec.details.push(("reversible".into(), Detail::Flag(reversible)));

    let mut curv_check = check.clone();
    curv_check.params.retain(|k, _| k == "curvature_tolerance");
    if let Some(t) = curv_check.params.remove("curvature_tolerance") {
        curv_check.params.insert("tolerance".into(), t);
    }
    let verdict = constant_curvature_verdict(sph, ctx.samples, None, curvature_tolerances(ctx, &curv_check))?;
    let constant = verdict.pass();
    rec.details.push(("constant curvature".into(), Detail::Flag(constant)));
    if constant {
        rec.details.push(("lambda estimate".into(), Detail::Number(verdict.lambda_estimate)));
    }

    let outcome = if reversible && constant {
        let s0 = &ctx.samples[0];
        let ys: Vec<Vec<f64>> = ctx.samples.iter().take(6).map(|s| s.y.clone()).collect();
        let probe = riemannian_probe(ctx.metric, &s0.x, &ys)?;
        let g_scale = fundamental_tensor_ad(ctx.metric, &s0.x, &s0.y)?.amax();
        let residual = probe.g_spread.max(probe.max_cartan) / g_scale.max(f64::MIN_POSITIVE);
        let riemannian = residual <= riem_tol;
        rec.max_residual = residual;
        rec.worst = ctx.worst(Some(0));
        rec.details.push(("g spread".into(), Detail::Number(probe.g_spread)));
        rec.details.push(("max cartan".into(), Detail::Number(probe.max_cartan)));
        rec.details.push(("riemannian".into(), Detail::Flag(riemannian)));
        rec.pass = riemannian;
        if riemannian {
            "consistent: reversible, constant curvature and Riemannian"
        } else {
            "inconsistent: reversible with constant curvature but not Riemannian"
        }
    } else {
        rec.pass = true;
        if !reversible {
            "consistent: not reversible, so the conjecture does not apply"
        } else {
            "consistent: curvature not constant, so the conjecture does not apply"
        }
    };
    rec.details.push(("outcome".into(), Detail::Text(outcome.into())));
    Ok(rec)
}

/// Builds the metric, samples the domain and runs every check in order.
pub fn run(config: &Config, overrides: &Overrides) -> Result<Report, ConfigError> {
    let seed = overrides.seed.unwrap_or(config.seed);
    let count = overrides.samples.unwrap_or(config.count);
    let metric = build_metric(&config.metric, config.dimension)?;
    let spec = SampleSpec::for_domain(config.dimension, count, seed, metric.domain_radius());
    let samples = sample_domain(&spec)?;
    if let Some(dir) = &overrides.dump_geodesics {
        fs::create_dir_all(dir)
            .map_err(|e| ConfigError::Io { path: dir.display().to_string(), message: e.to_string() })?;
    }
    let ctx = Context {
        metric: &metric,
        samples: &samples,
        tolerances: &config.tolerances,
        dump_dir: overrides.dump_geodesics.as_deref(),
    };
    let mut checks = Vec::with_capacity(config.checks.len());
    for check in &config.checks {
        match run_check(&ctx, check) {
            Ok(rec) => checks.push(rec),
            Err(ConfigError::Metric(e)) => {
                let mut rec = ctx.record(&check.name, f64::NAN);
                rec.max_residual = f64::NAN;
                rec.error = Some(e.to_string());
                checks.push(rec);
            }
            Err(e) => return Err(e),
        }
    }
    Ok(Report { metric: metric.name().to_string(), dimension: config.dimension, seed, samples: samples.len(), checks })
}

/// Exit code 2 for configuration problems, otherwise the report's code.
pub fn run_config(path: &Path, overrides: &Overrides) -> Result<Report, ConfigError> {
    run(&load_config(path)?, overrides)
}
