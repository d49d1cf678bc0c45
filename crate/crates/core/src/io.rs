//! On-disk formats: feature CSV, checkpoint and meta-distribution JSON,
//! evaluation report JSON and histogram CSV.
//!
//! Floats are written in their shortest round-trip decimal form and parsed
//! back exactly, so save followed by load reproduces every value bit for bit.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde_json::{json, Map, Value};

use crate::classifier::{Checkpoint, LinearModel, TrainConfig};
use crate::data::{FeatureMatrix, Label};
use crate::error::{Error, Result};
use crate::evaluation::{EvaluationReport, Histogram};
use crate::stats::{MetaDistribution, Mode, NormalParams};

pub const FORMAT_VERSION: u64 = 1;
pub const LABEL_COLUMN: &str = "label";
pub const DOMAIN_COLUMN: &str = "domain";

/// Layout of a feature file, recovered from its header row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureFileHeader {
    pub version: u64,
    pub c: usize,
    pub label_column: String,
    pub domain_column: String,
}

impl FeatureFileHeader {
    pub fn new(c: usize) -> Self {
        Self {
            version: FORMAT_VERSION,
            c,
            label_column: LABEL_COLUMN.into(),
            domain_column: DOMAIN_COLUMN.into(),
        }
    }

    pub fn columns(&self) -> Vec<String> {
        let mut cols: Vec<String> = (0..self.c).map(|j| format!("f{j}")).collect();
        cols.push(self.label_column.clone());
        cols.push(self.domain_column.clone());
        cols
    }

    /// Validates a header row of the form `f0,…,f{c−1},label,domain`.
    pub fn parse(fields: &[&str]) -> Result<Self> {
        let bad = |column: usize, reason: String| Error::Parse {
            line: 1,
            column,
            reason,
        };
        if fields.len() < 3 {
            return Err(bad(fields.len() + 1, "header needs at least one feature column plus label and domain".into()));
        }
        let header = Self::new(fields.len() - 2);
        for (j, (got, want)) in fields.iter().zip(header.columns()).enumerate() {
            if *got != want {
                return Err(bad(j + 1, format!("expected column {want:?}, found {got:?}")));
            }
        }
        Ok(header)
    }
}

fn line_of(record: &csv::StringRecord) -> usize {
    record.position().map_or(0, |p| p.line() as usize)
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    Error::Parse {
        line,
        column: 0,
        reason: e.to_string(),
    }
}

/// Parses feature CSV text. All rows must share one domain tag.
pub fn parse_features(text: &str) -> Result<FeatureMatrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut records = reader.records();
    let header_record = match records.next() {
        Some(r) => r.map_err(csv_error)?,
        None => {
            return Err(Error::Parse {
                line: 1,
                column: 1,
                reason: "missing header row".into(),
            })
        }
    };
    let header = FeatureFileHeader::parse(&header_record.iter().collect::<Vec<_>>())?;
    let c = header.c;

    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut domain: Option<String> = None;
    for record in records {
        let record = record.map_err(csv_error)?;
        let line = line_of(&record);
        if record.len() != c + 2 {
            return Err(Error::Parse {
                line,
                column: record.len().min(c + 2) + 1,
                reason: format!("expected {} fields, found {}", c + 2, record.len()),
            });
        }
        for j in 0..c {
            let v: f64 = record[j].trim().parse().map_err(|_| Error::Parse {
                line,
                column: j + 1,
                reason: format!("not a number: {:?}", &record[j]),
            })?;
            if !v.is_finite() {
                return Err(Error::NonFiniteCell { line });
            }
            values.push(v);
        }
        let label = Label::parse(record[c].trim()).ok_or_else(|| Error::Parse {
            line,
            column: c + 1,
            reason: format!("label must be real or fake, found {:?}", &record[c]),
        })?;
        labels.push(label);
        match &domain {
            None => domain = Some(record[c + 1].to_string()),
            Some(d) if d != &record[c + 1] => {
                return Err(Error::Parse {
                    line,
                    column: c + 2,
                    reason: format!("domain {:?} differs from {:?}", &record[c + 1], d),
                })
            }
            Some(_) => {}
        }
    }
    let domain = domain.ok_or(Error::EmptyInput)?;
    FeatureMatrix::new(c, values, labels, domain)
}

/// Renders `x` as feature CSV text.
pub fn format_features(x: &FeatureMatrix) -> Result<String> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    let header = FeatureFileHeader::new(x.dim());
    let write_err = |e: csv::Error| Error::InvalidArgument(format!("csv write failed: {e}"));
    writer.write_record(header.columns()).map_err(write_err)?;
    for (row, label) in x.rows().zip(x.labels()) {
        let mut fields: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        fields.push(label.as_str().into());
        fields.push(x.domain().into());
        writer.write_record(&fields).map_err(write_err)?;
    }
    let bytes = writer.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::InvalidArgument(e.to_string()))
}

pub fn load_features(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    parse_features(&read(path.as_ref())?)
}

pub fn save_features(x: &FeatureMatrix, path: impl AsRef<Path>) -> Result<()> {
    write(path.as_ref(), &format_features(x)?)
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn to_pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json values always serialize");
    s.push('\n');
    s
}

fn parse_json(text: &str) -> Result<Value> {
    serde_json::from_str(text).map_err(|e| Error::Parse {
        line: e.line(),
        column: e.column(),
        reason: e.to_string(),
    })
}

/// A JSON node together with its location, for schema errors.
struct At<'a> {
    v: &'a Value,
    path: String,
}

impl<'a> At<'a> {
    fn root(v: &'a Value) -> Self {
        Self { v, path: String::new() }
    }

    fn shown(&self) -> String {
        if self.path.is_empty() {
            "/".into()
        } else {
            self.path.clone()
        }
    }

    fn err(&self, reason: impl Into<String>) -> Error {
        Error::schema(self.shown(), reason)
    }

    fn child(&self, key: impl std::fmt::Display, v: &'a Value) -> At<'a> {
        At {
            v,
            path: format!("{}/{}", self.path, key),
        }
    }

    /// Requires an object whose keys are all in `allowed`.
    fn object(&self, allowed: &[&str]) -> Result<&'a Map<String, Value>> {
        let map = self.v.as_object().ok_or_else(|| self.err("expected an object"))?;
        if let Some(k) = map.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(Error::schema(format!("{}/{}", self.path, k), "unknown field"));
        }
        Ok(map)
    }

    fn get(&self, key: &str) -> Result<At<'a>> {
        let map = self.v.as_object().ok_or_else(|| self.err("expected an object"))?;
        match map.get(key) {
            Some(v) => Ok(self.child(key, v)),
            None => Err(Error::schema(format!("{}/{}", self.path, key), "missing field")),
        }
    }

    fn f64(&self) -> Result<f64> {
        self.v
            .as_f64()
            .filter(|x| x.is_finite())
            .ok_or_else(|| self.err("expected a finite number"))
    }

    fn usize(&self) -> Result<usize> {
        self.v
            .as_u64()
            .map(|x| x as usize)
            .ok_or_else(|| self.err("expected a non-negative integer"))
    }

    fn str(&self) -> Result<&'a str> {
        self.v.as_str().ok_or_else(|| self.err("expected a string"))
    }

    fn items(&self) -> Result<Vec<At<'a>>> {
        let arr = self.v.as_array().ok_or_else(|| self.err("expected an array"))?;
        Ok(arr.iter().enumerate().map(|(i, v)| self.child(i, v)).collect())
    }

    fn f64s(&self) -> Result<Vec<f64>> {
        self.items()?.iter().map(At::f64).collect()
    }

    fn version(&self) -> Result<()> {
        let at = self.get("version")?;
        match at.v.as_u64() {
            Some(FORMAT_VERSION) => Ok(()),
            _ => Err(at.err(format!("unsupported version, expected {FORMAT_VERSION}"))),
        }
    }
}

const META_FIELDS: [&str; 5] = ["mode", "N", "K", "mean_law", "cov_law"];

fn law_value(p: NormalParams) -> Value {
    json!({ "mu": p.mu, "sigma2": p.sigma2 })
}

fn meta_fields(m: &MetaDistribution) -> Map<String, Value> {
    let c = m.dim();
    let cov: Vec<Value> = (0..c)
        .map(|i| Value::Array((0..c).map(|j| law_value(m.cov(i, j))).collect()))
        .collect();
    let mut map = Map::new();
    map.insert("mode".into(), m.mode.as_str().into());
    map.insert("N".into(), m.batch_size.into());
    map.insert("K".into(), m.num_batches.into());
    map.insert("mean_law".into(), m.mean_law.iter().map(|&p| law_value(p)).collect());
    map.insert("cov_law".into(), Value::Array(cov));
    map
}

fn parse_law(at: &At) -> Result<NormalParams> {
    at.object(&["mu", "sigma2"])?;
    let mu = at.get("mu")?.f64()?;
    let s = at.get("sigma2")?;
    let sigma2 = s.f64()?;
    if sigma2 < 0.0 {
        return Err(s.err("variance must be non-negative"));
    }
    Ok(NormalParams { mu, sigma2 })
}

/// Reads the meta-distribution fields of the object at `at`; extra keys are
/// checked by the caller.
fn parse_meta(at: &At) -> Result<MetaDistribution> {
    let mode_at = at.get("mode")?;
    let mode = match mode_at.str()? {
        "diagonal" => Mode::Diagonal,
        "full" => Mode::Full,
        other => return Err(mode_at.err(format!("unknown mode {other:?}"))),
    };
    let batch_size = at.get("N")?.usize()?;
    let num_batches = at.get("K")?.usize()?;
    let mean_law = at.get("mean_law")?.items()?.iter().map(parse_law).collect::<Result<Vec<_>>>()?;
    let c = mean_law.len();
    if c == 0 {
        return Err(at.get("mean_law")?.err("must not be empty"));
    }

    let cov_at = at.get("cov_law")?;
    let rows = cov_at.items()?;
    if rows.len() != c {
        return Err(cov_at.err(format!("expected {c} rows, found {}", rows.len())));
    }
    let mut cov_law = Vec::with_capacity(c * c);
    for row in &rows {
        let cells = row.items()?;
        if cells.len() != c {
            return Err(row.err(format!("expected {c} entries, found {}", cells.len())));
        }
        for cell in &cells {
            cov_law.push(parse_law(cell)?);
        }
    }
    for i in 0..c {
        for j in 0..c {
            let law = cov_law[i * c + j];
            let off_diagonal_in_diag_mode = mode == Mode::Diagonal && i != j && law != NormalParams::ZERO;
            if law != cov_law[j * c + i] || off_diagonal_in_diag_mode {
                let reason = if off_diagonal_in_diag_mode {
                    "off-diagonal law must be zero in diagonal mode"
                } else {
                    "covariance law is not symmetric"
                };
                return Err(Error::schema(format!("{}/{i}/{j}", cov_at.path), reason));
            }
        }
    }
    Ok(MetaDistribution {
        mean_law,
        cov_law,
        batch_size,
        num_batches,
        mode,
    })
}

pub fn meta_to_json(m: &MetaDistribution) -> Result<String> {
    m.validate()?;
    let mut map = Map::new();
    map.insert("version".into(), FORMAT_VERSION.into());
    map.extend(meta_fields(m));
    Ok(to_pretty(&Value::Object(map)))
}

pub fn meta_from_json(text: &str) -> Result<MetaDistribution> {
    let v = parse_json(text)?;
    let root = At::root(&v);
    let mut allowed = vec!["version"];
    allowed.extend(META_FIELDS);
    root.object(&allowed)?;
    root.version()?;
    parse_meta(&root)
}

pub fn save_meta(m: &MetaDistribution, path: impl AsRef<Path>) -> Result<()> {
    write(path.as_ref(), &meta_to_json(m)?)
}

pub fn load_meta(path: impl AsRef<Path>) -> Result<MetaDistribution> {
    meta_from_json(&read(path.as_ref())?)
}

pub fn checkpoint_to_json(ckpt: &Checkpoint) -> Result<String> {
    ckpt.validate()?;
    if let Some(i) = ckpt.loss_curve.iter().position(|l| !l.is_finite()) {
        return Err(Error::InvalidArgument(format!("loss_curve[{i}] is not finite")));
    }
    let config = serde_json::to_value(&ckpt.config).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let doc = json!({
        "version": FORMAT_VERSION,
        "model": { "weights": ckpt.model.weights, "bias": ckpt.model.bias },
        "meta": Value::Object(meta_fields(&ckpt.meta)),
        "config": config,
        "loss_curve": ckpt.loss_curve,
    });
    Ok(to_pretty(&doc))
}

pub fn checkpoint_from_json(text: &str) -> Result<Checkpoint> {
    let v = parse_json(text)?;
    let root = At::root(&v);
    root.object(&["version", "model", "meta", "config", "loss_curve"])?;
    root.version()?;

    let meta_at = root.get("meta")?;
    meta_at.object(&META_FIELDS)?;
    let meta = parse_meta(&meta_at)?;

    let config_at = root.get("config")?;
    let config: TrainConfig =
        serde_json::from_value(config_at.v.clone()).map_err(|e| config_at.err(e.to_string()))?;
    config.validate().map_err(|e| config_at.err(e.to_string()))?;
    if config.whitening_mode != meta.mode {
        return Err(meta_at.get("mode")?.err("does not match config.whitening_mode"));
    }

    let model_at = root.get("model")?;
    model_at.object(&["weights", "bias"])?;
    let weights_at = model_at.get("weights")?;
    let weights = weights_at.f64s()?;
    let want = config.feature_map.output_dim(meta.dim());
    if weights.len() != want {
        return Err(weights_at.err(format!("expected {want} weights, found {}", weights.len())));
    }
    let bias = model_at.get("bias")?.f64()?;
    let loss_curve = root.get("loss_curve")?.f64s()?;

    Ok(Checkpoint {
        model: LinearModel { weights, bias },
        meta,
        config,
        loss_curve,
    })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    write(path.as_ref(), &checkpoint_to_json(ckpt)?)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    checkpoint_from_json(&read(path.as_ref())?)
}

pub fn report_to_json(report: &EvaluationReport) -> Result<String> {
    let mut v = serde_json::to_value(report).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    v.as_object_mut()
        .expect("reports serialize to objects")
        .insert("version".into(), FORMAT_VERSION.into());
    Ok(to_pretty(&v))
}

pub fn report_from_json(text: &str) -> Result<EvaluationReport> {
    let mut v = parse_json(text)?;
    At::root(&v).version()?;
    v.as_object_mut().expect("checked by version").remove("version");
    serde_json::from_value(v).map_err(|e| Error::schema("/", e.to_string()))
}

pub fn save_report(report: &EvaluationReport, path: impl AsRef<Path>) -> Result<()> {
    write(path.as_ref(), &report_to_json(report)?)
}

pub fn load_report(path: impl AsRef<Path>) -> Result<EvaluationReport> {
    report_from_json(&read(path.as_ref())?)
}

/// One row per bin: `name,bin,lo,hi,count`.
pub fn histograms_to_csv(hists: &[Histogram]) -> String {
    let mut out = String::from("name,bin,lo,hi,count\n");
    for h in hists {
        for (k, count) in h.counts.iter().enumerate() {
            let (lo, hi) = h.bin_edges(k);
            let _ = writeln!(out, "{},{k},{lo:?},{hi:?},{count}", h.name);
        }
    }
    out
}

pub fn save_histograms(hists: &[Histogram], path: impl AsRef<Path>) -> Result<()> {
    write(path.as_ref(), &histograms_to_csv(hists))
}
