//! Config parsing and CSV/JSON serialization of run outputs.
//!
//! Config files are JSON with a top-level `scenarios` array. Any scalar
//! field of a scenario may be given as an array instead, and the scenario is
//! expanded into the Cartesian product of those axes. `cutoffs` and
//! `estimators` are lists already, so they form an axis only when given as
//! a list of lists.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize, Serializer};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::experiment::{BiasCell, BiasReport, CutoffSelection, Estimator, ScenarioConfig, SimulationRecord};

pub const RECORDS_HEADER: &str =
    "sim_index,selected_cutoff,theta_true_selected,estimate_mle,estimate_bootstrap,bootstrap_fallback,estimate_abc,abc_failed";
pub const BIAS_HEADER: &str = "estimator,selected_cutoff,n_selected,selection_probability,conditional_bias,sd,se";

pub fn parse_config(path: &Path) -> Result<Vec<ScenarioConfig>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    parse_config_str(&text)
}

pub fn parse_config_str(text: &str) -> Result<Vec<ScenarioConfig>> {
    let root: Value = serde_json::from_str(text).map_err(|e| Error::Schema {
        pointer: String::new(),
        message: format!("malformed JSON: {e}"),
    })?;
    let scenarios = root
        .get("scenarios")
        .ok_or_else(|| schema("", "missing top-level key `scenarios`"))?
        .as_array()
        .ok_or_else(|| schema("/scenarios", "expected an array"))?;
    if scenarios.is_empty() {
        return Err(schema("/scenarios", "at least one scenario is required"));
    }
    let mut out = Vec::new();
    for (i, scenario) in scenarios.iter().enumerate() {
        let base = format!("/scenarios/{i}");
        let object = scenario.as_object().ok_or_else(|| schema(&base, "expected an object"))?;
        for expanded in expand_grid(object, &base)? {
            let value = Value::Object(expanded);
            let config: ScenarioConfig = serde_path_to_error::deserialize(&value).map_err(|e| Error::Schema {
                pointer: format!("{base}{}", json_pointer(e.path())),
                message: e.inner().to_string(),
            })?;
            config.validate().map_err(|e| schema(&base, &e.to_string()))?;
            out.push(config);
        }
    }
    Ok(out)
}

fn schema(pointer: &str, message: &str) -> Error {
    Error::Schema {
        pointer: pointer.to_string(),
        message: message.to_string(),
    }
}

fn json_pointer(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        match seg {
            Segment::Seq { index } => write!(out, "/{index}").unwrap(),
            Segment::Map { key } => write!(out, "/{}", key.replace('~', "~0").replace('/', "~1")).unwrap(),
            Segment::Enum { variant } => write!(out, "/{variant}").unwrap(),
            Segment::Unknown => {}
        }
    }
    out
}

/// Values a field takes across the grid, or `None` if it is not an axis.
fn grid_axis<'a>(key: &str, value: &'a Value) -> Option<&'a Vec<Value>> {
    let items = value.as_array()?;
    match key {
        "cutoffs" | "estimators" => items.first().is_some_and(Value::is_array).then_some(items),
        // a bare array of four numbers is a single custom setting
        "effect_setting" => (!items.iter().all(Value::is_number)).then_some(items),
        _ => Some(items),
    }
}

fn expand_grid(object: &Map<String, Value>, base: &str) -> Result<Vec<Map<String, Value>>> {
    let mut combos = vec![Map::new()];
    for (key, value) in object {
        let choices: Vec<&Value> = match grid_axis(key, value) {
            Some(items) if items.is_empty() => {
                return Err(schema(&format!("{base}/{key}"), "grid axis has no values"));
            }
            Some(items) => items.iter().collect(),
            None => vec![value],
        };
        combos = combos
            .into_iter()
            .flat_map(|combo| {
                choices.iter().map(move |&choice| {
                    let mut next = combo.clone();
                    next.insert(key.clone(), choice.clone());
                    next
                })
            })
            .collect();
    }
    Ok(combos)
}

/// One file written by a run, with its digest for provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    pub path: PathBuf,
    pub rows: usize,
    pub sha256: String,
}

fn write_file(path: &Path, contents: &str, rows: usize) -> Result<OutputFile> {
    fs::write(path, contents).map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    Ok(OutputFile {
        path: path.to_path_buf(),
        rows,
        sha256: hex::encode(Sha256::digest(contents.as_bytes())),
    })
}

/// Round-trip safe, 17 significant digits.
fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

fn ser_real<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&fmt_real(*v))
}

fn ser_opt_real<S: Serializer>(v: &Option<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match v {
        Some(v) => ser_real(v, s),
        None => s.serialize_str(""),
    }
}

#[derive(Serialize, Deserialize)]
struct RecordRow {
    sim_index: u64,
    #[serde(serialize_with = "ser_opt_real")]
    selected_cutoff: Option<f64>,
    #[serde(serialize_with = "ser_opt_real")]
    theta_true_selected: Option<f64>,
    #[serde(serialize_with = "ser_opt_real")]
    estimate_mle: Option<f64>,
    #[serde(serialize_with = "ser_opt_real")]
    estimate_bootstrap: Option<f64>,
    bootstrap_fallback: Option<bool>,
    #[serde(serialize_with = "ser_opt_real")]
    estimate_abc: Option<f64>,
    abc_failed: Option<bool>,
}

/// One row of the long-format bias table. The trailing `none` row leaves
/// `estimator` empty and puts `none` in the cutoff column.
#[derive(Serialize, Deserialize)]
struct BiasRow {
    estimator: String,
    selected_cutoff: String,
    n_selected: usize,
    #[serde(serialize_with = "ser_real")]
    selection_probability: f64,
    #[serde(serialize_with = "ser_opt_real")]
    conditional_bias: Option<f64>,
    #[serde(serialize_with = "ser_opt_real")]
    sd: Option<f64>,
    #[serde(serialize_with = "ser_opt_real")]
    se: Option<f64>,
}

fn csv_error(e: csv::Error) -> Error {
    Error::Parse(format!("malformed CSV: {e}"))
}

fn to_csv<R: Serialize>(header: &str, rows: impl IntoIterator<Item = R>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut empty = true;
    for row in rows {
        w.serialize(row).expect("in-memory CSV write");
        empty = false;
    }
    let bytes = w.into_inner().expect("in-memory CSV flush");
    if empty {
        return format!("{header}\n");
    }
    String::from_utf8(bytes).expect("CSV output is UTF-8")
}

fn from_csv<R: serde::de::DeserializeOwned>(header: &str, text: &str) -> Result<Vec<R>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let found = r.headers().map_err(csv_error)?;
    if found.iter().collect::<Vec<_>>().join(",") != header {
        return Err(Error::Parse(format!("expected header `{header}`")));
    }
    r.deserialize().map(|row| row.map_err(csv_error)).collect()
}

pub fn records_to_csv(records: &[SimulationRecord]) -> String {
    to_csv(
        RECORDS_HEADER,
        records.iter().map(|r| RecordRow {
            sim_index: r.sim_index,
            selected_cutoff: r.selected_cutoff,
            theta_true_selected: r.theta_true_selected,
            estimate_mle: r.estimate_mle,
            estimate_bootstrap: r.estimate_bootstrap,
            bootstrap_fallback: r.bootstrap_fallback,
            estimate_abc: r.estimate_abc,
            abc_failed: r.abc_failed,
        }),
    )
}

pub fn write_records(records: &[SimulationRecord], path: &Path) -> Result<OutputFile> {
    write_file(path, &records_to_csv(records), records.len())
}

pub fn records_from_csv(text: &str) -> Result<Vec<SimulationRecord>> {
    let rows: Vec<RecordRow> = from_csv(RECORDS_HEADER, text)?;
    Ok(rows
        .into_iter()
        .map(|r| SimulationRecord {
            sim_index: r.sim_index,
            selected_cutoff: r.selected_cutoff,
            theta_true_selected: r.theta_true_selected,
            estimate_mle: r.estimate_mle,
            estimate_bootstrap: r.estimate_bootstrap,
            bootstrap_fallback: r.bootstrap_fallback,
            estimate_abc: r.estimate_abc,
            abc_failed: r.abc_failed,
        })
        .collect())
}

pub fn read_records(path: &Path) -> Result<Vec<SimulationRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    records_from_csv(&text)
}

/// Long format: one row per (estimator, cutoff) and a final `none` row
/// carrying the no-selection count and probability.
pub fn bias_report_to_csv(report: &BiasReport) -> String {
    let cells = report.cells.iter().map(|cell| {
        let sel = report
            .selections
            .iter()
            .find(|s| s.cutoff == cell.cutoff)
            .expect("every cell cutoff has a selection row");
        BiasRow {
            estimator: cell.estimator.name().to_string(),
            selected_cutoff: fmt_real(cell.cutoff),
            n_selected: cell.n_selected,
            selection_probability: sel.probability,
            conditional_bias: cell.conditional_bias,
            sd: cell.sd,
            se: cell.se,
        }
    });
    let none = BiasRow {
        estimator: String::new(),
        selected_cutoff: "none".into(),
        n_selected: report.none_count,
        selection_probability: report.none_probability,
        conditional_bias: None,
        sd: None,
        se: None,
    };
    to_csv(BIAS_HEADER, cells.chain(std::iter::once(none)))
}

pub fn write_bias_report(report: &BiasReport, path: &Path) -> Result<OutputFile> {
    write_file(path, &bias_report_to_csv(report), report.cells.len() + 1)
}

pub fn bias_report_from_csv(text: &str) -> Result<BiasReport> {
    let rows: Vec<BiasRow> = from_csv(BIAS_HEADER, text)?;
    let mut cells = Vec::new();
    let mut selections: Vec<CutoffSelection> = Vec::new();
    let mut estimators = Vec::new();
    let mut none: Option<(usize, f64)> = None;
    for row in rows {
        if row.selected_cutoff == "none" {
            none = Some((row.n_selected, row.selection_probability));
            continue;
        }
        let estimator = Estimator::parse(&row.estimator)
            .ok_or_else(|| Error::Parse(format!("unknown estimator `{}`", row.estimator)))?;
        let cutoff: f64 = row
            .selected_cutoff
            .parse()
            .map_err(|_| Error::Parse(format!("bad selected_cutoff `{}`", row.selected_cutoff)))?;
        if !estimators.contains(&estimator) {
            estimators.push(estimator);
        }
        if !selections.iter().any(|s| s.cutoff == cutoff) {
            selections.push(CutoffSelection {
                cutoff,
                count: row.n_selected,
                probability: row.selection_probability,
            });
        }
        cells.push(BiasCell {
            estimator,
            cutoff,
            n_selected: row.n_selected,
            conditional_bias: row.conditional_bias,
            sd: row.sd,
            se: row.se,
        });
    }
    let (none_count, none_probability) = none.ok_or_else(|| Error::Parse("missing `none` row".into()))?;
    Ok(BiasReport {
        n_simulations: selections.iter().map(|s| s.count).sum::<usize>() + none_count,
        estimators,
        selections,
        none_count,
        none_probability,
        cells,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioManifest {
    pub index: usize,
    pub config_hash: String,
    pub master_seed: u64,
    pub config: Value,
    pub outputs: Vec<OutputFile>,
    pub abc_prior_substitutions: usize,
    pub bootstrap_fallbacks: usize,
    pub abc_failures: usize,
    pub error: Option<String>,
}

/// Written next to the outputs of `run`; ties every file to the exact
/// configuration and seed that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub timestamp_unix: u64,
    pub config_path: PathBuf,
    pub scenarios: Vec<ScenarioManifest>,
}

pub fn write_manifest(manifest: &RunManifest, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    fs::write(path, text + "\n").map_err(|e| Error::io(format!("writing {}", path.display()), e))
}
