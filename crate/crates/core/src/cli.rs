//! Support types for the `netvar` binary: model documents, run manifests,
//! configuration merging and the exit-code contract.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{NetvarError, Result};
use crate::model::{HighFreqSpec, NvarModel};
use crate::network::Network;
use crate::output::fmt_num;
use crate::panel::load_adjacency;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_REFUSED: i32 = 3;
pub const EXIT_ESTIMATION: i32 = 4;

/// Maps an error to the process exit code.
pub fn exit_code(err: &NetvarError) -> i32 {
    match err {
        NetvarError::Validation(_) | NetvarError::NonStationary(_) | NetvarError::Identification(_) => EXIT_REFUSED,
        NetvarError::Estimation(_) | NetvarError::Numeric(_) => EXIT_ESTIMATION,
        _ => EXIT_USAGE,
    }
}

/// Short machine-readable name of the error variant.
pub fn error_kind(err: &NetvarError) -> &'static str {
    match err {
        NetvarError::Parse { .. } => "parse",
        NetvarError::NonNumeric { .. } => "non_numeric",
        NetvarError::MissingValue { .. } => "missing_value",
        NetvarError::DuplicateLabel(_) => "duplicate_label",
        NetvarError::Validation(_) => "validation",
        NetvarError::NonStationary(_) => "non_stationary",
        NetvarError::Identification(_) => "identification",
        NetvarError::Estimation(_) => "estimation",
        NetvarError::Numeric(_) => "numeric",
        NetvarError::Io(_) => "io",
        NetvarError::Csv(_) => "csv",
        NetvarError::Json(_) => "json",
    }
}

/// Adjacency given inline as rows or as a path to an adjacency CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NetworkSource {
    Inline(Vec<Vec<f64>>),
    Path(PathBuf),
}

/// JSON form of an NVAR(p, q) model.
///
/// `alpha` is row-major over lags then orders, `sigma` is the lower
/// triangle read row by row (identity when absent). Relative network paths
/// resolve against the document's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDoc {
    pub p: usize,
    #[serde(default = "one")]
    pub q: usize,
    pub alpha: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub network: Option<NetworkSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub network_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<Vec<f64>>,
}

fn one() -> usize {
    1
}

/// JSON form of a latent-frequency specification plus innovation scales.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecDoc {
    #[serde(flatten)]
    pub spec: HighFreqSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<Vec<f64>>,
}

/// Expands a row-major lower triangle into a symmetric matrix.
pub fn sigma_from_lower(n: usize, lower: Option<&[f64]>) -> Result<DMatrix<f64>> {
    let Some(v) = lower else {
        return Ok(DMatrix::identity(n, n));
    };
    if v.len() != n * (n + 1) / 2 {
        return Err(NetvarError::Validation(format!(
            "sigma lower triangle has {} entries, expected {} for n = {n}",
            v.len(),
            n * (n + 1) / 2
        )));
    }
    let mut s = DMatrix::zeros(n, n);
    let mut k = 0;
    for i in 0..n {
        for j in 0..=i {
            s[(i, j)] = v[k];
            s[(j, i)] = v[k];
            k += 1;
        }
    }
    Ok(s)
}

/// Row-major lower triangle of a square matrix.
pub fn sigma_to_lower(s: &DMatrix<f64>) -> Vec<f64> {
    let mut v = Vec::new();
    for i in 0..s.nrows() {
        for j in 0..=i {
            v.push(s[(i, j)]);
        }
    }
    v
}

impl ModelDoc {
    pub fn from_model(model: &NvarModel) -> Self {
        let alpha = model.alpha();
        let net = model.network();
        ModelDoc {
            p: model.p(),
            q: model.q(),
            alpha: (0..alpha.nrows()).flat_map(|l| alpha.row(l).iter().cloned().collect::<Vec<_>>()).collect(),
            network: Some(NetworkSource::Inline(
                (0..net.n()).map(|i| net.adjacency().row(i).iter().cloned().collect()).collect(),
            )),
            network_path: None,
            labels: Some(net.labels().to_vec()),
            sigma: Some(sigma_to_lower(model.sigma())),
        }
    }

    /// Resolves the network, relative paths against `base`.
    pub fn network(&self, base: &Path) -> Result<Network> {
        let source = match (&self.network, &self.network_path) {
            (Some(_), Some(_)) => {
                return Err(NetvarError::Validation("give either network or network_path, not both".into()))
            }
            (Some(s), None) => s.clone(),
            (None, Some(p)) => NetworkSource::Path(p.clone()),
            (None, None) => return Err(NetvarError::Validation("model has no network".into())),
        };
        let net = match source {
            NetworkSource::Path(p) => load_adjacency(&base.join(p))?,
            NetworkSource::Inline(rows) => {
                let n = rows.len();
                if rows.iter().any(|r| r.len() != n) {
                    return Err(NetvarError::Validation("inline network must be square".into()));
                }
                let flat: Vec<f64> = rows.into_iter().flatten().collect();
                Network::from_rows(n, &flat)?
            }
        };
        match &self.labels {
            Some(labels) => Network::new(net.adjacency().clone(), labels.clone()),
            None => Ok(net),
        }
    }

    /// `p x q` coefficient grid.
    pub fn alpha_matrix(&self) -> Result<DMatrix<f64>> {
        if self.alpha.len() != self.p * self.q {
            return Err(NetvarError::Validation(format!(
                "alpha has {} entries, expected p * q = {}",
                self.alpha.len(),
                self.p * self.q
            )));
        }
        Ok(DMatrix::from_row_slice(self.p, self.q, &self.alpha))
    }

    pub fn into_model(&self, base: &Path) -> Result<NvarModel> {
        let net = self.network(base)?;
        let sigma = sigma_from_lower(net.n(), self.sigma.as_deref())?;
        NvarModel::new(self.alpha_matrix()?, net, sigma)
    }
}

/// Reads and parses a JSON file.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// Directory used to resolve paths found inside `path`.
pub fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(sha256_hex(&bytes))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Layers settings: `defaults`, then the config file section, then flags.
/// Null entries in a higher layer do not override lower ones.
pub fn merge_layers(defaults: Value, config: Option<Value>, flags: Value) -> Value {
    let mut out = defaults;
    for layer in config.into_iter().chain(std::iter::once(flags)) {
        if let (Value::Object(base), Value::Object(top)) = (&mut out, layer) {
            for (k, v) in top {
                if !v.is_null() {
                    base.insert(k, v);
                }
            }
        }
    }
    out
}

/// Picks the section for `command` from a config file, or the whole
/// document when it has no such section.
pub fn config_section(doc: Value, command: &str) -> Result<Value> {
    match doc {
        Value::Object(mut map) => match map.remove(command) {
            Some(v @ Value::Object(_)) => Ok(v),
            Some(_) => Err(NetvarError::Parse { row: 0, col: 0, msg: format!("config section {command:?} is not an object") }),
            None => Ok(Value::Object(map)),
        },
        _ => Err(NetvarError::Parse { row: 0, col: 0, msg: "config file must hold a JSON object".into() }),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileRecord {
    pub path: PathBuf,
    pub sha256: String,
}

/// Record of one invocation.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config: Value,
    pub seed: Option<u64>,
    pub threads: usize,
    pub inputs: Vec<FileRecord>,
    pub outputs: Vec<FileRecord>,
    pub wall_clock_seconds: f64,
    pub exit_code: i32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Tracks the files an invocation reads and writes under one output directory.
#[derive(Debug)]
pub struct RunContext {
    pub out_dir: PathBuf,
    inputs: BTreeMap<PathBuf, String>,
    outputs: Vec<PathBuf>,
}

impl RunContext {
    pub fn new(out_dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(out_dir)?;
        Ok(RunContext { out_dir: out_dir.to_path_buf(), inputs: BTreeMap::new(), outputs: Vec::new() })
    }

    /// Records an input and its hash.
    pub fn input(&mut self, path: &Path) -> Result<()> {
        let h = sha256_file(path)?;
        self.inputs.insert(path.to_path_buf(), h);
        Ok(())
    }

    /// Creates `name` in the output directory through `write`.
    pub fn write<F>(&mut self, name: &str, write: F) -> Result<PathBuf>
    where
        F: FnOnce(&mut std::io::BufWriter<std::fs::File>) -> Result<()>,
    {
        let path = self.out_dir.join(name);
        let mut w = std::io::BufWriter::new(std::fs::File::create(&path)?);
        write(&mut w)?;
        w.flush()?;
        self.outputs.push(path.clone());
        Ok(path)
    }

    /// Writes pretty JSON followed by a newline.
    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        self.write(name, |w| {
            serde_json::to_writer_pretty(&mut *w, value)?;
            writeln!(w)?;
            Ok(())
        })
    }

    /// Writes a CSV from a header and rows of already formatted cells.
    pub fn write_rows(&mut self, name: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<PathBuf> {
        self.write(name, |w| {
            let mut c = csv::Writer::from_writer(w);
            c.write_record(header)?;
            for r in rows {
                c.write_record(&r)?;
            }
            c.flush()?;
            Ok(())
        })
    }

    pub fn outputs(&self) -> &[PathBuf] {
        &self.outputs
    }

    /// Builds the manifest, hashing every file written so far.
    pub fn manifest(
        &self,
        command: &str,
        config: Value,
        seed: Option<u64>,
        threads: usize,
        wall_clock_seconds: f64,
        exit_code: i32,
        error: Option<String>,
    ) -> Result<RunManifest> {
        let outputs = self
            .outputs
            .iter()
            .map(|p| Ok(FileRecord { path: p.clone(), sha256: sha256_file(p)? }))
            .collect::<Result<Vec<_>>>()?;
        let inputs = self.inputs.iter().map(|(p, h)| FileRecord { path: p.clone(), sha256: h.clone() }).collect();
        Ok(RunManifest {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config,
            seed,
            threads,
            inputs,
            outputs,
            wall_clock_seconds,
            exit_code,
            error,
        })
    }
}

/// Long-format rows `(label, i, j, value)` of a matrix, 1-based indices.
pub fn matrix_rows(tag: &str, m: &DMatrix<f64>) -> Vec<Vec<String>> {
    let mut rows = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            rows.push(vec![tag.to_string(), (i + 1).to_string(), (j + 1).to_string(), fmt_num(m[(i, j)])]);
        }
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn model_doc_round_trip() {
        let net = Network::from_rows(3, &[0.0, 0.5, 0.0, 0.0, 0.0, 0.5, 0.5, 0.0, 0.0]).unwrap();
        let sigma = DMatrix::from_row_slice(3, 3, &[1.0, 0.2, 0.0, 0.2, 2.0, 0.1, 0.0, 0.1, 3.0]);
        let model = NvarModel::new(DMatrix::from_row_slice(2, 2, &[0.3, 0.1, 0.2, 0.05]), net, sigma).unwrap();
        let doc = ModelDoc::from_model(&model);
        let text = serde_json::to_string(&doc).unwrap();
        let back: ModelDoc = serde_json::from_str(&text).unwrap();
        assert_eq!(back.into_model(Path::new(".")).unwrap(), model);
    }

    #[test]
    fn model_doc_defaults() {
        let doc: ModelDoc = serde_json::from_value(json!({"p": 1, "alpha": [0.5], "network": [[0, 1], [1, 0]]})).unwrap();
        let m = doc.into_model(Path::new(".")).unwrap();
        assert_eq!(m.q(), 1);
        assert_eq!(m.sigma(), &DMatrix::identity(2, 2));
        assert!(serde_json::from_value::<ModelDoc>(json!({"p": 1, "alpha": [0.5], "bogus": 1})).is_err());
        let bad: ModelDoc = serde_json::from_value(json!({"p": 2, "alpha": [0.5], "network": [[0, 1], [1, 0]]})).unwrap();
        assert!(matches!(bad.into_model(Path::new(".")), Err(NetvarError::Validation(_))));
    }

    #[test]
    fn layers_take_precedence_in_order() {
        let merged = merge_layers(
            json!({"a": 1, "b": 1, "c": 1}),
            Some(json!({"b": 2, "c": 2})),
            json!({"c": 3, "b": null}),
        );
        assert_eq!(merged, json!({"a": 1, "b": 2, "c": 3}));
        let section = config_section(json!({"irf": {"h": 4}, "seed": 1}), "irf").unwrap();
        assert_eq!(section, json!({"h": 4}));
        assert_eq!(config_section(json!({"seed": 1}), "irf").unwrap(), json!({"seed": 1}));
    }

    #[test]
    fn exit_codes_follow_contract() {
        assert_eq!(exit_code(&NetvarError::NonStationary("x".into())), 3);
        assert_eq!(exit_code(&NetvarError::Estimation("x".into())), 4);
        assert_eq!(exit_code(&NetvarError::Parse { row: 1, col: 1, msg: "x".into() }), 2);
    }
}
