//! Tabular output with a self-describing header.

use std::collections::BTreeMap;

use serde_json::{Map, Value};

use crate::CliError;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Report {
    pub command: &'static str,
    /// Every input that affects the result, flattened to dotted keys.
    pub params: BTreeMap<String, Value>,
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Value>>,
    pub summary: BTreeMap<String, Value>,
    /// Emit a single `result` object instead of a record list.
    pub single: bool,
}

impl Report {
    pub fn new(command: &'static str, params: BTreeMap<String, Value>, columns: Vec<&'static str>) -> Self {
        Self {
            command,
            params,
            columns,
            rows: Vec::new(),
            summary: BTreeMap::new(),
            single: false,
        }
    }

    pub fn render(&self, format: Format) -> Result<String, CliError> {
        match format {
            Format::Csv => self.render_csv(),
            Format::Json => self.render_json(),
        }
    }

    fn header_lines(&self) -> Vec<String> {
        let mut out = vec![format!("# qlimit {VERSION} {}", self.command)];
        for (k, v) in &self.params {
            out.push(format!("# {k}={}", scalar_text(v)));
        }
        out
    }

    fn render_csv(&self) -> Result<String, CliError> {
        let mut out = String::new();
        for line in self.header_lines() {
            out.push_str(&line);
            out.push('\n');
        }
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        let csv_err = |e: csv::Error| CliError::Output(e.to_string());
        w.write_record(&self.columns).map_err(csv_err)?;
        for row in &self.rows {
            w.write_record(row.iter().map(cell_text)).map_err(csv_err)?;
        }
        let body = w.into_inner().map_err(|e| CliError::Output(e.to_string()))?;
        out.push_str(&String::from_utf8(body).map_err(|e| CliError::Output(e.to_string()))?);
        for (k, v) in &self.summary {
            out.push_str(&format!("# result {k}={}\n", scalar_text(v)));
        }
        Ok(out)
    }

    fn render_json(&self) -> Result<String, CliError> {
        let mut doc = Map::new();
        doc.insert("tool".into(), Value::from("qlimit"));
        doc.insert("version".into(), Value::from(VERSION));
        doc.insert("command".into(), Value::from(self.command));
        doc.insert(
            "params".into(),
            Value::Object(self.params.clone().into_iter().collect()),
        );
        let records: Vec<Value> = self
            .rows
            .iter()
            .map(|row| {
                Value::Object(
                    self.columns
                        .iter()
                        .map(|c| c.to_string())
                        .zip(row.iter().cloned())
                        .collect(),
                )
            })
            .collect();
        if self.single {
            let mut result = records.into_iter().next().unwrap_or(Value::Null);
            if let Value::Object(m) = &mut result {
                m.extend(self.summary.clone());
            }
            doc.insert("result".into(), result);
        } else {
            doc.insert("records".into(), Value::Array(records));
            if !self.summary.is_empty() {
                doc.insert(
                    "summary".into(),
                    Value::Object(self.summary.clone().into_iter().collect()),
                );
            }
        }
        let mut s = serde_json::to_string_pretty(&Value::Object(doc)).map_err(|e| CliError::Output(e.to_string()))?;
        s.push('\n');
        Ok(s)
    }
}

fn cell_text(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn scalar_text(v: &Value) -> String {
    match v {
        Value::Array(items) => items.iter().map(cell_text).collect::<Vec<_>>().join(","),
        other => cell_text(other),
    }
}

/// Flattens a serialized argument struct into dotted keys.
pub fn flatten_params(value: Value) -> BTreeMap<String, Value> {
    fn walk(prefix: &str, v: Value, out: &mut BTreeMap<String, Value>) {
        match v {
            Value::Object(m) => {
                for (k, v) in m {
                    let key = if prefix.is_empty() { k } else { format!("{prefix}.{k}") };
                    walk(&key, v, out);
                }
            }
            other => {
                out.insert(prefix.to_string(), other);
            }
        }
    }
    let mut out = BTreeMap::new();
    walk("", value, &mut out);
    out
}

pub fn num(x: f64) -> Value {
    serde_json::Number::from_f64(x).map_or(Value::Null, Value::Number)
}
