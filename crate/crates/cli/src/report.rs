//! The JSON report printed by every command.
//!
//! Floats are written in scientific notation with 17 significant digits so
//! the text round-trips and is identical from run to run. Non-finite values
//! become the strings `"NaN"`, `"inf"` and `"-inf"`.

use std::str::FromStr;

use matrixinfo::verify::{Battery, Check, Table};
use serde_json::{Map, Number, Value};

use crate::io::format_f64;

pub fn num(v: f64) -> Value {
    if v.is_finite() {
        Value::Number(Number::from_str(&format_f64(v)).expect("formatted float parses"))
    } else {
        Value::String(v.to_string())
    }
}

pub fn int(v: usize) -> Value {
    Value::Number(Number::from(v as u64))
}

pub fn opt(v: Option<f64>) -> Value {
    v.map_or(Value::Null, num)
}

pub fn nums(vs: &[f64]) -> Value {
    Value::Array(vs.iter().copied().map(num).collect())
}

#[derive(Debug, Clone)]
pub struct Report {
    command: String,
    config: Map<String, Value>,
    results: Map<String, Value>,
    checks: Vec<Value>,
}

impl Report {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.to_owned(),
            config: Map::new(),
            results: Map::new(),
            checks: Vec::new(),
        }
    }

    pub fn config(&mut self, key: &str, v: impl Into<Value>) -> &mut Self {
        self.config.insert(key.to_owned(), v.into());
        self
    }

    pub fn result(&mut self, key: &str, v: impl Into<Value>) -> &mut Self {
        self.results.insert(key.to_owned(), v.into());
        self
    }

    pub fn check(&mut self, c: &Check) -> &mut Self {
        let mut m = Map::new();
        m.insert("name".into(), Value::String(c.name.clone()));
        m.insert("pass".into(), Value::Bool(c.pass()));
        m.insert("measured".into(), num(c.measured));
        m.insert("expected".into(), num(c.expected));
        m.insert("tolerance".into(), num(c.tolerance));
        self.checks.push(Value::Object(m));
        self
    }

    /// Adds every check, scalar and table of a battery.
    pub fn battery(&mut self, b: &Battery) -> &mut Self {
        for c in &b.checks {
            self.check(c);
        }
        self.result("passed", int(b.passed()));
        self.result("total", int(b.checks.len()));
        let scalars: Map<String, Value> = b.scalars.iter().map(|(k, v)| (k.clone(), num(*v))).collect();
        self.result("scalars", scalars);
        let tables: Map<String, Value> = b.tables.iter().map(|t| (t.name.clone(), table(t))).collect();
        self.result("tables", tables);
        self
    }

    pub fn to_value(&self) -> Value {
        let mut m = Map::new();
        m.insert("tool_version".into(), Value::String(env!("CARGO_PKG_VERSION").into()));
        m.insert("command".into(), Value::String(self.command.clone()));
        m.insert("config".into(), Value::Object(self.config.clone()));
        m.insert("results".into(), Value::Object(self.results.clone()));
        m.insert("checks".into(), Value::Array(self.checks.clone()));
        Value::Object(m)
    }

    pub fn render(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.to_value()).expect("report serializes");
        s.push('\n');
        s
    }
}

fn table(t: &Table) -> Value {
    let mut m = Map::new();
    m.insert(
        "columns".into(),
        Value::Array(t.columns.iter().cloned().map(Value::String).collect()),
    );
    m.insert("rows".into(), Value::Array(t.rows.iter().map(|r| nums(r)).collect()));
    Value::Object(m)
}
