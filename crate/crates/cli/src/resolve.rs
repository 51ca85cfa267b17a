//! Layered configuration: built-in defaults, then a JSON config file, then command-line flags.
//! Every leaf of the resolved document remembers which layer set it.

use std::collections::BTreeMap;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::Failure;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    Flag,
    Config,
    PaperDefault,
    DeclaredDefault,
}

pub struct Resolver {
    value: Value,
    provenance: BTreeMap<String, Source>,
    paper_keys: &'static [&'static str],
}

fn join(prefix: &str, key: &str) -> String {
    if prefix.is_empty() {
        key.to_string()
    } else {
        format!("{prefix}.{key}")
    }
}

/// Leaves are non-object values, and empty objects.
fn leaves(prefix: &str, v: &Value, out: &mut Vec<String>) {
    match v {
        Value::Object(m) if !m.is_empty() => {
            for (k, child) in m {
                leaves(&join(prefix, k), child, out);
            }
        }
        _ => out.push(prefix.to_string()),
    }
}

impl Resolver {
    /// `paper_keys` lists the dotted paths whose defaults are reported as `paper-default`.
    pub fn new(defaults: Value, paper_keys: &'static [&'static str]) -> Self {
        let mut r = Self { value: Value::Object(Map::new()), provenance: BTreeMap::new(), paper_keys };
        r.merge(defaults, "", None);
        r
    }

    fn default_source(&self, path: &str) -> Source {
        if self.paper_keys.iter().any(|k| *k == path) {
            Source::PaperDefault
        } else {
            Source::DeclaredDefault
        }
    }

    fn mark(&mut self, prefix: &str, v: &Value, source: Option<Source>) {
        self.provenance.retain(|k, _| !(k == prefix || k.starts_with(&format!("{prefix}."))));
        let mut paths = Vec::new();
        leaves(prefix, v, &mut paths);
        for p in paths {
            let s = source.unwrap_or_else(|| self.default_source(&p));
            self.provenance.insert(p, s);
        }
    }

    fn merge(&mut self, layer: Value, prefix: &str, source: Option<Source>) {
        let Value::Object(layer) = layer else {
            self.set_value(prefix, layer, source);
            return;
        };
        for (k, v) in layer {
            let path = join(prefix, &k);
            // A block whose "kind" tag changes is replaced, not merged.
            let mergeable = match (self.get(&path), &v) {
                (Some(Value::Object(old)), Value::Object(new)) => {
                    new.get("kind").is_none() || new.get("kind") == old.get("kind")
                }
                _ => false,
            };
            match v {
                Value::Object(_) if mergeable => self.merge(v, &path, source),
                _ => self.set_value(&path, v, source),
            }
        }
    }

    fn get(&self, path: &str) -> Option<&Value> {
        path.split('.').try_fold(&self.value, |v, k| v.get(k))
    }

    fn set_value(&mut self, path: &str, v: Value, source: Option<Source>) {
        self.mark(path, &v, source);
        let mut cur = &mut self.value;
        let keys: Vec<&str> = path.split('.').collect();
        for k in &keys[..keys.len() - 1] {
            if !cur.get(*k).is_some_and(Value::is_object) {
                cur[*k] = Value::Object(Map::new());
            }
            cur = cur.get_mut(*k).expect("just inserted");
        }
        cur[keys[keys.len() - 1]] = v;
    }

    pub fn load_config(&mut self, path: Option<&Path>) -> Result<(), Failure> {
        let Some(path) = path else { return Ok(()) };
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::Config(format!("reading {}: {e}", path.display())))?;
        let v: Value = serde_json::from_str(&text)
            .map_err(|e| Failure::Config(format!("parsing {}: {e}", path.display())))?;
        let v = crate::manifest::unwrap_config(v);
        if !v.is_object() {
            return Err(Failure::Config(format!("{}: top level must be an object", path.display())));
        }
        self.merge(v, "", Some(Source::Config));
        Ok(())
    }

    /// Applies a flag override when the flag was given.
    pub fn flag<T: Serialize>(&mut self, path: &str, v: Option<T>) {
        if let Some(v) = v {
            let v = serde_json::to_value(v).expect("flag values serialize");
            self.set_value(path, v, Some(Source::Flag));
        }
    }

    /// Sets a value that counts as a default (e.g. enabling an optional block with its defaults).
    pub fn fill(&mut self, path: &str, v: Value) {
        self.set_value(path, v, None);
    }

    /// Sets a value derived from other fields (e.g. a schedule computed from data),
    /// inheriting the source of `from`.
    pub fn derive(&mut self, path: &str, v: Value, from: &str) {
        let s = self.source_of(from).unwrap_or(Source::DeclaredDefault);
        self.set_value(path, v, Some(s));
    }

    pub fn source_of(&self, path: &str) -> Option<Source> {
        self.provenance.get(path).copied()
    }

    pub fn value(&self, path: &str) -> Option<&Value> {
        self.get(path)
    }

    pub fn take(&mut self, path: &str) -> Option<Value> {
        let keys: Vec<&str> = path.split('.').collect();
        let mut cur = &mut self.value;
        for k in &keys[..keys.len() - 1] {
            cur = cur.get_mut(*k)?;
        }
        let removed = cur.as_object_mut()?.remove(keys[keys.len() - 1]);
        self.provenance.retain(|k, _| !(k == path || k.starts_with(&format!("{path}."))));
        removed
    }

    /// Deserializes one block of the resolved document, rejecting unknown keys.
    pub fn block<T: DeserializeOwned>(&self, path: &str) -> Result<T, Failure> {
        let v = self.get(path).cloned().unwrap_or(Value::Object(Map::new()));
        serde_json::from_value(v).map_err(|e| Failure::Config(format!("{path}: {e}")))
    }

    pub fn block_root<T: DeserializeOwned>(&self) -> Result<T, Failure> {
        serde_json::from_value(self.value.clone()).map_err(|e| Failure::Config(e.to_string()))
    }

    /// Rejects top-level keys outside `allowed`.
    pub fn check_top_level(&self, allowed: &[&str]) -> Result<(), Failure> {
        if let Value::Object(m) = &self.value {
            for k in m.keys() {
                if !allowed.contains(&k.as_str()) {
                    return Err(Failure::Config(format!("unknown key {k:?}; expected one of {allowed:?}")));
                }
            }
        }
        Ok(())
    }

    /// Final resolved document plus provenance. `resolved` is the re-serialized typed
    /// config, so fields filled by serde defaults show up as declared or paper defaults.
    pub fn finish(&self, resolved: Value) -> (Value, BTreeMap<String, Source>) {
        let mut paths = Vec::new();
        leaves("", &resolved, &mut paths);
        let mut prov = BTreeMap::new();
        for p in paths {
            let s = self.lookup(&p).unwrap_or_else(|| self.default_source(&p));
            prov.insert(p, s);
        }
        (resolved, prov)
    }

    /// Source of `path` or of its nearest recorded ancestor.
    fn lookup(&self, path: &str) -> Option<Source> {
        let mut p = path;
        loop {
            if let Some(s) = self.provenance.get(p) {
                return Some(*s);
            }
            p = &p[..p.rfind('.')?];
        }
    }
}
