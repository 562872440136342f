//! Config-file merging and provenance records.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use esmc_core::EsmcError;
use serde::de::{self, DeserializeOwned, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};
use serde_json::{json, Map, Value};

pub const TOOL: &str = "esmc";

/// Sections a config file may contain, besides the top-level `seed`.
const SECTIONS: [&str; 9] = [
    "train",
    "baseline",
    "predict",
    "eval",
    "drop-labels",
    "drop-instances",
    "split",
    "synth",
    "curves",
];

/// A count that is either fixed or chosen from the data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Count {
    #[default]
    Auto,
    Fixed(usize),
}

impl FromStr for Count {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "auto" {
            return Ok(Count::Auto);
        }
        s.parse()
            .map(Count::Fixed)
            .map_err(|_| format!("expected a positive integer or `auto`, got {s:?}"))
    }
}

impl fmt::Display for Count {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Count::Auto => f.write_str("auto"),
            Count::Fixed(n) => write!(f, "{n}"),
        }
    }
}

impl Serialize for Count {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Count::Auto => s.serialize_str("auto"),
            Count::Fixed(n) => s.serialize_u64(*n as u64),
        }
    }
}

impl<'de> Deserialize<'de> for Count {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct CountVisitor;

        impl Visitor<'_> for CountVisitor {
            type Value = Count;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a nonnegative integer or \"auto\"")
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Count, E> {
                Ok(Count::Fixed(v as usize))
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<Count, E> {
                v.parse().map_err(E::custom)
            }
        }

        d.deserialize_any(CountVisitor)
    }
}

fn invalid(msg: impl Into<String>) -> EsmcError {
    EsmcError::InvalidArgument(msg.into())
}

/// Reads a JSON config file, or an empty object when no file is given.
pub fn read_config(path: Option<&Path>) -> Result<Value, EsmcError> {
    let Some(path) = path else {
        return Ok(Value::Object(Map::new()));
    };
    let text = fs::read_to_string(path).map_err(|e| EsmcError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let value: Value = serde_json::from_str(&text).map_err(|e| EsmcError::Parse {
        line: e.line(),
        message: format!("config file: {e}"),
    })?;
    let Value::Object(map) = &value else {
        return Err(invalid("config file must hold a JSON object"));
    };
    for key in map.keys() {
        if key != "seed" && !SECTIONS.contains(&key.as_str()) {
            return Err(invalid(format!("config file: unknown section `{key}`")));
        }
    }
    Ok(value)
}

fn strip_nulls(value: Value) -> Map<String, Value> {
    match value {
        Value::Object(map) => map.into_iter().filter(|(_, v)| !v.is_null()).collect(),
        _ => Map::new(),
    }
}

/// Builds the settings of one command: defaults, then the file section,
/// then explicit flags.
pub fn resolve<T: DeserializeOwned>(
    file: &Value,
    section: &str,
    global_seed: Option<u64>,
    seeded: bool,
    flags: Value,
) -> Result<T, EsmcError> {
    let mut merged = Map::new();
    if seeded {
        if let Some(seed) = file.get("seed") {
            merged.insert("seed".into(), seed.clone());
        }
    }
    if let Some(sec) = file.get(section) {
        if !sec.is_object() {
            return Err(invalid(format!(
                "config file: section `{section}` must be an object"
            )));
        }
        merged.extend(strip_nulls(sec.clone()));
    }
    if seeded {
        if let Some(seed) = global_seed {
            merged.insert("seed".into(), seed.into());
        }
    }
    merged.extend(strip_nulls(flags));
    serde_json::from_value(Value::Object(merged)).map_err(|e| invalid(format!("{section}: {e}")))
}

/// The provenance record embedded in every output artifact.
pub fn provenance<T: Serialize>(command: &str, settings: &T) -> Value {
    json!({
        "tool": TOOL,
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "config": settings,
    })
}

/// Provenance as a single comment line for CSV outputs.
pub fn provenance_comment(prov: &Value) -> String {
    format!("provenance {prov}")
}

/// Path of the provenance sidecar written next to a dataset file.
pub fn sidecar_path(path: &Path) -> PathBuf {
    suffixed(path, ".meta.json")
}

pub fn suffixed(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}
