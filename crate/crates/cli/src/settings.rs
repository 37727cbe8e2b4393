//! Run configuration: command-line flags over `key=value` config file over
//! built-in defaults.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use polarfuse_core::io::parse_key_values;

use crate::failure::Failure;

/// Name of the effective-config echo written into every output directory.
pub const ECHO_FILE: &str = "config.txt";

/// Every key a config file may set, with its default where one exists.
const KEYS: &[(&str, Option<&str>)] = &[
    ("seed", Some("0")),
    ("input", None),
    ("intrinsics", None),
    ("data", None),
    ("foundation", None),
    ("checkpoint", None),
    ("predictions", None),
    ("index", Some("0")),
    ("scenes", Some("16")),
    ("resolution", Some("64")),
    ("degradation", Some("mixed")),
    ("ablation", Some("ppft")),
    ("stages", Some("3")),
    ("channels", Some("8")),
    ("freeze", Some("")),
    ("steps", Some("1000")),
    ("lr", Some("0.001")),
    ("optimizer", Some("adam")),
    ("batch-size", Some("1")),
    ("threshold-base", Some("1.25")),
];

/// Flag values given on the command line, by config key.
#[derive(Clone, Debug, Default)]
pub struct Flags(Vec<(&'static str, String)>);

impl Flags {
    pub fn set<T: Display>(&mut self, key: &'static str, value: &Option<T>) -> &mut Self {
        if let Some(v) = value {
            self.0.push((key, v.to_string()));
        }
        self
    }

    pub fn set_path(&mut self, key: &'static str, value: &Option<PathBuf>) -> &mut Self {
        self.set(key, &value.as_ref().map(|p| p.display()))
    }
}

/// Resolved settings of one subcommand.
#[derive(Clone, Debug)]
pub struct Settings {
    command: &'static str,
    values: BTreeMap<String, String>,
    out: PathBuf,
}

impl Settings {
    /// Merges `flags` over the file at `config` over defaults, keeping only
    /// `keys`. Keys unknown to every subcommand are rejected.
    pub fn resolve(
        command: &'static str,
        keys: &'static [&'static str],
        config: Option<&Path>,
        out: Option<&Path>,
        flags: &Flags,
    ) -> Result<Self, Failure> {
        let mut values: BTreeMap<String, String> = KEYS
            .iter()
            .filter_map(|&(k, d)| Some((k.to_string(), d?.to_string())))
            .collect();
        if let Some(path) = config {
            let text = fs::read_to_string(path)
                .map_err(|e| Failure::config(format!("cannot read config file {}: {e}", path.display())))?;
            let file = parse_key_values(&text).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
            for (k, v) in file {
                if !KEYS.iter().any(|(known, _)| *known == k) {
                    return Err(Failure::config(format!("{}: unknown key `{k}`", path.display())));
                }
                values.insert(k, v);
            }
        }
        for (k, v) in &flags.0 {
            values.insert(k.to_string(), v.clone());
        }
        values.retain(|k, _| keys.contains(&k.as_str()));
        let out = out
            .map(Path::to_path_buf)
            .ok_or_else(|| Failure::config("missing required flag --out"))?;
        Ok(Settings {
            command,
            values,
            out,
        })
    }

    pub fn out(&self) -> &Path {
        &self.out
    }

    pub fn has(&self, key: &str) -> bool {
        self.values.get(key).is_some_and(|v| !v.is_empty())
    }

    pub fn raw(&self, key: &str) -> Result<&str, Failure> {
        self.values
            .get(key)
            .map(String::as_str)
            .filter(|v| !v.is_empty())
            .ok_or_else(|| Failure::config(format!("{}: missing required setting `{key}`", self.command)))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T, Failure>
    where
        T::Err: Display,
    {
        let raw = self.raw(key)?;
        raw.parse()
            .map_err(|e| Failure::config(format!("invalid value `{raw}` for `{key}`: {e}")))
    }

    pub fn path(&self, key: &str) -> Result<PathBuf, Failure> {
        self.raw(key).map(PathBuf::from)
    }

    pub fn optional_path(&self, key: &str) -> Option<PathBuf> {
        self.has(key).then(|| PathBuf::from(&self.values[key]))
    }

    /// Creates the output directory and writes the effective settings into it.
    pub fn echo(&self) -> Result<(), Failure> {
        fs::create_dir_all(&self.out)?;
        let mut text = format!("# polarfuse {}\n", self.command);
        for (k, v) in &self.values {
            text.push_str(&format!("{k}={v}\n"));
        }
        fs::write(self.out.join(ECHO_FILE), text)?;
        Ok(())
    }
}
