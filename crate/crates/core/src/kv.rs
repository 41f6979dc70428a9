//! Plain-text `key = value` files.
//!
//! One assignment per line; `#` starts a comment; blank lines are ignored.
//! Keys are case-sensitive and may appear at most once.

use std::collections::BTreeSet;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

pub fn parse(text: &str, source_name: &str) -> Result<Vec<Entry>> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(Error::Config {
                source_name: source_name.to_string(),
                line,
                message: format!("expected `key = value`, found `{content}`"),
            });
        };
        let key = key.trim().to_string();
        if key.is_empty() {
            return Err(Error::Config {
                source_name: source_name.to_string(),
                line,
                message: "empty key".into(),
            });
        }
        if !seen.insert(key.clone()) {
            return Err(Error::Config {
                source_name: source_name.to_string(),
                line,
                message: format!("duplicate key `{key}`"),
            });
        }
        out.push(Entry { key, value: value.trim().to_string(), line });
    }
    Ok(out)
}

/// Parses `entry.value` as `T`, attributing failures to the entry's line.
pub fn value<T: FromStr>(entry: &Entry, source_name: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    entry.value.parse::<T>().map_err(|e| Error::Config {
        source_name: source_name.to_string(),
        line: entry.line,
        message: format!("bad value `{}` for `{}`: {e}", entry.value, entry.key),
    })
}

pub fn unknown_key(entry: &Entry, source_name: &str, known: &[&str]) -> Error {
    Error::Config {
        source_name: source_name.to_string(),
        line: entry.line,
        message: format!("unknown key `{}` (known keys: {})", entry.key, known.join(", ")),
    }
}


/// Typed configuration struct backed by a `key = value` file.
pub trait KvConfig: Default + Sized {
    const KEYS: &'static [&'static str];

    /// Sets `key` from its textual value. `Ok(false)` means the key is unknown.
    fn set(&mut self, key: &str, value: &str) -> std::result::Result<bool, String>;

    /// `(key, default value, description)` for every key.
    fn reference() -> Vec<(&'static str, String, &'static str)>;

    /// Current values, one `key = value` line each, in declaration order.
    fn to_kv(&self) -> String;

    fn from_kv_str(text: &str, source_name: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for entry in parse(text, source_name)? {
            match cfg.set(&entry.key, &entry.value) {
                Ok(true) => {}
                Ok(false) => return Err(unknown_key(&entry, source_name, Self::KEYS)),
                Err(e) => {
                    return Err(Error::Config {
                        source_name: source_name.to_string(),
                        line: entry.line,
                        message: format!("bad value `{}` for `{}`: {e}", entry.value, entry.key),
                    })
                }
            }
        }
        Ok(cfg)
    }

    /// Applies `<PREFIX><KEY>` environment overrides (key upper-cased).
    fn apply_env(&mut self, prefix: &str) -> Result<()> {
        for key in Self::KEYS {
            let var = format!("{prefix}{}", key.to_ascii_uppercase());
            if let Ok(value) = std::env::var(&var) {
                self.set(key, value.trim()).map_err(|e| Error::Config {
                    source_name: format!("${var}"),
                    line: 0,
                    message: format!("bad value `{value}`: {e}"),
                })?;
            }
        }
        Ok(())
    }

    /// Markdown table of every key with default and description.
    fn reference_markdown(title: &str) -> String {
        let mut out = format!("## {title}\n\n| key | default | description |\n|---|---|---|\n");
        for (k, d, doc) in Self::reference() {
            out.push_str(&format!("| `{k}` | `{d}` | {doc} |\n"));
        }
        out
    }
}

/// Declares a config struct with per-key defaults and descriptions and
/// implements [`KvConfig`] for it. Field types need `FromStr + Display`.
macro_rules! kv_config {
    (
        $(#[$meta:meta])*
        pub struct $name:ident {
            $( #[doc = $doc:literal] $field:ident : $ty:ty = $default:expr, )*
        }
    ) => {
        $(#[$meta])*
        pub struct $name {
            $( #[doc = $doc] pub $field: $ty, )*
        }

        impl Default for $name {
            fn default() -> Self {
                Self { $( $field: $default, )* }
            }
        }

        impl $crate::kv::KvConfig for $name {
            const KEYS: &'static [&'static str] = &[$(stringify!($field)),*];

            fn set(&mut self, key: &str, value: &str) -> std::result::Result<bool, String> {
                match key {
                    $( stringify!($field) => {
                        self.$field = value.parse::<$ty>().map_err(|e| e.to_string())?;
                        Ok(true)
                    } )*
                    _ => Ok(false),
                }
            }

            fn reference() -> Vec<(&'static str, String, &'static str)> {
                let d = Self::default();
                vec![ $( (stringify!($field), d.$field.to_string(), $doc.trim()), )* ]
            }

            fn to_kv(&self) -> String {
                let mut out = String::new();
                $( out.push_str(&format!("{} = {}\n", stringify!($field), self.$field)); )*
                out
            }
        }
    };
}

pub(crate) use kv_config;
