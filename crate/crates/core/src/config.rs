//! Flat `key = value` files: the parameter file and sectioned run configs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::hamiltonian::SpinSystemParams;
use crate::spin::Spin;

pub const PARAM_KEYS: [&str; 8] = [
    "g_z",
    "g_N",
    "a_zz_MHz",
    "a_plus_MHz",
    "a_minus_MHz",
    "a_zx_MHz",
    "a_xz_MHz",
    "nuclear_spin",
];

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub value: String,
    /// 1-based source line.
    pub line: usize,
}

/// Parsed `key = value` lines in source order of first appearance.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct KeyValues {
    pub origin: String,
    entries: BTreeMap<String, Entry>,
}

impl KeyValues {
    /// `#` starts a comment; blank lines are skipped; duplicate keys are errors.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (k, raw) in text.lines().enumerate() {
            let line = k + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let err = |msg: String| Error::Parse {
                path: origin.to_string(),
                line,
                msg,
            };
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, found {content:?}")))?;
            let key = key.trim();
            if key.is_empty() || key.contains(char::is_whitespace) {
                return Err(err(format!("bad key {key:?}")));
            }
            if let Some(prev) = entries.insert(
                key.to_string(),
                Entry {
                    value: value.trim().to_string(),
                    line,
                },
            ) {
                return Err(err(format!("duplicate key {key:?} (first on line {})", prev.line)));
            }
        }
        Ok(KeyValues {
            origin: origin.to_string(),
            entries,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn get(&self, key: &str) -> Option<&Entry> {
        self.entries.get(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn error(&self, key: &str, msg: impl std::fmt::Display) -> Error {
        let line = self.entries.get(key).map(|e| e.line).unwrap_or(0);
        Error::Parse {
            path: self.origin.clone(),
            line,
            msg: format!("{key}: {msg}"),
        }
    }

    pub fn f64(&self, key: &str) -> Result<Option<f64>> {
        self.get(key)
            .map(|e| {
                e.value
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| self.error(key, format!("{:?} is not a finite number", e.value)))
            })
            .transpose()
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        Ok(self.f64(key)?.unwrap_or(default))
    }

    /// Comma-separated numbers.
    pub fn f64_list(&self, key: &str) -> Result<Option<Vec<f64>>> {
        self.get(key)
            .map(|e| {
                e.value
                    .split(',')
                    .map(|t| {
                        t.trim()
                            .parse::<f64>()
                            .ok()
                            .filter(|v| v.is_finite())
                            .ok_or_else(|| self.error(key, format!("{:?} is not a number", t.trim())))
                    })
                    .collect()
            })
            .transpose()
    }

    pub fn bool_or(&self, key: &str, default: bool) -> Result<bool> {
        match self.get(key) {
            None => Ok(default),
            Some(e) => match e.value.as_str() {
                "true" | "yes" | "1" => Ok(true),
                "false" | "no" | "0" => Ok(false),
                other => Err(self.error(key, format!("{other:?} is not a boolean"))),
            },
        }
    }

    pub fn string(&self, key: &str) -> Option<&str> {
        self.get(key).map(|e| e.value.as_str())
    }

    /// Errors on the first key that neither appears in `allowed` nor starts
    /// with one of `prefixes`.
    pub fn reject_unknown(&self, allowed: &[&str], prefixes: &[&str]) -> Result<()> {
        for key in self.keys() {
            if !allowed.contains(&key) && !prefixes.iter().any(|p| key.starts_with(p)) {
                return Err(self.error(key, "unknown key"));
            }
        }
        Ok(())
    }
}

/// Parameters from the keys of [`PARAM_KEYS`] present in `kv`; absent keys
/// keep their defaults. Other keys are ignored here.
pub fn params_from(kv: &KeyValues, mut params: SpinSystemParams) -> Result<SpinSystemParams> {
    if let Some(v) = kv.f64("g_z")? {
        params.g_z = v;
    }
    if let Some(v) = kv.f64("g_N")? {
        params.g_n = v;
    }
    let h = &mut params.hyperfine;
    for (key, slot) in [
        ("a_zz_MHz", &mut h.a_zz),
        ("a_plus_MHz", &mut h.a_plus),
        ("a_minus_MHz", &mut h.a_minus),
        ("a_zx_MHz", &mut h.a_zx),
        ("a_xz_MHz", &mut h.a_xz),
    ] {
        if let Some(v) = kv.f64(key)? {
            *slot = v;
        }
    }
    if let Some(e) = kv.get("nuclear_spin") {
        let j = if let Some((n, d)) = e.value.split_once('/') {
            let n: f64 = n.trim().parse().map_err(|_| kv.error("nuclear_spin", "not a half-integer"))?;
            let d: f64 = d.trim().parse().map_err(|_| kv.error("nuclear_spin", "not a half-integer"))?;
            n / d
        } else {
            e.value.parse().map_err(|_| kv.error("nuclear_spin", "not a half-integer"))?
        };
        params.nuclear_spin = Spin::new(j).map_err(|err| kv.error("nuclear_spin", err))?;
    }
    params.validate().map_err(|e| Error::Config(format!("{}: {e}", kv.origin)))?;
    Ok(params)
}

/// Parses a parameter file, rejecting unknown keys.
pub fn parse_params(text: &str, origin: &str) -> Result<SpinSystemParams> {
    let kv = KeyValues::parse(text, origin)?;
    kv.reject_unknown(&PARAM_KEYS, &[])?;
    params_from(&kv, SpinSystemParams::default())
}

pub fn read_params(path: &Path) -> Result<SpinSystemParams> {
    parse_params(
        &std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?,
        &path.display().to_string(),
    )
}

pub fn format_params(params: &SpinSystemParams) -> String {
    let h = &params.hyperfine;
    let mut s = String::new();
    let _ = writeln!(s, "g_z = {}", params.g_z);
    let _ = writeln!(s, "g_N = {}", params.g_n);
    let _ = writeln!(s, "a_zz_MHz = {}", h.a_zz);
    let _ = writeln!(s, "a_plus_MHz = {}", h.a_plus);
    let _ = writeln!(s, "a_minus_MHz = {}", h.a_minus);
    let _ = writeln!(s, "a_zx_MHz = {}", h.a_zx);
    let _ = writeln!(s, "a_xz_MHz = {}", h.a_xz);
    let _ = writeln!(s, "nuclear_spin = {}/2", params.nuclear_spin.twice());
    s
}

/// Writes via a temporary file in the same directory and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path).inspect_err(|_| {
        let _ = std::fs::remove_file(&tmp);
    })?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn params_round_trip() {
        let p = SpinSystemParams::default().with_g_z(-1.8);
        let back = parse_params(&format_params(&p), "mem").unwrap();
        assert_eq!(p, back);
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let p = parse_params("# strainless\na_plus_MHz = 0\na_zx_MHz = 0 # inline\n\n", "mem").unwrap();
        assert_eq!(p.hyperfine.a_plus, 0.0);
        assert_eq!(p.hyperfine.a_zz, SpinSystemParams::default().hyperfine.a_zz);
    }

    #[test]
    fn rejects_typos_and_junk() {
        let e = parse_params("a_zz = -230\n", "p.txt").unwrap_err();
        assert!(e.to_string().contains("p.txt:1"), "{e}");
        assert!(e.to_string().contains("a_zz"), "{e}");
        assert!(parse_params("g_z -1.7\n", "p").is_err());
        assert!(parse_params("g_z = abc\n", "p").is_err());
        assert!(parse_params("g_z = 1\ng_z = 2\n", "p").is_err());
        assert!(parse_params("nuclear_spin = 1/3\n", "p").is_err());
        assert!(parse_params("g_z = NaN\n", "p").is_err());
    }

    #[test]
    fn nuclear_spin_forms() {
        assert_eq!(parse_params("nuclear_spin = 3/2\n", "p").unwrap().nuclear_spin.twice(), 3);
        assert_eq!(parse_params("nuclear_spin = 2.5\n", "p").unwrap().nuclear_spin.twice(), 5);
    }

    #[test]
    fn lists_and_sections() {
        let kv = KeyValues::parse("map.b_min = 0\nensemble.offsets_MHz = 0, 1.7\nflag = yes\n", "c").unwrap();
        assert_eq!(kv.f64_list("ensemble.offsets_MHz").unwrap().unwrap(), vec![0.0, 1.7]);
        assert!(kv.bool_or("flag", false).unwrap());
        assert!(kv.reject_unknown(&["flag"], &["map.", "ensemble."]).is_ok());
        assert!(kv.reject_unknown(&["flag"], &["map."]).is_err());
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = std::env::temp_dir().join(format!("qss-cfg-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("out.txt");
        write_atomic(&path, b"one").unwrap();
        write_atomic(&path, b"two").unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(&dir).unwrap().count(), 1);
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
