use super::DataError;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Benign,
    Malignant,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::Benign, Label::Malignant];

    /// Malignant is the positive class.
    pub fn is_positive(self) -> bool {
        self == Label::Malignant
    }

    pub fn target(self) -> f64 {
        if self.is_positive() {
            1.0
        } else {
            0.0
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Benign => "benign",
            Label::Malignant => "malignant",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One manifest record as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub case_id: String,
    pub label: Label,
    /// Relative to the manifest's directory.
    pub frame_dir: String,
    /// Filename wildcard; `*` matches any run, `?` one character.
    pub frame_pattern: String,
    pub frame_period_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseRecord {
    pub case_id: String,
    pub label: Label,
    pub frame_paths: Vec<PathBuf>,
    pub frame_period_s: f64,
}

fn wildcard_match(pattern: &[u8], name: &[u8]) -> bool {
    match (pattern.first(), name.first()) {
        (None, None) => true,
        (Some(b'*'), _) => {
            wildcard_match(&pattern[1..], name)
                || (!name.is_empty() && wildcard_match(pattern, &name[1..]))
        }
        (Some(b'?'), Some(_)) => wildcard_match(&pattern[1..], &name[1..]),
        (Some(p), Some(n)) if p == n => wildcard_match(&pattern[1..], &name[1..]),
        _ => false,
    }
}

pub fn load_manifest(path: &Path) -> Result<Vec<CaseRecord>, DataError> {
    let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    let entries: Vec<ManifestEntry> =
        serde_json::from_str(&text).map_err(|e| DataError::Manifest {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
    let root = path.parent().unwrap_or_else(|| Path::new("."));
    let mut seen = HashSet::new();
    let mut cases = Vec::with_capacity(entries.len());
    for e in entries {
        let case_err = |reason: String| DataError::Case {
            case_id: e.case_id.clone(),
            reason,
        };
        if !seen.insert(e.case_id.clone()) {
            return Err(case_err("duplicate case_id".into()));
        }
        if !(e.frame_period_s > 0.0) || !e.frame_period_s.is_finite() {
            return Err(case_err(format!("frame_period_s must be positive, got {}", e.frame_period_s)));
        }
        let dir = root.join(&e.frame_dir);
        let listing = std::fs::read_dir(&dir).map_err(|err| case_err(format!("{}: {err}", dir.display())))?;
        let mut names = Vec::new();
        for entry in listing {
            let entry = entry.map_err(|err| DataError::io(&dir, err))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if wildcard_match(e.frame_pattern.as_bytes(), name.as_bytes()) {
                names.push(name);
            }
        }
        if names.is_empty() {
            return Err(case_err(format!(
                "no frames match {:?} in {}",
                e.frame_pattern,
                dir.display()
            )));
        }
        names.sort();
        cases.push(CaseRecord {
            frame_paths: names.into_iter().map(|n| dir.join(n)).collect(),
            case_id: e.case_id,
            label: e.label,
            frame_period_s: e.frame_period_s,
        });
    }
    Ok(cases)
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<(), DataError> {
    let text = serde_json::to_string_pretty(entries).expect("manifest serializes");
    std::fs::write(path, text).map_err(|e| DataError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(id: &str, label: &str, dir: &str) -> String {
        format!(
            r#"{{"case_id":"{id}","label":"{label}","frame_dir":"{dir}","frame_pattern":"f_*.pgm","frame_period_s":0.1}}"#
        )
    }

    fn setup(frames: &[(&str, usize)]) -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        for (sub, n) in frames {
            std::fs::create_dir_all(dir.path().join(sub)).unwrap();
            for i in 0..*n {
                std::fs::write(dir.path().join(sub).join(format!("f_{i:03}.pgm")), b"").unwrap();
            }
            std::fs::write(dir.path().join(sub).join("notes.txt"), b"").unwrap();
        }
        dir
    }

    #[test]
    fn two_cases_in_lexicographic_order() {
        let dir = setup(&[("a", 3), ("b", 2)]);
        let path = dir.path().join("m.json");
        std::fs::write(&path, format!("[{},{}]", entry("a", "benign", "a"), entry("b", "malignant", "b")))
            .unwrap();
        let cases = load_manifest(&path).unwrap();
        assert_eq!(cases.len(), 2);
        assert_eq!(cases[1].label, Label::Malignant);
        let names: Vec<_> = cases[0]
            .frame_paths
            .iter()
            .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
            .collect();
        assert_eq!(names, ["f_000.pgm", "f_001.pgm", "f_002.pgm"]);
    }

    #[test]
    fn label_parsing_is_strict() {
        let dir = setup(&[("a", 1)]);
        let path = dir.path().join("m.json");
        std::fs::write(&path, format!("[{}]", entry("a", "Malignant", "a"))).unwrap();
        assert!(matches!(load_manifest(&path), Err(DataError::Manifest { .. })));
    }

    #[test]
    fn empty_case_names_case_id() {
        let dir = setup(&[("a", 0)]);
        let path = dir.path().join("m.json");
        std::fs::write(&path, format!("[{}]", entry("case-7", "benign", "a"))).unwrap();
        match load_manifest(&path) {
            Err(DataError::Case { case_id, .. }) => assert_eq!(case_id, "case-7"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_and_unknown_fields_rejected() {
        let dir = setup(&[("a", 1)]);
        let path = dir.path().join("m.json");
        std::fs::write(&path, format!("[{},{}]", entry("a", "benign", "a"), entry("a", "benign", "a"))).unwrap();
        assert!(matches!(load_manifest(&path), Err(DataError::Case { .. })));
        let extra = entry("a", "benign", "a").replace("}", r#","fps":10}"#);
        std::fs::write(&path, format!("[{extra}]")).unwrap();
        assert!(matches!(load_manifest(&path), Err(DataError::Manifest { .. })));
    }

    #[test]
    fn wildcards() {
        assert!(wildcard_match(b"f_*.pgm", b"f_001.pgm"));
        assert!(!wildcard_match(b"f_*.pgm", b"g_001.pgm"));
        assert!(wildcard_match(b"?.pgm", b"a.pgm"));
        assert!(wildcard_match(b"*", b""));
    }
}
