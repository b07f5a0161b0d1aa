//! JSON corpus manifest.
//!
//! Sweep paths are stored relative to the directory that holds the manifest,
//! with `/` separators, so a corpus can be moved or diffed byte-for-byte.

use std::collections::HashSet;
use std::fs;
use std::path::{Component, Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::perturb::{MixtureSpec, PerturbationPlan, TruncationRange};
use crate::sweep::{PlacentaLabel, PresentationLabel, Split, SweepTag};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub tag: SweepTag,
    pub path: String,
    pub perturbation: Option<PerturbationPlan>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub patient_id: String,
    pub split: Split,
    pub presentation: PresentationLabel,
    pub placenta: PlacentaLabel,
    pub sweeps: Vec<SweepEntry>,
}

impl ManifestEntry {
    pub fn sweep(&self, tag: SweepTag) -> Option<&SweepEntry> {
        self.sweeps.iter().find(|s| s.tag == tag)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub mixture: Option<MixtureSpec>,
    pub entries: Vec<ManifestEntry>,
}

/// Identifies one sweep across manifests, detections and predictions.
pub type SweepKey = (String, SweepTag);

pub fn sweep_key_label(key: &SweepKey) -> String {
    format!("{}/{}", key.0, key.1)
}

impl Manifest {
    pub fn split_counts(&self) -> (usize, usize, usize) {
        self.entries.iter().fold((0, 0, 0), |(tr, va, te), e| match e.split {
            Split::Train => (tr + 1, va, te),
            Split::Val => (tr, va + 1, te),
            Split::Test => (tr, va, te + 1),
        })
    }

    pub fn split_entries(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    /// Keys of every test-split sweep, in manifest order.
    pub fn test_keys(&self) -> Vec<SweepKey> {
        self.split_entries(Split::Test)
            .flat_map(|e| e.sweeps.iter().map(|s| (e.patient_id.clone(), s.tag)))
            .collect()
    }

    /// Structural checks: unique patients, six distinct tags each, valid
    /// perturbation records, and optionally the split partition.
    pub fn validate(&self, expected_splits: Option<(usize, usize, usize)>, ranges: &TruncationRange) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.patient_id.as_str()) {
                return Err(Error::Validation(format!("duplicate patient_id {:?}", e.patient_id)));
            }
            let mut tags: Vec<SweepTag> = e.sweeps.iter().map(|s| s.tag).collect();
            tags.sort();
            if tags != SweepTag::ALL {
                return Err(Error::Validation(format!(
                    "patient {:?} must have one sweep per tag, got {tags:?}",
                    e.patient_id
                )));
            }
            for s in &e.sweeps {
                if let Some(plan) = &s.perturbation {
                    plan.validate(ranges)
                        .map_err(|err| Error::Validation(format!("{}/{}: {err}", e.patient_id, s.tag)))?;
                }
            }
        }
        if let Some(mix) = &self.mixture {
            mix.validate()?;
        }
        if let Some(want) = expected_splits {
            let got = self.split_counts();
            if got != want {
                return Err(Error::Validation(format!(
                    "split sizes {got:?} do not match requested {want:?}"
                )));
            }
        }
        Ok(())
    }

    /// Check that every referenced sweep file exists under `base`.
    pub fn validate_files(&self, base: &Path) -> Result<()> {
        for e in &self.entries {
            for s in &e.sweeps {
                let p = resolve(base, &s.path);
                if !p.is_file() {
                    return Err(Error::MissingFile(p));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let mut text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Validation(format!("cannot serialize manifest: {e}")))?;
        text.push('\n');
        Ok(text)
    }

    pub fn from_json(text: &str, source_name: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            source_name: source_name.to_owned(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })
    }
}

pub fn write_manifest(manifest: &Manifest, path: &Path) -> Result<()> {
    fs::write(path, manifest.to_json()?).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Manifest::from_json(&text, &path.display().to_string())
}

/// Directory against which a manifest's relative paths resolve.
pub fn manifest_dir(manifest_path: &Path) -> PathBuf {
    match manifest_path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

pub fn resolve(base: &Path, stored: &str) -> PathBuf {
    let p = Path::new(stored);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Express `target` relative to directory `base`, using `/` separators.
/// Falls back to the absolute target when no relative form exists.
pub fn relative_path(target: &Path, base: &Path) -> Result<String> {
    let abs = |p: &Path| p.canonicalize().map_err(|e| Error::io(p, e));
    let (target, base) = (abs(target)?, abs(base)?);
    let t: Vec<Component> = target.components().collect();
    let b: Vec<Component> = base.components().collect();
    let common = t.iter().zip(&b).take_while(|(x, y)| x == y).count();
    if common == 0 {
        return Ok(target.to_string_lossy().into_owned());
    }
    let mut parts: Vec<String> = vec!["..".into(); b.len() - common];
    parts.extend(t[common..].iter().map(|c| c.as_os_str().to_string_lossy().into_owned()));
    Ok(parts.join("/"))
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn sample_manifest(n: usize) -> Manifest {
        let entries = (0..n)
            .map(|i| ManifestEntry {
                patient_id: format!("P{i:04}"),
                split: [Split::Train, Split::Val, Split::Test][i % 3],
                presentation: PresentationLabel::ALL[i % 2],
                placenta: PlacentaLabel::ALL[(i / 2) % 2],
                sweeps: SweepTag::ALL
                    .iter()
                    .map(|&tag| SweepEntry {
                        tag,
                        path: format!("sweeps/P{i:04}_{tag}.bswp"),
                        perturbation: (i % 3 == 2).then_some(PerturbationPlan {
                            reversed: true,
                            flipped: false,
                            truncation: Some(crate::perturb::Truncation { m: 3, n: 12 }),
                        }),
                    })
                    .collect(),
            })
            .collect();
        Manifest {
            seed: 42,
            mixture: Some(MixtureSpec::default()),
            entries,
        }
    }

    #[test]
    fn json_round_trip() {
        let m = sample_manifest(3);
        let text = m.to_json().unwrap();
        let back = Manifest::from_json(&text, "mem").unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_json().unwrap(), text);
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        let keys: Vec<&String> = v.as_object().unwrap().keys().collect();
        assert_eq!(keys, ["entries", "mixture", "seed"]);
        let plan = &v["entries"][2]["sweeps"][0]["perturbation"];
        assert_eq!(plan["m"], 3);
        assert_eq!(plan["incomplete"], true);
        assert!(v["entries"][0]["sweeps"][0]["perturbation"].is_null());
    }

    #[test]
    fn duplicate_patient_rejected() {
        let mut m = sample_manifest(3);
        m.entries[1].patient_id = m.entries[0].patient_id.clone();
        assert!(matches!(
            m.validate(None, &TruncationRange::default()),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn split_partition_check() {
        let mut m = sample_manifest(0);
        let proto = sample_manifest(1).entries.remove(0);
        for (i, split) in std::iter::repeat_n(Split::Train, 850)
            .chain(std::iter::repeat_n(Split::Val, 200))
            .chain(std::iter::repeat_n(Split::Test, 200))
            .enumerate()
        {
            let mut e = proto.clone();
            e.patient_id = format!("P{i:04}");
            e.split = split;
            m.entries.push(e);
        }
        let r = TruncationRange::default();
        m.validate(Some((850, 200, 200)), &r).unwrap();
        assert!(m.validate(Some((800, 250, 200)), &r).is_err());
    }

    #[test]
    fn parse_error_has_position() {
        match Manifest::from_json("{\n  \"seed\": 1,\n  \"entries\": [,]\n}", "bad.json") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_sweep_file_detected() {
        let dir = tempfile::tempdir().unwrap();
        let m = sample_manifest(1);
        assert!(matches!(m.validate_files(dir.path()), Err(Error::MissingFile(_))));
    }

    #[test]
    fn relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("corpus/sweeps");
        let b = dir.path().join("perturbed");
        fs::create_dir_all(&a).unwrap();
        fs::create_dir_all(&b).unwrap();
        let f = a.join("x.bswp");
        fs::write(&f, b"").unwrap();
        assert_eq!(relative_path(&f, &b).unwrap(), "../corpus/sweeps/x.bswp");
        assert_eq!(relative_path(&f, &dir.path().join("corpus")).unwrap(), "sweeps/x.bswp");
    }
}
