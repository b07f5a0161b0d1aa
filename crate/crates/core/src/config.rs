//! Run configuration, read from a TOML document.
//!
//! Every section is optional; missing keys take the library defaults. The
//! whole document is re-validated after loading and after CLI overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::downstream::OracleConfig;
use crate::error::{Error, Result};
use crate::eval::{DetectorSource, PredictionSource};
use crate::par::Exec;
use crate::perturb::{MixtureSpec, TruncationRange};
use crate::qa::QaConfig;
use crate::synthgen::GenParams;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Root for every output whose path is not given explicitly.
    pub out: PathBuf,
    pub corpus: Option<PathBuf>,
    pub perturbed: Option<PathBuf>,
    pub reports: Option<PathBuf>,
    pub detections: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            out: PathBuf::from("out"),
            corpus: None,
            perturbed: None,
            reports: None,
            detections: None,
        }
    }
}

impl Paths {
    pub fn corpus_dir(&self) -> PathBuf {
        self.corpus.clone().unwrap_or_else(|| self.out.join("corpus"))
    }

    pub fn perturbed_dir(&self) -> PathBuf {
        self.perturbed.clone().unwrap_or_else(|| self.out.join("perturbed"))
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.reports.clone().unwrap_or_else(|| self.out.join("reports"))
    }

    pub fn detections_file(&self) -> PathBuf {
        self.detections
            .clone()
            .unwrap_or_else(|| self.out.join("qa").join("detections.jsonl"))
    }
}

/// `reference`, `perfect`, `never`, or a path to a detections JSONL file.
/// Predictions accept `reference` or a path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Sources {
    pub detectors: String,
    pub predictions: String,
    /// External predictions on the clean corpus, used by the feedback loop.
    pub clean_predictions: Option<PathBuf>,
}

impl Default for Sources {
    fn default() -> Self {
        Self {
            detectors: "reference".into(),
            predictions: "reference".into(),
            clean_predictions: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub exec: Exec,
    pub corpus: GenParams,
    pub mixture: MixtureSpec,
    pub truncation: TruncationRange,
    pub qa: QaConfig,
    pub oracle: OracleConfig,
    pub paths: Paths,
    pub sources: Sources,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            exec: Exec::Auto,
            corpus: GenParams::default(),
            mixture: MixtureSpec::default(),
            truncation: TruncationRange::default(),
            qa: QaConfig::default(),
            oracle: OracleConfig::default(),
            paths: Paths::default(),
            sources: Sources::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str, source_name: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let (line, column) = e.span().map(|s| line_col(text, s.start)).unwrap_or((0, 0));
            Error::Parse {
                source_name: source_name.to_owned(),
                line,
                column,
                message: e.message().to_owned(),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::MissingFile(path.to_owned())
            } else {
                Error::io(path, e)
            }
        })?;
        Self::from_toml(&text, &path.display().to_string())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Validation(format!("cannot serialize config: {e}")))
    }

    /// Generation parameters with the run seed applied.
    pub fn gen_params(&self) -> GenParams {
        GenParams {
            master_seed: self.seed,
            ..self.corpus.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.gen_params().validate()?;
        self.mixture.validate()?;
        self.truncation.validate()?;
        self.qa.validate()?;
        self.oracle.validate()?;
        if self.truncation.canonical_len != self.corpus.canonical_len {
            return Err(Error::Validation(format!(
                "truncation.canonical_len {} differs from corpus.canonical_len {}",
                self.truncation.canonical_len, self.corpus.canonical_len
            )));
        }
        self.detector_source()?;
        self.prediction_source()?;
        Ok(())
    }

    pub fn detector_source(&self) -> Result<DetectorSource> {
        Ok(match self.sources.detectors.as_str() {
            "reference" => DetectorSource::Reference(self.qa.clone()),
            "perfect" => DetectorSource::Perfect,
            "never" => DetectorSource::Never,
            "" => return Err(Error::Validation("sources.detectors is empty".into())),
            path => DetectorSource::External {
                path: PathBuf::from(path),
                thresholds: self.qa.thresholds,
            },
        })
    }

    pub fn prediction_source(&self) -> Result<PredictionSource> {
        Ok(match self.sources.predictions.as_str() {
            "reference" => PredictionSource::Reference(self.oracle.clone()),
            "" => return Err(Error::Validation("sources.predictions is empty".into())),
            path => PredictionSource::External {
                perturbed: PathBuf::from(path),
                clean: self.sources.clean_predictions.clone(),
            },
        })
    }

    /// The configuration as JSON, for echoing into reports. The executor is
    /// left out since it never changes results.
    pub fn echo(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = v.as_object_mut() {
            map.remove("exec");
        }
        v
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, column)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_default() {
        assert_eq!(RunConfig::from_toml("", "c.toml").unwrap(), RunConfig::default());
    }

    #[test]
    fn partial_sections_merge_with_defaults() {
        let cfg = RunConfig::from_toml(
            "seed = 9\nexec = \"sequential\"\n[corpus]\nn_patients = 10\nsplit_sizes = [6, 2, 2]\n[truncation]\nm_max = 4\n",
            "c.toml",
        )
        .unwrap();
        assert_eq!(cfg.gen_params().master_seed, 9);
        assert_eq!(cfg.corpus.n_patients, 10);
        assert_eq!(cfg.corpus.noise_sigma, GenParams::default().noise_sigma);
        assert_eq!(cfg.truncation.m_max, 4);
        assert_eq!(cfg.truncation.n_max, 24);
        assert_eq!(cfg.exec, Exec::Sequential);
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = RunConfig {
            seed: 123,
            sources: Sources {
                detectors: "never".into(),
                ..Sources::default()
            },
            ..RunConfig::default()
        };
        let text = cfg.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml(&text, "c.toml").unwrap(), cfg);
    }

    #[test]
    fn rejects_invalid_values_at_load() {
        let bad_split = "[corpus]\nn_patients = 10\nsplit_sizes = [6, 2, 1]\n";
        assert!(matches!(
            RunConfig::from_toml(bad_split, "c"),
            Err(Error::Validation(_) | Error::InvalidArgument(_))
        ));
        let bad_mix = "[mixture]\np0 = 0.5\np1 = 0.5\np2 = 0.5\np3 = 0.0\n";
        assert!(RunConfig::from_toml(bad_mix, "c").is_err());
        match RunConfig::from_toml("seed = 1\nbogus = 2\n", "c.toml") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn sources_resolve() {
        let mut cfg = RunConfig::default();
        assert!(matches!(cfg.detector_source().unwrap(), DetectorSource::Reference(_)));
        cfg.sources.detectors = "qa/d.jsonl".into();
        assert!(matches!(
            cfg.detector_source().unwrap(),
            DetectorSource::External { .. }
        ));
        cfg.sources.predictions = "p.jsonl".into();
        assert!(matches!(
            cfg.prediction_source().unwrap(),
            PredictionSource::External { .. }
        ));
    }

    #[test]
    fn default_paths_hang_off_out() {
        let p = Paths::default();
        assert_eq!(p.corpus_dir(), PathBuf::from("out/corpus"));
        assert_eq!(p.detections_file(), PathBuf::from("out/qa/detections.jsonl"));
    }
}
