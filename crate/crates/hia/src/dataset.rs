//! Dataset JSON: `{"utts": [...]}` with word and utterance scores on their
//! native 0–10 scale. Scores are rescaled to 0–2 on load and back on save;
//! phoneme scores are stored as-is.

use std::path::Path;

use hia_core::data::{rescale, unscale, UttScores, UtteranceSample, WordScores};
use hia_core::{Error as CoreError, GOP_DIM};
use serde::{Deserialize, Serialize};

use crate::error::{HiaError, Result};
use crate::files;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawWordScores {
    accuracy: f64,
    stress: f64,
    total: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawUttScores {
    accuracy: f64,
    completeness: f64,
    fluency: f64,
    prosodic: f64,
    total: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawUtterance {
    phones: Vec<usize>,
    gop: Vec<Vec<f64>>,
    word_id: Vec<usize>,
    phone_scores: Vec<f64>,
    word_scores: Vec<RawWordScores>,
    utt_scores: RawUttScores,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDataset {
    utts: Vec<RawUtterance>,
}

fn convert(i: usize, raw: RawUtterance) -> Result<UtteranceSample, CoreError> {
    let field_err = |field: String, e: CoreError| CoreError::Validation {
        record: Some(i),
        field,
        detail: match e {
            CoreError::Validation { detail, .. } => detail,
            other => other.to_string(),
        },
    };
    let mut gop = Vec::with_capacity(raw.gop.len());
    for (t, row) in raw.gop.iter().enumerate() {
        let arr: [f64; GOP_DIM] = row.as_slice().try_into().map_err(|_| CoreError::Validation {
            record: Some(i),
            field: format!("gop[{t}]"),
            detail: format!("expected {GOP_DIM} values, found {}", row.len()),
        })?;
        gop.push(arr);
    }
    let mut word_scores = Vec::with_capacity(raw.word_scores.len());
    for (w, ws) in raw.word_scores.iter().enumerate() {
        let r = |name: &str, v: f64| rescale(v).map_err(|e| field_err(format!("word_scores[{w}].{name}"), e));
        word_scores.push(WordScores {
            accuracy: r("accuracy", ws.accuracy)?,
            stress: r("stress", ws.stress)?,
            total: r("total", ws.total)?,
        });
    }
    let u = &raw.utt_scores;
    let r = |name: &str, v: f64| rescale(v).map_err(|e| field_err(format!("utt_scores.{name}"), e));
    let utt_scores = UttScores {
        accuracy: r("accuracy", u.accuracy)?,
        completeness: r("completeness", u.completeness)?,
        fluency: r("fluency", u.fluency)?,
        prosodic: r("prosodic", u.prosodic)?,
        total: r("total", u.total)?,
    };
    let sample = UtteranceSample {
        phones: raw.phones,
        gop,
        word_id: raw.word_id,
        phone_scores: raw.phone_scores,
        word_scores,
        utt_scores,
    };
    sample.validate(Some(i))?;
    Ok(sample)
}

fn to_raw(s: &UtteranceSample) -> RawUtterance {
    let u = s.utt_scores;
    RawUtterance {
        phones: s.phones.clone(),
        gop: s.gop.iter().map(|r| r.to_vec()).collect(),
        word_id: s.word_id.clone(),
        phone_scores: s.phone_scores.clone(),
        word_scores: s
            .word_scores
            .iter()
            .map(|w| RawWordScores {
                accuracy: unscale(w.accuracy),
                stress: unscale(w.stress),
                total: unscale(w.total),
            })
            .collect(),
        utt_scores: RawUttScores {
            accuracy: unscale(u.accuracy),
            completeness: unscale(u.completeness),
            fluency: unscale(u.fluency),
            prosodic: unscale(u.prosodic),
            total: unscale(u.total),
        },
    }
}

/// Parses dataset JSON. `path` is only used in error messages. Blank input is
/// an empty dataset.
pub fn parse_dataset(path: &Path, text: &str) -> Result<Vec<UtteranceSample>> {
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    let raw: RawDataset = files::from_json_str(path, text)?;
    raw.utts
        .into_iter()
        .enumerate()
        .map(|(i, r)| convert(i, r).map_err(|e| HiaError::data(path, e)))
        .collect()
}

pub fn load_dataset(path: &Path) -> Result<Vec<UtteranceSample>> {
    parse_dataset(path, &files::read_to_string(path)?)
}

pub fn dataset_to_json(samples: &[UtteranceSample]) -> String {
    let raw = RawDataset { utts: samples.iter().map(to_raw).collect() };
    let mut text = serde_json::to_string(&raw).expect("dataset serializes");
    text.push('\n');
    text
}

pub fn save_dataset(path: &Path, samples: &[UtteranceSample]) -> Result<()> {
    files::write_text(path, &dataset_to_json(samples))
}

#[cfg(test)]
mod tests {
    use super::*;
    use hia_core::data::{synth_generate, SynthConfig};

    fn p() -> &'static Path {
        Path::new("test.json")
    }

    #[test]
    fn empty_inputs() {
        assert!(parse_dataset(p(), "").unwrap().is_empty());
        assert!(parse_dataset(p(), " \n").unwrap().is_empty());
        assert!(parse_dataset(p(), r#"{"utts": []}"#).unwrap().is_empty());
    }

    #[test]
    fn round_trip() {
        let data =
            synth_generate(&SynthConfig { n_utterances: 20, seed: 2, ..SynthConfig::default() }).unwrap();
        let back = parse_dataset(p(), &dataset_to_json(&data)).unwrap();
        assert_eq!(back.len(), data.len());
        for (a, b) in data.iter().zip(&back) {
            assert_eq!(a.phones, b.phones);
            assert_eq!(a.gop, b.gop);
            assert_eq!(a.word_id, b.word_id);
            assert_eq!(a.phone_scores, b.phone_scores);
            for (x, y) in a.word_scores.iter().zip(&b.word_scores) {
                for (u, v) in x.to_array().iter().zip(y.to_array()) {
                    assert!((u - v).abs() <= 1e-15);
                }
            }
            for (u, v) in a.utt_scores.to_array().iter().zip(b.utt_scores.to_array()) {
                assert!((u - v).abs() <= 1e-15);
            }
        }
    }

    fn record(word_id: &str, stress: &str) -> String {
        let gop = vec![vec![0.0; GOP_DIM]; 3];
        format!(
            r#"{{"utts": [{{"phones": [1, 2, 3], "gop": {}, "word_id": {word_id}, "phone_scores": [2, 1, 0],
            "word_scores": [{{"accuracy": 10, "stress": {stress}, "total": 7}}, {{"accuracy": 0, "stress": 10, "total": 5}}],
            "utt_scores": {{"accuracy": 7, "completeness": 10, "fluency": 8, "prosodic": 6, "total": 7}}}}]}}"#,
            serde_json::to_string(&gop).unwrap()
        )
    }

    #[test]
    fn rescales_on_load() {
        let data = parse_dataset(p(), &record("[0, 0, 1]", "10")).unwrap();
        assert_eq!(data[0].word_scores[0].accuracy, 2.0);
        assert_eq!(data[0].word_scores[0].total, 1.4);
        assert_eq!(data[0].utt_scores.completeness, 2.0);
        assert_eq!(data[0].phone_scores, vec![2.0, 1.0, 0.0]);
    }

    #[test]
    fn word_id_gap_names_record() {
        let err = parse_dataset(p(), &record("[0, 0, 2]", "10")).unwrap_err();
        match err {
            HiaError::Data { source: CoreError::Validation { record, field, .. }, .. } => {
                assert_eq!(record, Some(0));
                assert_eq!(field, "word_id");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn out_of_range_score_names_field() {
        let err = parse_dataset(p(), &record("[0, 0, 1]", "11")).unwrap_err();
        assert!(err.to_string().contains("word_scores[0].stress"), "{err}");
        assert_eq!(err.exit_code(), crate::error::EXIT_VALIDATION);
    }

    #[test]
    fn schema_errors_name_position() {
        let text = record("[0, 0, 1]", "\"loud\"");
        let err = parse_dataset(p(), &text).unwrap_err();
        assert!(err.to_string().contains("utts[0].word_scores[0].stress"), "{err}");
        let err = parse_dataset(p(), r#"{"utts": [{"phones": []}]}"#).unwrap_err();
        assert!(err.to_string().contains("utts[0]"), "{err}");
        assert!(parse_dataset(p(), r#"{"utts": [], "extra": 1}"#).is_err());
    }
}
