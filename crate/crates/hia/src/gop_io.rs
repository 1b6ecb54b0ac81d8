//! Posteriorgram and alignment JSON for GOP extraction.

use std::path::Path;

use hia_core::gop::{extract, AlignmentSegment, PosteriorGram};
use serde::Deserialize;

use crate::error::{HiaError, Result};
use crate::files;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPosteriors {
    state_to_phone: Vec<usize>,
    frames: Vec<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSegment {
    phone: usize,
    t_s: usize,
    t_e: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAlignment {
    segments: Vec<RawSegment>,
}

pub fn load_posteriors(path: &Path) -> Result<PosteriorGram> {
    let raw: RawPosteriors = files::read_json(path)?;
    PosteriorGram::new(raw.state_to_phone, raw.frames).map_err(|e| HiaError::data(path, e))
}

pub fn load_alignment(path: &Path) -> Result<Vec<AlignmentSegment>> {
    let raw: RawAlignment = files::read_json(path)?;
    Ok(raw
        .segments
        .into_iter()
        .map(|s| AlignmentSegment { phone: s.phone, t_s: s.t_s, t_e: s.t_e })
        .collect())
}

/// One 84-value GOP vector per aligned segment.
pub fn gop_features(posteriors: &Path, alignment: &Path) -> Result<Vec<Vec<f64>>> {
    let pg = load_posteriors(posteriors)?;
    let segments = load_alignment(alignment)?;
    let features = extract(&pg, &segments).map_err(|e| HiaError::data(alignment, e))?;
    Ok(features.iter().map(|f| f.to_vec()).collect())
}
