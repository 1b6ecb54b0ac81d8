//! Goodness-of-pronunciation features.
//!
//! A phone's posterior at a frame is the sum of the posteriors of its states. Over
//! an aligned segment `[t_s, t_e]` the log phone posterior (LPP) is the
//! frame-averaged log posterior, and the log posterior ratio (LPR) between two
//! phones is the difference of their summed log posteriors. A GOP vector is the
//! 42 LPPs followed by the 42 LPRs of every phone against the canonical phone.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::{GOP_DIM, NUM_PHONES};

/// Posteriors at or below this value are floored before taking logs.
pub const POSTERIOR_FLOOR: f64 = 1e-10;

/// Row-stochastic frame × state posteriors with a state → phone map.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorGram {
    frames: Vec<Vec<f64>>,
    state_to_phone: Vec<usize>,
    /// `phone_states[p]` lists the states of phone `p`.
    phone_states: Vec<Vec<usize>>,
}

impl PosteriorGram {
    pub fn new(state_to_phone: Vec<usize>, frames: Vec<Vec<f64>>) -> Result<Self> {
        let states = state_to_phone.len();
        let mut phone_states = alloc::vec![Vec::new(); NUM_PHONES];
        for (s, &p) in state_to_phone.iter().enumerate() {
            if p >= NUM_PHONES {
                return Err(Error::validation(
                    None,
                    "state_to_phone",
                    format!("state {s} maps to phone {p}"),
                ));
            }
            phone_states[p].push(s);
        }
        for (t, row) in frames.iter().enumerate() {
            if row.len() != states {
                return Err(Error::validation(
                    Some(t),
                    "frames",
                    format!("{} posteriors for {states} states", row.len()),
                ));
            }
            if row.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
                return Err(Error::validation(
                    Some(t),
                    "frames",
                    "posteriors must be finite and non-negative",
                ));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::validation(Some(t), "frames", format!("row sums to {sum}, expected 1")));
            }
        }
        Ok(PosteriorGram { frames, state_to_phone, phone_states })
    }

    /// One state per phone, in phone order.
    pub fn from_phone_posteriors(frames: Vec<Vec<f64>>) -> Result<Self> {
        Self::new((0..NUM_PHONES).collect(), frames)
    }

    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn num_states(&self) -> usize {
        self.state_to_phone.len()
    }

    pub fn state_to_phone(&self) -> &[usize] {
        &self.state_to_phone
    }

    pub fn frames(&self) -> &[Vec<f64>] {
        &self.frames
    }
}

/// A forced-alignment segment with inclusive frame bounds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AlignmentSegment {
    pub phone: usize,
    pub t_s: usize,
    pub t_e: usize,
}

impl AlignmentSegment {
    pub fn validate(&self, pg: &PosteriorGram) -> Result<()> {
        if self.phone >= NUM_PHONES {
            return Err(Error::Lookup(format!("phone id {}", self.phone)));
        }
        if self.t_s > self.t_e || self.t_e >= pg.num_frames() {
            return Err(Error::validation(
                None,
                "segment",
                format!("frames [{}, {}] outside 0..{}", self.t_s, self.t_e, pg.num_frames()),
            ));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.t_e - self.t_s + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GopFeature {
    pub lpp: [f64; NUM_PHONES],
    pub lpr: [f64; NUM_PHONES],
}

impl GopFeature {
    /// LPPs then LPRs.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(GOP_DIM);
        v.extend_from_slice(&self.lpp);
        v.extend_from_slice(&self.lpr);
        v
    }
}

/// `P(phone | o_t)`: sum of the state posteriors belonging to `phone`.
pub fn phone_posterior(pg: &PosteriorGram, phone: usize, t: usize) -> Result<f64> {
    let states = pg.phone_states.get(phone).ok_or_else(|| Error::Lookup(format!("phone id {phone}")))?;
    let row = pg.frames.get(t).ok_or_else(|| Error::Contract(format!("frame {t} of {}", pg.num_frames())))?;
    Ok(states.iter().map(|&s| row[s]).sum())
}

fn log_posterior(pg: &PosteriorGram, phone: usize, t: usize) -> Result<f64> {
    Ok(libm::log(phone_posterior(pg, phone, t)?.max(POSTERIOR_FLOOR)))
}

/// Sum over the segment of `log P(phone | o_t)`.
fn segment_log_posterior(pg: &PosteriorGram, seg: &AlignmentSegment, phone: usize) -> Result<f64> {
    (seg.t_s..=seg.t_e).map(|t| log_posterior(pg, phone, t)).sum()
}

/// Log phone posterior of `phone` averaged over the segment frames.
pub fn lpp(pg: &PosteriorGram, seg: &AlignmentSegment, phone: usize) -> Result<f64> {
    seg.validate(pg)?;
    Ok(segment_log_posterior(pg, seg, phone)? / seg.len() as f64)
}

/// Log posterior ratio of `phone_j` versus `phone_i` over the segment.
pub fn lpr(pg: &PosteriorGram, seg: &AlignmentSegment, phone_j: usize, phone_i: usize) -> Result<f64> {
    seg.validate(pg)?;
    if phone_j == phone_i {
        if phone_j >= NUM_PHONES {
            return Err(Error::Lookup(format!("phone id {phone_j}")));
        }
        return Ok(0.0);
    }
    Ok(segment_log_posterior(pg, seg, phone_j)? - segment_log_posterior(pg, seg, phone_i)?)
}

/// The 84-dimensional GOP feature of the segment's canonical phone.
pub fn gop_vector(pg: &PosteriorGram, seg: &AlignmentSegment) -> Result<GopFeature> {
    seg.validate(pg)?;
    let len = seg.len() as f64;
    let mut sums = [0.0; NUM_PHONES];
    for (p, s) in sums.iter_mut().enumerate() {
        *s = segment_log_posterior(pg, seg, p)?;
    }
    let canonical = sums[seg.phone];
    let mut feature = GopFeature { lpp: [0.0; NUM_PHONES], lpr: [0.0; NUM_PHONES] };
    for (p, &sum) in sums.iter().enumerate() {
        feature.lpp[p] = sum / len;
        feature.lpr[p] = if p == seg.phone { 0.0 } else { sum - canonical };
    }
    Ok(feature)
}

/// GOP vectors for every segment, in order.
pub fn extract(pg: &PosteriorGram, segments: &[AlignmentSegment]) -> Result<Vec<GopFeature>> {
    segments.iter().map(|s| gop_vector(pg, s)).collect()
}
