//! Key-frame scoring by second-order pixel change.
//!
//! `d_t` is the mean absolute per-pixel difference between frames `t-1` and
//! `t`; `g_t = |d_t - d_{t-1}|` highlights abrupt events such as pop-ups. The
//! score `g_t` is attached to the later frame `t`. Internally both series are
//! kept as exact integer sums over the frame so ranking never depends on
//! floating-point rounding.

use crate::error::{Error, Result};
use crate::frameio::Clip;

#[derive(Debug, Clone, PartialEq)]
pub struct DiffSeries {
    pixel_count: u64,
    /// `sum |luma_t - luma_{t-1}|` for `t = 1..T-1`.
    first_sums: Vec<u64>,
    /// `|first_sums[t] - first_sums[t-1]|` for `t = 2..T-1`.
    second_sums: Vec<u64>,
}

impl DiffSeries {
    /// Builds both series for `clip`; needs at least 3 frames.
    pub fn from_clip(clip: &Clip) -> Result<Self> {
        let first_sums = first_order_sums(clip)?;
        let second_sums = second_order_sums(&first_sums)?;
        Ok(DiffSeries {
            pixel_count: pixel_count(clip),
            first_sums,
            second_sums,
        })
    }

    /// `d_t` for `t = 1..T-1`.
    pub fn first_order(&self) -> Vec<f64> {
        self.first_sums.iter().map(|&s| s as f64 / self.pixel_count as f64).collect()
    }

    /// `g_t` for `t = 2..T-1`.
    pub fn second_order(&self) -> Vec<f64> {
        self.second_sums.iter().map(|&s| s as f64 / self.pixel_count as f64).collect()
    }

    /// Frame index carrying `second_order()[i]`.
    pub fn second_order_frame(i: usize) -> usize {
        i + 2
    }
}

fn pixel_count(clip: &Clip) -> u64 {
    let (w, h) = clip.resolution();
    (w * h) as u64
}

fn first_order_sums(clip: &Clip) -> Result<Vec<u64>> {
    if clip.len() < 2 {
        return Err(Error::Size(format!(
            "first-order difference needs 2 frames, clip {} has {}",
            clip.clip_id,
            clip.len()
        )));
    }
    Ok(clip
        .frames
        .windows(2)
        .map(|pair| {
            pair[0]
                .luma
                .iter()
                .zip(&pair[1].luma)
                .map(|(&a, &b)| a.abs_diff(b) as u64)
                .sum()
        })
        .collect())
}

fn second_order_sums(first: &[u64]) -> Result<Vec<u64>> {
    if first.len() < 2 {
        return Err(Error::Size(format!(
            "second-order difference needs 2 first-order values, got {}",
            first.len()
        )));
    }
    Ok(first.windows(2).map(|w| w[1].abs_diff(w[0])).collect())
}

/// Mean absolute per-pixel difference between adjacent frames, `d_1..d_{T-1}`.
pub fn first_order_diff(clip: &Clip) -> Result<Vec<f64>> {
    let n = pixel_count(clip) as f64;
    Ok(first_order_sums(clip)?.into_iter().map(|s| s as f64 / n).collect())
}

/// `g_t = |d_t - d_{t-1}|` over a first-order series.
pub fn second_order_diff(first_order: &[f64]) -> Result<Vec<f64>> {
    if first_order.len() < 2 {
        return Err(Error::Size(format!(
            "second-order difference needs 2 first-order values, got {}",
            first_order.len()
        )));
    }
    Ok(first_order.windows(2).map(|w| (w[1] - w[0]).abs()).collect())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyframeSelection {
    /// Ascending frame indices within `[2, T-1]`.
    pub indices: Vec<usize>,
    pub k: usize,
}

/// Picks the `min(k, T-2)` frames with the largest `g_t`, ties toward earlier
/// frames, returned in ascending order. Frame 0 is never a candidate.
pub fn select_keyframes(clip: &Clip, k: usize) -> Result<KeyframeSelection> {
    if k == 0 {
        return Err(Error::Argument("k must be at least 1".into()));
    }
    if clip.len() < 3 {
        return Err(Error::Size(format!(
            "key-frame selection needs 3 frames, clip {} has {}",
            clip.clip_id,
            clip.len()
        )));
    }
    let series = DiffSeries::from_clip(clip)?;
    Ok(select_from_series(&series, k))
}

pub fn select_from_series(series: &DiffSeries, k: usize) -> KeyframeSelection {
    let mut ranked: Vec<(u64, usize)> = series
        .second_sums
        .iter()
        .enumerate()
        .map(|(i, &g)| (g, DiffSeries::second_order_frame(i)))
        .collect();
    ranked.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut indices: Vec<usize> = ranked.into_iter().take(k).map(|(_, t)| t).collect();
    indices.sort_unstable();
    KeyframeSelection { indices, k }
}
