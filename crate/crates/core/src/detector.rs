//! Full-frame lamp acquisition.
//!
//! Bright pixels are grouped into 4-connected blobs, and each blob is
//! identified by the period of its rolling-shutter stripes: the blob's
//! row-intensity profile is autocorrelated and the first significant peak
//! is looked up in a period-to-lamp table. Sources without stripes are
//! reported as unmodulated and never handed to the tracker.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PixelPoint;
use crate::scene_sim::Frame;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorParams {
    pub threshold: u8,
    pub min_blob_pixels: usize,
    /// Row-profile variance (levels²) below which a blob counts as unmodulated.
    pub variance_floor: f64,
    /// Minimum normalized autocorrelation for a stripe-period peak.
    pub min_autocorr: f64,
}

impl Default for DetectorParams {
    fn default() -> Self {
        Self { threshold: 128, min_blob_pixels: 50, variance_floor: 16.0, min_autocorr: 0.3 }
    }
}

/// Inclusive pixel bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub min_u: u32,
    pub min_v: u32,
    pub max_u: u32,
    pub max_v: u32,
}

impl BoundingBox {
    pub fn width(&self) -> u32 {
        self.max_u - self.min_u + 1
    }

    pub fn height(&self) -> u32 {
        self.max_v - self.min_v + 1
    }

    pub fn center(&self) -> PixelPoint {
        PixelPoint::new(
            0.5 * (self.min_u + self.max_u) as f64,
            0.5 * (self.min_v + self.max_v) as f64,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Blob {
    pub bbox: BoundingBox,
    pub pixel_count: usize,
    pub intensity_centroid: PixelPoint,
    pub mean_intensity: f64,
    /// Threshold the blob was segmented with; pixels at or above it inside
    /// `bbox` are the blob's pixels.
    pub threshold: u8,
}

/// 4-connected components of pixels `>= threshold`, largest first.
pub fn detect_blobs(frame: &Frame, threshold: u8, min_blob_pixels: usize) -> Vec<Blob> {
    let (w, h) = (frame.width as usize, frame.height as usize);
    let mut visited = vec![false; w * h];
    let mut stack: Vec<usize> = Vec::new();
    let mut blobs = Vec::new();

    for start in 0..w * h {
        if visited[start] || frame.pixels[start] < threshold {
            continue;
        }
        visited[start] = true;
        stack.push(start);

        let (mut min_u, mut min_v, mut max_u, mut max_v) = (usize::MAX, usize::MAX, 0, 0);
        let (mut count, mut sum_i, mut sum_iu, mut sum_iv) = (0usize, 0.0f64, 0.0f64, 0.0f64);
        while let Some(idx) = stack.pop() {
            let (u, v) = (idx % w, idx / w);
            let val = frame.pixels[idx] as f64;
            count += 1;
            sum_i += val;
            sum_iu += val * u as f64;
            sum_iv += val * v as f64;
            min_u = min_u.min(u);
            max_u = max_u.max(u);
            min_v = min_v.min(v);
            max_v = max_v.max(v);

            let mut visit = |n: usize| {
                if !visited[n] && frame.pixels[n] >= threshold {
                    visited[n] = true;
                    stack.push(n);
                }
            };
            if u > 0 {
                visit(idx - 1);
            }
            if u + 1 < w {
                visit(idx + 1);
            }
            if v > 0 {
                visit(idx - w);
            }
            if v + 1 < h {
                visit(idx + w);
            }
        }

        if count >= min_blob_pixels {
            blobs.push(Blob {
                bbox: BoundingBox {
                    min_u: min_u as u32,
                    min_v: min_v as u32,
                    max_u: max_u as u32,
                    max_v: max_v as u32,
                },
                pixel_count: count,
                intensity_centroid: PixelPoint::new(sum_iu / sum_i, sum_iv / sum_i),
                mean_intensity: sum_i / count as f64,
                threshold,
            });
        }
    }
    blobs.sort_by_key(|b| std::cmp::Reverse(b.pixel_count));
    blobs
}

/// Stripe period (rows) to lamp id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LampIdTable {
    /// `(period_rows, lamp_id)` pairs.
    pub entries: Vec<(u32, u32)>,
    pub tolerance_rows: f64,
}

impl LampIdTable {
    pub fn new(entries: Vec<(u32, u32)>, tolerance_rows: f64) -> Result<Self> {
        let table = Self { entries, tolerance_rows };
        table.validate()?;
        Ok(table)
    }

    /// Table for the default period set {12, 16, 24, 32}.
    pub fn from_periods(periods: impl IntoIterator<Item = (u32, u32)>) -> Result<Self> {
        Self::new(periods.into_iter().collect(), 2.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance_rows >= 0.0) || !self.tolerance_rows.is_finite() {
            return Err(Error::InvalidParameter("id table tolerance must be non-negative".into()));
        }
        for (i, a) in self.entries.iter().enumerate() {
            for b in &self.entries[i + 1..] {
                let gap = (a.0 as f64 - b.0 as f64).abs();
                if gap < 2.0 * self.tolerance_rows || a.1 == b.1 {
                    return Err(Error::InvalidParameter(format!(
                        "id table entries {a:?} and {b:?} are ambiguous at tolerance {}",
                        self.tolerance_rows
                    )));
                }
            }
        }
        Ok(())
    }

    /// Unique closest entry within tolerance; an exact tie between two
    /// entries is ambiguous and matches nothing.
    pub fn lookup(&self, period: f64) -> Option<u32> {
        let mut best: Option<(f64, u32)> = None;
        let mut tied = false;
        for &(p, id) in &self.entries {
            let d = (p as f64 - period).abs();
            if d > self.tolerance_rows {
                continue;
            }
            match best {
                Some((bd, _)) if d > bd => {}
                Some((bd, _)) if d == bd => tied = true,
                _ => {
                    best = Some((d, id));
                    tied = false;
                }
            }
        }
        if tied {
            None
        } else {
            best.map(|(_, id)| id)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LedId {
    Lamp(u32),
    Unmodulated,
    Unknown,
}

/// Mean intensity of the blob's pixels on each row of its bounding box.
fn row_profile(frame: &Frame, blob: &Blob) -> Vec<f64> {
    let bb = blob.bbox;
    let mut profile: Vec<Option<f64>> = Vec::with_capacity(bb.height() as usize);
    for v in bb.min_v..=bb.max_v {
        let row = &frame.row(v as usize)[bb.min_u as usize..=bb.max_u as usize];
        let (sum, n) = row
            .iter()
            .filter(|&&p| p >= blob.threshold)
            .fold((0.0, 0usize), |(s, n), &p| (s + p as f64, n + 1));
        profile.push((n > 0).then(|| sum / n as f64));
    }
    let known: Vec<f64> = profile.iter().flatten().copied().collect();
    let fill = if known.is_empty() { 0.0 } else { known.iter().sum::<f64>() / known.len() as f64 };
    profile.into_iter().map(|p| p.unwrap_or(fill)).collect()
}

/// Dominant period of a profile, from the first autocorrelation peak that
/// follows a sign change. Sub-row precision by parabolic interpolation.
pub fn stripe_period(profile: &[f64], min_autocorr: f64) -> Option<f64> {
    let n = profile.len();
    if n < 8 {
        return None;
    }
    let mean = profile.iter().sum::<f64>() / n as f64;
    let d: Vec<f64> = profile.iter().map(|p| p - mean).collect();
    let energy: f64 = d.iter().map(|x| x * x).sum();
    if energy <= 0.0 {
        return None;
    }
    let max_lag = n / 2;
    let ac: Vec<f64> = (0..=max_lag + 1)
        .map(|lag| {
            if lag >= n {
                return 0.0;
            }
            d[..n - lag].iter().zip(&d[lag..]).map(|(a, b)| a * b).sum::<f64>() / energy
        })
        .collect();

    let trough = (1..=max_lag).find(|&k| ac[k] < 0.0)?;
    for k in trough + 1..=max_lag {
        if ac[k] >= ac[k - 1] && ac[k] >= ac[k + 1] && ac[k] >= min_autocorr {
            let (a, b, c) = (ac[k - 1], ac[k], ac[k + 1]);
            let denom = a - 2.0 * b + c;
            let offset = if denom.abs() > 1e-12 { 0.5 * (a - c) / denom } else { 0.0 };
            return Some(k as f64 + offset.clamp(-0.5, 0.5));
        }
    }
    None
}

pub fn decode_led_id(frame: &Frame, blob: &Blob, table: &LampIdTable, params: &DetectorParams) -> LedId {
    if blob.bbox.height() < 8 {
        return LedId::Unknown;
    }
    let profile = row_profile(frame, blob);
    let mean = profile.iter().sum::<f64>() / profile.len() as f64;
    let var = profile.iter().map(|p| (p - mean) * (p - mean)).sum::<f64>() / profile.len() as f64;
    if var < params.variance_floor {
        return LedId::Unmodulated;
    }
    match stripe_period(&profile, params.min_autocorr).and_then(|p| table.lookup(p)) {
        Some(id) => LedId::Lamp(id),
        None => LedId::Unknown,
    }
}

/// Finds every wanted lamp in a full frame. Fails unless all of `wanted`
/// are identified; unmodulated sources are never returned.
pub fn acquire(
    frame: &Frame,
    table: &LampIdTable,
    wanted: &[u32],
    params: &DetectorParams,
) -> Result<BTreeMap<u32, Blob>> {
    let mut found = BTreeMap::new();
    for blob in detect_blobs(frame, params.threshold, params.min_blob_pixels) {
        if let LedId::Lamp(id) = decode_led_id(frame, &blob, table, params) {
            if wanted.contains(&id) {
                // blobs arrive largest first; keep the first match per id
                found.entry(id).or_insert(blob);
            }
        }
    }
    if wanted.iter().all(|id| found.contains_key(id)) {
        Ok(found)
    } else {
        Err(Error::AcquisitionIncomplete {
            found: found.keys().copied().collect(),
            wanted: wanted.to_vec(),
        })
    }
}
