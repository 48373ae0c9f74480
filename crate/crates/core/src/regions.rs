//! Changed-region detection between consecutive frames.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frameio::Frame;

/// Axis-aligned pixel rectangle, top-left anchored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl Rect {
    pub const fn new(x: usize, y: usize, w: usize, h: usize) -> Self {
        Rect { x, y, w, h }
    }

    pub fn full(frame: &Frame) -> Self {
        Rect::new(0, 0, frame.width, frame.height)
    }

    pub fn right(&self) -> usize {
        self.x + self.w
    }

    pub fn bottom(&self) -> usize {
        self.y + self.h
    }

    pub fn area(&self) -> usize {
        self.w * self.h
    }

    pub fn is_empty(&self) -> bool {
        self.w == 0 || self.h == 0
    }

    pub fn contains(&self, other: &Rect) -> bool {
        other.x >= self.x && other.y >= self.y && other.right() <= self.right() && other.bottom() <= self.bottom()
    }

    pub fn fits_in(&self, width: usize, height: usize) -> bool {
        !self.is_empty() && self.right() <= width && self.bottom() <= height
    }

    pub fn union(&self, other: &Rect) -> Rect {
        let x = self.x.min(other.x);
        let y = self.y.min(other.y);
        Rect::new(
            x,
            y,
            self.right().max(other.right()) - x,
            self.bottom().max(other.bottom()) - y,
        )
    }

    pub fn intersection_area(&self, other: &Rect) -> usize {
        let w = self.right().min(other.right()).saturating_sub(self.x.max(other.x));
        let h = self.bottom().min(other.bottom()).saturating_sub(self.y.max(other.y));
        w * h
    }

    pub fn iou(&self, other: &Rect) -> f64 {
        let inter = self.intersection_area(other);
        let union = self.area() + other.area() - inter;
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }

    /// Empty pixels between the two boxes along x and y; negative when they overlap.
    fn separation(&self, other: &Rect) -> (i64, i64) {
        let sx = (other.x as i64 - self.right() as i64).max(self.x as i64 - other.right() as i64);
        let sy = (other.y as i64 - self.bottom() as i64).max(self.y as i64 - other.bottom() as i64);
        (sx, sy)
    }

    fn sort_key(&self) -> (usize, usize, usize, usize) {
        (self.y, self.x, self.w, self.h)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChangeMask {
    pub width: usize,
    pub height: usize,
    pub bits: Vec<bool>,
}

impl ChangeMask {
    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

/// Sets a bit wherever `|cur - prev| > delta`.
pub fn change_mask(prev: &Frame, cur: &Frame, delta: u8) -> Result<ChangeMask> {
    if (prev.width, prev.height) != (cur.width, cur.height) {
        return Err(Error::Dimension(format!(
            "cannot diff {}x{} against {}x{}",
            prev.width, prev.height, cur.width, cur.height
        )));
    }
    Ok(ChangeMask {
        width: cur.width,
        height: cur.height,
        bits: prev
            .luma
            .iter()
            .zip(&cur.luma)
            .map(|(&a, &b)| a.abs_diff(b) > delta)
            .collect(),
    })
}

/// Bounding boxes of 8-connected components with at least `min_area` pixels,
/// sorted by `(y, x, w, h)`.
pub fn connected_components(mask: &ChangeMask, min_area: usize) -> Vec<Rect> {
    let (w, h) = (mask.width, mask.height);
    let mut seen = vec![false; w * h];
    let mut stack = Vec::new();
    let mut out = Vec::new();
    for start in 0..w * h {
        if !mask.bits[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        let mut count = 0usize;
        while let Some(p) = stack.pop() {
            let (x, y) = (p % w, p / w);
            count += 1;
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
            for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    let q = ny * w + nx;
                    if mask.bits[q] && !seen[q] {
                        seen[q] = true;
                        stack.push(q);
                    }
                }
            }
        }
        if count >= min_area {
            out.push(Rect::new(x0, y0, x1 - x0 + 1, y1 - y0 + 1));
        }
    }
    out.sort_by_key(Rect::sort_key);
    out
}

/// Merges rectangles separated by at most `gap` empty pixels on both axes until
/// no such pair remains. The fixpoint does not depend on input order.
pub fn merge_rects(rects: &[Rect], gap: usize) -> Vec<Rect> {
    let gap = gap as i64;
    let mut out: Vec<Rect> = rects.to_vec();
    out.sort_by_key(Rect::sort_key);
    'outer: loop {
        for i in 0..out.len() {
            for j in i + 1..out.len() {
                let (sx, sy) = out[i].separation(&out[j]);
                if sx <= gap && sy <= gap {
                    let merged = out[i].union(&out[j]);
                    out.swap_remove(j);
                    out[i] = merged;
                    out.sort_by_key(Rect::sort_key);
                    continue 'outer;
                }
            }
        }
        break;
    }
    out
}

/// The full region pipeline: mask, components, merge.
pub fn changed_regions(prev: &Frame, cur: &Frame, delta: u8, min_area: usize, gap: usize) -> Result<Vec<Rect>> {
    let mask = change_mask(prev, cur, delta)?;
    Ok(merge_rects(&connected_components(&mask, min_area), gap))
}
