//! Cursor localization with a small heatmap CNN.
//!
//! A 64×64 patch goes through conv3×3(8) → ReLU → maxpool2 → conv3×3(16) →
//! ReLU → maxpool2 → conv1×1(1), and a softmax over the resulting 16×16 grid
//! gives one probability per 4×4-pixel cell. Everything is `f64` and runs
//! single-threaded so training is bit-reproducible.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::frameio::Frame;
use crate::paramfile;

pub const PATCH: usize = 64;
pub const GRID: usize = 16;
pub const CELL: usize = PATCH / GRID;
pub const CELLS: usize = GRID * GRID;
pub const PARAM_MAGIC: &[u8; 8] = b"SSCURSOR";

const C1: usize = 8;
const C2: usize = 16;
const W1_LEN: usize = C1 * 9;
const W2_LEN: usize = C2 * C1 * 9;
const OFF_B1: usize = W1_LEN;
const OFF_W2: usize = OFF_B1 + C1;
const OFF_B2: usize = OFF_W2 + W2_LEN;
const OFF_W3: usize = OFF_B2 + C2;
const OFF_B3: usize = OFF_W3 + C2;
pub const PARAM_COUNT: usize = OFF_B3 + 1;

/// Flat parameter vector. Layout: conv1 weights `[8][1][3][3]`, conv1 biases,
/// conv2 weights `[16][8][3][3]`, conv2 biases, conv3 weights `[16]`, conv3 bias.
#[derive(Debug, Clone, PartialEq)]
pub struct CnnParams {
    values: Vec<f64>,
}

impl CnnParams {
    pub fn zeros() -> Self {
        CnnParams {
            values: vec![0.0; PARAM_COUNT],
        }
    }

    /// Uniform(±√(6/fan_in)) weights, zero biases.
    pub fn seeded(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = vec![0.0; PARAM_COUNT];
        for (range, fan_in) in [(0..W1_LEN, 9.0), (OFF_W2..OFF_B2, 72.0), (OFF_W3..OFF_B3, 16.0)] {
            let bound = (6.0f64 / fan_in).sqrt();
            for v in &mut values[range] {
                *v = rng.gen_range(-bound..bound);
            }
        }
        CnnParams { values }
    }

    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.len() != PARAM_COUNT {
            return Err(Error::Dimension(format!(
                "cursor CNN has {PARAM_COUNT} parameters, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::ParamFile("non-finite parameter".into()));
        }
        Ok(CnnParams { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Named slices in layout order, for reporting per-group checks.
    pub fn groups() -> [(&'static str, std::ops::Range<usize>); 6] {
        [
            ("conv1.weight", 0..OFF_B1),
            ("conv1.bias", OFF_B1..OFF_W2),
            ("conv2.weight", OFF_W2..OFF_B2),
            ("conv2.bias", OFF_B2..OFF_W3),
            ("conv3.weight", OFF_W3..OFF_B3),
            ("conv3.bias", OFF_B3..PARAM_COUNT),
        ]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        paramfile::encode(PARAM_MAGIC, &self.values)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::from_values(paramfile::decode(PARAM_MAGIC, bytes)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_values(paramfile::read(PARAM_MAGIC, path)?).map_err(|e| e.context(path.display().to_string()))
    }
}

/// Training example: a normalized 64×64 patch and the cell holding the cursor hotspot.
#[derive(Debug, Clone, PartialEq)]
pub struct CursorSample {
    pub patch: Vec<f64>,
    /// `(row, col)` in the 16×16 grid.
    pub label_cell: (usize, usize),
}

impl CursorSample {
    pub fn new(patch: Vec<f64>, label_cell: (usize, usize)) -> Result<Self> {
        check_patch(&patch)?;
        if label_cell.0 >= GRID || label_cell.1 >= GRID {
            return Err(Error::Argument(format!("label cell {label_cell:?} outside the {GRID}x{GRID} grid")));
        }
        Ok(CursorSample { patch, label_cell })
    }

    fn label_index(&self) -> usize {
        self.label_cell.0 * GRID + self.label_cell.1
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CursorPrediction {
    pub x: usize,
    pub y: usize,
    pub confidence: f64,
}

fn check_patch(patch: &[f64]) -> Result<()> {
    if patch.len() != PATCH * PATCH {
        return Err(Error::Dimension(format!(
            "cursor patch must be {PATCH}x{PATCH} ({} values), got {}",
            PATCH * PATCH,
            patch.len()
        )));
    }
    Ok(())
}

/// Same-size 3×3 convolution with zero padding; channel-major buffers.
fn conv3x3(input: &[f64], in_c: usize, size: usize, weights: &[f64], bias: &[f64], out_c: usize) -> Vec<f64> {
    let plane = size * size;
    let mut out = vec![0.0; out_c * plane];
    for o in 0..out_c {
        let dst = &mut out[o * plane..(o + 1) * plane];
        dst.iter_mut().for_each(|v| *v = bias[o]);
        for i in 0..in_c {
            let src = &input[i * plane..(i + 1) * plane];
            for ky in 0..3 {
                for kx in 0..3 {
                    let w = weights[((o * in_c + i) * 3 + ky) * 3 + kx];
                    let (y0, y1) = tap_range(ky, size);
                    let (x0, x1) = tap_range(kx, size);
                    for y in y0..y1 {
                        let sy = y + ky - 1;
                        let d = &mut dst[y * size + x0..y * size + x1];
                        let s = &src[sy * size + x0 + kx - 1..sy * size + x1 + kx - 1];
                        for (dv, sv) in d.iter_mut().zip(s) {
                            *dv += w * sv;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Output positions for which tap `k` of a padded 3-wide kernel lands inside the input.
#[inline]
fn tap_range(k: usize, size: usize) -> (usize, usize) {
    match k {
        0 => (1, size),
        1 => (0, size),
        _ => (0, size - 1),
    }
}

/// Gradients of a 3×3 convolution: accumulates into `dw`/`db`, optionally returns the input gradient.
#[allow(clippy::too_many_arguments)]
fn conv3x3_backward(
    input: &[f64],
    in_c: usize,
    size: usize,
    weights: &[f64],
    dout: &[f64],
    out_c: usize,
    dw: &mut [f64],
    db: &mut [f64],
    want_input_grad: bool,
) -> Option<Vec<f64>> {
    let plane = size * size;
    let mut din = want_input_grad.then(|| vec![0.0; in_c * plane]);
    for o in 0..out_c {
        let g = &dout[o * plane..(o + 1) * plane];
        db[o] += g.iter().sum::<f64>();
        for i in 0..in_c {
            let src = &input[i * plane..(i + 1) * plane];
            for ky in 0..3 {
                for kx in 0..3 {
                    let widx = ((o * in_c + i) * 3 + ky) * 3 + kx;
                    let (y0, y1) = tap_range(ky, size);
                    let (x0, x1) = tap_range(kx, size);
                    let mut acc = 0.0;
                    for y in y0..y1 {
                        let sy = y + ky - 1;
                        let gr = &g[y * size + x0..y * size + x1];
                        let s = &src[sy * size + x0 + kx - 1..sy * size + x1 + kx - 1];
                        for (gv, sv) in gr.iter().zip(s) {
                            acc += gv * sv;
                        }
                    }
                    dw[widx] += acc;
                    if let Some(din) = din.as_mut() {
                        let w = weights[widx];
                        let dplane = &mut din[i * plane..(i + 1) * plane];
                        for y in y0..y1 {
                            let sy = y + ky - 1;
                            let gr = &g[y * size + x0..y * size + x1];
                            let d = &mut dplane[sy * size + x0 + kx - 1..sy * size + x1 + kx - 1];
                            for (dv, gv) in d.iter_mut().zip(gr) {
                                *dv += w * gv;
                            }
                        }
                    }
                }
            }
        }
    }
    din
}

/// ReLU then 2×2 max pooling. Returns pooled values and the source index of
/// each maximum (first maximum in row-major window order).
fn relu_pool(z: &[f64], channels: usize, size: usize) -> (Vec<f64>, Vec<usize>) {
    let half = size / 2;
    let mut pooled = Vec::with_capacity(channels * half * half);
    let mut argmax = Vec::with_capacity(channels * half * half);
    for c in 0..channels {
        let base = c * size * size;
        for py in 0..half {
            for px in 0..half {
                let mut best = base + (2 * py) * size + 2 * px;
                let mut best_v = z[best].max(0.0);
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * py + dy) * size + 2 * px + dx;
                    let v = z[idx].max(0.0);
                    if v > best_v {
                        best = idx;
                        best_v = v;
                    }
                }
                pooled.push(best_v);
                argmax.push(best);
            }
        }
    }
    (pooled, argmax)
}

/// Routes pooled gradients back to their argmax positions through the ReLU.
fn relu_pool_backward(dpooled: &[f64], argmax: &[usize], z: &[f64]) -> Vec<f64> {
    let mut dz = vec![0.0; z.len()];
    for (g, &idx) in dpooled.iter().zip(argmax) {
        if z[idx] > 0.0 {
            dz[idx] += g;
        }
    }
    dz
}

struct Activations {
    z1: Vec<f64>,
    p1: Vec<f64>,
    arg1: Vec<usize>,
    z2: Vec<f64>,
    p2: Vec<f64>,
    arg2: Vec<usize>,
    probs: Vec<f64>,
}

fn run(params: &CnnParams, patch: &[f64]) -> Activations {
    let v = &params.values;
    let z1 = conv3x3(patch, 1, PATCH, &v[..OFF_B1], &v[OFF_B1..OFF_W2], C1);
    let (p1, arg1) = relu_pool(&z1, C1, PATCH);
    let half = PATCH / 2;
    let z2 = conv3x3(&p1, C1, half, &v[OFF_W2..OFF_B2], &v[OFF_B2..OFF_W3], C2);
    let (p2, arg2) = relu_pool(&z2, C2, half);
    let mut logits = vec![v[OFF_B3]; CELLS];
    for c in 0..C2 {
        let w = v[OFF_W3 + c];
        for (l, x) in logits.iter_mut().zip(&p2[c * CELLS..(c + 1) * CELLS]) {
            *l += w * x;
        }
    }
    Activations {
        z1,
        p1,
        arg1,
        z2,
        p2,
        arg2,
        probs: softmax(&logits),
    }
}

/// Max-shifted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Probability grid, row-major 16×16.
pub fn forward(params: &CnnParams, patch: &[f64]) -> Result<Vec<f64>> {
    check_patch(patch)?;
    Ok(run(params, patch).probs)
}

fn loss_of(probs: &[f64], label: usize) -> f64 {
    -probs[label].max(f64::MIN_POSITIVE).ln()
}

pub fn loss(params: &CnnParams, sample: &CursorSample) -> Result<f64> {
    Ok(loss_of(&forward(params, &sample.patch)?, sample.label_index()))
}

/// Cross-entropy of the label cell and its gradient with respect to every parameter.
pub fn loss_and_grad(params: &CnnParams, sample: &CursorSample) -> Result<(f64, CnnParams)> {
    check_patch(&sample.patch)?;
    let label = sample.label_index();
    let act = run(params, &sample.patch);
    let v = &params.values;
    let mut grad = vec![0.0; PARAM_COUNT];

    let mut dlogits = act.probs.clone();
    dlogits[label] -= 1.0;

    grad[OFF_B3] = dlogits.iter().sum();
    let mut dp2 = vec![0.0; C2 * CELLS];
    for c in 0..C2 {
        let w = v[OFF_W3 + c];
        let feat = &act.p2[c * CELLS..(c + 1) * CELLS];
        grad[OFF_W3 + c] = dlogits.iter().zip(feat).map(|(d, x)| d * x).sum();
        for (dp, d) in dp2[c * CELLS..(c + 1) * CELLS].iter_mut().zip(&dlogits) {
            *dp = w * d;
        }
    }

    let half = PATCH / 2;
    let dz2 = relu_pool_backward(&dp2, &act.arg2, &act.z2);
    let (head, tail) = grad.split_at_mut(OFF_B2);
    let dp1 = conv3x3_backward(
        &act.p1,
        C1,
        half,
        &v[OFF_W2..OFF_B2],
        &dz2,
        C2,
        &mut head[OFF_W2..OFF_B2],
        &mut tail[..C2],
        true,
    )
    .expect("input gradient requested");

    let dz1 = relu_pool_backward(&dp1, &act.arg1, &act.z1);
    let (head, tail) = grad.split_at_mut(OFF_B1);
    conv3x3_backward(
        &sample.patch,
        1,
        PATCH,
        &v[..OFF_B1],
        &dz1,
        C1,
        &mut head[..W1_LEN],
        &mut tail[..C1],
        false,
    );

    Ok((loss_of(&act.probs, label), CnnParams { values: grad }))
}

/// Per-parameter comparison of the analytic gradient against central differences.
#[derive(Debug, Clone)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub worst_index: usize,
    /// Largest relative error within each named parameter group.
    pub per_group: Vec<(&'static str, f64)>,
    /// Coordinates whose ±h probe flipped a ReLU or max-pool decision. The
    /// loss is not differentiable across such a switch, so they are skipped.
    pub kinked: Vec<usize>,
}

impl Activations {
    fn same_routing(&self, other: &Activations) -> bool {
        self.arg1 == other.arg1
            && self.arg2 == other.arg2
            && self.z1.iter().zip(&other.z1).all(|(a, b)| (*a > 0.0) == (*b > 0.0))
            && self.z2.iter().zip(&other.z2).all(|(a, b)| (*a > 0.0) == (*b > 0.0))
    }
}

/// Relative error is `|a − n| / max(|a|, |n|, 1e-6)`; the floor keeps
/// near-zero coordinates from amplifying rounding noise.
pub fn gradient_check(params: &CnnParams, sample: &CursorSample, h: f64) -> Result<GradCheck> {
    let (_, analytic) = loss_and_grad(params, sample)?;
    let label = sample.label_index();
    let base = run(params, &sample.patch);
    let mut probe = params.clone();
    let mut rel = vec![0.0; PARAM_COUNT];
    let mut kinked = Vec::new();
    for (i, r) in rel.iter_mut().enumerate() {
        let orig = probe.values[i];
        probe.values[i] = orig + h;
        let up = run(&probe, &sample.patch);
        probe.values[i] = orig - h;
        let down = run(&probe, &sample.patch);
        probe.values[i] = orig;
        if !(base.same_routing(&up) && base.same_routing(&down)) {
            kinked.push(i);
            continue;
        }
        let numeric = (loss_of(&up.probs, label) - loss_of(&down.probs, label)) / (2.0 * h);
        let a = analytic.values[i];
        *r = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
    }
    let (worst_index, max_rel_error) = rel
        .iter()
        .copied()
        .enumerate()
        .fold((0, 0.0), |best, (i, r)| if r > best.1 { (i, r) } else { best });
    let per_group = CnnParams::groups()
        .into_iter()
        .map(|(name, range)| (name, rel[range].iter().copied().fold(0.0, f64::max)))
        .collect();
    Ok(GradCheck {
        max_rel_error,
        worst_index,
        per_group,
        kinked,
    })
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub params: CnnParams,
    /// Mean pre-update loss of each epoch.
    pub epoch_losses: Vec<f64>,
}

/// Plain per-sample SGD from seeded initial weights.
pub fn train_sgd(dataset: &[CursorSample], epochs: usize, lr: f64, seed: u64) -> Result<CnnParams> {
    Ok(train_sgd_from(CnnParams::seeded(seed), dataset, epochs, lr, seed)?.params)
}

/// SGD starting from `init`. The visiting order is reshuffled every epoch
/// with a generator derived from `seed`.
pub fn train_sgd_from(
    init: CnnParams,
    dataset: &[CursorSample],
    epochs: usize,
    lr: f64,
    seed: u64,
) -> Result<TrainReport> {
    if dataset.is_empty() {
        return Err(Error::Argument("cannot train on an empty dataset".into()));
    }
    if !lr.is_finite() || lr < 0.0 {
        return Err(Error::Argument(format!("learning rate {lr} must be finite and >= 0")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_c0de);
    let mut params = init;
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut epoch_losses = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            let (l, g) = loss_and_grad(&params, &dataset[i])?;
            total += l;
            for (p, d) in params.values.iter_mut().zip(&g.values) {
                *p -= lr * d;
            }
        }
        epoch_losses.push(total / dataset.len() as f64);
    }
    Ok(TrainReport { params, epoch_losses })
}

/// Similarity transform about the patch centre.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine {
    pub angle_deg: f64,
    pub scale: f64,
    pub tx: f64,
    pub ty: f64,
}

impl Affine {
    pub const IDENTITY: Affine = Affine {
        angle_deg: 0.0,
        scale: 1.0,
        tx: 0.0,
        ty: 0.0,
    };

    pub fn random(rng: &mut impl Rng) -> Self {
        Affine {
            angle_deg: rng.gen_range(-15.0..=15.0),
            scale: rng.gen_range(0.8..=1.2),
            tx: rng.gen_range(-8.0..=8.0),
            ty: rng.gen_range(-8.0..=8.0),
        }
    }

    fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let c = PATCH as f64 / 2.0;
        let (s, co) = self.angle_deg.to_radians().sin_cos();
        let (dx, dy) = (x - c, y - c);
        (
            c + self.scale * (co * dx - s * dy) + self.tx,
            c + self.scale * (s * dx + co * dy) + self.ty,
        )
    }

    fn invert(&self, x: f64, y: f64) -> (f64, f64) {
        let c = PATCH as f64 / 2.0;
        let (s, co) = self.angle_deg.to_radians().sin_cos();
        let (dx, dy) = ((x - c - self.tx) / self.scale, (y - c - self.ty) / self.scale);
        (c + co * dx + s * dy, c - s * dx + co * dy)
    }
}

pub fn augment(sample: &CursorSample, rng: &mut impl Rng) -> CursorSample {
    augment_with(sample, Affine::random(rng))
}

/// Nearest-neighbour resampling in pixel-centre coordinates, edge pixels
/// extended outward. The label cell centre is mapped forward and clamped.
pub fn augment_with(sample: &CursorSample, t: Affine) -> CursorSample {
    let mut patch = vec![0.0; PATCH * PATCH];
    let clamp = |v: f64| (v.floor().max(0.0) as usize).min(PATCH - 1);
    for y in 0..PATCH {
        for x in 0..PATCH {
            let (sx, sy) = t.invert(x as f64 + 0.5, y as f64 + 0.5);
            patch[y * PATCH + x] = sample.patch[clamp(sy) * PATCH + clamp(sx)];
        }
    }
    let (row, col) = sample.label_cell;
    let centre = |i: usize| (i * CELL) as f64 + CELL as f64 / 2.0;
    let (lx, ly) = t.apply(centre(col), centre(row));
    let cell = |v: f64| ((v / CELL as f64).floor().max(0.0) as usize).min(GRID - 1);
    CursorSample {
        patch,
        label_cell: (cell(ly), cell(lx)),
    }
}

/// Arrow glyph, 11 rows × 7 columns. `#` outline, `o` fill, `.` transparent.
/// The hotspot is the top-left pixel.
pub const GLYPH: [&str; 11] = [
    "#......", "##.....", "#o#....", "#oo#...", "#ooo#..", "#oooo#.", "#ooooo#", "#oo####", "#o#....",
    "##.....", "#......",
];
pub const GLYPH_W: usize = 7;
pub const GLYPH_H: usize = 11;

/// Stamps the glyph with its hotspot at `(x, y)`, clipping at the patch edge.
pub fn stamp_glyph(patch: &mut [f64], width: usize, height: usize, x: usize, y: usize) {
    for (gy, row) in GLYPH.iter().enumerate() {
        for (gx, ch) in row.bytes().enumerate() {
            let (px, py) = (x + gx, y + gy);
            if px >= width || py >= height {
                continue;
            }
            match ch {
                b'#' => patch[py * width + px] = 0.0,
                b'o' => patch[py * width + px] = 1.0,
                _ => {}
            }
        }
    }
}

/// Background in one of three styles followed by a glyph at a random position.
pub fn synth_example(rng: &mut impl Rng) -> CursorSample {
    let mut patch = vec![0.0; PATCH * PATCH];
    match rng.gen_range(0..3) {
        0 => {
            let level: f64 = rng.gen_range(0.2..0.8);
            for p in &mut patch {
                *p = (level + rng.gen_range(-0.2..0.2)).clamp(0.0, 1.0);
            }
        }
        1 => {
            let level = rng.gen_range(0.0..=1.0);
            patch.iter_mut().for_each(|p| *p = level);
        }
        _ => {
            let level = rng.gen_range(0.0..=1.0);
            patch.iter_mut().for_each(|p| *p = level);
            for _ in 0..rng.gen_range(1..=4) {
                let (w, h) = (rng.gen_range(4..=40), rng.gen_range(4..=40));
                let (x0, y0) = (rng.gen_range(0..=PATCH - w), rng.gen_range(0..=PATCH - h));
                let v = rng.gen_range(0.0..=1.0);
                for y in y0..y0 + h {
                    patch[y * PATCH + x0..y * PATCH + x0 + w].iter_mut().for_each(|p| *p = v);
                }
            }
        }
    }
    let x = rng.gen_range(0..=PATCH - GLYPH_W);
    let y = rng.gen_range(0..=PATCH - GLYPH_H);
    stamp_glyph(&mut patch, PATCH, PATCH, x, y);
    CursorSample {
        patch,
        label_cell: (y / CELL, x / CELL),
    }
}

pub fn synth_dataset(rng: &mut impl Rng, n: usize) -> Result<Vec<CursorSample>> {
    if n == 0 {
        return Err(Error::Argument("synthetic dataset size must be >= 1".into()));
    }
    Ok((0..n).map(|_| synth_example(rng)).collect())
}

/// Box-resizes a frame to 64×64 and scales luma to [0, 1].
pub fn frame_to_patch(frame: &Frame) -> Result<Vec<f64>> {
    if frame.width < PATCH || frame.height < PATCH {
        return Err(Error::Dimension(format!(
            "cursor detection needs at least {PATCH}x{PATCH}, frame is {}x{}",
            frame.width, frame.height
        )));
    }
    let bounds = |i: usize, total: usize| (i * total / PATCH, ((i + 1) * total / PATCH).max(i * total / PATCH + 1));
    let mut patch = Vec::with_capacity(PATCH * PATCH);
    for oy in 0..PATCH {
        let (y0, y1) = bounds(oy, frame.height);
        for ox in 0..PATCH {
            let (x0, x1) = bounds(ox, frame.width);
            let mut sum = 0u64;
            for y in y0..y1 {
                sum += frame.luma[y * frame.width + x0..y * frame.width + x1]
                    .iter()
                    .map(|&v| v as u64)
                    .sum::<u64>();
            }
            let area = ((y1 - y0) * (x1 - x0)) as f64;
            patch.push(sum as f64 / area / 255.0);
        }
    }
    Ok(patch)
}

/// Index of the first maximum.
pub fn argmax(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}

pub fn detect_cursor(params: &CnnParams, frame: &Frame) -> Result<CursorPrediction> {
    let patch = frame_to_patch(frame)?;
    let probs = run(params, &patch).probs;
    let best = argmax(&probs);
    let (row, col) = (best / GRID, best % GRID);
    let to_frame = |cell: usize, total: usize| {
        let centre = (cell * CELL) as f64 + CELL as f64 / 2.0;
        ((centre * total as f64 / PATCH as f64).floor() as usize).min(total - 1)
    };
    Ok(CursorPrediction {
        x: to_frame(col, frame.width),
        y: to_frame(row, frame.height),
        confidence: probs[best],
    })
}

/// Chebyshev distance between two grid cells.
pub fn cell_distance(a: (usize, usize), b: (usize, usize)) -> usize {
    a.0.abs_diff(b.0).max(a.1.abs_diff(b.1))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(seed: u64) -> CursorSample {
        synth_example(&mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn parameter_layout() {
        assert_eq!(PARAM_COUNT, 1265);
        let total: usize = CnnParams::groups().iter().map(|(_, r)| r.len()).sum();
        assert_eq!(total, PARAM_COUNT);
    }

    #[test]
    fn zero_params_give_uniform_grid() {
        let grid = forward(&CnnParams::zeros(), &sample(1).patch).unwrap();
        assert!(grid.iter().all(|&p| (p - 1.0 / 256.0).abs() < 1e-15));
        let l = loss(&CnnParams::zeros(), &sample(1)).unwrap();
        assert!((l - 256f64.ln()).abs() < 1e-12);
        assert!(forward(&CnnParams::zeros(), &[0.0; 10]).is_err());
    }

    #[test]
    fn forward_normalized_and_deterministic() {
        let p = CnnParams::seeded(3);
        let s = sample(4);
        let a = forward(&p, &s.patch).unwrap();
        let b = forward(&p, &s.patch).unwrap();
        assert_eq!(a, b);
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn logit_shift_invariance() {
        let p = CnnParams::seeded(5);
        let s = sample(6);
        let mut shifted = p.clone();
        shifted.values_mut()[OFF_B3] += 3.25;
        let a = forward(&p, &s.patch).unwrap();
        let b = forward(&shifted, &s.patch).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn confident_label_has_small_loss() {
        let mut logits = vec![0.0; CELLS];
        logits[37] = 60.0;
        assert!(loss_of(&softmax(&logits), 37) < 1e-20);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let check = gradient_check(&CnnParams::seeded(11), &sample(12), 1e-5).unwrap();
        assert!(check.max_rel_error < 1e-3, "{check:?}");
        assert!(check.kinked.len() < PARAM_COUNT / 100, "{check:?}");
    }

    #[test]
    fn zero_learning_rate_keeps_params() {
        let data = vec![sample(1), sample(2)];
        let init = CnnParams::seeded(9);
        let report = train_sgd_from(init.clone(), &data, 2, 0.0, 9).unwrap();
        assert_eq!(report.params, init);
        assert!(train_sgd(&[], 1, 0.1, 0).is_err());
    }

    #[test]
    fn single_sample_loss_decreases() {
        let data = vec![sample(21)];
        let report = train_sgd_from(CnnParams::seeded(21), &data, 12, 0.01, 21).unwrap();
        for w in report.epoch_losses[1..].windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "{:?}", report.epoch_losses);
        }
    }

    #[test]
    fn training_is_deterministic() {
        let data: Vec<_> = (0..4).map(sample).collect();
        assert_eq!(train_sgd(&data, 2, 0.01, 5).unwrap(), train_sgd(&data, 2, 0.01, 5).unwrap());
    }

    #[test]
    fn augment_identity_and_translation() {
        let s = sample(30);
        assert_eq!(augment_with(&s, Affine::IDENTITY), s);
        let s = CursorSample::new(vec![0.5; PATCH * PATCH], (5, 5)).unwrap();
        let moved = augment_with(
            &s,
            Affine {
                tx: 8.0,
                ..Affine::IDENTITY
            },
        );
        assert_eq!(moved.label_cell, (5, 7));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for i in 0..50 {
            let a = augment(&sample(i), &mut rng);
            assert!(a.label_cell.0 < GRID && a.label_cell.1 < GRID);
        }
    }

    #[test]
    fn synthetic_data_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let data = synth_dataset(&mut rng, 1000).unwrap();
        let distinct: std::collections::HashSet<_> = data.iter().map(|s| s.label_cell).collect();
        assert!(distinct.len() >= 100);
        assert_eq!(
            synth_dataset(&mut ChaCha8Rng::seed_from_u64(1), 1).unwrap(),
            synth_dataset(&mut ChaCha8Rng::seed_from_u64(1), 1).unwrap()
        );
        assert!(synth_dataset(&mut rng, 0).is_err());
    }

    #[test]
    fn detect_zero_params_picks_first_cell() {
        let frame = Frame::filled(80, 70, 128, 0, 0);
        let pred = detect_cursor(&CnnParams::zeros(), &frame).unwrap();
        assert_eq!((pred.x, pred.y), (2, 2));
        assert!((pred.confidence - 1.0 / 256.0).abs() < 1e-15);
        assert!(detect_cursor(&CnnParams::zeros(), &Frame::filled(32, 32, 0, 0, 0)).is_err());
    }

    #[test]
    fn params_round_trip() {
        let p = CnnParams::seeded(1);
        assert_eq!(CnnParams::from_bytes(&p.to_bytes()).unwrap(), p);
        let foreign = paramfile::encode(crate::memory::PARAM_MAGIC, &[0.0; PARAM_COUNT]);
        assert!(CnnParams::from_bytes(&foreign).is_err());
    }
}
