//! Straight-line reference implementations used as test oracles. Nothing
//! here calls into the library's numeric code paths.
#![allow(dead_code)]

use stkit::codec::{BBox, CoordVocab, Keyframe, SpatioTemporalTube, TemporalSpan};
use stkit::lape::EmbeddingTables;
use stkit::metrics::{PredictionRecord, Task};
use stkit::numkit::{Rng, Tensor};
use stkit::stp::{Activation, Affine, Mlp, PackerParams};

pub fn matmul(a: &Tensor, b: &Tensor) -> Vec<f64> {
    let (n, k, m) = (a.dims()[0], a.dims()[1], b.dims()[1]);
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            let mut s = 0.0;
            for l in 0..k {
                s += a.get(&[i, l]) * b.get(&[l, j]);
            }
            out[i * m + j] = s;
        }
    }
    out
}

/// Neumaier-compensated sum.
pub fn sum_compensated(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (mut s, mut c) = (0.0f64, 0.0f64);
    for x in xs {
        let t = s + x;
        if s.abs() >= x.abs() {
            c += (s - t) + x;
        } else {
            c += (x - t) + s;
        }
        s = t;
    }
    s + c
}

pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    let z = sum_compensated(e.iter().copied());
    e.iter().map(|v| v / z).collect()
}

/// Block means over the first three axes of a `[a, b, c, D]` tensor.
pub fn pool3(x: &Tensor, b: [usize; 3]) -> Vec<f64> {
    let d = x.dims();
    let (oa, ob, oc, dd) = (d[0] / b[0], d[1] / b[1], d[2] / b[2], d[3]);
    let mut out = Vec::new();
    for i in 0..oa {
        for j in 0..ob {
            for t in 0..oc {
                for k in 0..dd {
                    let mut s = 0.0;
                    for p in 0..b[0] {
                        for q in 0..b[1] {
                            for r in 0..b[2] {
                                s += x.get(&[i * b[0] + p, j * b[1] + q, t * b[2] + r, k]);
                            }
                        }
                    }
                    out.push(s / (b[0] * b[1] * b[2]) as f64);
                }
            }
        }
    }
    out
}

/// `(lo, hi, frac)` for an align-corners linear tap.
fn tap(i: usize, src: usize, dst: usize) -> (usize, usize, f64) {
    if src == 1 || dst == 1 {
        return (0, 0, 0.0);
    }
    let num = i * (src - 1);
    let lo = num / (dst - 1);
    let frac = (num % (dst - 1)) as f64 / (dst - 1) as f64;
    (lo, (lo + 1).min(src - 1), frac)
}

/// Direct 8-corner trilinear align-corners resize of `[a, b, c, D]`.
pub fn trilinear(x: &Tensor, to: [usize; 3]) -> Vec<f64> {
    let d = x.dims();
    let mut out = Vec::new();
    for i in 0..to[0] {
        let (x0, x1, fx) = tap(i, d[0], to[0]);
        for j in 0..to[1] {
            let (y0, y1, fy) = tap(j, d[1], to[1]);
            for t in 0..to[2] {
                let (z0, z1, fz) = tap(t, d[2], to[2]);
                for k in 0..d[3] {
                    let mut v = 0.0;
                    for (xi, wx) in [(x0, 1.0 - fx), (x1, fx)] {
                        for (yi, wy) in [(y0, 1.0 - fy), (y1, fy)] {
                            for (zi, wz) in [(z0, 1.0 - fz), (z1, fz)] {
                                v += wx * wy * wz * x.get(&[xi, yi, zi, k]);
                            }
                        }
                    }
                    out.push(v);
                }
            }
        }
    }
    out
}

/// Direct 4-corner bilinear align-corners resize of the `t = 0` slice.
pub fn bilinear_t0(x: &Tensor, to: [usize; 2]) -> Vec<f64> {
    let d = x.dims();
    let mut out = Vec::new();
    for i in 0..to[0] {
        let (x0, x1, fx) = tap(i, d[0], to[0]);
        for j in 0..to[1] {
            let (y0, y1, fy) = tap(j, d[1], to[1]);
            for k in 0..d[3] {
                let mut v = 0.0;
                for (xi, wx) in [(x0, 1.0 - fx), (x1, fx)] {
                    for (yi, wy) in [(y0, 1.0 - fy), (y1, fy)] {
                        v += wx * wy * x.get(&[xi, yi, 0, k]);
                    }
                }
                out.push(v);
            }
        }
    }
    out
}

/// One positional cell computed straight from the table rows.
pub fn rho_cell(tables: &EmbeddingTables, vocab: &CoordVocab, w: usize, h: usize, t: usize, k: usize) -> f64 {
    let p = |row: usize| tables.input().get(&[row, k]);
    let ph = |row: usize| tables.output().get(&[row, k]);
    let (rw, rh, rt) = (w, vocab.m_w + h, vocab.m_w + vocab.m_h + t);
    (ph(rw) + p(rw)) / 2.0 + (ph(rh) + p(rh)) / 2.0 + (ph(rt) + p(rt)) / 2.0
}

fn affine(a: &Affine, x: &[f64]) -> Vec<f64> {
    let w = a.weight();
    (0..a.out_dim())
        .map(|o| {
            let mut s = a.bias()[o];
            for (i, xi) in x.iter().enumerate().take(a.in_dim()) {
                s += w.get(&[o, i]) * xi;
            }
            s
        })
        .collect()
}

fn act(a: Activation, x: f64) -> f64 {
    match a {
        Activation::Identity => x,
        Activation::Gelu => 0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh()),
    }
}

fn mlp(m: &Mlp, x: &[f64]) -> Vec<f64> {
    let h: Vec<f64> = affine(&m.first, x).into_iter().map(|v| act(m.activation, v)).collect();
    affine(&m.second, &h)
}

pub struct Attended {
    pub output: Vec<f64>,
    pub pre_residual: Vec<f64>,
    /// `[heads][R]`
    pub weights: Vec<Vec<f64>>,
}

/// Attention of one point over its region rows, computed per query.
pub fn attend(point: &[f64], region: &[Vec<f64>], params: &PackerParams) -> Attended {
    let d = params.dim;
    let dh = d / params.heads;
    let q = mlp(&params.mlp_q, point);
    let keys: Vec<Vec<f64>> = region.iter().map(|r| mlp(&params.mlp_kv, r)).collect();
    let vals: Vec<Vec<f64>> = keys.iter().map(|k| affine(&params.value_projection, k)).collect();
    let mut pre = vec![0.0; d];
    let mut weights = Vec::new();
    for h in 0..params.heads {
        let mut scores = Vec::new();
        for k in &keys {
            let mut s = 0.0;
            for c in h * dh..(h + 1) * dh {
                s += q[c] * k[c];
            }
            scores.push(s / (dh as f64).sqrt());
        }
        let w = softmax(&scores);
        for c in h * dh..(h + 1) * dh {
            pre[c] = sum_compensated(w.iter().zip(&vals).map(|(wr, v)| wr * v[c]));
        }
        weights.push(w);
    }
    let output = (0..d).map(|c| point[c] + pre[c]).collect();
    Attended {
        output,
        pre_residual: pre,
        weights,
    }
}

/// Packer stage over `[a, b, c, D]` with block extents `blk`, unrolled.
pub fn pack(x: &Tensor, blk: [usize; 3], params: &PackerParams) -> Vec<f64> {
    let d = x.dims();
    let pooled = pool3(x, blk);
    let (oa, ob, oc, dd) = (d[0] / blk[0], d[1] / blk[1], d[2] / blk[2], d[3]);
    let mut out = Vec::new();
    let mut q = 0;
    for i in 0..oa {
        for j in 0..ob {
            for t in 0..oc {
                let mut region = Vec::new();
                for p in 0..blk[0] {
                    for r in 0..blk[1] {
                        for s in 0..blk[2] {
                            let (a, b, c) = (i * blk[0] + p, j * blk[1] + r, t * blk[2] + s);
                            region.push((0..dd).map(|k| x.get(&[a, b, c, k])).collect());
                        }
                    }
                }
                out.extend(attend(&pooled[q * dd..(q + 1) * dd], &region, params).output);
                q += 1;
            }
        }
    }
    out
}

pub fn t_iou(a: (f64, f64), b: (f64, f64)) -> f64 {
    if a == b && a.0 == a.1 {
        return 1.0;
    }
    let inter = (a.1.min(b.1) - a.0.max(b.0)).max(0.0);
    let union = (a.1 - a.0) + (b.1 - b.0) - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

pub fn b_iou(a: [f64; 4], b: [f64; 4]) -> f64 {
    let area = |r: [f64; 4]| (r[2] - r[0]) * (r[3] - r[1]);
    let iw = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let ih = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let union = area(a) + area(b) - iw * ih;
    if union > 0.0 {
        iw * ih / union
    } else {
        0.0
    }
}

fn lookup(tube: &SpatioTemporalTube, t: f64) -> Option<[f64; 4]> {
    let s = tube.span();
    if t < s.start() || t > s.end() {
        return None;
    }
    let mut found = None;
    for k in tube.keyframes() {
        if k.time <= t {
            found = Some(k.bbox.to_array());
        }
    }
    found
}

pub fn s_iou(p: &SpatioTemporalTube, g: &SpatioTemporalTube, m_t: usize) -> f64 {
    let lo = p.span().start().max(g.span().start());
    let hi = p.span().end().min(g.span().end());
    if lo > hi {
        return 0.0;
    }
    let mut ticks: Vec<f64> = (0..m_t)
        .map(|i| i as f64 / (m_t - 1) as f64)
        .filter(|&t| lo <= t && t <= hi)
        .collect();
    if ticks.is_empty() {
        ticks.push(lo);
    }
    let mut vals = Vec::new();
    for t in ticks {
        if let (Some(a), Some(b)) = (lookup(p, t), lookup(g, t)) {
            vals.push(b_iou(a, b));
        }
    }
    if vals.is_empty() {
        0.0
    } else {
        vals.iter().sum::<f64>() / vals.len() as f64
    }
}

/// Reference scorer for one task: metric name to value.
pub fn score(gt: &[PredictionRecord], preds: &[PredictionRecord], task: Task, m_t: usize) -> Vec<(String, f64)> {
    let mut t_vals = Vec::new();
    let mut s_vals = Vec::new();
    let mut b_vals = Vec::new();
    for g in gt.iter().filter(|g| g.task == task) {
        let p = preds.iter().find(|p| p.sample_id == g.sample_id && p.task == task);
        match task {
            Task::Stvg | Task::Elc | Task::Svg => {
                let (gt_tube, pred_tube) = (g.tube.as_ref().unwrap(), p.and_then(|p| p.tube.as_ref()));
                match pred_tube {
                    Some(pt) => {
                        let span = |t: &SpatioTemporalTube| (t.span().start(), t.span().end());
                        t_vals.push(t_iou(span(pt), span(gt_tube)));
                        s_vals.push(s_iou(pt, gt_tube, m_t));
                    }
                    None => {
                        t_vals.push(0.0);
                        s_vals.push(0.0);
                    }
                }
            }
            Task::Tvg => {
                let g = g.span.unwrap();
                t_vals.push(
                    p.and_then(|p| p.span)
                        .map_or(0.0, |s| t_iou((s.start(), s.end()), (g.start(), g.end()))),
                );
            }
            Task::Rec => {
                let g = g.bbox.unwrap();
                b_vals.push(
                    p.and_then(|p| p.bbox)
                        .map_or(0.0, |b| b_iou(b.to_array(), g.to_array())),
                );
            }
        }
    }
    let rate = |v: &[f64], th: f64| v.iter().filter(|&&x| x > th).count() as f64 / v.len() as f64;
    let avg = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    match task {
        Task::Stvg | Task::Elc | Task::Svg => vec![
            ("tIoU@0.5".into(), rate(&t_vals, 0.5)),
            ("m_tIoU".into(), avg(&t_vals)),
            ("sIoU@0.3".into(), rate(&s_vals, 0.3)),
            ("sIoU@0.5".into(), rate(&s_vals, 0.5)),
            ("m_sIoU".into(), avg(&s_vals)),
        ],
        Task::Tvg => vec![
            ("R@0.3".into(), rate(&t_vals, 0.3)),
            ("R@0.5".into(), rate(&t_vals, 0.5)),
            ("R@0.7".into(), rate(&t_vals, 0.7)),
            ("mIoU".into(), avg(&t_vals)),
        ],
        Task::Rec => vec![("Acc@0.5".into(), rate(&b_vals, 0.5))],
    }
}

pub fn random_box(rng: &mut Rng) -> BBox {
    let (a, b, c, d) = (rng.uniform(), rng.uniform(), rng.uniform(), rng.uniform());
    BBox::new(a.min(b), c.min(d), a.max(b), c.max(d)).unwrap()
}

pub fn random_span(rng: &mut Rng) -> TemporalSpan {
    let (a, b) = (rng.uniform(), rng.uniform());
    TemporalSpan::new(a.min(b), a.max(b)).unwrap()
}

/// Tube with up to `max_k` keyframes inside a random span.
pub fn random_tube(rng: &mut Rng, max_k: usize) -> SpatioTemporalTube {
    let span = random_span(rng);
    let k = 1 + rng.below(max_k);
    let mut times: Vec<f64> = (0..k).map(|_| rng.uniform_in(span.start(), span.end())).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let kf = times
        .into_iter()
        .map(|time| Keyframe {
            time,
            bbox: random_box(rng),
        })
        .collect();
    SpatioTemporalTube::new(span, kf).unwrap()
}

/// Ground-truth and prediction records across all tasks; predictions are
/// jittered copies, a few are missing.
pub fn record_pairs(rng: &mut Rng, n: usize) -> (Vec<PredictionRecord>, Vec<PredictionRecord>) {
    let mut gt = Vec::new();
    let mut preds = Vec::new();
    for i in 0..n {
        let task = Task::ALL[i % Task::ALL.len()];
        let id = format!("r{i}");
        let (g, p) = match task {
            Task::Stvg | Task::Elc | Task::Svg => (
                PredictionRecord::new(&id, task).with_tube(random_tube(rng, 6)),
                PredictionRecord::new(&id, task).with_tube(random_tube(rng, 6)),
            ),
            Task::Tvg => (
                PredictionRecord::new(&id, task).with_span(random_span(rng)),
                PredictionRecord::new(&id, task).with_span(random_span(rng)),
            ),
            Task::Rec => (
                PredictionRecord::new(&id, task).with_box(random_box(rng)),
                PredictionRecord::new(&id, task).with_box(random_box(rng)),
            ),
        };
        gt.push(g);
        if rng.below(20) != 0 {
            preds.push(p);
        }
    }
    (gt, preds)
}
