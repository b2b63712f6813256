//! Embedded invariant suite run by `stkit selftest`.

use std::fmt::Write as _;
use std::str::FromStr;
use std::time::Instant;

use crate::codec::{
    decode_tube, dequantize, encode_tube, quantization_bound, quantize, BBox, CoordVocab, Keyframe, SpatioTemporalTube,
    TemporalSpan,
};
use crate::error::{domain_err, Error, Result};
use crate::lape::{build_rho_with, EmbeddingTables};
use crate::metrics::{box_iou, s_iou, temporal_iou};
use crate::numkit::{softmax, Rng, Tensor};
use crate::par::Exec;
use crate::stp::{stp_forward_with, StpBranches, StpConfig, StpParams};

/// Deliberate corruption of one check, used to prove the suite can fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    Quantize,
    Softmax,
    Packer,
    Metric,
    Codec,
    Lape,
}

impl FromStr for Fault {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "quantize" => Fault::Quantize,
            "softmax" => Fault::Softmax,
            "packer" => Fault::Packer,
            "metric" => Fault::Metric,
            "codec" => Fault::Codec,
            "lape" => Fault::Lape,
            _ => return Err(domain_err!("unknown fault {s:?}")),
        })
    }
}

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct SelftestReport {
    pub checks: Vec<CheckResult>,
    pub seconds: f64,
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn table(&self) -> String {
        let mut s = format!("{:<22} {:<6} {:>8}  detail\n", "check", "result", "secs");
        for c in &self.checks {
            let verdict = if c.passed { "pass" } else { "FAIL" };
            let _ = writeln!(s, "{:<22} {:<6} {:>8.3}  {}", c.name, verdict, c.seconds, c.detail);
        }
        let _ = writeln!(
            s,
            "{} of {} checks passed in {:.2}s",
            self.checks.iter().filter(|c| c.passed).count(),
            self.checks.len(),
            self.seconds
        );
        s
    }
}

type Check = fn(&mut Rng, bool, Exec) -> Result<(bool, String)>;

const CHECKS: [(&str, Fault, Check); 6] = [
    ("quantization_bound", Fault::Quantize, check_quantization),
    ("softmax_sums", Fault::Softmax, check_softmax),
    ("packer_doubling", Fault::Packer, check_packer),
    ("metric_symmetry", Fault::Metric, check_metric_symmetry),
    ("codec_round_trip", Fault::Codec, check_codec),
    ("lape_separability", Fault::Lape, check_lape),
];

pub fn run(seed: u64, fault: Option<Fault>, exec: Exec) -> SelftestReport {
    let start = Instant::now();
    let root = Rng::new(seed);
    let checks = CHECKS
        .iter()
        .enumerate()
        .map(|(i, &(name, f, check))| {
            let t = Instant::now();
            let mut rng = root.split(i as u64);
            let (passed, detail) = match check(&mut rng, fault == Some(f), exec) {
                Ok(r) => r,
                Err(e) => (false, format!("error: {e}")),
            };
            CheckResult {
                name,
                passed,
                detail,
                seconds: t.elapsed().as_secs_f64(),
            }
        })
        .collect();
    SelftestReport {
        checks,
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn check_quantization(rng: &mut Rng, fault: bool, _: Exec) -> Result<(bool, String)> {
    let m = 100;
    let mut xs: Vec<f64> = (0..10_000).map(|_| rng.uniform()).collect();
    xs.sort_by(f64::total_cmp);
    let mut worst = 0.0f64;
    let mut inversions = 0;
    let mut prev = 0;
    for &x in &xs {
        let mut i = quantize(x, m)?;
        if fault {
            i = (i + 1).min(m - 1);
        }
        worst = worst.max((dequantize(i, m)? - x).abs());
        inversions += usize::from(i < prev);
        prev = i;
    }
    let ok = worst <= quantization_bound(m) + 1e-12 && inversions == 0;
    Ok((ok, format!("max err {worst:.6}, {inversions} inversions")))
}

fn check_softmax(rng: &mut Rng, fault: bool, _: Exec) -> Result<(bool, String)> {
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = 1 + rng.below(64);
        let xs: Vec<f64> = (0..n).map(|_| rng.normal(10.0)).collect();
        let mut p = softmax(&xs);
        if fault {
            p[0] *= 1.01;
        }
        worst = worst.max((p.iter().sum::<f64>() - 1.0).abs());
    }
    Ok((worst <= 1e-12, format!("max |sum - 1| {worst:.2e}")))
}

fn check_packer(_: &mut Rng, fault: bool, exec: Exec) -> Result<(bool, String)> {
    let cfg = StpConfig::default();
    let dim = 8;
    let c = 0.375;
    let v = Tensor::full(&[cfg.w1, cfg.h1, cfg.n, dim], c)?;
    let params = StpParams::identity(dim)?;
    let out = stp_forward_with(&v, &cfg, &params, StpBranches::Both, exec)?;
    let (f_s, f_t) = (out.f_s.as_ref().unwrap(), out.f_t.as_ref().unwrap());
    // Each stage doubles the constant; both streams sit two stages deep.
    let expect = if fault { 2.0 * c } else { 4.0 * c };
    let exact = |t: &Tensor| t.data().iter().all(|&x| x == expect);
    let tokens = out.token_count();
    let ok = exact(f_s) && exact(f_t) && tokens == 2520;
    Ok((
        ok,
        format!("{tokens} tokens, F_s = {}, F_t = {}", f_s.data()[0], f_t.data()[0]),
    ))
}

fn random_span(rng: &mut Rng) -> Result<TemporalSpan> {
    let a = rng.uniform();
    let b = rng.uniform();
    TemporalSpan::new(a.min(b), a.max(b))
}

fn random_box(rng: &mut Rng) -> Result<BBox> {
    let (x0, x1) = (rng.uniform(), rng.uniform());
    let (y0, y1) = (rng.uniform(), rng.uniform());
    BBox::new(x0.min(x1), y0.min(y1), x0.max(x1), y0.max(y1))
}

fn random_tube(rng: &mut Rng, max_k: usize) -> Result<SpatioTemporalTube> {
    let k = 1 + rng.below(max_k);
    let mut times: Vec<f64> = (0..k).map(|_| rng.uniform()).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let keyframes = times
        .into_iter()
        .map(|time| {
            Ok(Keyframe {
                time,
                bbox: random_box(rng)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    SpatioTemporalTube::from_keyframes(keyframes)
}

fn check_metric_symmetry(rng: &mut Rng, fault: bool, _: Exec) -> Result<(bool, String)> {
    let mut worst = 0.0f64;
    for _ in 0..500 {
        let (a, b) = (random_span(rng)?, random_span(rng)?);
        let skew = if fault { 0.01 } else { 0.0 };
        worst = worst.max((temporal_iou(&a, &b) + skew - temporal_iou(&b, &a)).abs());
        let (p, q) = (random_box(rng)?, random_box(rng)?);
        worst = worst.max((box_iou(&p, &q) - box_iou(&q, &p)).abs());
        let (s, t) = (random_tube(rng, 6)?, random_tube(rng, 6)?);
        worst = worst.max((s_iou(&s, &t, 100) - s_iou(&t, &s, 100)).abs());
    }
    Ok((worst == 0.0, format!("max asymmetry {worst:.2e}")))
}

fn check_codec(rng: &mut Rng, fault: bool, _: Exec) -> Result<(bool, String)> {
    let vocab = CoordVocab::default();
    let bound = quantization_bound(vocab.m_t);
    let mut worst = 0.0f64;
    let mut structural = 0;
    for _ in 0..1000 {
        let tube = random_tube(rng, 8)?.dedup_time_anchors(vocab.m_t)?;
        let mut text = encode_tube(&tube, &vocab)?;
        if fault {
            text = text.replacen("<w", "<h", 1);
        }
        let back = match decode_tube(&text, &vocab) {
            Ok(t) => t,
            Err(_) => {
                structural += 1;
                continue;
            }
        };
        if back.keyframes().len() != tube.keyframes().len() {
            structural += 1;
            continue;
        }
        for (x, y) in tube.keyframes().iter().zip(back.keyframes()) {
            worst = worst.max((x.time - y.time).abs());
            for (u, v) in x.bbox.to_array().iter().zip(y.bbox.to_array()) {
                worst = worst.max((u - v).abs());
            }
        }
    }
    let ok = structural == 0 && worst <= bound + 1e-12;
    Ok((ok, format!("max err {worst:.6}, {structural} structural diffs")))
}

fn check_lape(rng: &mut Rng, fault: bool, exec: Exec) -> Result<(bool, String)> {
    let vocab = CoordVocab::default();
    let d = 4;
    let tables = EmbeddingTables::random(&vocab, d, rng)?;
    let rho = build_rho_with(&tables, &vocab, exec)?;
    let mut t = rho.into_tensor();
    if fault {
        let at = t.offset(&[7, 5, 3, 0]);
        t.data_mut()[at] += 1e-3;
    }
    // rho[w,h,t] - rho[0,h,t] - rho[w,0,t] - rho[w,h,0]
    //   + rho[0,0,t] + rho[0,h,0] + rho[w,0,0] - rho[0,0,0] vanishes
    // for any sum of per-axis terms.
    let (mw, mh, mt) = (vocab.m_w, vocab.m_h, vocab.m_t);
    let mut worst = 0.0f64;
    for w in (0..mw).step_by(7) {
        for h in (0..mh).step_by(5) {
            for s in (0..mt).step_by(3) {
                for k in 0..d {
                    let g = |a: usize, b: usize, c: usize| t.get(&[a, b, c, k]);
                    let r = g(w, h, s) - g(0, h, s) - g(w, 0, s) - g(w, h, 0) + g(0, 0, s) + g(0, h, 0) + g(w, 0, 0)
                        - g(0, 0, 0);
                    worst = worst.max(r.abs());
                }
            }
        }
    }
    Ok((worst == 0.0, format!("max residual {worst:.2e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clean_run_passes() {
        let r = run(0, None, Exec::default());
        assert!(r.passed(), "{}", r.table());
    }

    #[test]
    fn every_fault_is_caught() {
        for (name, fault, _) in CHECKS {
            let r = run(1, Some(fault), Exec::Sequential);
            assert!(!r.passed(), "{name}\n{}", r.table());
            assert_eq!(r.checks.iter().filter(|c| !c.passed).count(), 1, "{name}");
        }
    }
}
