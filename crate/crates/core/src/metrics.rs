//! Grounding metrics: temporal IoU, box IoU, tube IoU over the temporal
//! overlap, and per-task aggregation into thresholded rates and means.
//!
//! Rates count scores strictly greater than the threshold. Predictions that
//! are missing or cannot be read score 0 and are counted as failed.

use std::collections::{BTreeMap, HashMap};
use std::fmt::{self, Write as _};
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::codec::{
    decode_box, decode_tube_at, find_tube_start, parse_tokens, Axis, BBox, CoordVocab, Keyframe, SpatioTemporalTube,
    TemporalSpan,
};
use crate::error::{domain_err, Error, Result};
use crate::par::{self, Exec};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Task {
    #[default]
    Stvg,
    Elc,
    Svg,
    Tvg,
    Rec,
}

impl Task {
    pub const ALL: [Task; 5] = [Task::Stvg, Task::Elc, Task::Svg, Task::Tvg, Task::Rec];

    pub fn name(self) -> &'static str {
        match self {
            Task::Stvg => "STVG",
            Task::Elc => "ELC",
            Task::Svg => "SVG",
            Task::Tvg => "TVG",
            Task::Rec => "REC",
        }
    }

    fn uses_tube(self) -> bool {
        matches!(self, Task::Stvg | Task::Elc | Task::Svg)
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Task::ALL
            .into_iter()
            .find(|t| t.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| domain_err!("unknown task {s:?}"))
    }
}

impl TryFrom<String> for Task {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Task> for String {
    fn from(t: Task) -> String {
        t.name().to_string()
    }
}

pub fn temporal_iou(a: &TemporalSpan, b: &TemporalSpan) -> f64 {
    if a == b && a.length() == 0.0 {
        return 1.0;
    }
    let inter = (a.end().min(b.end()) - a.start().max(b.start())).max(0.0);
    let union = a.length() + b.length() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Zero-area boxes score 0 against anything.
pub fn box_iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x_max().min(b.x_max()) - a.x_min().max(b.x_min())).max(0.0);
    let ih = (a.y_max().min(b.y_max()) - a.y_min().max(b.y_min())).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Time anchors `i / (m_t - 1)` inside `span`. When no anchor falls inside,
/// the span start is the single evaluation time.
pub fn evaluation_ticks(span: &TemporalSpan, m_t: usize) -> Vec<f64> {
    let scale = (m_t - 1) as f64;
    let lo = ((span.start() * scale).floor() as usize).saturating_sub(1);
    let hi = ((span.end() * scale).ceil() as usize + 1).min(m_t - 1);
    let ticks: Vec<f64> = (lo..=hi)
        .map(|i| i as f64 / scale)
        .filter(|&t| span.contains(t))
        .collect();
    if ticks.is_empty() {
        vec![span.start()]
    } else {
        ticks
    }
}

/// Mean box IoU over the evaluation ticks of the temporal overlap, using
/// each tube's latest keyframe at or before the tick. Ticks where either
/// tube has no box yet are skipped.
pub fn s_iou(pred: &SpatioTemporalTube, gt: &SpatioTemporalTube, m_t: usize) -> f64 {
    let Some(overlap) = pred.span().intersect(&gt.span()) else {
        return 0.0;
    };
    let (sum, count) = evaluation_ticks(&overlap, m_t)
        .into_iter()
        .filter_map(|t| Some(box_iou(&pred.box_at(t)?, &gt.box_at(t)?)))
        .fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// One line of a ground-truth or prediction file.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RawRecord {
    pub id: String,
    pub task: Task,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub span: Option<[f64; 2]>,
    #[serde(default, rename = "box", skip_serializing_if = "Option::is_none")]
    pub bbox: Option<[f64; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tube: Option<Vec<(f64, [f64; 4])>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caption: Option<String>,
    /// Raw model output; read when the structured fields are absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    pub sample_id: String,
    pub task: Task,
    pub tube: Option<SpatioTemporalTube>,
    pub span: Option<TemporalSpan>,
    pub bbox: Option<BBox>,
    pub caption: Option<String>,
    pub answer: Option<String>,
}

impl PredictionRecord {
    pub fn new(sample_id: impl Into<String>, task: Task) -> Self {
        Self {
            sample_id: sample_id.into(),
            task,
            tube: None,
            span: None,
            bbox: None,
            caption: None,
            answer: None,
        }
    }

    pub fn with_tube(mut self, tube: SpatioTemporalTube) -> Self {
        self.tube = Some(tube);
        self
    }

    pub fn with_span(mut self, span: TemporalSpan) -> Self {
        self.span = Some(span);
        self
    }

    pub fn with_box(mut self, b: BBox) -> Self {
        self.bbox = Some(b);
        self
    }

    pub fn with_caption(mut self, c: impl Into<String>) -> Self {
        self.caption = Some(c.into());
        self
    }

    /// True if the structured fields the task needs are present.
    pub fn has_task_fields(&self) -> bool {
        match self.task {
            Task::Stvg | Task::Elc | Task::Svg => self.tube.is_some(),
            Task::Tvg => self.span.is_some(),
            Task::Rec => self.bbox.is_some(),
        }
    }

    pub fn to_raw(&self) -> RawRecord {
        RawRecord {
            id: self.sample_id.clone(),
            task: self.task,
            span: self.span.map(|s| [s.start(), s.end()]),
            bbox: self.bbox.map(BBox::to_array),
            tube: self
                .tube
                .as_ref()
                .map(|t| t.keyframes().iter().map(|k| (k.time, k.bbox.to_array())).collect()),
            caption: self.caption.clone(),
            answer: self.answer.clone(),
        }
    }
}

impl TryFrom<RawRecord> for PredictionRecord {
    type Error = Error;

    /// A tube takes its span from `span` when both are given, otherwise from
    /// its first and last keyframes.
    fn try_from(raw: RawRecord) -> Result<Self> {
        let span = raw.span.map(|[s, e]| TemporalSpan::new(s, e)).transpose()?;
        let bbox = raw.bbox.map(BBox::from_array).transpose()?;
        let tube = match raw.tube {
            None => None,
            Some(entries) => {
                let keyframes = entries
                    .into_iter()
                    .map(|(time, b)| {
                        Ok(Keyframe {
                            time,
                            bbox: BBox::from_array(b)?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Some(match (span, raw.task.uses_tube()) {
                    (Some(span), true) => SpatioTemporalTube::new(span, keyframes)?,
                    _ => SpatioTemporalTube::from_keyframes(keyframes)?,
                })
            }
        };
        Ok(Self {
            sample_id: raw.id,
            task: raw.task,
            tube,
            span,
            bbox,
            caption: raw.caption,
            answer: raw.answer,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SchemaIssue {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for SchemaIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

/// Parses JSON lines, skipping blank lines. Lines that fail are reported
/// with their 1-based line number.
pub fn parse_records(text: &str) -> (Vec<PredictionRecord>, Vec<SchemaIssue>) {
    let mut records = Vec::new();
    let mut issues = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<RawRecord>(line)
            .map_err(Error::from)
            .and_then(PredictionRecord::try_from);
        match parsed {
            Ok(r) => records.push(r),
            Err(e) => issues.push(SchemaIssue {
                line: i + 1,
                message: e.to_string(),
            }),
        }
    }
    (records, issues)
}

/// Ground truth must carry the fields its task is scored on.
pub fn check_ground_truth(records: &[PredictionRecord]) -> Vec<String> {
    records
        .iter()
        .filter(|r| !r.has_task_fields())
        .map(|r| {
            format!(
                "ground truth {} ({}) lacks the fields its task needs",
                r.sample_id, r.task
            )
        })
        .collect()
}

/// Structured reading of a raw model answer.
fn read_answer(task: Task, text: &str, vocab: &CoordVocab) -> Option<PredictionRecord> {
    let mut rec = PredictionRecord::new("", task);
    match task {
        Task::Tvg => {
            let times: Vec<_> = parse_tokens(text, vocab)
                .tokens()
                .filter(|t| t.axis == Axis::Time)
                .take(2)
                .collect();
            let [a, b] = times.as_slice() else { return None };
            rec.span = TemporalSpan::new(vocab.value(*a).ok()?, vocab.value(*b).ok()?).ok();
        }
        Task::Rec => {
            let tokens: Vec<_> = parse_tokens(text, vocab).tokens().take(4).collect();
            rec.bbox = decode_box(&tokens, vocab).ok();
        }
        Task::Stvg | Task::Svg | Task::Elc => {
            let start = find_tube_start(text, vocab)?;
            let (tube, _) = decode_tube_at(text, start, vocab).ok()?;
            let head = parse_tokens(&text[..start], vocab);
            let head_times: Vec<f64> = head
                .tokens()
                .filter(|t| t.axis == Axis::Time)
                .filter_map(|t| vocab.value(t).ok())
                .collect();
            let keyframes = tube.keyframes().to_vec();
            let first = keyframes[0].time;
            let last = keyframes[keyframes.len() - 1].time;
            let span = match (task, head_times.as_slice()) {
                (Task::Stvg, [s, e, ..]) => TemporalSpan::new(*s, *e).ok(),
                (Task::Elc, [e, ..]) if *e >= last => TemporalSpan::new(first, *e).ok(),
                _ => None,
            };
            rec.tube = span
                .and_then(|s| SpatioTemporalTube::new(s, keyframes.clone()).ok())
                .or(Some(tube));
            if task == Task::Elc {
                let caption: String = head
                    .segments
                    .iter()
                    .skip_while(|s| !matches!(s, crate::codec::Segment::Token { .. }))
                    .skip(1)
                    .map(|s| match s {
                        crate::codec::Segment::Text { text } => text.clone(),
                        crate::codec::Segment::Token { token } => token.to_string(),
                    })
                    .collect();
                rec.caption = Some(caption.trim().to_string());
            }
        }
    }
    rec.has_task_fields().then_some(rec)
}

/// Per-record scores; `None` where the task does not use the metric.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RecordScore {
    pub t_iou: Option<f64>,
    pub s_iou: Option<f64>,
    pub box_iou: Option<f64>,
    pub failed: bool,
}

fn zero_score(task: Task) -> RecordScore {
    match task {
        Task::Stvg | Task::Elc | Task::Svg => RecordScore {
            t_iou: Some(0.0),
            s_iou: Some(0.0),
            box_iou: None,
            failed: true,
        },
        Task::Tvg => RecordScore {
            t_iou: Some(0.0),
            failed: true,
            ..Default::default()
        },
        Task::Rec => RecordScore {
            box_iou: Some(0.0),
            failed: true,
            ..Default::default()
        },
    }
}

/// Scores one prediction against its ground truth.
pub fn score_record(gt: &PredictionRecord, pred: Option<&PredictionRecord>, vocab: &CoordVocab) -> RecordScore {
    let task = gt.task;
    let Some(pred) = pred.filter(|p| p.task == task) else {
        return zero_score(task);
    };
    let parsed;
    let pred = if pred.has_task_fields() {
        pred
    } else {
        match pred.answer.as_deref().and_then(|a| read_answer(task, a, vocab)) {
            Some(p) => {
                parsed = p;
                &parsed
            }
            None => return zero_score(task),
        }
    };
    match task {
        Task::Stvg | Task::Elc | Task::Svg => {
            let (p, g) = (pred.tube.as_ref().unwrap(), gt.tube.as_ref().unwrap());
            RecordScore {
                t_iou: Some(temporal_iou(&p.span(), &g.span())),
                s_iou: Some(s_iou(p, g, vocab.m_t)),
                box_iou: None,
                failed: false,
            }
        }
        Task::Tvg => RecordScore {
            t_iou: Some(temporal_iou(pred.span.as_ref().unwrap(), gt.span.as_ref().unwrap())),
            ..Default::default()
        },
        Task::Rec => RecordScore {
            box_iou: Some(box_iou(pred.bbox.as_ref().unwrap(), gt.bbox.as_ref().unwrap())),
            ..Default::default()
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub task: Task,
    pub metrics: BTreeMap<String, f64>,
    pub scored: usize,
    pub failed: usize,
    /// Ground-truth ids with no prediction.
    pub missing: Vec<String>,
    /// Prediction ids of this task with no ground truth.
    pub unmatched: Vec<String>,
}

impl MetricReport {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.metrics.get(name).copied()
    }
}

/// Fraction of values strictly above `threshold`.
pub fn rate_above(values: &[f64], threshold: f64) -> f64 {
    values.iter().filter(|&&v| v > threshold).count() as f64 / values.len() as f64
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

pub fn aggregate(
    gt: &[PredictionRecord],
    preds: &[PredictionRecord],
    task: Task,
    vocab: &CoordVocab,
) -> Result<MetricReport> {
    aggregate_with(gt, preds, task, vocab, Exec::default())
}

pub fn aggregate_with(
    gt: &[PredictionRecord],
    preds: &[PredictionRecord],
    task: Task,
    vocab: &CoordVocab,
    exec: Exec,
) -> Result<MetricReport> {
    let gt: Vec<&PredictionRecord> = gt.iter().filter(|r| r.task == task).collect();
    if gt.is_empty() {
        return Err(domain_err!("no {task} ground-truth records to score"));
    }
    let mut by_id: HashMap<&str, &PredictionRecord> = HashMap::new();
    for p in preds {
        by_id.entry(p.sample_id.as_str()).or_insert(p);
    }
    let scores = par::map_slice(exec, &gt, |g| {
        score_record(g, by_id.get(g.sample_id.as_str()).copied(), vocab)
    });

    let missing = gt
        .iter()
        .filter(|g| !by_id.contains_key(g.sample_id.as_str()))
        .map(|g| g.sample_id.clone())
        .collect();
    let gt_ids: std::collections::HashSet<&str> = gt.iter().map(|g| g.sample_id.as_str()).collect();
    let mut unmatched: Vec<String> = preds
        .iter()
        .filter(|p| p.task == task && !gt_ids.contains(p.sample_id.as_str()))
        .map(|p| p.sample_id.clone())
        .collect();
    unmatched.dedup();

    let collect = |f: fn(&RecordScore) -> Option<f64>| -> Vec<f64> { scores.iter().filter_map(f).collect() };
    let mut metrics = BTreeMap::new();
    match task {
        Task::Stvg | Task::Elc | Task::Svg => {
            let t = collect(|s| s.t_iou);
            let s = collect(|s| s.s_iou);
            metrics.insert("tIoU@0.5".into(), rate_above(&t, 0.5));
            metrics.insert("m_tIoU".into(), mean(&t));
            metrics.insert("sIoU@0.3".into(), rate_above(&s, 0.3));
            metrics.insert("sIoU@0.5".into(), rate_above(&s, 0.5));
            metrics.insert("m_sIoU".into(), mean(&s));
        }
        Task::Tvg => {
            let t = collect(|s| s.t_iou);
            for th in [0.3, 0.5, 0.7] {
                metrics.insert(format!("R@{th}"), rate_above(&t, th));
            }
            metrics.insert("mIoU".into(), mean(&t));
        }
        Task::Rec => {
            let b = collect(|s| s.box_iou);
            metrics.insert("Acc@0.5".into(), rate_above(&b, 0.5));
        }
    }
    Ok(MetricReport {
        task,
        metrics,
        scored: scores.len(),
        failed: scores.iter().filter(|s| s.failed).count(),
        missing,
        unmatched,
    })
}

/// Reports for every task that has ground truth, in task order.
pub fn aggregate_all(
    gt: &[PredictionRecord],
    preds: &[PredictionRecord],
    vocab: &CoordVocab,
) -> Result<Vec<MetricReport>> {
    let reports: Vec<MetricReport> = Task::ALL
        .into_iter()
        .filter(|t| gt.iter().any(|g| g.task == *t))
        .map(|t| aggregate(gt, preds, t, vocab))
        .collect::<Result<_>>()?;
    if reports.is_empty() {
        return Err(domain_err!("no ground-truth records"));
    }
    Ok(reports)
}

pub fn reports_json(reports: &[MetricReport]) -> serde_json::Value {
    let mut obj = serde_json::Map::new();
    for r in reports {
        obj.insert(
            r.task.name().to_string(),
            json!({
                "metrics": r.metrics,
                "scored": r.scored,
                "failed": r.failed,
                "missing": r.missing,
                "unmatched": r.unmatched,
            }),
        );
    }
    serde_json::Value::Object(obj)
}

pub fn reports_table(reports: &[MetricReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<6} {:<10} {:>9}", "task", "metric", "value");
    for r in reports {
        for (name, v) in &r.metrics {
            let _ = writeln!(out, "{:<6} {:<10} {:>9.4}", r.task.name(), name, v);
        }
        let _ = writeln!(out, "{:<6} {:<10} {:>9}", r.task.name(), "scored", r.scored);
        let _ = writeln!(out, "{:<6} {:<10} {:>9}", r.task.name(), "failed", r.failed);
    }
    out
}

/// Writes `{id, prediction, reference}` lines for every ELC ground-truth
/// record, in input order, for scoring by an external caption metric.
/// Returns the number of rows.
pub fn emit_caption_pairs<W: Write>(
    gt: &[PredictionRecord],
    preds: &[PredictionRecord],
    vocab: &CoordVocab,
    mut out: W,
) -> Result<usize> {
    let mut by_id: HashMap<&str, &PredictionRecord> = HashMap::new();
    for p in preds.iter().filter(|p| p.task == Task::Elc) {
        by_id.entry(p.sample_id.as_str()).or_insert(p);
    }
    let mut rows = 0;
    for g in gt.iter().filter(|g| g.task == Task::Elc) {
        let prediction = by_id
            .get(g.sample_id.as_str())
            .and_then(|p| {
                p.caption.clone().or_else(|| {
                    p.answer
                        .as_deref()
                        .and_then(|a| read_answer(Task::Elc, a, vocab))
                        .and_then(|r| r.caption)
                })
            })
            .unwrap_or_default();
        let row = json!({
            "id": g.sample_id,
            "prediction": prediction,
            "reference": g.caption.clone().unwrap_or_default(),
        });
        writeln!(out, "{row}")?;
        rows += 1;
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn span(s: f64, e: f64) -> TemporalSpan {
        TemporalSpan::new(s, e).unwrap()
    }

    fn bx(a: f64, b: f64, c: f64, d: f64) -> BBox {
        BBox::new(a, b, c, d).unwrap()
    }

    fn tube_on_ticks(ticks: &[usize], b: BBox, m_t: usize) -> SpatioTemporalTube {
        SpatioTemporalTube::from_keyframes(
            ticks
                .iter()
                .map(|&i| Keyframe {
                    time: i as f64 / (m_t - 1) as f64,
                    bbox: b,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn temporal_iou_examples() {
        assert!((temporal_iou(&span(0.0, 10.0 / 15.0), &span(5.0 / 15.0, 1.0)) - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(temporal_iou(&span(0.2, 0.4), &span(0.2, 0.4)), 1.0);
        assert_eq!(temporal_iou(&span(0.0, 0.2), &span(0.3, 0.4)), 0.0);
        assert_eq!(temporal_iou(&span(0.3, 0.3), &span(0.3, 0.3)), 1.0);
        assert_eq!(temporal_iou(&span(0.3, 0.3), &span(0.4, 0.4)), 0.0);
        assert_eq!(temporal_iou(&span(0.3, 0.3), &span(0.2, 0.4)), 0.0);
    }

    #[test]
    fn box_iou_examples() {
        assert_eq!(box_iou(&BBox::unit(), &BBox::unit()), 1.0);
        assert_eq!(box_iou(&bx(0.0, 0.0, 0.5, 0.5), &bx(0.5, 0.5, 1.0, 1.0)), 0.0);
        assert_eq!(box_iou(&BBox::unit(), &bx(0.0, 0.0, 0.5, 1.0)), 0.5);
        let p = bx(0.3, 0.3, 0.3, 0.3);
        assert_eq!(box_iou(&p, &p), 0.0);
    }

    #[test]
    fn s_iou_worked_example() {
        let m = 100;
        let pred = tube_on_ticks(&[2, 3, 4], BBox::unit(), m);
        let gt = tube_on_ticks(&[3, 4, 5], bx(0.0, 0.0, 0.5, 1.0), m);
        assert_eq!(s_iou(&pred, &gt, m), 0.5);
        assert_eq!(s_iou(&pred, &pred, m), 1.0);
        let far = tube_on_ticks(&[50, 60], BBox::unit(), m);
        assert_eq!(s_iou(&pred, &far, m), 0.0);
    }

    #[test]
    fn aggregate_two_tvg_records() {
        let vocab = CoordVocab::default();
        let gt = vec![
            PredictionRecord::new("a", Task::Tvg).with_span(span(0.0, 0.5)),
            PredictionRecord::new("b", Task::Tvg).with_span(span(0.0, 0.5)),
        ];
        let preds = vec![
            PredictionRecord::new("a", Task::Tvg).with_span(span(0.0, 0.3)),
            PredictionRecord::new("b", Task::Tvg).with_span(span(0.0, 0.2)),
        ];
        let r = aggregate(&gt, &preds, Task::Tvg, &vocab).unwrap();
        assert!((r.get("R@0.5").unwrap() - 0.5).abs() < 1e-15);
        assert!((r.get("mIoU").unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(r.failed, 0);
    }

    #[test]
    fn missing_and_unmatched_score_zero() {
        let vocab = CoordVocab::default();
        let gt = vec![
            PredictionRecord::new("a", Task::Rec).with_box(BBox::unit()),
            PredictionRecord::new("b", Task::Rec).with_box(BBox::unit()),
        ];
        let preds = vec![
            PredictionRecord::new("a", Task::Rec).with_box(BBox::unit()),
            PredictionRecord::new("zzz", Task::Rec).with_box(BBox::unit()),
        ];
        let r = aggregate(&gt, &preds, Task::Rec, &vocab).unwrap();
        assert_eq!(r.get("Acc@0.5"), Some(0.5));
        assert_eq!(r.failed, 1);
        assert_eq!(r.missing, vec!["b".to_string()]);
        assert_eq!(r.unmatched, vec!["zzz".to_string()]);
        assert!(aggregate(&[], &preds, Task::Rec, &vocab).is_err());
    }

    #[test]
    fn reads_answers() {
        let vocab = CoordVocab::default();
        let gt = PredictionRecord::new("a", Task::Rec).with_box(BBox::unit());
        let mut p = PredictionRecord::new("a", Task::Rec);
        p.answer = Some("It is at <w0><h0><w99><h99>.".into());
        assert_eq!(score_record(&gt, Some(&p), &vocab).box_iou, Some(1.0));
        p.answer = Some("no idea".into());
        assert!(score_record(&gt, Some(&p), &vocab).failed);

        let gt = PredictionRecord::new("s", Task::Stvg).with_tube(tube_on_ticks(&[10, 20], BBox::unit(), 100));
        let mut p = PredictionRecord::new("s", Task::Stvg);
        p.answer = Some("During the span of {<t10>,<t20>} <t10>: <w0><h0><w99><h99>, <t20>: <w0><h0><w99><h99>".into());
        let s = score_record(&gt, Some(&p), &vocab);
        assert_eq!((s.t_iou, s.s_iou, s.failed), (Some(1.0), Some(1.0), false));
    }

    #[test]
    fn elc_answer_caption() {
        let vocab = CoordVocab::default();
        let r = read_answer(Task::Elc, "End at <t30> a dog runs <t10>: <w0><h0><w9><h9>", &vocab).unwrap();
        assert_eq!(r.caption.as_deref(), Some("a dog runs"));
        let t = r.tube.unwrap();
        assert_eq!(t.span().end(), 30.0 / 99.0);
    }

    #[test]
    fn record_schema() {
        let text = r#"{"id":"x","task":"stvg","tube":[[0.1,[0,0,1,1]],[0.2,[0,0,0.5,0.5]]]}

{"id":"y","task":"TVG","span":[0.5,0.2]}
not json
{"id":"z","task":"REC","box":[0.1,0.1,0.2,0.2],"caption":"c"}"#;
        let (recs, issues) = parse_records(text);
        assert_eq!(recs.len(), 2);
        assert_eq!(issues.iter().map(|i| i.line).collect::<Vec<_>>(), vec![3, 4]);
        assert_eq!(recs[0].tube.as_ref().unwrap().keyframes().len(), 2);
    }

    #[test]
    fn caption_pairs_keep_order() {
        let vocab = CoordVocab::default();
        let t = tube_on_ticks(&[1], BBox::unit(), 100);
        let gt = vec![
            PredictionRecord::new("2", Task::Elc)
                .with_tube(t.clone())
                .with_caption("ref two"),
            PredictionRecord::new("1", Task::Elc).with_tube(t.clone()),
            PredictionRecord::new("r", Task::Rec).with_box(BBox::unit()),
        ];
        let preds = vec![PredictionRecord::new("1", Task::Elc).with_caption("pred one")];
        let mut buf = Vec::new();
        assert_eq!(emit_caption_pairs(&gt, &preds, &vocab, &mut buf).unwrap(), 2);
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], r#"{"id":"2","prediction":"","reference":"ref two"}"#);
        assert_eq!(lines[1], r#"{"id":"1","prediction":"pred one","reference":""}"#);
    }
}
