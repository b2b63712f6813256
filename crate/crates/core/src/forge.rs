//! Instruction samples built from video tube annotations (STVG, ELC, SVG)
//! and grounded image annotations (DGC, REC, RC).
//!
//! Question and answer parts are joined with a single space. Random choices
//! come from a substream keyed by `"{task}:{id}"` and are drawn in a fixed
//! order per family:
//!
//! | family | draws                         |
//! |--------|-------------------------------|
//! | STVG   | `Q_T`, `Q_S`, `Temp_T`        |
//! | ELC    | `Q_C`, `Q_S`                  |
//! | SVG    | `Temp_T`, `Q_S`               |
//! | DGC    | `Q_D`                         |
//! | REC    | object, `Q_R`                 |
//! | RC     | object, `Q_C`                 |

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::codec::{encode_box_text, encode_tube, Axis, BBox, CoordVocab, Keyframe, SpatioTemporalTube, TemporalSpan};
use crate::error::{domain_err, Error, Result};
use crate::numkit::Rng;
use crate::par::{self, Exec};

pub const Q_DENSE: [&str; 6] = [
    "Could you please give me a detailed description of the image? Please respond with interleaved bounding boxes for the corresponding parts of the answer.",
    "Can you provide a thorough description of this image? Please output with interleaved bounding boxes for the corresponding phrases.",
    "Please describe in detail the contents of the image. Please respond with interleaved bounding boxes for the corresponding parts of the answer.",
    "Could you give a comprehensive explanation of what can be found within this picture? Please output with interleaved bounding boxes for the corresponding phrases.",
    "Could you give me an elaborate explanation of this picture? Please respond with interleaved bounding boxes for the corresponding phrases.",
    "Could you provide me with a detailed analysis of this photo? Please output with interleaved bounding boxes for the corresponding parts of the answer.",
];

pub const Q_REFER: [&str; 8] = [
    "In this image, where is <object> located?",
    "Can you identify the position of <object> within this image?",
    "Could you indicate the region where <object> is located in this image?",
    "Please describe the location of <object> in this image.",
    "Where can I find <object> in this image?",
    "What part of this image contains <object>?",
    "Where does <object> appear in this image?",
    "Where is <object> situated within this image?",
];

pub const Q_REGION: [&str; 7] = [
    "What happened about the subject/object within the specified region <box>?",
    "Can you identify the event about the subject/object within the region <box>?",
    "Describe the event about subject/object located within the region <box>.",
    "Can you describe the object within the region <box>?",
    "What can you deduce about the object in the region <box>?",
    "Identify the specific object within the region <box>.",
    "Describe the object located within the region <box>.",
];

pub const Q_TEMPORAL: [&str; 6] = [
    "When does <event> occur in the video?",
    "At which time interval in the video can we see <event> occurring?",
    "During which time is <event> happening in the video?",
    "Tell me the timestamp when <event> happened in the video.",
    "At what time does <event> take place in the video?",
    "At what point in the video can we observe <event> taking place?",
];

pub const Q_SPATIAL: [&str; 3] = [
    "Where is the corresponding subject/object located?",
    "Can you identify the position of the corresponding subject/object within this video?",
    "Please describe the location of the corresponding subject/object in this video.",
];

pub const Q_INSTRUCT_STVG: &str =
    "Please firstly give the timestamps, and then give the spatial bounding box corresponding to each timestamp in the time period.";
pub const Q_INSTRUCT_ELC: &str = "Please firstly give the end timestamp, then give the event associated with the object/subject, finally give the spatial bounding box corresponding to each timestamp in the time period.";
pub const Q_INSTRUCT_SVG: &str =
    "Please give the spatial bounding box corresponding to each timestamp in the time period.";

/// `<s>` and `<e>` are the start and end time tokens.
pub const TEMP_SPAN: [&str; 8] = [
    "During the span of {<s>,<e>}",
    "In the time range {<s>,<e>}",
    "During the period {<s>,<e>}",
    "Within the time frame of {<s>,<e>}",
    "In the time period {<s>,<e>}",
    "During {<s>,<e>}",
    "Between {<s>,<e>}",
    "At {<s>,<e>}",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ForgeTask {
    Stvg,
    Elc,
    Svg,
    Dgc,
    Rec,
    Rc,
}

impl ForgeTask {
    pub const ALL: [ForgeTask; 6] = [
        ForgeTask::Stvg,
        ForgeTask::Elc,
        ForgeTask::Svg,
        ForgeTask::Dgc,
        ForgeTask::Rec,
        ForgeTask::Rc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ForgeTask::Stvg => "STVG",
            ForgeTask::Elc => "ELC",
            ForgeTask::Svg => "SVG",
            ForgeTask::Dgc => "DGC",
            ForgeTask::Rec => "REC",
            ForgeTask::Rc => "RC",
        }
    }

    pub fn is_video(self) -> bool {
        matches!(self, ForgeTask::Stvg | ForgeTask::Elc | ForgeTask::Svg)
    }
}

impl fmt::Display for ForgeTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ForgeTask {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ForgeTask::ALL
            .into_iter()
            .find(|t| t.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| domain_err!("unknown forge task {s:?}"))
    }
}

impl TryFrom<String> for ForgeTask {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ForgeTask> for String {
    fn from(t: ForgeTask) -> String {
        t.name().to_string()
    }
}

/// Video annotation as read from JSON. Times are in seconds; boxes are in
/// pixels when `width`/`height` are given, otherwise already normalized.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawVidAnnotation {
    pub video_id: String,
    pub duration: f64,
    pub event: String,
    #[serde(default)]
    pub tube: Vec<(f64, [f64; 4])>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub span: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawObject {
    pub phrase: String,
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionLink {
    pub phrase: String,
    pub object: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseCaption {
    pub text: String,
    #[serde(default)]
    pub links: Vec<CaptionLink>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawImgAnnotation {
    pub image_id: String,
    #[serde(default)]
    pub objects: Vec<RawObject>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dense_caption: Option<DenseCaption>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RawAnnotation {
    Video(RawVidAnnotation),
    Image(RawImgAnnotation),
}

fn normalize_box(b: [f64; 4], width: Option<f64>, height: Option<f64>) -> Result<BBox> {
    let (sx, sy) = (width.unwrap_or(1.0), height.unwrap_or(1.0));
    if sx <= 0.0 || sy <= 0.0 {
        return Err(domain_err!("frame size must be positive"));
    }
    if b.iter().any(|v| !v.is_finite()) {
        return Err(domain_err!("non-finite box {b:?}"));
    }
    let c = |v: f64, s: f64| (v / s).clamp(0.0, 1.0);
    BBox::new(c(b[0], sx), c(b[1], sy), c(b[2], sx), c(b[3], sy))
}

/// Video annotation normalized to `[0, 1]` (time by duration, boxes by
/// frame size, clamped).
#[derive(Debug, Clone, PartialEq)]
pub struct VidAnnotation {
    pub video_id: String,
    pub duration: f64,
    pub event: String,
    pub keyframes: Vec<Keyframe>,
    pub span: Option<TemporalSpan>,
}

impl VidAnnotation {
    pub fn from_raw(raw: &RawVidAnnotation) -> Result<Self> {
        if raw.duration.is_nan() || raw.duration <= 0.0 {
            return Err(domain_err!("duration {} must be positive", raw.duration));
        }
        let t = |s: f64| -> Result<f64> {
            if !s.is_finite() {
                return Err(domain_err!("non-finite time {s}"));
            }
            Ok((s / raw.duration).clamp(0.0, 1.0))
        };
        let keyframes = raw
            .tube
            .iter()
            .map(|&(time, b)| {
                Ok(Keyframe {
                    time: t(time)?,
                    bbox: normalize_box(b, raw.width, raw.height)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let span = raw.span.map(|[s, e]| TemporalSpan::new(t(s)?, t(e)?)).transpose()?;
        Ok(Self {
            video_id: raw.video_id.clone(),
            duration: raw.duration,
            event: raw.event.clone(),
            keyframes,
            span,
        })
    }

    pub fn tube(&self) -> Result<SpatioTemporalTube> {
        match self.span {
            Some(span) => SpatioTemporalTube::new(span, self.keyframes.clone()),
            None => SpatioTemporalTube::from_keyframes(self.keyframes.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImgAnnotation {
    pub image_id: String,
    pub objects: Vec<(String, BBox)>,
    pub dense_caption: Option<DenseCaption>,
}

impl ImgAnnotation {
    pub fn from_raw(raw: &RawImgAnnotation) -> Result<Self> {
        let objects = raw
            .objects
            .iter()
            .map(|o| Ok((o.phrase.clone(), normalize_box(o.bbox, raw.width, raw.height)?)))
            .collect::<Result<_>>()?;
        Ok(Self {
            image_id: raw.image_id.clone(),
            objects,
            dense_caption: raw.dense_caption.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Annotation {
    Video(VidAnnotation),
    Image(ImgAnnotation),
}

impl Annotation {
    pub fn from_raw(raw: &RawAnnotation) -> Result<Self> {
        Ok(match raw {
            RawAnnotation::Video(v) => Annotation::Video(VidAnnotation::from_raw(v)?),
            RawAnnotation::Image(i) => Annotation::Image(ImgAnnotation::from_raw(i)?),
        })
    }

    pub fn id(&self) -> &str {
        match self {
            Annotation::Video(v) => &v.video_id,
            Annotation::Image(i) => &i.image_id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionSample {
    pub task: ForgeTask,
    pub id: String,
    pub question: String,
    pub answer: String,
    /// 1-based template choices by family name.
    pub templates: BTreeMap<String, usize>,
}

impl InstructionSample {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("sample serializes")
    }
}

struct Picker<'a> {
    rng: &'a mut Rng,
    chosen: BTreeMap<String, usize>,
}

impl<'a> Picker<'a> {
    fn new(rng: &'a mut Rng) -> Self {
        Self {
            rng,
            chosen: BTreeMap::new(),
        }
    }

    fn pick<T: Copy>(&mut self, family: &str, options: &[T]) -> T {
        let i = self.rng.below(options.len());
        self.chosen.insert(family.to_string(), i + 1);
        options[i]
    }
}

fn fill(template: &str, placeholder: &str, payload: &str) -> String {
    template.replacen(placeholder, payload, 1)
}

fn span_phrase(template: &str, span: &TemporalSpan, vocab: &CoordVocab) -> Result<String> {
    let s = vocab.token(Axis::Time, span.start())?.to_string();
    let e = vocab.token(Axis::Time, span.end())?.to_string();
    Ok(fill(&fill(template, "<s>", &s), "<e>", &e))
}

fn video_tube(a: &VidAnnotation, vocab: &CoordVocab) -> Result<SpatioTemporalTube> {
    if a.keyframes.is_empty() {
        return Err(domain_err!("annotation {} has no keyframes", a.video_id));
    }
    a.tube()?.dedup_time_anchors(vocab.m_t)
}

fn sample(task: ForgeTask, id: &str, question: String, answer: String, picker: Picker) -> InstructionSample {
    InstructionSample {
        task,
        id: format!("{id}:{}", task.name().to_ascii_lowercase()),
        question,
        answer,
        templates: picker.chosen,
    }
}

pub fn forge_stvg(a: &VidAnnotation, vocab: &CoordVocab, rng: &mut Rng) -> Result<InstructionSample> {
    let tube = video_tube(a, vocab)?;
    let mut p = Picker::new(rng);
    let q_t = p.pick("Q_T", &Q_TEMPORAL);
    let q_s = p.pick("Q_S", &Q_SPATIAL);
    let temp_t = p.pick("Temp_T", &TEMP_SPAN);
    let question = format!("{} {q_s} {Q_INSTRUCT_STVG}", fill(q_t, "<event>", &a.event));
    let answer = format!(
        "{} {}",
        span_phrase(temp_t, &tube.span(), vocab)?,
        encode_tube(&tube, vocab)?
    );
    Ok(sample(ForgeTask::Stvg, &a.video_id, question, answer, p))
}

pub fn forge_elc(a: &VidAnnotation, vocab: &CoordVocab, rng: &mut Rng) -> Result<InstructionSample> {
    let tube = video_tube(a, vocab)?;
    let first_box = encode_box_text(&tube.keyframes()[0].bbox, vocab)?;
    let start = vocab.token(Axis::Time, tube.span().start())?;
    let end = vocab.token(Axis::Time, tube.span().end())?;
    let mut p = Picker::new(rng);
    let q_c = p.pick("Q_C", &Q_REGION);
    let q_s = p.pick("Q_S", &Q_SPATIAL);
    let question = format!(
        "Start at {start} {} {q_s} {Q_INSTRUCT_ELC}",
        fill(q_c, "<box>", &first_box)
    );
    let answer = format!("End at {end} {} {}", a.event, encode_tube(&tube, vocab)?);
    Ok(sample(ForgeTask::Elc, &a.video_id, question, answer, p))
}

pub fn forge_svg(a: &VidAnnotation, vocab: &CoordVocab, rng: &mut Rng) -> Result<InstructionSample> {
    let tube = video_tube(a, vocab)?;
    let mut p = Picker::new(rng);
    let temp_t = p.pick("Temp_T", &TEMP_SPAN);
    let q_s = p.pick("Q_S", &Q_SPATIAL);
    let question = format!(
        "{} {} {q_s} {Q_INSTRUCT_SVG}",
        span_phrase(temp_t, &tube.span(), vocab)?,
        a.event
    );
    let answer = encode_tube(&tube, vocab)?;
    Ok(sample(ForgeTask::Svg, &a.video_id, question, answer, p))
}

/// Caption with each linked phrase followed by its object's box tokens.
fn grounded_caption(a: &ImgAnnotation, caption: &DenseCaption, vocab: &CoordVocab) -> Result<String> {
    if caption.links.is_empty() {
        return Err(domain_err!("dense caption of {} has no phrase links", a.image_id));
    }
    let text = &caption.text;
    let mut out = String::with_capacity(text.len() + 32 * caption.links.len());
    let mut cursor = 0;
    for link in &caption.links {
        let (_, bbox) = a
            .objects
            .get(link.object)
            .ok_or_else(|| domain_err!("caption link to missing object {}", link.object))?;
        let at = text[cursor..]
            .find(&link.phrase)
            .ok_or_else(|| domain_err!("linked phrase {:?} not found in caption", link.phrase))?
            + cursor;
        let end = at + link.phrase.len();
        out.push_str(&text[cursor..end]);
        out.push(' ');
        out.push_str(&encode_box_text(bbox, vocab)?);
        cursor = end;
    }
    out.push_str(&text[cursor..]);
    Ok(out)
}

pub fn forge_image(a: &ImgAnnotation, task: ForgeTask, vocab: &CoordVocab, rng: &mut Rng) -> Result<InstructionSample> {
    let mut p = Picker::new(rng);
    let (question, answer) = match task {
        ForgeTask::Dgc => {
            let caption = a
                .dense_caption
                .as_ref()
                .ok_or_else(|| domain_err!("{} has no dense caption", a.image_id))?;
            let answer = grounded_caption(a, caption, vocab)?;
            (p.pick("Q_D", &Q_DENSE).to_string(), answer)
        }
        ForgeTask::Rec | ForgeTask::Rc => {
            if a.objects.is_empty() {
                return Err(domain_err!("{} has no objects", a.image_id));
            }
            let obj = p.pick("object", &(0..a.objects.len()).collect::<Vec<_>>());
            let (phrase, bbox) = &a.objects[obj];
            let box_text = encode_box_text(bbox, vocab)?;
            if task == ForgeTask::Rec {
                (fill(p.pick("Q_R", &Q_REFER), "<object>", phrase), box_text)
            } else {
                (fill(p.pick("Q_C", &Q_REGION), "<box>", &box_text), phrase.clone())
            }
        }
        video => return Err(domain_err!("{video} is not an image task")),
    };
    Ok(sample(task, &a.image_id, question, answer, p))
}

/// Substream for one annotation of one family.
pub fn sample_rng(seed: u64, task: ForgeTask, id: &str) -> Rng {
    Rng::new(seed).split_key(&format!("{}:{id}", task.name()))
}

pub fn forge_one(a: &Annotation, task: ForgeTask, vocab: &CoordVocab, seed: u64) -> Result<InstructionSample> {
    let mut rng = sample_rng(seed, task, a.id());
    match (a, task) {
        (Annotation::Video(v), ForgeTask::Stvg) => forge_stvg(v, vocab, &mut rng),
        (Annotation::Video(v), ForgeTask::Elc) => forge_elc(v, vocab, &mut rng),
        (Annotation::Video(v), ForgeTask::Svg) => forge_svg(v, vocab, &mut rng),
        (Annotation::Image(i), t) if !t.is_video() => forge_image(i, t, vocab, &mut rng),
        (Annotation::Video(_), t) => Err(domain_err!("{t} needs an image annotation")),
        (Annotation::Image(_), t) => Err(domain_err!("{t} needs a video annotation")),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Skipped {
    pub index: usize,
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct ForgeOutput {
    pub samples: Vec<InstructionSample>,
    pub skipped: Vec<Skipped>,
}

/// Forges every annotation for `task`; output keeps input order.
pub fn forge_batch(
    annotations: &[Annotation],
    task: ForgeTask,
    vocab: &CoordVocab,
    seed: u64,
    exec: Exec,
) -> ForgeOutput {
    let results = par::map_range(exec, annotations.len(), |i| {
        forge_one(&annotations[i], task, vocab, seed)
    });
    let mut out = ForgeOutput::default();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(s) => out.samples.push(s),
            Err(e) => out.skipped.push(Skipped {
                index: i,
                id: annotations[i].id().to_string(),
                reason: e.to_string(),
            }),
        }
    }
    out
}

/// Reads annotation JSON lines; unreadable lines come back as skips.
pub fn parse_annotations(text: &str) -> (Vec<Annotation>, Vec<Skipped>) {
    let mut anns = Vec::new();
    let mut bad = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<RawAnnotation>(line)
            .map_err(Error::from)
            .and_then(|raw| Annotation::from_raw(&raw));
        match parsed {
            Ok(a) => anns.push(a),
            Err(e) => bad.push(Skipped {
                index: i,
                id: String::new(),
                reason: format!("line {}: {e}", i + 1),
            }),
        }
    }
    (anns, bad)
}
