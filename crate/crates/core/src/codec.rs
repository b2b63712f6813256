//! Coordinate special tokens.
//!
//! Each normalized axis (time, width, height) is divided into `m - 1` equal
//! segments giving `m` anchors at `i / (m - 1)`. A coordinate is written as
//! the token of its nearest anchor: `<t42>`, `<w0>`, `<h99>`.
//!
//! Boxes serialize as `<w x_min><h y_min><w x_max><h y_max>` and tubes as
//! `<t..>: <box>, <t..>: <box>, ...`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{domain_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Time,
    Width,
    Height,
}

impl Axis {
    pub fn prefix(self) -> char {
        match self {
            Axis::Time => 't',
            Axis::Width => 'w',
            Axis::Height => 'h',
        }
    }

    fn from_prefix(b: u8) -> Option<Self> {
        match b {
            b't' => Some(Axis::Time),
            b'w' => Some(Axis::Width),
            b'h' => Some(Axis::Height),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CoordToken {
    pub axis: Axis,
    pub index: usize,
}

impl CoordToken {
    pub fn new(axis: Axis, index: usize) -> Self {
        Self { axis, index }
    }
}

impl fmt::Display for CoordToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "<{}{}>", self.axis.prefix(), self.index)
    }
}

pub fn render_token(t: CoordToken) -> String {
    t.to_string()
}

pub fn render_tokens(tokens: &[CoordToken]) -> String {
    tokens.iter().map(ToString::to_string).collect()
}

/// Anchor counts per axis plus the size of the ordinary-language vocabulary
/// that precedes the coordinate rows in the extended output layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoordVocab {
    pub m_w: usize,
    pub m_h: usize,
    pub m_t: usize,
    pub base_vocab_size: usize,
}

impl Default for CoordVocab {
    fn default() -> Self {
        Self {
            m_w: 100,
            m_h: 100,
            m_t: 100,
            base_vocab_size: 32000,
        }
    }
}

impl CoordVocab {
    pub fn new(m_w: usize, m_h: usize, m_t: usize, base_vocab_size: usize) -> Result<Self> {
        let v = Self {
            m_w,
            m_h,
            m_t,
            base_vocab_size,
        };
        v.validate()?;
        Ok(v)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, m) in [("m_w", self.m_w), ("m_h", self.m_h), ("m_t", self.m_t)] {
            if m < 2 {
                return Err(domain_err!("{name} = {m}, need at least 2 anchors"));
            }
        }
        Ok(())
    }

    pub fn anchors(&self, axis: Axis) -> usize {
        match axis {
            Axis::Time => self.m_t,
            Axis::Width => self.m_w,
            Axis::Height => self.m_h,
        }
    }

    pub fn coord_token_count(&self) -> usize {
        self.m_w + self.m_h + self.m_t
    }

    pub fn extended_size(&self) -> usize {
        self.base_vocab_size + self.coord_token_count()
    }

    pub fn contains(&self, t: CoordToken) -> bool {
        t.index < self.anchors(t.axis)
    }

    /// Offset of a token among the coordinate rows only: widths, then
    /// heights, then times.
    pub fn coord_offset(&self, t: CoordToken) -> usize {
        match t.axis {
            Axis::Width => t.index,
            Axis::Height => self.m_w + t.index,
            Axis::Time => self.m_w + self.m_h + t.index,
        }
    }

    /// Inverse of [`CoordVocab::coord_offset`].
    pub fn token_at_offset(&self, offset: usize) -> Option<CoordToken> {
        if offset < self.m_w {
            Some(CoordToken::new(Axis::Width, offset))
        } else if offset < self.m_w + self.m_h {
            Some(CoordToken::new(Axis::Height, offset - self.m_w))
        } else if offset < self.coord_token_count() {
            Some(CoordToken::new(Axis::Time, offset - self.m_w - self.m_h))
        } else {
            None
        }
    }

    pub fn token(&self, axis: Axis, x: f64) -> Result<CoordToken> {
        Ok(CoordToken::new(axis, quantize(x, self.anchors(axis))?))
    }

    pub fn value(&self, t: CoordToken) -> Result<f64> {
        dequantize(t.index, self.anchors(t.axis))
    }
}

/// Row of `t` in the extended output layer `[V + m_w + m_h + m_t, D]`.
pub fn extended_vocab_index(t: CoordToken, vocab: &CoordVocab) -> usize {
    vocab.base_vocab_size + vocab.coord_offset(t)
}

/// Nearest anchor index; exact midpoints go to the larger index.
pub fn quantize(x: f64, m: usize) -> Result<usize> {
    if m < 2 {
        return Err(domain_err!("anchor count {m} < 2"));
    }
    if !(0.0..=1.0).contains(&x) {
        return Err(domain_err!("coordinate {x} outside [0, 1]"));
    }
    let i = (x * (m - 1) as f64 + 0.5).floor() as usize;
    Ok(i.min(m - 1))
}

pub fn dequantize(i: usize, m: usize) -> Result<f64> {
    if m < 2 {
        return Err(domain_err!("anchor count {m} < 2"));
    }
    if i >= m {
        return Err(domain_err!("anchor index {i} out of range for {m} anchors"));
    }
    Ok(i as f64 / (m - 1) as f64)
}

/// Largest round-trip error of [`quantize`] for `m` anchors.
pub fn quantization_bound(m: usize) -> f64 {
    1.0 / (2.0 * (m - 1) as f64)
}

/// A fraction in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct NormCoord(f64);

impl NormCoord {
    pub fn new(value: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&value) {
            Ok(Self(value))
        } else {
            Err(domain_err!("normalized coordinate {value} outside [0, 1]"))
        }
    }

    /// Clamps into `[0, 1]`; NaN is rejected.
    pub fn clamped(value: f64) -> Result<Self> {
        if value.is_nan() {
            return Err(domain_err!("coordinate is NaN"));
        }
        Ok(Self(value.clamp(0.0, 1.0)))
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for NormCoord {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        Self::new(v)
    }
}

impl From<NormCoord> for f64 {
    fn from(c: NormCoord) -> f64 {
        c.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    x_min: NormCoord,
    y_min: NormCoord,
    x_max: NormCoord,
    y_max: NormCoord,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let b = Self {
            x_min: NormCoord::new(x_min)?,
            y_min: NormCoord::new(y_min)?,
            x_max: NormCoord::new(x_max)?,
            y_max: NormCoord::new(y_max)?,
        };
        if x_min > x_max || y_min > y_max {
            return Err(domain_err!("inverted box ({x_min}, {y_min}, {x_max}, {y_max})"));
        }
        Ok(b)
    }

    pub fn unit() -> Self {
        Self::new(0.0, 0.0, 1.0, 1.0).unwrap()
    }

    pub fn from_array(a: [f64; 4]) -> Result<Self> {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x_min(), self.y_min(), self.x_max(), self.y_max()]
    }

    pub fn x_min(&self) -> f64 {
        self.x_min.get()
    }
    pub fn y_min(&self) -> f64 {
        self.y_min.get()
    }
    pub fn x_max(&self) -> f64 {
        self.x_max.get()
    }
    pub fn y_max(&self) -> f64 {
        self.y_max.get()
    }

    pub fn area(&self) -> f64 {
        (self.x_max() - self.x_min()) * (self.y_max() - self.y_min())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemporalSpan {
    start: NormCoord,
    end: NormCoord,
}

impl TemporalSpan {
    pub fn new(start: f64, end: f64) -> Result<Self> {
        let s = Self {
            start: NormCoord::new(start)?,
            end: NormCoord::new(end)?,
        };
        if start > end {
            return Err(domain_err!("span start {start} after end {end}"));
        }
        Ok(s)
    }

    pub fn start(&self) -> f64 {
        self.start.get()
    }

    pub fn end(&self) -> f64 {
        self.end.get()
    }

    pub fn length(&self) -> f64 {
        self.end() - self.start()
    }

    pub fn contains(&self, t: f64) -> bool {
        self.start() <= t && t <= self.end()
    }

    /// Overlap of two spans, `None` when they do not meet.
    pub fn intersect(&self, other: &TemporalSpan) -> Option<TemporalSpan> {
        let start = self.start().max(other.start());
        let end = self.end().min(other.end());
        (start <= end).then(|| TemporalSpan::new(start, end).unwrap())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keyframe {
    pub time: f64,
    pub bbox: BBox,
}

/// Temporal span plus one box per keyframe, keyframes strictly increasing
/// in time and inside the span.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatioTemporalTube {
    span: TemporalSpan,
    keyframes: Vec<Keyframe>,
}

impl SpatioTemporalTube {
    pub fn new(span: TemporalSpan, keyframes: Vec<Keyframe>) -> Result<Self> {
        if keyframes.is_empty() {
            return Err(domain_err!("tube has no keyframes"));
        }
        for pair in keyframes.windows(2) {
            if pair[0].time >= pair[1].time {
                return Err(domain_err!(
                    "keyframe times not strictly increasing: {} then {}",
                    pair[0].time,
                    pair[1].time
                ));
            }
        }
        for k in &keyframes {
            if !span.contains(k.time) {
                return Err(domain_err!(
                    "keyframe at {} outside span [{}, {}]",
                    k.time,
                    span.start(),
                    span.end()
                ));
            }
        }
        Ok(Self { span, keyframes })
    }

    /// Tube whose span runs from the first to the last keyframe.
    pub fn from_keyframes(keyframes: Vec<Keyframe>) -> Result<Self> {
        let (first, last) = match (keyframes.first(), keyframes.last()) {
            (Some(f), Some(l)) => (f.time, l.time),
            _ => return Err(domain_err!("tube has no keyframes")),
        };
        Self::new(TemporalSpan::new(first, last)?, keyframes)
    }

    pub fn span(&self) -> TemporalSpan {
        self.span
    }

    pub fn keyframes(&self) -> &[Keyframe] {
        &self.keyframes
    }

    /// Box in effect at time `t`: the latest keyframe at or before `t`, if
    /// `t` lies in the span.
    pub fn box_at(&self, t: f64) -> Option<BBox> {
        if !self.span.contains(t) {
            return None;
        }
        let n = self.keyframes.partition_point(|k| k.time <= t);
        n.checked_sub(1).map(|i| self.keyframes[i].bbox)
    }

    /// Drops keyframes that land on an already-used time anchor, keeping the
    /// first keyframe per anchor, so the tube can be serialized.
    pub fn dedup_time_anchors(&self, m_t: usize) -> Result<Self> {
        let mut kept: Vec<Keyframe> = Vec::with_capacity(self.keyframes.len());
        let mut last_tick = None;
        for k in &self.keyframes {
            let tick = quantize(k.time, m_t)?;
            if last_tick != Some(tick) {
                kept.push(*k);
                last_tick = Some(tick);
            }
        }
        Self::new(self.span, kept)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Segment {
    Text { text: String },
    Token { token: CoordToken },
}

/// Token-shaped text whose index is out of range for the vocabulary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub pos: usize,
    pub text: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ParsedText {
    pub segments: Vec<Segment>,
    pub diagnostics: Vec<Diagnostic>,
}

impl ParsedText {
    pub fn tokens(&self) -> impl Iterator<Item = CoordToken> + '_ {
        self.segments.iter().filter_map(|s| match s {
            Segment::Token { token } => Some(*token),
            Segment::Text { .. } => None,
        })
    }

    pub fn render(&self) -> String {
        self.segments
            .iter()
            .map(|s| match s {
                Segment::Text { text } => text.clone(),
                Segment::Token { token } => token.to_string(),
            })
            .collect()
    }
}

enum Lexed {
    Token(CoordToken, usize),
    OutOfRange(usize, String),
    NoMatch,
}

/// Matches `<(t|w|h)(0|[1-9][0-9]*)>` starting at byte `pos`.
fn lex_token(bytes: &[u8], pos: usize, vocab: &CoordVocab) -> Lexed {
    if bytes.get(pos) != Some(&b'<') {
        return Lexed::NoMatch;
    }
    let Some(axis) = bytes.get(pos + 1).and_then(|&b| Axis::from_prefix(b)) else {
        return Lexed::NoMatch;
    };
    let digits_start = pos + 2;
    let mut end = digits_start;
    while end < bytes.len() && bytes[end].is_ascii_digit() {
        end += 1;
    }
    let digits = &bytes[digits_start..end];
    if digits.is_empty() || (digits[0] == b'0' && digits.len() > 1) || bytes.get(end) != Some(&b'>') {
        return Lexed::NoMatch;
    }
    let text = std::str::from_utf8(&bytes[pos..=end]).unwrap().to_string();
    let index = std::str::from_utf8(digits).unwrap().parse::<usize>().ok();
    match index {
        Some(index) if index < vocab.anchors(axis) => Lexed::Token(CoordToken::new(axis, index), end + 1),
        _ => Lexed::OutOfRange(end + 1, text),
    }
}

/// Splits text into coordinate tokens and plain text.
///
/// Token-shaped substrings with an out-of-range index stay as text and are
/// reported in [`ParsedText::diagnostics`]. Adjacent text is merged, so
/// `parse_tokens(s).render() == s` for every input.
pub fn parse_tokens(text: &str, vocab: &CoordVocab) -> ParsedText {
    let bytes = text.as_bytes();
    let mut out = ParsedText::default();
    let mut pending = String::new();
    let mut text_start = 0;
    let mut pos = 0;
    while pos < bytes.len() {
        match lex_token(bytes, pos, vocab) {
            Lexed::Token(token, end) => {
                pending.push_str(&text[text_start..pos]);
                if !pending.is_empty() {
                    out.segments.push(Segment::Text {
                        text: std::mem::take(&mut pending),
                    });
                }
                out.segments.push(Segment::Token { token });
                pos = end;
                text_start = end;
            }
            Lexed::OutOfRange(end, raw) => {
                out.diagnostics.push(Diagnostic {
                    pos,
                    message: format!("index out of range in {raw}"),
                    text: raw,
                });
                pos = end;
            }
            Lexed::NoMatch => pos += 1,
        }
    }
    pending.push_str(&text[text_start..]);
    if !pending.is_empty() {
        out.segments.push(Segment::Text { text: pending });
    }
    out
}

fn parse_err(pos: usize, msg: impl Into<String>) -> Error {
    Error::Parse { pos, msg: msg.into() }
}

/// Strict token cursor used by the box, span and tube decoders.
struct Cursor<'a> {
    text: &'a str,
    pos: usize,
    vocab: &'a CoordVocab,
}

impl<'a> Cursor<'a> {
    fn new(text: &'a str, pos: usize, vocab: &'a CoordVocab) -> Self {
        Self { text, pos, vocab }
    }

    fn at_end(&self) -> bool {
        self.pos >= self.text.len()
    }

    fn token(&mut self, axis: Axis) -> Result<CoordToken> {
        match lex_token(self.text.as_bytes(), self.pos, self.vocab) {
            Lexed::Token(t, end) if t.axis == axis => {
                self.pos = end;
                Ok(t)
            }
            Lexed::Token(t, _) => Err(parse_err(
                self.pos,
                format!("expected a <{}..> token, found {t}", axis.prefix()),
            )),
            Lexed::OutOfRange(_, raw) => Err(parse_err(self.pos, format!("index out of range in {raw}"))),
            Lexed::NoMatch => Err(parse_err(self.pos, format!("expected a <{}..> token", axis.prefix()))),
        }
    }

    fn literal(&mut self, lit: &str) -> Result<()> {
        if self.text[self.pos..].starts_with(lit) {
            self.pos += lit.len();
            Ok(())
        } else {
            Err(parse_err(self.pos, format!("expected {lit:?}")))
        }
    }

    fn bbox(&mut self) -> Result<BBox> {
        let start = self.pos;
        let tokens = [
            self.token(Axis::Width)?,
            self.token(Axis::Height)?,
            self.token(Axis::Width)?,
            self.token(Axis::Height)?,
        ];
        decode_box(&tokens, self.vocab).map_err(|e| match e {
            Error::Parse { msg, .. } => parse_err(start, msg),
            other => other,
        })
    }
}

pub fn encode_box(b: &BBox, vocab: &CoordVocab) -> Result<[CoordToken; 4]> {
    Ok([
        vocab.token(Axis::Width, b.x_min())?,
        vocab.token(Axis::Height, b.y_min())?,
        vocab.token(Axis::Width, b.x_max())?,
        vocab.token(Axis::Height, b.y_max())?,
    ])
}

pub fn encode_box_text(b: &BBox, vocab: &CoordVocab) -> Result<String> {
    Ok(render_tokens(&encode_box(b, vocab)?))
}

pub fn decode_box(tokens: &[CoordToken], vocab: &CoordVocab) -> Result<BBox> {
    const ORDER: [Axis; 4] = [Axis::Width, Axis::Height, Axis::Width, Axis::Height];
    if tokens.len() != 4 {
        return Err(parse_err(0, format!("box needs 4 tokens, got {}", tokens.len())));
    }
    for (i, (t, axis)) in tokens.iter().zip(ORDER).enumerate() {
        if t.axis != axis {
            return Err(parse_err(
                i,
                format!("box token {i} is {t}, expected a <{}..> token", axis.prefix()),
            ));
        }
        if !vocab.contains(*t) {
            return Err(parse_err(i, format!("{t} out of range")));
        }
    }
    let v: Vec<f64> = tokens.iter().map(|&t| vocab.value(t)).collect::<Result<_>>()?;
    BBox::new(v[0], v[1], v[2], v[3]).map_err(|e| parse_err(0, e.to_string()))
}

pub fn decode_box_text(text: &str, vocab: &CoordVocab) -> Result<BBox> {
    let mut c = Cursor::new(text, 0, vocab);
    let b = c.bbox()?;
    if !c.at_end() {
        return Err(parse_err(c.pos, "trailing text after box"));
    }
    Ok(b)
}

pub fn encode_span(s: &TemporalSpan, vocab: &CoordVocab) -> Result<[CoordToken; 2]> {
    Ok([vocab.token(Axis::Time, s.start())?, vocab.token(Axis::Time, s.end())?])
}

pub fn decode_span(tokens: &[CoordToken], vocab: &CoordVocab) -> Result<TemporalSpan> {
    match tokens {
        [a, b] if a.axis == Axis::Time && b.axis == Axis::Time => {
            let (s, e) = (vocab.value(*a)?, vocab.value(*b)?);
            TemporalSpan::new(s, e).map_err(|e| parse_err(0, e.to_string()))
        }
        _ => Err(parse_err(0, "span needs exactly two <t..> tokens")),
    }
}

/// `<t..>: <box>, <t..>: <box>, ...`, one entry per keyframe.
///
/// Fails if two keyframes quantize to the same time anchor; see
/// [`SpatioTemporalTube::dedup_time_anchors`].
pub fn encode_tube(tube: &SpatioTemporalTube, vocab: &CoordVocab) -> Result<String> {
    let mut out = String::new();
    let mut last_tick = None;
    for (i, k) in tube.keyframes().iter().enumerate() {
        let t = vocab.token(Axis::Time, k.time)?;
        if last_tick.is_some_and(|prev| prev >= t.index) {
            return Err(domain_err!("keyframes {} and {i} share time anchor {t}", i - 1));
        }
        last_tick = Some(t.index);
        if i > 0 {
            out.push_str(", ");
        }
        out.push_str(&t.to_string());
        out.push_str(": ");
        out.push_str(&encode_box_text(&k.bbox, vocab)?);
    }
    Ok(out)
}

/// Decodes the longest tube starting at byte `start`, returning the tube and
/// the byte offset where it ends.
pub fn decode_tube_at(text: &str, start: usize, vocab: &CoordVocab) -> Result<(SpatioTemporalTube, usize)> {
    let mut c = Cursor::new(text, start, vocab);
    let mut keyframes: Vec<Keyframe> = Vec::new();
    let mut last_tick: Option<usize> = None;
    loop {
        let tick_pos = c.pos;
        let t = c.token(Axis::Time)?;
        if last_tick.is_some_and(|prev| prev >= t.index) {
            return Err(parse_err(tick_pos, format!("timestamp {t} out of order")));
        }
        last_tick = Some(t.index);
        c.literal(": ")?;
        let bbox = c.bbox()?;
        keyframes.push(Keyframe {
            time: vocab.value(t)?,
            bbox,
        });

        // Continue only if a separator is followed by another time token.
        let rest = &text[c.pos..];
        let sep = if rest.starts_with(", ") {
            2
        } else if rest.starts_with(',') {
            1
        } else {
            break;
        };
        let next = c.pos + sep;
        match lex_token(text.as_bytes(), next, vocab) {
            Lexed::Token(tok, _) if tok.axis == Axis::Time => c.pos = next,
            Lexed::OutOfRange(..) => {
                return Err(parse_err(next, "timestamp index out of range"));
            }
            _ => break,
        }
    }
    let tube = SpatioTemporalTube::from_keyframes(keyframes).map_err(|e| parse_err(start, e.to_string()))?;
    Ok((tube, c.pos))
}

pub fn decode_tube(text: &str, vocab: &CoordVocab) -> Result<SpatioTemporalTube> {
    if text.is_empty() {
        return Err(parse_err(0, "empty tube"));
    }
    let (tube, end) = decode_tube_at(text, 0, vocab)?;
    if end != text.len() {
        return Err(parse_err(end, "trailing text after tube"));
    }
    Ok(tube)
}

/// Byte offset of the first `<t..>: <w..>` pair, where a tube can begin.
pub fn find_tube_start(text: &str, vocab: &CoordVocab) -> Option<usize> {
    let bytes = text.as_bytes();
    (0..bytes.len()).find(|&pos| match lex_token(bytes, pos, vocab) {
        Lexed::Token(t, end) if t.axis == Axis::Time => {
            text[end..].starts_with(": ")
                && matches!(lex_token(bytes, end + 2, vocab), Lexed::Token(w, _) if w.axis == Axis::Width)
        }
        _ => false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v100() -> CoordVocab {
        CoordVocab::new(100, 100, 100, 10).unwrap()
    }

    #[test]
    fn quantize_examples() {
        assert_eq!(quantize(0.0, 100).unwrap(), 0);
        assert_eq!(quantize(1.0, 100).unwrap(), 99);
        assert_eq!(quantize(0.25, 100).unwrap(), 25);
        assert!(quantize(1.0001, 100).is_err());
        assert!(quantize(-0.1, 100).is_err());
        assert!(quantize(f64::NAN, 100).is_err());
        // exact midpoint between anchors 0 and 1 of a 3-anchor axis
        assert_eq!(quantize(0.25, 3).unwrap(), 1);
    }

    #[test]
    fn dequantize_examples() {
        assert_eq!(dequantize(0, 100).unwrap(), 0.0);
        assert_eq!(dequantize(99, 100).unwrap(), 1.0);
        assert_eq!(dequantize(25, 100).unwrap(), 25.0 / 99.0);
        assert!(dequantize(100, 100).is_err());
    }

    #[test]
    fn render_examples() {
        assert_eq!(render_token(CoordToken::new(Axis::Time, 42)), "<t42>");
        assert_eq!(render_token(CoordToken::new(Axis::Width, 0)), "<w0>");
        assert_eq!(render_token(CoordToken::new(Axis::Height, 99)), "<h99>");
    }

    #[test]
    fn parse_mixed_text() {
        let p = parse_tokens("from <t10> to <t30>", &v100());
        assert_eq!(
            p.segments,
            vec![
                Segment::Text { text: "from ".into() },
                Segment::Token {
                    token: CoordToken::new(Axis::Time, 10)
                },
                Segment::Text { text: " to ".into() },
                Segment::Token {
                    token: CoordToken::new(Axis::Time, 30)
                },
            ]
        );
        assert!(p.diagnostics.is_empty());
    }

    #[test]
    fn parse_out_of_range_passes_through() {
        let p = parse_tokens("<w101>", &v100());
        assert_eq!(p.segments, vec![Segment::Text { text: "<w101>".into() }]);
        assert_eq!(p.diagnostics.len(), 1);
        assert_eq!(p.diagnostics[0].pos, 0);
        let huge = parse_tokens("x<t99999999999999999999999>y", &v100());
        assert_eq!(huge.diagnostics.len(), 1);
        assert_eq!(huge.render(), "x<t99999999999999999999999>y");
    }

    #[test]
    fn parse_rejects_non_grammar_shapes() {
        for s in ["<t01>", "<t>", "<x3>", "<t3", "t3>", "<T3>", "<t-1>", "<t 3>"] {
            let p = parse_tokens(s, &v100());
            assert_eq!(p.tokens().count(), 0, "{s}");
            assert!(p.diagnostics.is_empty(), "{s}");
        }
        let p = parse_tokens("<<t3>>", &v100());
        assert_eq!(p.tokens().collect::<Vec<_>>(), vec![CoordToken::new(Axis::Time, 3)]);
    }

    #[test]
    fn box_examples() {
        let vocab = v100();
        assert_eq!(encode_box_text(&BBox::unit(), &vocab).unwrap(), "<w0><h0><w99><h99>");
        let point = BBox::new(0.5, 0.5, 0.5, 0.5).unwrap();
        let d = decode_box(&encode_box(&point, &vocab).unwrap(), &vocab).unwrap();
        assert!(d.x_min() <= d.x_max() && d.y_min() <= d.y_max());
        assert_eq!(d.x_min(), d.x_max());
    }

    #[test]
    fn box_decode_errors() {
        let vocab = v100();
        let w = CoordToken::new(Axis::Width, 1);
        let h = CoordToken::new(Axis::Height, 1);
        assert!(matches!(decode_box(&[w, h, w], &vocab), Err(Error::Parse { .. })));
        assert!(matches!(decode_box(&[h, w, w, h], &vocab), Err(Error::Parse { .. })));
        let inverted = [CoordToken::new(Axis::Width, 9), h, CoordToken::new(Axis::Width, 3), h];
        assert!(decode_box(&inverted, &vocab).is_err());
        assert!(decode_box_text("<w0><h0><w9><h9> extra", &vocab).is_err());
    }

    #[test]
    fn tube_single_keyframe() {
        let vocab = v100();
        let tube = SpatioTemporalTube::from_keyframes(vec![Keyframe {
            time: 0.0,
            bbox: BBox::unit(),
        }])
        .unwrap();
        let text = encode_tube(&tube, &vocab).unwrap();
        assert_eq!(text, "<t0>: <w0><h0><w99><h99>");
        assert_eq!(decode_tube(&text, &vocab).unwrap(), tube);
    }

    #[test]
    fn tube_decode_errors_carry_position() {
        let vocab = v100();
        let err = decode_tube("<t5>: <w0><h0><w1><h1>, <t3>: <w0><h0><w1><h1>", &vocab).unwrap_err();
        assert!(matches!(err, Error::Parse { pos: 24, .. }), "{err}");
        let err = decode_tube("<t5> <w0><h0><w1><h1>", &vocab).unwrap_err();
        assert!(matches!(err, Error::Parse { pos: 4, .. }), "{err}");
        assert!(decode_tube("", &vocab).is_err());
        assert!(decode_tube("<t5>: <w0><h0><w1>", &vocab).is_err());
        // separator without a following space is accepted
        assert!(decode_tube("<t1>: <w0><h0><w1><h1>,<t2>: <w0><h0><w1><h1>", &vocab).is_ok());
    }

    #[test]
    fn tube_construction_invariants() {
        let kf = |t| Keyframe {
            time: t,
            bbox: BBox::unit(),
        };
        assert!(SpatioTemporalTube::from_keyframes(vec![]).is_err());
        assert!(SpatioTemporalTube::from_keyframes(vec![kf(0.5), kf(0.5)]).is_err());
        let span = TemporalSpan::new(0.2, 0.4).unwrap();
        assert!(SpatioTemporalTube::new(span, vec![kf(0.5)]).is_err());
    }

    #[test]
    fn encode_tube_rejects_shared_anchor_until_deduped() {
        let vocab = v100();
        let kf = |t| Keyframe {
            time: t,
            bbox: BBox::unit(),
        };
        let tube = SpatioTemporalTube::from_keyframes(vec![kf(0.100), kf(0.101), kf(0.5)]).unwrap();
        assert!(matches!(encode_tube(&tube, &vocab), Err(Error::Domain(_))));
        let deduped = tube.dedup_time_anchors(vocab.m_t).unwrap();
        assert_eq!(deduped.keyframes().len(), 2);
        assert!(encode_tube(&deduped, &vocab).is_ok());
    }

    #[test]
    fn extended_index_layout() {
        let vocab = v100();
        assert_eq!(extended_vocab_index(CoordToken::new(Axis::Width, 0), &vocab), 10);
        assert_eq!(extended_vocab_index(CoordToken::new(Axis::Height, 0), &vocab), 110);
        assert_eq!(extended_vocab_index(CoordToken::new(Axis::Time, 99), &vocab), 309);
        assert_eq!(vocab.extended_size(), 310);
    }

    #[test]
    fn box_at_step_lookup() {
        let a = BBox::new(0.0, 0.0, 0.5, 0.5).unwrap();
        let b = BBox::unit();
        let tube = SpatioTemporalTube::new(
            TemporalSpan::new(0.1, 0.9).unwrap(),
            vec![Keyframe { time: 0.2, bbox: a }, Keyframe { time: 0.6, bbox: b }],
        )
        .unwrap();
        assert_eq!(tube.box_at(0.15), None);
        assert_eq!(tube.box_at(0.2), Some(a));
        assert_eq!(tube.box_at(0.59), Some(a));
        assert_eq!(tube.box_at(0.9), Some(b));
        assert_eq!(tube.box_at(0.95), None);
    }

    #[test]
    fn find_tube_in_answer() {
        let vocab = v100();
        let text = "During {<t3>,<t9>} <t3>: <w0><h0><w9><h9>, <t9>: <w1><h1><w8><h8>";
        let start = find_tube_start(text, &vocab).unwrap();
        let (tube, end) = decode_tube_at(text, start, &vocab).unwrap();
        assert_eq!(end, text.len());
        assert_eq!(tube.keyframes().len(), 2);
    }
}
