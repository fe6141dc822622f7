//! Input sequence layout and attention masks.
//!
//! A sequence is laid out as
//! `image tokens ⊕ [IMG] ⊕ prompt ⊕ label_1 ⊕ … ⊕ label_K`, where every label
//! span ends with its `[SEP]` once complete. The label-decoupling mask keeps
//! the image block bidirectional, the `[IMG]`/prompt part causal, and lets a
//! label token see the whole prefix plus the earlier tokens of its own span
//! only.

use std::fmt;
use std::str::FromStr;

use crate::{Error, Result};

/// Default length cap.
pub const MAX_SEQ: usize = 512;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentLayout {
    n_img: usize,
    prompt_len: usize,
    /// Token count of each label span, `[SEP]` included when present.
    label_lens: Vec<usize>,
}

/// Which part of the sequence a position falls in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Segment {
    Image,
    ImgToken,
    Prompt,
    Label(usize),
}

impl SegmentLayout {
    pub fn new(n_img: usize, prompt_len: usize, label_lens: Vec<usize>) -> Result<Self> {
        if let Some(k) = label_lens.iter().position(|&n| n == 0) {
            return Err(Error::Layout(format!("label span {k} is empty")));
        }
        Ok(SegmentLayout {
            n_img,
            prompt_len,
            label_lens,
        })
    }

    pub fn n_img(&self) -> usize {
        self.n_img
    }

    pub fn prompt_len(&self) -> usize {
        self.prompt_len
    }

    pub fn label_lens(&self) -> &[usize] {
        &self.label_lens
    }

    pub fn n_labels(&self) -> usize {
        self.label_lens.len()
    }

    /// Position of the `[IMG]` token.
    pub fn img_pos(&self) -> usize {
        self.n_img
    }

    /// Image tokens, `[IMG]` and prompt.
    pub fn prefix_len(&self) -> usize {
        self.n_img + 1 + self.prompt_len
    }

    pub fn total_len(&self) -> usize {
        self.prefix_len() + self.label_lens.iter().sum::<usize>()
    }

    /// `(start, len)` of every label span.
    pub fn label_spans(&self) -> Vec<(usize, usize)> {
        let mut start = self.prefix_len();
        self.label_lens
            .iter()
            .map(|&n| {
                let s = (start, n);
                start += n;
                s
            })
            .collect()
    }

    pub fn segment_of(&self, pos: usize) -> Segment {
        if pos < self.n_img {
            return Segment::Image;
        }
        if pos == self.n_img {
            return Segment::ImgToken;
        }
        if pos < self.prefix_len() {
            return Segment::Prompt;
        }
        let mut start = self.prefix_len();
        for (k, &n) in self.label_lens.iter().enumerate() {
            if pos < start + n {
                return Segment::Label(k);
            }
            start += n;
        }
        panic!("position {pos} outside layout of length {}", self.total_len());
    }

    pub fn check_max_seq(&self, max_seq: usize) -> Result<()> {
        let len = self.total_len();
        if len > max_seq {
            return Err(Error::SequenceTooLong { len, max: max_seq });
        }
        Ok(())
    }
}

/// `img=<n>:prompt=<p>:labels=<l1>,<l2>,…` (labels may be empty).
impl FromStr for SegmentLayout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut n_img = None;
        let mut prompt = None;
        let mut labels = None;
        for part in s.split(':') {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| Error::Layout(format!("expected key=value, got {part:?}")))?;
            let num = |v: &str| {
                v.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::Layout(format!("bad count {v:?}")))
            };
            match key.trim() {
                "img" => n_img = Some(num(value)?),
                "prompt" => prompt = Some(num(value)?),
                "labels" => {
                    labels = Some(if value.trim().is_empty() {
                        Vec::new()
                    } else {
                        value.split(',').map(num).collect::<Result<Vec<_>>>()?
                    })
                }
                other => return Err(Error::Layout(format!("unknown key {other:?}"))),
            }
        }
        SegmentLayout::new(
            n_img.unwrap_or(0),
            prompt.unwrap_or(0),
            labels.unwrap_or_default(),
        )
    }
}

/// Square additive mask; entries are `0.0` or `-inf`, row = query.
#[derive(Debug, Clone, PartialEq)]
pub struct AttnMask {
    size: usize,
    entries: Vec<f32>,
}

impl AttnMask {
    fn from_fn(size: usize, visible: impl Fn(usize, usize) -> bool) -> Self {
        let mut entries = vec![f32::NEG_INFINITY; size * size];
        for q in 0..size {
            for k in 0..size {
                if visible(q, k) {
                    entries[q * size + k] = 0.0;
                }
            }
        }
        AttnMask { size, entries }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, q: usize, k: usize) -> f32 {
        self.entries[q * self.size + k]
    }

    pub fn is_visible(&self, q: usize, k: usize) -> bool {
        self.get(q, k) == 0.0
    }

    pub fn row(&self, q: usize) -> &[f32] {
        &self.entries[q * self.size..(q + 1) * self.size]
    }

    pub fn blocked_count(&self) -> usize {
        self.entries.iter().filter(|v| v.is_infinite()).count()
    }
}

/// Rows of `0` (visible) and `-` (blocked).
impl fmt::Display for AttnMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for q in 0..self.size {
            let row: String = (0..self.size)
                .map(|k| if self.is_visible(q, k) { '0' } else { '-' })
                .collect();
            writeln!(f, "{row}")?;
        }
        Ok(())
    }
}

pub fn build_causal_mask(len: usize) -> Result<AttnMask> {
    if len == 0 {
        return Err(Error::Layout("mask length must be at least 1".into()));
    }
    Ok(AttnMask::from_fn(len, |q, k| k <= q))
}

/// The label-decoupling mask.
pub fn build_nxtp_mask(layout: &SegmentLayout) -> AttnMask {
    let segs: Vec<Segment> = (0..layout.total_len())
        .map(|p| layout.segment_of(p))
        .collect();
    AttnMask::from_fn(segs.len(), |q, k| match (segs[q], segs[k]) {
        (Segment::Image, Segment::Image) => true,
        (Segment::Image, _) => false,
        (Segment::ImgToken | Segment::Prompt, Segment::Label(_)) => false,
        (Segment::ImgToken | Segment::Prompt, _) => k <= q,
        (Segment::Label(_), Segment::Image | Segment::ImgToken | Segment::Prompt) => true,
        (Segment::Label(a), Segment::Label(b)) => a == b && k <= q,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PosMode {
    /// Every label span restarts at the prefix length.
    #[default]
    Shared,
    /// Plain `0..T`.
    Sequential,
}

impl FromStr for PosMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shared" => Ok(PosMode::Shared),
            "sequential" => Ok(PosMode::Sequential),
            other => Err(Error::Config(format!("unknown position mode {other:?}"))),
        }
    }
}

impl fmt::Display for PosMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PosMode::Shared => "shared",
            PosMode::Sequential => "sequential",
        })
    }
}

pub fn assign_positions(layout: &SegmentLayout, mode: PosMode) -> Vec<usize> {
    match mode {
        PosMode::Sequential => (0..layout.total_len()).collect(),
        PosMode::Shared => {
            let n_x = layout.prefix_len();
            let mut pos: Vec<usize> = (0..n_x).collect();
            for &n in layout.label_lens() {
                pos.extend(n_x..n_x + n);
            }
            pos
        }
    }
}
