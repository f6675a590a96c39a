//! Token layout: `[C_I | T_I | T_P | C_P]` with 3D coordinates for visual tokens.

use std::ops::Range;

use crate::codec::LatentVideo;
use crate::error::{Error, Result};

use super::config::ModelConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Segment {
    /// Condition image tokens.
    ConditionImage,
    /// Generated frame tokens: transitions and target.
    Generated,
    /// Target prompt tokens.
    TargetPrompt,
    /// Condition prompt tokens.
    ConditionPrompt,
}

impl Segment {
    pub const ALL: [Segment; 4] = [
        Segment::ConditionImage,
        Segment::Generated,
        Segment::TargetPrompt,
        Segment::ConditionPrompt,
    ];

    pub fn short(self) -> &'static str {
        match self {
            Segment::ConditionImage => "C_I",
            Segment::Generated => "T_I",
            Segment::TargetPrompt => "T_P",
            Segment::ConditionPrompt => "C_P",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TokenLayout {
    /// Spans in [`Segment::ALL`] order; contiguous and covering `0..len`.
    pub spans: [Range<usize>; 4],
    /// `(n, i, j)` for each visual token, in token order.
    pub coords: Vec<[usize; 3]>,
    /// Text token ids, target prompt first.
    pub text_ids: Vec<usize>,
    pub frames: usize,
    pub grid: (usize, usize),
}

impl TokenLayout {
    pub fn len(&self) -> usize {
        self.spans[3].end
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn span(&self, s: Segment) -> Range<usize> {
        self.spans[s as usize].clone()
    }

    pub fn visual_len(&self) -> usize {
        self.coords.len()
    }

    pub fn segment_of(&self, token: usize) -> Segment {
        Segment::ALL
            .into_iter()
            .find(|&s| self.span(s).contains(&token))
            .expect("token inside the layout")
    }

    pub fn segments(&self) -> Vec<Segment> {
        let mut out = Vec::with_capacity(self.len());
        for s in Segment::ALL {
            out.extend(std::iter::repeat_n(s, self.span(s).len()));
        }
        out
    }

    pub fn target_prompt_ids(&self) -> &[usize] {
        &self.text_ids[..self.span(Segment::TargetPrompt).len()]
    }

    pub fn validate(&self) -> Result<()> {
        let mut cursor = 0;
        for s in &self.spans {
            if s.start != cursor || s.end < s.start {
                return Err(Error::Layout(format!(
                    "segment spans are not contiguous: {:?}",
                    self.spans
                )));
            }
            cursor = s.end;
        }
        if self.coords.len() != self.spans[1].end {
            return Err(Error::Layout("visual coordinates do not match image spans".into()));
        }
        if self.text_ids.len() != self.len() - self.visual_len() {
            return Err(Error::Layout("text ids do not match prompt spans".into()));
        }
        Ok(())
    }
}

/// Visual tokens first (frame 0 → `C_I`, frames 1.. → `T_I`), then the target
/// prompt, then the condition prompt when given.
pub fn build_token_layout(
    config: &ModelConfig,
    latent: &LatentVideo,
    t_prompt: &[usize],
    c_prompt: Option<&[usize]>,
) -> Result<TokenLayout> {
    let frames = latent.len();
    if frames != config.latent_frames() {
        return Err(Error::Layout(format!(
            "mode {} expects {} latent frames, got {frames}",
            config.mode,
            config.latent_frames()
        )));
    }
    let max = config.max_prompt_len;
    for p in std::iter::once(t_prompt).chain(c_prompt) {
        if p.len() > max {
            return Err(Error::Length { len: p.len(), max });
        }
        if p.is_empty() {
            return Err(Error::Layout("prompt token list is empty".into()));
        }
    }
    let (h, w) = latent.grid();
    let per_frame = h * w;
    let mut coords = Vec::with_capacity(frames * per_frame);
    for n in 0..frames {
        for i in 0..h {
            for j in 0..w {
                coords.push([n, i, j]);
            }
        }
    }
    let ci = 0..per_frame;
    let ti = per_frame..frames * per_frame;
    let tp = ti.end..ti.end + t_prompt.len();
    let cp = tp.end..tp.end + c_prompt.map_or(0, <[usize]>::len);
    let mut text_ids = t_prompt.to_vec();
    text_ids.extend_from_slice(c_prompt.unwrap_or(&[]));
    let layout = TokenLayout {
        spans: [ci, ti, tp, cp],
        coords,
        text_ids,
        frames,
        grid: (h, w),
    };
    layout.validate()?;
    Ok(layout)
}
