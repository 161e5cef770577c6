//! Prompt assembly and output parsing for the two class-aware in-context
//! tasks.
//!
//! Segmentation pair layout:   `[BOI] image [BOI] mask [EOC]`
//! Captioning pair layout:     `[BOI] image [BOT] <c_st> name <c_ed>
//!                              <b_st> b b b b <b_ed> caption [EOC] [PAD]*`
//!
//! The query pair of an inference prefix stops where generation begins: after
//! its second `[BOI]` (segmentation) or after its category span (captioning).
//! Supervision covers target tokens only: mask tokens, and the record span
//! from the category through `[EOC]` (minus the prompt-provided query
//! category). `[BOI]`, `[BOT]`, image tokens and `[PAD]` are never
//! supervised.

use crate::error::{Error, Result};
use crate::image::Mask;
use crate::quantizers::boxes::{dequantize_bbox, quantize_bbox, BBox};
use crate::quantizers::bpe::BpeTokenizer;
use crate::quantizers::codebook::{dequantize_image, Codebook};
use crate::quantizers::{decode_category, encode_category};
use crate::vocab::{TokenId, Vocabulary};

/// One in-context example for segmentation: an image and its class mask,
/// both as image-segment tokens of equal length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegSample {
    pub image_tokens: Vec<TokenId>,
    pub mask_tokens: Vec<TokenId>,
}

/// One in-context example for captioning: an image plus its region record.
#[derive(Debug, Clone, PartialEq)]
pub struct CapSample {
    pub image_tokens: Vec<TokenId>,
    pub category: usize,
    pub bbox: BBox,
    pub caption: String,
}

/// An assembled interleaved sequence with its supervision mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSequence {
    pub ids: Vec<TokenId>,
    pub loss_mask: Vec<bool>,
    /// (start, end) of each pair, end exclusive; the query pair is last.
    pub pair_spans: Vec<(usize, usize)>,
}

impl PromptSequence {
    fn new() -> Self {
        Self {
            ids: Vec::new(),
            loss_mask: Vec::new(),
            pair_spans: Vec::new(),
        }
    }

    fn push(&mut self, id: TokenId, supervised: bool) {
        self.ids.push(id);
        self.loss_mask.push(supervised);
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn supervised_count(&self) -> usize {
        self.loss_mask.iter().filter(|&&b| b).count()
    }
}

/// Parsed captioning output.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedCaption {
    pub class_index: usize,
    pub bbox: BBox,
    pub caption: String,
    /// Set when the record ended without `[EOC]`; the caption holds the
    /// tokens seen so far.
    pub truncated: bool,
}

/// Shared context for assembling and parsing prompts: the vocabulary, the
/// text tokenizer, class names and the per-run shape constants.
pub struct PromptCodec<'a> {
    pub vocab: &'a Vocabulary,
    pub tokenizer: &'a BpeTokenizer,
    pub class_names: &'a [String],
    /// Tokens per image (and per mask).
    pub tokens_per_image: usize,
    /// Maximum caption length in BPE tokens; shorter captions are padded.
    pub caption_budget: usize,
    pub max_positions: usize,
}

impl<'a> PromptCodec<'a> {
    pub fn new(
        vocab: &'a Vocabulary,
        tokenizer: &'a BpeTokenizer,
        class_names: &'a [String],
        tokens_per_image: usize,
        caption_budget: usize,
        max_positions: usize,
    ) -> Self {
        Self {
            vocab,
            tokenizer,
            class_names,
            tokens_per_image,
            caption_budget,
            max_positions,
        }
    }

    /// Longest category span (`<c_st>` name `<c_ed>`) over the class table.
    pub fn category_span_max(&self) -> usize {
        self.class_names
            .iter()
            .map(|n| self.tokenizer.encode(n).map(|v| v.len() + 2).unwrap_or(2))
            .max()
            .unwrap_or(2)
    }

    /// Fixed record length for captioning pairs: longest category span +
    /// bbox frame + caption budget + `[EOC]`, padded with `[PAD]`.
    pub fn record_len(&self) -> usize {
        self.category_span_max() + 6 + self.caption_budget + 1
    }

    /// Full captioning pair length.
    pub fn cap_pair_len(&self) -> usize {
        2 + self.tokens_per_image + self.record_len()
    }

    /// Full segmentation pair length.
    pub fn seg_pair_len(&self) -> usize {
        2 * self.tokens_per_image + 3
    }

    /// Generation budget for a segmentation query: the mask plus `[EOC]`.
    pub fn seg_generation_budget(&self) -> usize {
        self.tokens_per_image + 1
    }

    /// Generation budget for a captioning query: bbox + caption + `[EOC]`.
    pub fn cap_generation_budget(&self) -> usize {
        6 + self.caption_budget + 1
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len > self.max_positions {
            return Err(Error::Prompt(format!(
                "sequence length {len} exceeds max positions {}",
                self.max_positions
            )));
        }
        Ok(())
    }

    fn check_image_tokens(&self, tokens: &[TokenId], what: &str) -> Result<()> {
        if tokens.len() != self.tokens_per_image {
            return Err(Error::Prompt(format!(
                "{what} has {} tokens, expected {}",
                tokens.len(),
                self.tokens_per_image
            )));
        }
        for &t in tokens {
            if !self.vocab.is_image(t) {
                return Err(Error::Prompt(format!(
                    "{what} contains non-image token {t}"
                )));
            }
        }
        Ok(())
    }

    /// Assembles a segmentation sequence. With `query_target` present the
    /// query pair is completed for teacher forcing; otherwise the sequence
    /// is an inference prefix ending after the query's second `[BOI]`.
    pub fn assemble_segmentation(
        &self,
        samples: &[SegSample],
        query_image: &[TokenId],
        query_target: Option<&[TokenId]>,
    ) -> Result<PromptSequence> {
        let ids = self.vocab.special_ids()?;
        self.check_image_tokens(query_image, "query image")?;
        for (i, s) in samples.iter().enumerate() {
            self.check_image_tokens(&s.image_tokens, &format!("sample {i} image"))?;
            self.check_image_tokens(&s.mask_tokens, &format!("sample {i} mask"))?;
        }
        if let Some(target) = query_target {
            self.check_image_tokens(target, "query target")?;
        }
        let k = samples.len();
        let len = match query_target {
            Some(_) => (k + 1) * self.seg_pair_len(),
            None => (k + 1) * self.seg_pair_len() - 1 - self.tokens_per_image,
        };
        self.check_len(len)?;

        let mut seq = PromptSequence::new();
        for s in samples {
            let start = seq.len();
            seq.push(ids.boi, false);
            for &t in &s.image_tokens {
                seq.push(t, false);
            }
            seq.push(ids.boi, false);
            for &t in &s.mask_tokens {
                seq.push(t, true);
            }
            seq.push(ids.eoc, false);
            seq.pair_spans.push((start, seq.len()));
        }
        let start = seq.len();
        seq.push(ids.boi, false);
        for &t in query_image {
            seq.push(t, false);
        }
        seq.push(ids.boi, false);
        if let Some(target) = query_target {
            for &t in target {
                seq.push(t, true);
            }
            seq.push(ids.eoc, false);
        }
        seq.pair_spans.push((start, seq.len()));
        debug_assert_eq!(seq.len(), len);
        Ok(seq)
    }

    /// Record tokens for one captioning pair, starting at `[BOT]`. The
    /// supervised range begins at the category span (context pairs) or at
    /// the bbox frame (query pair, whose category is prompt-provided).
    fn push_record(
        &self,
        seq: &mut PromptSequence,
        category: usize,
        bbox: &BBox,
        caption: &str,
        supervise_category: bool,
    ) -> Result<()> {
        let ids = self.vocab.special_ids()?;
        let cat_span = encode_category(category, self.vocab, self.tokenizer, self.class_names)?;
        let box_span = quantize_bbox(bbox, self.vocab)?;
        let cap_tokens = self.tokenizer.encode(caption)?;
        if cap_tokens.len() > self.caption_budget {
            return Err(Error::Prompt(format!(
                "caption '{caption}' needs {} tokens, budget is {}",
                cap_tokens.len(),
                self.caption_budget
            )));
        }
        let record_start = seq.len();
        seq.push(ids.bot, false);
        for &t in &cat_span {
            seq.push(t, supervise_category);
        }
        for &t in &box_span {
            seq.push(t, true);
        }
        for &local in &cap_tokens {
            seq.push(self.vocab.text_id(local), true);
        }
        seq.push(ids.eoc, true);
        let used = seq.len() - record_start - 1; // excluding [BOT]
        for _ in used..self.record_len() {
            seq.push(ids.pad, false);
        }
        Ok(())
    }

    /// Assembles a captioning sequence. With `query_target` present the
    /// query record is completed for teacher forcing; otherwise the
    /// sequence ends after the query's category span.
    pub fn assemble_captioning(
        &self,
        samples: &[CapSample],
        query_image: &[TokenId],
        query_category: usize,
        query_target: Option<(&BBox, &str)>,
    ) -> Result<PromptSequence> {
        let ids = self.vocab.special_ids()?;
        self.check_image_tokens(query_image, "query image")?;
        for (i, s) in samples.iter().enumerate() {
            self.check_image_tokens(&s.image_tokens, &format!("sample {i} image"))?;
            if s.caption.is_empty() {
                return Err(Error::Prompt(format!("sample {i} caption is empty")));
            }
        }
        let mut seq = PromptSequence::new();
        for s in samples {
            let start = seq.len();
            seq.push(ids.boi, false);
            for &t in &s.image_tokens {
                seq.push(t, false);
            }
            self.push_record(&mut seq, s.category, &s.bbox, &s.caption, true)?;
            seq.pair_spans.push((start, seq.len()));
        }
        let start = seq.len();
        seq.push(ids.boi, false);
        for &t in query_image {
            seq.push(t, false);
        }
        match query_target {
            Some((bbox, caption)) => {
                // teacher-forced query: full record, category unsupervised
                self.push_record(&mut seq, query_category, bbox, caption, false)?;
            }
            None => {
                seq.push(ids.bot, false);
                let cat_span =
                    encode_category(query_category, self.vocab, self.tokenizer, self.class_names)?;
                for &t in &cat_span {
                    seq.push(t, false);
                }
            }
        }
        seq.pair_spans.push((start, seq.len()));
        self.check_len(seq.len())?;
        Ok(seq)
    }

    /// Extracts the generated mask: the first `tokens_per_image`
    /// image-segment tokens after the final `[BOI]`, dequantized and
    /// thresholded at mid-gray.
    pub fn parse_segmentation(
        &self,
        output: &[TokenId],
        codebook: &Codebook,
        height: usize,
        width: usize,
    ) -> Result<Mask> {
        let ids = self.vocab.special_ids()?;
        let last_boi = output
            .iter()
            .rposition(|&t| t == ids.boi)
            .ok_or_else(|| Error::Prompt("output contains no [BOI]".into()))?;
        let need = (height / codebook.patch_size()) * (width / codebook.patch_size());
        let mut mask_tokens = Vec::with_capacity(need);
        for &t in &output[last_boi + 1..] {
            if t == ids.eoc {
                break;
            }
            if self.vocab.is_image(t) {
                mask_tokens.push(t);
                if mask_tokens.len() == need {
                    break;
                }
            }
        }
        if mask_tokens.len() < need {
            return Err(Error::IncompleteOutput {
                got: mask_tokens.len(),
                need,
            });
        }
        let img = dequantize_image(&mask_tokens, codebook, self.vocab, height, width)?;
        Ok(Mask::from_image_midgray(&img))
    }

    /// Parses a captioning record span (starting at `[BOT]` or directly at
    /// the category span) into (class, bbox, caption).
    pub fn parse_captioning(&self, record: &[TokenId]) -> Result<ParsedCaption> {
        let ids = self.vocab.special_ids()?;
        let mut pos = 0;
        if record.first() == Some(&ids.bot) {
            pos = 1;
        }
        let cat_end = record[pos..]
            .iter()
            .position(|&t| t == ids.c_ed)
            .map(|i| pos + i + 1)
            .ok_or(Error::Parse {
                position: pos,
                message: "missing <c_ed> after category".into(),
            })?;
        let class_index =
            decode_category(&record[pos..cat_end], self.vocab, self.tokenizer, self.class_names)?;
        pos = cat_end;
        if record.len() < pos + 6 {
            return Err(Error::Parse {
                position: record.len(),
                message: "record truncated inside bbox frame".into(),
            });
        }
        let bbox = dequantize_bbox(&record[pos..pos + 6], self.vocab).map_err(|e| match e {
            Error::Parse { position, message } => Error::Parse {
                position: pos + position,
                message,
            },
            other => other,
        })?;
        pos += 6;
        let mut caption_locals = Vec::new();
        let mut truncated = true;
        for (i, &t) in record[pos..].iter().enumerate() {
            if t == ids.eoc {
                truncated = false;
                break;
            }
            if t == ids.pad {
                continue;
            }
            if !self.vocab.is_text(t) {
                return Err(Error::Parse {
                    position: pos + i,
                    message: format!("unexpected token {t} inside caption"),
                });
            }
            caption_locals.push(t);
        }
        let raw = self.tokenizer.decode(&caption_locals)?;
        let caption = raw.split_whitespace().collect::<Vec<_>>().join(" ");
        Ok(ParsedCaption {
            class_index,
            bbox,
            caption,
            truncated,
        })
    }

    /// Renders a sequence as annotated text: one line per token with the
    /// segment kind, local value and loss-mask bit.
    pub fn describe(&self, seq: &PromptSequence) -> String {
        let mut out = String::new();
        for (i, (&id, &sup)) in seq.ids.iter().zip(&seq.loss_mask).enumerate() {
            let (kind, local) = match self.vocab.resolve(id) {
                Ok(x) => x,
                Err(_) => {
                    out.push_str(&format!("{i:5}  {id:6}  <out-of-range>\n"));
                    continue;
                }
            };
            let value = match kind {
                crate::vocab::SegmentKind::Text => self
                    .tokenizer
                    .token_str(local)
                    .map(|s| format!("{s:?}"))
                    .unwrap_or_else(|| "?".into()),
                crate::vocab::SegmentKind::Image => format!("code_{local}"),
                crate::vocab::SegmentKind::Bin => format!("bin_{local}"),
                crate::vocab::SegmentKind::Special => {
                    self.vocab.special_tags()[local].clone()
                }
            };
            out.push_str(&format!(
                "{i:5}  {id:6}  {:7}  {value:14}  loss={}\n",
                kind.name(),
                if sup { 1 } else { 0 }
            ));
        }
        out
    }
}
