//! The unified discrete token space shared by all modalities.
//!
//! Ids are partitioned into four contiguous segments in fixed order:
//! text (BPE subwords), image (codebook indices), bin (coordinate bins
//! `<bin_0>`..`<bin_1000>`), and special tags. The layout is deterministic,
//! so checkpoints and datasets built against the same counts are portable.

use crate::error::{Error, Result};

pub type TokenId = usize;

/// Number of coordinate bin tokens in every real vocabulary.
pub const BIN_COUNT: usize = 1001;

pub const TAG_BOI: &str = "[BOI]";
pub const TAG_BOT: &str = "[BOT]";
pub const TAG_EOC: &str = "[EOC]";
pub const TAG_C_ST: &str = "<c_st>";
pub const TAG_C_ED: &str = "<c_ed>";
pub const TAG_B_ST: &str = "<b_st>";
pub const TAG_B_ED: &str = "<b_ed>";
pub const TAG_PAD: &str = "[PAD]";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegmentKind {
    Text,
    Image,
    Bin,
    Special,
}

impl SegmentKind {
    pub fn name(self) -> &'static str {
        match self {
            SegmentKind::Text => "text",
            SegmentKind::Image => "image",
            SegmentKind::Bin => "bin",
            SegmentKind::Special => "special",
        }
    }

    /// Index used when segment kind feeds the router one-hot.
    pub fn index(self) -> usize {
        match self {
            SegmentKind::Text => 0,
            SegmentKind::Image => 1,
            SegmentKind::Bin => 2,
            SegmentKind::Special => 3,
        }
    }
}

pub const SEGMENT_KIND_COUNT: usize = 4;

/// Resolved ids of the eight canonical tags.
#[derive(Debug, Clone, Copy)]
pub struct SpecialIds {
    pub boi: TokenId,
    pub bot: TokenId,
    pub eoc: TokenId,
    pub c_st: TokenId,
    pub c_ed: TokenId,
    pub b_st: TokenId,
    pub b_ed: TokenId,
    pub pad: TokenId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    text_size: usize,
    image_code_count: usize,
    bin_count: usize,
    special_tags: Vec<String>,
}

impl Vocabulary {
    /// Builds a vocabulary with segments in fixed order text, image, bin,
    /// special. All counts must be at least one and tag names unique.
    pub fn build(
        text_size: usize,
        image_code_count: usize,
        bin_count: usize,
        special_tags: &[&str],
    ) -> Result<Self> {
        if text_size == 0 || image_code_count == 0 || bin_count == 0 {
            return Err(Error::Vocab(format!(
                "all segment sizes must be >= 1 (got text={text_size}, image={image_code_count}, bin={bin_count})"
            )));
        }
        if special_tags.is_empty() {
            return Err(Error::Vocab("at least one special tag required".into()));
        }
        for (i, tag) in special_tags.iter().enumerate() {
            if special_tags[..i].contains(tag) {
                return Err(Error::Vocab(format!("duplicate special tag '{tag}'")));
            }
        }
        Ok(Self {
            text_size,
            image_code_count,
            bin_count,
            special_tags: special_tags.iter().map(|s| s.to_string()).collect(),
        })
    }

    /// Builds the canonical vocabulary: 1001 bins and the eight standard tags.
    pub fn standard(text_size: usize, image_code_count: usize) -> Result<Self> {
        Self::build(
            text_size,
            image_code_count,
            BIN_COUNT,
            &[
                TAG_BOI, TAG_BOT, TAG_EOC, TAG_C_ST, TAG_C_ED, TAG_B_ST, TAG_B_ED, TAG_PAD,
            ],
        )
    }

    pub fn text_size(&self) -> usize {
        self.text_size
    }

    pub fn image_code_count(&self) -> usize {
        self.image_code_count
    }

    pub fn bin_count(&self) -> usize {
        self.bin_count
    }

    pub fn special_tags(&self) -> &[String] {
        &self.special_tags
    }

    pub fn total_size(&self) -> usize {
        self.text_size + self.image_code_count + self.bin_count + self.special_tags.len()
    }

    pub fn segment_offset(&self, kind: SegmentKind) -> usize {
        match kind {
            SegmentKind::Text => 0,
            SegmentKind::Image => self.text_size,
            SegmentKind::Bin => self.text_size + self.image_code_count,
            SegmentKind::Special => self.text_size + self.image_code_count + self.bin_count,
        }
    }

    pub fn segment_size(&self, kind: SegmentKind) -> usize {
        match kind {
            SegmentKind::Text => self.text_size,
            SegmentKind::Image => self.image_code_count,
            SegmentKind::Bin => self.bin_count,
            SegmentKind::Special => self.special_tags.len(),
        }
    }

    pub fn text_id(&self, local: usize) -> TokenId {
        debug_assert!(local < self.text_size);
        local
    }

    pub fn image_id(&self, code: usize) -> TokenId {
        debug_assert!(code < self.image_code_count);
        self.segment_offset(SegmentKind::Image) + code
    }

    pub fn bin_id(&self, bin: usize) -> TokenId {
        debug_assert!(bin < self.bin_count);
        self.segment_offset(SegmentKind::Bin) + bin
    }

    pub fn tag_id(&self, name: &str) -> Result<TokenId> {
        self.special_tags
            .iter()
            .position(|t| t == name)
            .map(|i| self.segment_offset(SegmentKind::Special) + i)
            .ok_or_else(|| Error::Vocab(format!("unknown special tag '{name}'")))
    }

    pub fn special_ids(&self) -> Result<SpecialIds> {
        Ok(SpecialIds {
            boi: self.tag_id(TAG_BOI)?,
            bot: self.tag_id(TAG_BOT)?,
            eoc: self.tag_id(TAG_EOC)?,
            c_st: self.tag_id(TAG_C_ST)?,
            c_ed: self.tag_id(TAG_C_ED)?,
            b_st: self.tag_id(TAG_B_ST)?,
            b_ed: self.tag_id(TAG_B_ED)?,
            pad: self.tag_id(TAG_PAD)?,
        })
    }

    /// Maps an id back to its (segment, local index) pair.
    pub fn resolve(&self, id: TokenId) -> Result<(SegmentKind, usize)> {
        if id >= self.total_size() {
            return Err(Error::Vocab(format!(
                "token id {id} out of range (vocabulary size {})",
                self.total_size()
            )));
        }
        for kind in [
            SegmentKind::Special,
            SegmentKind::Bin,
            SegmentKind::Image,
            SegmentKind::Text,
        ] {
            let off = self.segment_offset(kind);
            if id >= off {
                return Ok((kind, id - off));
            }
        }
        unreachable!("text segment starts at 0");
    }

    pub fn segment_of(&self, id: TokenId) -> Result<SegmentKind> {
        self.resolve(id).map(|(k, _)| k)
    }

    pub fn is_image(&self, id: TokenId) -> bool {
        let off = self.segment_offset(SegmentKind::Image);
        id >= off && id < off + self.image_code_count
    }

    pub fn is_bin(&self, id: TokenId) -> bool {
        let off = self.segment_offset(SegmentKind::Bin);
        id >= off && id < off + self.bin_count
    }

    pub fn is_text(&self, id: TokenId) -> bool {
        id < self.text_size
    }

    /// Plain-text manifest: one line per segment (name, offset, size), then
    /// one line per special tag. Round-trips byte-exactly.
    pub fn to_manifest(&self) -> String {
        let mut out = String::new();
        for kind in [
            SegmentKind::Text,
            SegmentKind::Image,
            SegmentKind::Bin,
            SegmentKind::Special,
        ] {
            out.push_str(&format!(
                "{} {} {}\n",
                kind.name(),
                self.segment_offset(kind),
                self.segment_size(kind)
            ));
        }
        for tag in &self.special_tags {
            out.push_str(tag);
            out.push('\n');
        }
        out
    }

    pub fn from_manifest(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let mut sizes = [0usize; 4];
        for (i, name) in ["text", "image", "bin", "special"].iter().enumerate() {
            let line = lines
                .next()
                .ok_or_else(|| Error::Vocab(format!("manifest truncated before '{name}' line")))?;
            let mut parts = line.split_whitespace();
            let got_name = parts.next().unwrap_or("");
            if got_name != *name {
                return Err(Error::Vocab(format!(
                    "manifest segment {i}: expected '{name}', got '{got_name}'"
                )));
            }
            let _offset: usize = parts
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Vocab(format!("bad offset on '{name}' line")))?;
            sizes[i] = parts
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Vocab(format!("bad size on '{name}' line")))?;
        }
        let tags: Vec<&str> = lines.collect();
        if tags.len() != sizes[3] {
            return Err(Error::Vocab(format!(
                "manifest lists {} tags, header says {}",
                tags.len(),
                sizes[3]
            )));
        }
        Self::build(sizes[0], sizes[1], sizes[2], &tags)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EIGHT_TAGS: [&str; 8] = [
        TAG_BOI, TAG_BOT, TAG_EOC, TAG_C_ST, TAG_C_ED, TAG_B_ST, TAG_B_ED, TAG_PAD,
    ];

    #[test]
    fn segment_layout_arithmetic() {
        let v = Vocabulary::build(100, 16, 1001, &EIGHT_TAGS).unwrap();
        assert_eq!(v.total_size(), 1125);
        assert_eq!(v.segment_offset(SegmentKind::Image), 100);
    }

    #[test]
    fn zero_text_size_rejected() {
        assert!(Vocabulary::build(0, 16, 1001, &EIGHT_TAGS).is_err());
    }

    #[test]
    fn bin_ids_from_hand_computed_offsets() {
        // offsets recomputed by hand from the fixed segment order:
        // text 0..256, image 256..512, bin starts at 512
        let v = Vocabulary::build(256, 256, 1001, &EIGHT_TAGS).unwrap();
        assert_eq!(v.bin_id(0), 512);
        assert_eq!(v.bin_id(1000), 1512);
    }

    #[test]
    fn duplicate_tag_rejected() {
        let tags = [TAG_BOI, TAG_BOI];
        assert!(Vocabulary::build(10, 10, 1001, &tags).is_err());
    }

    #[test]
    fn resolve_first_and_last() {
        let v = Vocabulary::build(100, 16, 1001, &EIGHT_TAGS).unwrap();
        assert_eq!(v.resolve(0).unwrap(), (SegmentKind::Text, 0));
        assert_eq!(
            v.resolve(v.total_size() - 1).unwrap(),
            (SegmentKind::Special, 7)
        );
        assert!(v.resolve(v.total_size()).is_err());
    }

    #[test]
    fn resolve_is_a_bijection_over_all_ids() {
        let v = Vocabulary::build(37, 16, 1001, &EIGHT_TAGS).unwrap();
        for id in 0..v.total_size() {
            let (kind, local) = v.resolve(id).unwrap();
            let back = match kind {
                SegmentKind::Text => v.text_id(local),
                SegmentKind::Image => v.image_id(local),
                SegmentKind::Bin => v.bin_id(local),
                SegmentKind::Special => v.segment_offset(SegmentKind::Special) + local,
            };
            assert_eq!(back, id);
        }
    }

    #[test]
    fn equal_arguments_build_identical_vocabularies() {
        let a = Vocabulary::build(50, 8, 1001, &EIGHT_TAGS).unwrap();
        let b = Vocabulary::build(50, 8, 1001, &EIGHT_TAGS).unwrap();
        assert_eq!(a, b);
        for id in 0..a.total_size() {
            assert_eq!(a.resolve(id).unwrap(), b.resolve(id).unwrap());
        }
    }

    #[test]
    fn manifest_round_trip_is_byte_exact() {
        let v = Vocabulary::standard(87, 64).unwrap();
        let manifest = v.to_manifest();
        let back = Vocabulary::from_manifest(&manifest).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.to_manifest(), manifest);
    }
}
