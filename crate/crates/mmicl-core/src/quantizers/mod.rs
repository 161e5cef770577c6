//! Modality-specific quantizers: images through a patch codebook, text
//! through BPE, bounding boxes through coordinate bins, and category labels
//! through tagged text spans. Together they map every input onto the unified
//! vocabulary.

pub mod boxes;
pub mod bpe;
pub mod codebook;

pub use boxes::{dequantize_bbox, quantize_bbox, BBox};
pub use bpe::{train_bpe, BpeTokenizer};
pub use codebook::{dequantize_image, quantize_image, train_codebook, Codebook};

use crate::error::{Error, Result};
use crate::vocab::{TokenId, Vocabulary};

/// Encodes a category label as `<c_st>` + BPE tokens of its name + `<c_ed>`.
/// Labels ride in language form rather than as opaque class tokens.
pub fn encode_category(
    class_index: usize,
    vocab: &Vocabulary,
    tokenizer: &BpeTokenizer,
    names: &[String],
) -> Result<Vec<TokenId>> {
    let name = names
        .get(class_index)
        .ok_or_else(|| Error::Quantize(format!("unknown class index {class_index}")))?;
    let ids = vocab.special_ids()?;
    let mut out = vec![ids.c_st];
    for local in tokenizer.encode(name)? {
        out.push(vocab.text_id(local));
    }
    out.push(ids.c_ed);
    Ok(out)
}

/// Parses a `<c_st>`..`<c_ed>` span back to a class index. On an unknown
/// name the error lists the known candidates.
pub fn decode_category(
    span: &[TokenId],
    vocab: &Vocabulary,
    tokenizer: &BpeTokenizer,
    names: &[String],
) -> Result<usize> {
    let ids = vocab.special_ids()?;
    if span.first() != Some(&ids.c_st) {
        return Err(Error::Parse {
            position: 0,
            message: "expected <c_st>".into(),
        });
    }
    let end = span
        .iter()
        .position(|&t| t == ids.c_ed)
        .ok_or(Error::Parse {
            position: span.len(),
            message: "missing <c_ed>".into(),
        })?;
    let mut locals = Vec::with_capacity(end - 1);
    for (i, &t) in span[1..end].iter().enumerate() {
        if !vocab.is_text(t) {
            return Err(Error::Parse {
                position: 1 + i,
                message: format!("non-text token {t} inside category span"),
            });
        }
        locals.push(t);
    }
    let name = tokenizer.decode(&locals)?;
    names.iter().position(|n| n == &name).ok_or_else(|| {
        Error::Prompt(format!(
            "unknown category '{}', candidates: {}",
            name,
            names.join(", ")
        ))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup() -> (Vocabulary, BpeTokenizer, Vec<String>) {
        let names: Vec<String> = ["cat", "dog", "red square"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let corpus: Vec<String> = names.clone();
        let tok = train_bpe(&corpus, 4).unwrap();
        let vocab = Vocabulary::standard(tok.vocab_size(), 8).unwrap();
        (vocab, tok, names)
    }

    #[test]
    fn category_span_structure() {
        let (vocab, tok, names) = setup();
        let span = encode_category(0, &vocab, &tok, &names).unwrap();
        let ids = vocab.special_ids().unwrap();
        assert_eq!(span[0], ids.c_st);
        assert_eq!(*span.last().unwrap(), ids.c_ed);
        let inner: Vec<usize> = span[1..span.len() - 1].to_vec();
        assert_eq!(tok.decode(&inner).unwrap(), "cat");
    }

    #[test]
    fn category_round_trip_and_injectivity() {
        let (vocab, tok, names) = setup();
        let mut spans = Vec::new();
        for c in 0..names.len() {
            let span = encode_category(c, &vocab, &tok, &names).unwrap();
            assert_eq!(decode_category(&span, &vocab, &tok, &names).unwrap(), c);
            spans.push(span);
        }
        for i in 0..spans.len() {
            for j in i + 1..spans.len() {
                assert_ne!(spans[i], spans[j]);
            }
        }
    }

    #[test]
    fn unknown_class_rejected() {
        let (vocab, tok, names) = setup();
        assert!(encode_category(99, &vocab, &tok, &names).is_err());
    }
}
