//! Bounding boxes as coordinate bin tokens: each normalized coordinate maps
//! to one of `<bin_0>`..`<bin_1000>`, framed by `<b_st>` and `<b_ed>`.

use crate::error::{Error, Result};
use crate::vocab::{TokenId, Vocabulary, BIN_COUNT};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let ok = |v: f64| v.is_finite() && (0.0..=1.0).contains(&v);
        if !(ok(x1) && ok(y1) && ok(x2) && ok(y2)) {
            return Err(Error::Quantize(format!(
                "bbox coordinates outside [0,1]: ({x1}, {y1}, {x2}, {y2})"
            )));
        }
        if x2 < x1 || y2 < y1 {
            return Err(Error::Quantize(format!(
                "bbox corners out of order: ({x1}, {y1}, {x2}, {y2})"
            )));
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    pub fn area(&self) -> f64 {
        (self.x2 - self.x1) * (self.y2 - self.y1)
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let ix = (self.x2.min(other.x2) - self.x1.max(other.x1)).max(0.0);
        let iy = (self.y2.min(other.y2) - self.y1.max(other.y1)).max(0.0);
        let inter = ix * iy;
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            // two degenerate boxes; identical ones count as a perfect match
            return if self == other { 1.0 } else { 0.0 };
        }
        inter / union
    }
}

/// Three-decimal binning: round to nearest with ties to the lower bin.
pub fn bin_index(coord: f64) -> usize {
    let scaled = coord * 1000.0;
    let floor = scaled.floor();
    let idx = if scaled - floor > 0.5 { floor + 1.0 } else { floor };
    (idx as usize).min(1000)
}

/// Emits exactly six tokens: `<b_st>`, four coordinate bins, `<b_ed>`.
pub fn quantize_bbox(b: &BBox, vocab: &Vocabulary) -> Result<Vec<TokenId>> {
    if vocab.bin_count() != BIN_COUNT {
        return Err(Error::Quantize(format!(
            "vocabulary has {} bins, coordinate binning needs {BIN_COUNT}",
            vocab.bin_count()
        )));
    }
    // re-validate: callers may have constructed the box elsewhere
    let b = BBox::new(b.x1, b.y1, b.x2, b.y2)?;
    let ids = vocab.special_ids()?;
    Ok(vec![
        ids.b_st,
        vocab.bin_id(bin_index(b.x1)),
        vocab.bin_id(bin_index(b.y1)),
        vocab.bin_id(bin_index(b.x2)),
        vocab.bin_id(bin_index(b.y2)),
        ids.b_ed,
    ])
}

/// Parses a `<b_st>` b b b b `<b_ed>` frame back to a box.
pub fn dequantize_bbox(tokens: &[TokenId], vocab: &Vocabulary) -> Result<BBox> {
    let ids = vocab.special_ids()?;
    if tokens.first() != Some(&ids.b_st) {
        return Err(Error::Parse {
            position: 0,
            message: "expected <b_st>".into(),
        });
    }
    let mut coords = [0.0f64; 4];
    for (i, c) in coords.iter_mut().enumerate() {
        let tok = *tokens.get(1 + i).ok_or(Error::Parse {
            position: 1 + i,
            message: "bbox frame truncated".into(),
        })?;
        if !vocab.is_bin(tok) {
            return Err(Error::Parse {
                position: 1 + i,
                message: format!("expected bin token, got id {tok}"),
            });
        }
        let (_, bin) = vocab.resolve(tok)?;
        *c = bin as f64 / 1000.0;
    }
    if tokens.get(5) != Some(&ids.b_ed) {
        return Err(Error::Parse {
            position: 5,
            message: "missing <b_ed>".into(),
        });
    }
    BBox::new(coords[0], coords[1], coords[2], coords[3])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn vocab() -> Vocabulary {
        Vocabulary::standard(10, 4).unwrap()
    }

    #[test]
    fn endpoint_bins() {
        let v = vocab();
        let b = BBox::new(0.0, 0.0, 1.0, 1.0).unwrap();
        let toks = quantize_bbox(&b, &v).unwrap();
        let ids = v.special_ids().unwrap();
        assert_eq!(
            toks,
            vec![
                ids.b_st,
                v.bin_id(0),
                v.bin_id(0),
                v.bin_id(1000),
                v.bin_id(1000),
                ids.b_ed
            ]
        );
    }

    #[test]
    fn half_pixel_example() {
        // x = 128 on a 256-wide image -> 0.5 -> bin 500
        assert_eq!(bin_index(128.0 / 256.0), 500);
    }

    #[test]
    fn rounding_examples() {
        assert_eq!(bin_index(0.2501), 250); // round(250.1)
        assert_eq!(bin_index(0.2506), 251);
        assert_eq!(bin_index(0.0005), 0); // tie breaks to the lower bin
    }

    #[test]
    fn out_of_range_rejected() {
        assert!(BBox::new(-0.1, 0.0, 0.5, 0.5).is_err());
        assert!(BBox::new(0.0, 0.0, 1.2, 0.5).is_err());
        assert!(BBox::new(0.6, 0.0, 0.5, 0.5).is_err());
    }

    #[test]
    fn exact_three_decimal_round_trip() {
        let v = vocab();
        let b = BBox::new(0.123, 0.456, 0.789, 0.999).unwrap();
        let back = dequantize_bbox(&quantize_bbox(&b, &v).unwrap(), &v).unwrap();
        assert_eq!(back, b);
    }

    #[test]
    fn missing_end_tag_rejected() {
        let v = vocab();
        let b = BBox::new(0.1, 0.2, 0.3, 0.4).unwrap();
        let mut toks = quantize_bbox(&b, &v).unwrap();
        toks.pop();
        let err = dequantize_bbox(&toks, &v).unwrap_err();
        assert!(matches!(err, crate::Error::Parse { position: 5, .. }));
    }

    #[test]
    fn corners_out_of_order_rejected() {
        let v = vocab();
        let ids = v.special_ids().unwrap();
        let toks = vec![
            ids.b_st,
            v.bin_id(600),
            v.bin_id(100),
            v.bin_id(400), // x2 < x1
            v.bin_id(900),
            ids.b_ed,
        ];
        assert!(dequantize_bbox(&toks, &v).is_err());
    }

    #[test]
    fn random_round_trip_error_bound() {
        let v = vocab();
        let mut rng = Rng::new(17);
        let mut max_err = 0.0f64;
        for _ in 0..1000 {
            let mut c = [rng.uniform(), rng.uniform(), rng.uniform(), rng.uniform()];
            c.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let b = BBox::new(c[0], c[2], c[1], c[3]).unwrap();
            let back = dequantize_bbox(&quantize_bbox(&b, &v).unwrap(), &v).unwrap();
            for (a, z) in [
                (b.x1, back.x1),
                (b.y1, back.y1),
                (b.x2, back.x2),
                (b.y2, back.y2),
            ] {
                max_err = max_err.max((a - z).abs());
            }
        }
        assert!(max_err <= 5e-4, "max round-trip error {max_err}");
    }

    #[test]
    fn iou_basics() {
        let a = BBox::new(0.0, 0.0, 0.5, 1.0).unwrap();
        let b = BBox::new(0.0, 0.0, 1.0, 0.5).unwrap();
        // intersection 0.25, union 0.75
        assert!((a.iou(&b) - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(a.iou(&a), 1.0);
    }
}
