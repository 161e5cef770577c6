//! Small RGB image and binary mask containers shared by the quantizer,
//! scene generator and evaluation code.

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    width: usize,
    height: usize,
    /// Interleaved RGB, row-major.
    data: Vec<u8>,
}

impl Image {
    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<u8>) -> Self {
        assert_eq!(data.len(), width * height * 3);
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn raw(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<bool>) -> Self {
        assert_eq!(data.len(), width * height);
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, on: bool) {
        self.data[y * self.width + x] = on;
    }

    pub fn pixels(&self) -> &[bool] {
        &self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// Renders the mask as a black and white RGB image (white = on), which is
    /// how mask targets enter the shared image codebook.
    pub fn to_image(&self) -> Image {
        let mut img = Image::filled(self.width, self.height, [0, 0, 0]);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    img.set(x, y, [255, 255, 255]);
                }
            }
        }
        img
    }

    /// Thresholds an RGB image at mid-gray on the per-pixel channel mean.
    pub fn from_image_midgray(img: &Image) -> Self {
        let mut mask = Mask::empty(img.width(), img.height());
        for y in 0..img.height() {
            for x in 0..img.width() {
                let [r, g, b] = img.get(x, y);
                let mean = (r as u32 + g as u32 + b as u32) as f64 / 3.0;
                mask.set(x, y, mean > 127.5);
            }
        }
        mask
    }

    /// Tight bounding box of the on-pixels in normalized coordinates, using
    /// pixel-edge extents (an on-pixel at x spans [x, x+1)).
    pub fn bbox_normalized(&self) -> Option<(f64, f64, f64, f64)> {
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0usize, 0usize);
        let mut any = false;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    any = true;
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x);
                    y1 = y1.max(y);
                }
            }
        }
        if !any {
            return None;
        }
        Some((
            x0 as f64 / self.width as f64,
            y0 as f64 / self.height as f64,
            (x1 + 1) as f64 / self.width as f64,
            (y1 + 1) as f64 / self.height as f64,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_image_round_trip() {
        let mut m = Mask::empty(8, 8);
        m.set(2, 3, true);
        m.set(7, 0, true);
        let back = Mask::from_image_midgray(&m.to_image());
        assert_eq!(back, m);
    }

    #[test]
    fn bbox_uses_pixel_edges() {
        let mut m = Mask::empty(10, 10);
        m.set(2, 3, true);
        m.set(4, 6, true);
        let (x1, y1, x2, y2) = m.bbox_normalized().unwrap();
        assert_eq!((x1, y1), (0.2, 0.3));
        assert_eq!((x2, y2), (0.5, 0.7));
    }

    #[test]
    fn empty_mask_has_no_bbox() {
        assert!(Mask::empty(4, 4).bbox_normalized().is_none());
    }
}
