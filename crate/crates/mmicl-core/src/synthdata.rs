//! Deterministic synthetic scenes: colored shapes on a black background with
//! per-object masks and templated region captions. Replaces external photo
//! datasets while keeping the class-aware in-context task structure intact:
//! per-class pools drive in-context sampling for both tasks.
//!
//! The [`Dataset`] struct doubles as the loader interface: anything that
//! fills `scenes` (images, per-object masks and boxes, region captions) and
//! a class table plugs into the rest of the pipeline unchanged. Only the
//! synthetic generator is implemented here.

use crate::error::{Error, Result};
use crate::image::{Image, Mask};
use crate::quantizers::boxes::BBox;
use crate::rng::Rng;
use std::fmt::Write as _;
use std::path::Path;

const SHAPES: [&str; 3] = ["square", "circle", "triangle"];
const COLORS: [(&str, [u8; 3]); 4] = [
    ("red", [220, 40, 40]),
    ("green", [40, 200, 60]),
    ("blue", [50, 80, 230]),
    ("yellow", [230, 210, 50]),
];

/// Flat class table: one class per (color, shape) combination.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassTable {
    names: Vec<String>,
}

impl ClassTable {
    pub fn standard() -> Self {
        let mut names = Vec::new();
        for (color, _) in COLORS {
            for shape in SHAPES {
                names.push(format!("{color} {shape}"));
            }
        }
        Self { names }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, class: usize) -> &str {
        &self.names[class]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    fn color_rgb(&self, class: usize) -> [u8; 3] {
        COLORS[class / SHAPES.len()].1
    }

    fn shape(&self, class: usize) -> &'static str {
        SHAPES[class % SHAPES.len()]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneObject {
    pub class_index: usize,
    pub bbox: BBox,
    pub mask: Mask,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaptionRecord {
    pub class_index: usize,
    pub bbox: BBox,
    pub caption: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneRecord {
    pub image: Image,
    pub objects: Vec<SceneObject>,
    pub captions: Vec<CaptionRecord>,
}

/// Places 1-4 shapes of distinct classes; areas range from below (H/8)^2 to
/// above (H/3)^2 so in-context samples cover small and large objects.
pub fn generate_scene(rng: &mut Rng, classes: &ClassTable, height: usize, width: usize) -> SceneRecord {
    let mut image = Image::filled(width, height, [0, 0, 0]);
    let n_objects = rng.range(1, 4);
    let class_picks = rng.sample_indices(classes.len(), n_objects);
    let mut objects: Vec<SceneObject> = Vec::new();

    for class_index in class_picks {
        let mut placed = None;
        for _attempt in 0..24 {
            let mask = render_shape(rng, classes.shape(class_index), height, width);
            let overlaps = objects.iter().any(|o| masks_overlap(&o.mask, &mask));
            if !overlaps {
                placed = Some(mask);
                break;
            }
        }
        let Some(mask) = placed else { continue };
        let (x1, y1, x2, y2) = mask.bbox_normalized().expect("shape is nonempty");
        let bbox = BBox::new(x1, y1, x2, y2).expect("pixel extents are in range");
        let rgb = classes.color_rgb(class_index);
        for y in 0..height {
            for x in 0..width {
                if mask.get(x, y) {
                    image.set(x, y, rgb);
                }
            }
        }
        objects.push(SceneObject {
            class_index,
            bbox,
            mask,
        });
    }

    let captions = objects
        .iter()
        .map(|o| CaptionRecord {
            class_index: o.class_index,
            bbox: o.bbox,
            caption: caption_for(classes.name(o.class_index), &o.bbox),
        })
        .collect();

    SceneRecord {
        image,
        objects,
        captions,
    }
}

fn masks_overlap(a: &Mask, b: &Mask) -> bool {
    a.pixels().iter().zip(b.pixels()).any(|(&x, &y)| x && y)
}

fn render_shape(rng: &mut Rng, shape: &str, height: usize, width: usize) -> Mask {
    let mut mask = Mask::empty(width, height);
    match shape {
        "square" => {
            let side = rng.range(3, 14);
            let x0 = rng.below(width - side + 1);
            let y0 = rng.below(height - side + 1);
            for y in y0..y0 + side {
                for x in x0..x0 + side {
                    mask.set(x, y, true);
                }
            }
        }
        "circle" => {
            let r = rng.range(2, 7);
            let cx = rng.range(r, width - 1 - r);
            let cy = rng.range(r, height - 1 - r);
            for y in 0..height {
                for x in 0..width {
                    let dx = x as f64 - cx as f64;
                    let dy = y as f64 - cy as f64;
                    if dx * dx + dy * dy <= (r as f64 + 0.3) * (r as f64 + 0.3) {
                        mask.set(x, y, true);
                    }
                }
            }
        }
        "triangle" => {
            let base = rng.range(5, 16);
            let h = rng.range(4, 13.min(height - 1));
            let x0 = rng.below(width - base + 1);
            let y0 = rng.below(height - h + 1);
            for row in 0..h {
                // widen linearly from apex to base
                let half = (base as f64 / 2.0) * (row as f64 + 1.0) / h as f64;
                let cx = x0 as f64 + base as f64 / 2.0;
                let lo = (cx - half).ceil() as usize;
                let hi = (cx + half).floor() as usize;
                for x in lo..=hi.min(width - 1) {
                    mask.set(x, y0 + row, true);
                }
            }
        }
        other => unreachable!("unknown shape {other}"),
    }
    mask
}

fn caption_for(class_name: &str, bbox: &BBox) -> String {
    let cx = (bbox.x1 + bbox.x2) / 2.0;
    let cy = (bbox.y1 + bbox.y2) / 2.0;
    let col = if cx < 1.0 / 3.0 {
        0
    } else if cx < 2.0 / 3.0 {
        1
    } else {
        2
    };
    let row = if cy < 1.0 / 3.0 {
        0
    } else if cy < 2.0 / 3.0 {
        1
    } else {
        2
    };
    let location = match (row, col) {
        (0, 0) => "top left",
        (0, 1) => "top",
        (0, 2) => "top right",
        (1, 0) => "left",
        (1, 1) => "center",
        (1, 2) => "right",
        (2, 0) => "bottom left",
        (2, 1) => "bottom",
        (2, 2) => "bottom right",
        _ => unreachable!(),
    };
    format!("a {class_name} in the {location}")
}

/// Geometry and split sizes for one generated dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataConfig {
    pub train_scenes: usize,
    pub val_scenes: usize,
    pub width: usize,
    pub height: usize,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train_scenes: 2000,
            val_scenes: 200,
            width: 32,
            height: 32,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
}

/// Per-class references into the scene list, one pool per split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassPool {
    /// entries[class] = (scene_id, object_index) pairs
    entries: Vec<Vec<(usize, usize)>>,
}

impl ClassPool {
    pub fn build(scenes: &[SceneRecord], scene_ids: impl Iterator<Item = usize>, num_classes: usize) -> Self {
        let mut entries = vec![Vec::new(); num_classes];
        for sid in scene_ids {
            for (oi, obj) in scenes[sid].objects.iter().enumerate() {
                entries[obj.class_index].push((sid, oi));
            }
        }
        Self { entries }
    }

    pub fn class_entries(&self, class: usize) -> &[(usize, usize)] {
        &self.entries[class]
    }

    pub fn total(&self) -> usize {
        self.entries.iter().map(|e| e.len()).sum()
    }

    pub fn classes_with_at_least(&self, n: usize) -> Vec<usize> {
        (0..self.entries.len())
            .filter(|&c| self.entries[c].len() >= n)
            .collect()
    }

    /// k distinct same-class references, uniform without replacement, never
    /// from the excluded scene.
    pub fn sample_in_context(
        &self,
        class: usize,
        k: usize,
        rng: &mut Rng,
        exclude_scene: Option<usize>,
        class_name: &str,
    ) -> Result<Vec<(usize, usize)>> {
        let candidates: Vec<(usize, usize)> = self.entries[class]
            .iter()
            .filter(|(sid, _)| Some(*sid) != exclude_scene)
            .copied()
            .collect();
        if candidates.len() < k {
            return Err(Error::InsufficientPool {
                class: class_name.to_string(),
                need: k,
                have: candidates.len(),
            });
        }
        let picks = rng.sample_indices(candidates.len(), k);
        Ok(picks.into_iter().map(|i| candidates[i]).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub config: DataConfig,
    pub classes: ClassTable,
    pub scenes: Vec<SceneRecord>,
}

impl Dataset {
    /// Scene i is a pure function of (seed, i), so any prefix or split can be
    /// regenerated bit-identically from the manifest alone.
    pub fn generate(config: DataConfig) -> Self {
        let classes = ClassTable::standard();
        let base = Rng::new(config.seed);
        let total = config.train_scenes + config.val_scenes;
        let scenes = (0..total)
            .map(|i| {
                let mut rng = base.derive(i as u64);
                generate_scene(&mut rng, &classes, config.height, config.width)
            })
            .collect();
        Self {
            config,
            classes,
            scenes,
        }
    }

    pub fn split_ids(&self, split: Split) -> std::ops::Range<usize> {
        match split {
            Split::Train => 0..self.config.train_scenes,
            Split::Val => self.config.train_scenes..self.config.train_scenes + self.config.val_scenes,
        }
    }

    pub fn pools(&self, split: Split) -> ClassPool {
        ClassPool::build(&self.scenes, self.split_ids(split), self.classes.len())
    }

    /// Every caption string plus every class name; the BPE corpus.
    pub fn caption_corpus(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .scenes
            .iter()
            .flat_map(|s| s.captions.iter().map(|c| c.caption.clone()))
            .collect();
        out.extend(self.classes.names().iter().cloned());
        out.sort();
        out.dedup();
        out
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir.join("scenes"))?;
        let mut manifest = String::new();
        let _ = writeln!(manifest, "train {}", self.config.train_scenes);
        let _ = writeln!(manifest, "val {}", self.config.val_scenes);
        let _ = writeln!(manifest, "width {}", self.config.width);
        let _ = writeln!(manifest, "height {}", self.config.height);
        let _ = writeln!(manifest, "seed {}", self.config.seed);
        let _ = writeln!(manifest, "classes {}", self.classes.len());
        for name in self.classes.names() {
            let _ = writeln!(manifest, "{name}");
        }
        std::fs::write(dir.join("manifest.txt"), manifest)?;
        for (i, scene) in self.scenes.iter().enumerate() {
            std::fs::write(
                dir.join("scenes").join(format!("scene_{i:05}.txt")),
                scene_to_text(scene),
            )?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = std::fs::read_to_string(dir.join("manifest.txt"))?;
        let config = parse_manifest(&manifest)?;
        let classes = ClassTable::standard();
        let total = config.train_scenes + config.val_scenes;
        let mut scenes = Vec::with_capacity(total);
        for i in 0..total {
            let text = std::fs::read_to_string(dir.join("scenes").join(format!("scene_{i:05}.txt")))?;
            scenes.push(scene_from_text(&text, config.width, config.height)?);
        }
        Ok(Self {
            config,
            classes,
            scenes,
        })
    }
}

fn parse_manifest(text: &str) -> Result<DataConfig> {
    let mut cfg = DataConfig::default();
    let mut lines = text.lines();
    for key in ["train", "val", "width", "height", "seed"] {
        let line = lines
            .next()
            .ok_or_else(|| Error::Data(format!("manifest missing '{key}'")))?;
        let (k, v) = line
            .split_once(' ')
            .ok_or_else(|| Error::Data(format!("bad manifest line '{line}'")))?;
        if k != key {
            return Err(Error::Data(format!("expected '{key}', got '{k}'")));
        }
        let n: u64 = v
            .parse()
            .map_err(|e| Error::Data(format!("bad value for '{key}': {e}")))?;
        match key {
            "train" => cfg.train_scenes = n as usize,
            "val" => cfg.val_scenes = n as usize,
            "width" => cfg.width = n as usize,
            "height" => cfg.height = n as usize,
            "seed" => cfg.seed = n,
            _ => unreachable!(),
        }
    }
    Ok(cfg)
}

fn scene_to_text(scene: &SceneRecord) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "objects {}", scene.objects.len());
    out.push_str("image\n");
    let w = scene.image.width();
    for y in 0..scene.image.height() {
        for x in 0..w {
            let [r, g, b] = scene.image.get(x, y);
            let _ = write!(out, "{r:02x}{g:02x}{b:02x}");
        }
        out.push('\n');
    }
    for (obj, cap) in scene.objects.iter().zip(&scene.captions) {
        let _ = writeln!(
            out,
            "object {} {:?} {:?} {:?} {:?}",
            obj.class_index, obj.bbox.x1, obj.bbox.y1, obj.bbox.x2, obj.bbox.y2
        );
        for y in 0..obj.mask.height() {
            for x in 0..obj.mask.width() {
                out.push(if obj.mask.get(x, y) { '1' } else { '0' });
            }
            out.push('\n');
        }
        let _ = writeln!(out, "caption {}", cap.caption);
    }
    out
}

fn scene_from_text(text: &str, width: usize, height: usize) -> Result<SceneRecord> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Data("empty scene file".into()))?;
    let n_objects: usize = header
        .strip_prefix("objects ")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Data(format!("bad scene header '{header}'")))?;
    let img_tag = lines.next();
    if img_tag != Some("image") {
        return Err(Error::Data("expected 'image' line".into()));
    }
    let mut data = Vec::with_capacity(width * height * 3);
    for _ in 0..height {
        let row = lines.next().ok_or_else(|| Error::Data("truncated image".into()))?;
        if row.len() != width * 6 {
            return Err(Error::Data(format!("bad image row length {}", row.len())));
        }
        for i in 0..width * 3 {
            let byte = u8::from_str_radix(&row[i * 2..i * 2 + 2], 16)
                .map_err(|e| Error::Data(format!("bad hex: {e}")))?;
            data.push(byte);
        }
    }
    let image = Image::from_raw(width, height, data);
    let mut objects = Vec::with_capacity(n_objects);
    let mut captions = Vec::with_capacity(n_objects);
    for _ in 0..n_objects {
        let line = lines.next().ok_or_else(|| Error::Data("truncated objects".into()))?;
        let rest = line
            .strip_prefix("object ")
            .ok_or_else(|| Error::Data(format!("expected object line, got '{line}'")))?;
        let fields: Vec<&str> = rest.split(' ').collect();
        if fields.len() != 5 {
            return Err(Error::Data(format!("bad object line '{line}'")));
        }
        let class_index: usize = fields[0].parse().map_err(|e| Error::Data(format!("{e}")))?;
        let coords: Vec<f64> = fields[1..]
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Data(format!("{e}")))?;
        let bbox = BBox::new(coords[0], coords[1], coords[2], coords[3])?;
        let mut mask = Mask::empty(width, height);
        for y in 0..height {
            let row = lines.next().ok_or_else(|| Error::Data("truncated mask".into()))?;
            for (x, ch) in row.chars().enumerate() {
                mask.set(x, y, ch == '1');
            }
        }
        let cap_line = lines.next().ok_or_else(|| Error::Data("missing caption".into()))?;
        let caption = cap_line
            .strip_prefix("caption ")
            .ok_or_else(|| Error::Data(format!("expected caption line, got '{cap_line}'")))?;
        objects.push(SceneObject {
            class_index,
            bbox,
            mask,
        });
        captions.push(CaptionRecord {
            class_index,
            bbox,
            caption: caption.to_string(),
        });
    }
    Ok(SceneRecord {
        image,
        objects,
        captions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_seed_reproduces_scene() {
        let classes = ClassTable::standard();
        let mut a = Rng::new(5);
        let mut b = Rng::new(5);
        let s1 = generate_scene(&mut a, &classes, 32, 32);
        let s2 = generate_scene(&mut b, &classes, 32, 32);
        assert_eq!(s1, s2);
    }

    #[test]
    fn at_least_twelve_classes() {
        assert!(ClassTable::standard().len() >= 12);
    }

    #[test]
    fn masks_inside_bboxes() {
        let classes = ClassTable::standard();
        let mut rng = Rng::new(9);
        for _ in 0..50 {
            let scene = generate_scene(&mut rng, &classes, 32, 32);
            assert!(!scene.objects.is_empty());
            for obj in &scene.objects {
                assert!(obj.mask.count() > 0);
                for y in 0..32 {
                    for x in 0..32 {
                        if obj.mask.get(x, y) {
                            let fx = (x as f64 + 0.5) / 32.0;
                            let fy = (y as f64 + 0.5) / 32.0;
                            assert!(fx > obj.bbox.x1 && fx < obj.bbox.x2);
                            assert!(fy > obj.bbox.y1 && fy < obj.bbox.y2);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn captions_mention_class_names() {
        let classes = ClassTable::standard();
        let mut rng = Rng::new(2);
        for _ in 0..30 {
            let scene = generate_scene(&mut rng, &classes, 32, 32);
            for cap in &scene.captions {
                assert!(cap.caption.contains(classes.name(cap.class_index)));
            }
        }
    }

    #[test]
    fn object_areas_span_small_and_large() {
        let classes = ClassTable::standard();
        let mut rng = Rng::new(3);
        let small_limit = (32.0 / 8.0) * (32.0 / 8.0);
        let large_limit = (32.0 / 3.0) * (32.0 / 3.0);
        let (mut saw_small, mut saw_large) = (false, false);
        for _ in 0..300 {
            let scene = generate_scene(&mut rng, &classes, 32, 32);
            for obj in &scene.objects {
                let area = obj.mask.count() as f64;
                saw_small |= area < small_limit;
                saw_large |= area > large_limit;
            }
        }
        assert!(saw_small && saw_large);
    }

    #[test]
    fn class_histogram_near_uniform() {
        let classes = ClassTable::standard();
        let base = Rng::new(31);
        let mut counts = vec![0usize; classes.len()];
        let n_scenes = 10_000;
        for i in 0..n_scenes {
            let mut rng = base.derive(i);
            let scene = generate_scene(&mut rng, &classes, 32, 32);
            for obj in &scene.objects {
                counts[obj.class_index] += 1;
            }
        }
        let total: usize = counts.iter().sum();
        let uniform = total as f64 / classes.len() as f64;
        for (c, &n) in counts.iter().enumerate() {
            let ratio = n as f64 / uniform;
            assert!(
                (0.5..=2.0).contains(&ratio),
                "class {c} frequency ratio {ratio}"
            );
        }
    }

    #[test]
    fn splits_are_disjoint() {
        let ds = Dataset::generate(DataConfig {
            train_scenes: 20,
            val_scenes: 5,
            ..DataConfig::default()
        });
        let train: Vec<usize> = ds.split_ids(Split::Train).collect();
        let val: Vec<usize> = ds.split_ids(Split::Val).collect();
        for v in &val {
            assert!(!train.contains(v));
        }
        assert_eq!(train.len() + val.len(), ds.scenes.len());
    }

    #[test]
    fn pool_references_resolve() {
        let ds = Dataset::generate(DataConfig {
            train_scenes: 30,
            val_scenes: 5,
            ..DataConfig::default()
        });
        let pool = ds.pools(Split::Train);
        for class in 0..ds.classes.len() {
            for &(sid, oi) in pool.class_entries(class) {
                assert!(sid < 30);
                assert_eq!(ds.scenes[sid].objects[oi].class_index, class);
            }
        }
    }

    #[test]
    fn sample_in_context_basics() {
        let ds = Dataset::generate(DataConfig {
            train_scenes: 100,
            val_scenes: 0,
            ..DataConfig::default()
        });
        let pool = ds.pools(Split::Train);
        let mut rng = Rng::new(1);
        let class = pool.classes_with_at_least(4)[0];
        // k = 0
        let none = pool
            .sample_in_context(class, 0, &mut rng, None, ds.classes.name(class))
            .unwrap();
        assert!(none.is_empty());
        // exclusion respected and entries distinct
        let exclude = pool.class_entries(class)[0].0;
        for _ in 0..50 {
            let picks = pool
                .sample_in_context(class, 3, &mut rng, Some(exclude), ds.classes.name(class))
                .unwrap();
            assert_eq!(picks.len(), 3);
            let mut dedup = picks.clone();
            dedup.sort_unstable();
            dedup.dedup();
            assert_eq!(dedup.len(), 3);
            assert!(picks.iter().all(|(sid, _)| *sid != exclude));
        }
    }

    #[test]
    fn pool_of_exactly_k_returns_all() {
        // build a tiny pool by hand
        let ds = Dataset::generate(DataConfig {
            train_scenes: 50,
            val_scenes: 0,
            ..DataConfig::default()
        });
        let pool = ds.pools(Split::Train);
        let mut rng = Rng::new(2);
        let class = pool.classes_with_at_least(1)[0];
        let k = pool.class_entries(class).len();
        let picks = pool
            .sample_in_context(class, k, &mut rng, None, ds.classes.name(class))
            .unwrap();
        let mut got = picks.clone();
        got.sort_unstable();
        let mut want = pool.class_entries(class).to_vec();
        want.sort_unstable();
        assert_eq!(got, want);
        // one more than available errors
        assert!(pool
            .sample_in_context(class, k + 1, &mut rng, None, ds.classes.name(class))
            .is_err());
    }

    #[test]
    fn uniform_draw_frequencies() {
        let ds = Dataset::generate(DataConfig {
            train_scenes: 200,
            val_scenes: 0,
            ..DataConfig::default()
        });
        let pool = ds.pools(Split::Train);
        let class = pool
            .classes_with_at_least(5)
            .into_iter()
            .find(|&c| pool.class_entries(c).len() >= 5)
            .unwrap();
        // restrict to the first five entries by excluding nothing and drawing
        // from a synthetic 5-entry pool
        let mut five = ClassPool {
            entries: vec![Vec::new(); ds.classes.len()],
        };
        five.entries[class] = pool.class_entries(class)[..5].to_vec();
        let mut rng = Rng::new(77);
        let mut counts = std::collections::BTreeMap::new();
        let draws = 10_000;
        for _ in 0..draws {
            let pick = five
                .sample_in_context(class, 1, &mut rng, None, "x")
                .unwrap()[0];
            *counts.entry(pick).or_insert(0usize) += 1;
        }
        for (_, n) in counts {
            let freq = n as f64 / draws as f64;
            assert!((freq - 0.2).abs() <= 0.02, "frequency {freq}");
        }
    }

    #[test]
    fn save_load_regenerate_bit_identical() {
        let cfg = DataConfig {
            train_scenes: 8,
            val_scenes: 2,
            width: 16,
            height: 16,
            seed: 42,
        };
        let ds = Dataset::generate(cfg.clone());
        let dir = std::env::temp_dir().join("mmicl_synthdata_test");
        let _ = std::fs::remove_dir_all(&dir);
        ds.save(&dir).unwrap();
        let loaded = Dataset::load(&dir).unwrap();
        assert_eq!(loaded, ds);
        // regenerate from the manifest's config and compare file bytes
        let regen = Dataset::generate(loaded.config.clone());
        let dir2 = std::env::temp_dir().join("mmicl_synthdata_test2");
        let _ = std::fs::remove_dir_all(&dir2);
        regen.save(&dir2).unwrap();
        for i in 0..10 {
            let name = format!("scene_{i:05}.txt");
            let a = std::fs::read(dir.join("scenes").join(&name)).unwrap();
            let b = std::fs::read(dir2.join("scenes").join(&name)).unwrap();
            assert_eq!(a, b, "scene {i} differs");
        }
        let _ = std::fs::remove_dir_all(&dir);
        let _ = std::fs::remove_dir_all(&dir2);
    }
}
