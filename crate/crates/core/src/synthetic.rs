//! Seeded synthetic scenes for the mock services: solid rectangles of
//! palette colors on a plain background, with exact ground truth.

use std::collections::HashSet;
use std::path::Path;

use image::{Rgb, RgbImage};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::evaluation::{Dataset, DatasetFormat, DatasetImage, GtBox};
use crate::geometry::BBox;
use crate::mock::{Confusion, MockFixtures, Palette, PaletteEntry};

pub const BACKGROUND: [u8; 3] = [16, 16, 16];

/// Class vocabulary; a subset of the COCO categories.
pub const VOCABULARY: [&str; 24] = [
    "bottle", "cup", "bowl", "chair", "couch", "clock", "vase", "book", "laptop", "keyboard", "remote", "banana",
    "apple", "orange", "broccoli", "carrot", "scissors", "toothbrush", "umbrella", "backpack", "handbag", "suitcase",
    "teddy bear", "potted plant",
];

const ADJECTIVES: [&str; 8] = ["small", "large", "shiny", "matte", "striped", "dotted", "worn", "new"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusOptions {
    pub seed: u64,
    pub images: usize,
    pub classes: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    pub width: u32,
    pub height: u32,
    /// Share of classes whose detector prompt prefers another class's box.
    pub confusion_rate: f64,
    /// Share of classes the mock validator answers `invalid` for.
    pub validator_miss_rate: f64,
}

impl Default for CorpusOptions {
    fn default() -> Self {
        Self {
            seed: 7,
            images: 12,
            classes: 12,
            min_objects: 2,
            max_objects: 6,
            width: 320,
            height: 240,
            confusion_rate: 0.0,
            validator_miss_rate: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    /// Palette entry index, which is also the class index.
    pub entry: usize,
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub width: u32,
    pub height: u32,
    pub objects: Vec<SceneObject>,
}

impl Scene {
    pub fn render(&self, palette: &Palette) -> RgbImage {
        let mut img = RgbImage::from_pixel(self.width, self.height, Rgb(BACKGROUND));
        for o in &self.objects {
            fill(&mut img, &o.bbox, palette.entries[o.entry].color);
        }
        img
    }
}

fn fill(img: &mut RgbImage, b: &BBox, color: [u8; 3]) {
    for y in b.y_min as u32..(b.y_max as u32).min(img.height()) {
        for x in b.x_min as u32..(b.x_max as u32).min(img.width()) {
            img.put_pixel(x, y, Rgb(color));
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticCorpus {
    pub palette: Palette,
    pub scenes: Vec<Scene>,
}

/// Distinct, non-background colors.
fn colors(rng: &mut ChaCha8Rng, n: usize) -> Vec<[u8; 3]> {
    let mut seen = HashSet::from([BACKGROUND]);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let c = [rng.random_range(40..=255u8), rng.random_range(40..=255u8), rng.random_range(40..=255u8)];
        if seen.insert(c) {
            out.push(c);
        }
    }
    out
}

/// One palette entry per class, named after the class.
pub fn class_palette(rng: &mut ChaCha8Rng, classes: usize) -> Palette {
    assert!(classes <= VOCABULARY.len(), "at most {} classes", VOCABULARY.len());
    let cols = colors(rng, classes);
    Palette {
        entries: VOCABULARY[..classes]
            .iter()
            .zip(cols)
            .map(|(name, c)| {
                let adj = ADJECTIVES[rng.random_range(0..ADJECTIVES.len())];
                PaletteEntry::new(c, name, &format!("a {adj} {name}"))
            })
            .collect(),
    }
}

/// Grid cells of at least 64 px; each object sits inside its own cell with
/// a margin, so objects never touch.
fn cells(width: u32, height: u32) -> Vec<BBox> {
    let cols = (width / 64).max(1);
    let rows = (height / 64).max(1);
    let (cw, ch) = (width / cols, height / rows);
    let mut out = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            out.push(BBox::new((c * cw) as f64, (r * ch) as f64, ((c + 1) * cw) as f64, ((r + 1) * ch) as f64));
        }
    }
    out
}

fn rect_in(rng: &mut ChaCha8Rng, cell: &BBox) -> BBox {
    let margin = 4.0;
    let (cw, ch) = (cell.width() - 2.0 * margin, cell.height() - 2.0 * margin);
    let w = rng.random_range((cw * 0.4) as u32..=cw as u32) as f64;
    let h = rng.random_range((ch * 0.4) as u32..=ch as u32) as f64;
    let x = cell.x_min + margin + rng.random_range(0..=(cw - w) as u32) as f64;
    let y = cell.y_min + margin + rng.random_range(0..=(ch - h) as u32) as f64;
    BBox::new(x, y, x + w, y + h)
}

/// Marks `round(rate * k)` of `k` classes (at least one for a positive
/// rate), skipping those already marked in `exclude`.
fn pick(rng: &mut ChaCha8Rng, k: usize, rate: f64, exclude: &[bool]) -> Vec<bool> {
    let n = if rate > 0.0 { ((rate * k as f64).round() as usize).max(1) } else { 0 };
    let mut idx: Vec<usize> = (0..k).filter(|&i| !exclude.get(i).copied().unwrap_or(false)).collect();
    idx.shuffle(rng);
    let mut out = vec![false; k];
    for &i in idx.iter().take(n) {
        out[i] = true;
    }
    out
}

pub fn generate_corpus(opts: &CorpusOptions) -> SyntheticCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut palette = class_palette(&mut rng, opts.classes);
    let k = opts.classes;
    // Confused class i prefers the box of class i+1 (mod k).
    let confused = pick(&mut rng, k, opts.confusion_rate, &[]);
    // Misses land on clean classes so they cost true positives.
    let missed = pick(&mut rng, k, opts.validator_miss_rate, &confused);
    for i in 0..k {
        if confused[i] && k > 1 {
            let with = palette.entries[(i + 1) % k].object_name.clone();
            palette.entries[i].confusions.push(Confusion { with, score: 0.95 });
        }
        if missed[i] {
            palette.entries[i].validator_answer = Some("invalid".into());
        }
    }
    let grid = cells(opts.width, opts.height);
    let max = opts.max_objects.min(grid.len()).min(k);
    let min = opts.min_objects.min(max);
    let mut scenes = Vec::with_capacity(opts.images);
    for _ in 0..opts.images {
        let n = rng.random_range(min..=max);
        let mut order: Vec<usize> = (0..k).collect();
        order.shuffle(&mut rng);
        let mut chosen: Vec<usize> = Vec::new();
        for c in order {
            if chosen.len() >= n {
                break;
            }
            if chosen.contains(&c) {
                continue;
            }
            chosen.push(c);
            // Keep confusion partners together so the confusion fires.
            let partner = (c + 1) % k;
            if confused[c] && chosen.len() < n && !chosen.contains(&partner) {
                chosen.push(partner);
            }
        }
        let mut slots = grid.clone();
        slots.shuffle(&mut rng);
        let objects = chosen
            .into_iter()
            .zip(slots)
            .map(|(entry, cell)| SceneObject {
                entry,
                bbox: rect_in(&mut rng, &cell),
            })
            .collect();
        scenes.push(Scene {
            width: opts.width,
            height: opts.height,
            objects,
        });
    }
    SyntheticCorpus { palette, scenes }
}

impl SyntheticCorpus {
    pub fn classes(&self) -> Vec<String> {
        self.palette.entries.iter().map(|e| e.object_name.clone()).collect()
    }

    pub fn fixtures(&self) -> MockFixtures {
        MockFixtures::with_palette(self.palette.clone())
    }

    /// The corpus as a COCO-style dataset rooted at `root` (images are
    /// `img_NNNN.png`).
    pub fn dataset(&self, root: &Path) -> Dataset {
        Dataset {
            format: DatasetFormat::Coco,
            root: root.to_path_buf(),
            classes: self.classes(),
            images: self
                .scenes
                .iter()
                .enumerate()
                .map(|(i, s)| DatasetImage {
                    id: i as u64 + 1,
                    file: format!("img_{i:04}.png").into(),
                    width: s.width,
                    height: s.height,
                    annotations: s
                        .objects
                        .iter()
                        .map(|o| GtBox {
                            bbox: o.bbox,
                            class: o.entry,
                        })
                        .collect(),
                    candidates: None,
                })
                .collect(),
        }
    }

    /// Writes the images, `annotations.json` (COCO) and the mock fixtures
    /// (under `fixtures/`) to `dir`; returns the dataset.
    pub fn write(&self, dir: &Path) -> std::io::Result<Dataset> {
        std::fs::create_dir_all(dir)?;
        let ds = self.dataset(dir);
        for (scene, im) in self.scenes.iter().zip(&ds.images) {
            scene
                .render(&self.palette)
                .save(dir.join(&im.file))
                .map_err(std::io::Error::other)?;
        }
        let coco = crate::evaluation::dataset::to_coco_json(&ds);
        std::fs::write(dir.join("annotations.json"), serde_json::to_vec_pretty(&coco)?)?;
        self.fixtures().save_dir(&dir.join("fixtures"))?;
        Ok(ds)
    }
}

/// A moving object in a frame sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mover {
    pub entry: usize,
    /// First frame the object is visible in.
    pub enter: usize,
    pub start: BBox,
    /// Pixels per frame along x; objects bounce off the image edges.
    pub velocity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sequence {
    pub palette: Palette,
    pub movers: Vec<Mover>,
    pub width: u32,
    pub height: u32,
    pub frames: usize,
}

impl Sequence {
    /// `movers` objects, one per horizontal lane so they never overlap;
    /// mover `k` enters at `enter[k]` (0 if absent).
    pub fn lanes(seed: u64, movers: usize, enter: &[usize], frames: usize, width: u32, height: u32) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let palette = class_palette(&mut rng, movers);
        let lane = height as f64 / movers as f64;
        let movers = (0..movers)
            .map(|k| {
                let h = (lane - 8.0).max(4.0).min(40.0).floor();
                let w = rng.random_range(20..=40) as f64;
                let x = rng.random_range(0..=(width as f64 - w) as u32) as f64;
                let y = (k as f64 * lane + 4.0).floor();
                let speed = rng.random_range(2..=6) as f64;
                Mover {
                    entry: k,
                    enter: enter.get(k).copied().unwrap_or(0),
                    start: BBox::new(x, y, x + w, y + h),
                    velocity: if rng.random_bool(0.5) { speed } else { -speed },
                }
            })
            .collect();
        Self {
            palette,
            movers,
            width,
            height,
            frames,
        }
    }

    /// Box of mover `k` at `frame`, or `None` before it enters.
    pub fn bbox(&self, k: usize, frame: usize) -> Option<BBox> {
        let m = &self.movers[k];
        if frame < m.enter {
            return None;
        }
        let span = self.width as f64 - m.start.width();
        // Reflect the travelled distance into [0, span].
        let raw = m.start.x_min + m.velocity * (frame - m.enter) as f64;
        let period = 2.0 * span;
        let mut x = raw.rem_euclid(period);
        if x > span {
            x = period - x;
        }
        Some(m.start.translate(x - m.start.x_min, 0.0))
    }

    pub fn render(&self, frame: usize) -> RgbImage {
        let mut img = RgbImage::from_pixel(self.width, self.height, Rgb(BACKGROUND));
        for (k, m) in self.movers.iter().enumerate() {
            if let Some(b) = self.bbox(k, frame) {
                fill(&mut img, &b, self.palette.entries[m.entry].color);
            }
        }
        img
    }

    pub fn fixtures(&self) -> MockFixtures {
        MockFixtures::with_palette(self.palette.clone())
    }

    /// Writes `frame_NNNN.png` files and the fixtures directory.
    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        for f in 0..self.frames {
            self.render(f)
                .save(dir.join(format!("frame_{f:04}.png")))
                .map_err(std::io::Error::other)?;
        }
        self.fixtures().save_dir(&dir.join("fixtures"))
    }
}
