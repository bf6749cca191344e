//! Synthetic shapes-and-queries scenes, the query interpreter used to check
//! unambiguity, and dataset files (`images/*.ppm`, `masks/*.pgm`,
//! `manifest.jsonl`).

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract, ensure, DmnError, Result};
use crate::mask::Mask;
use crate::pnm::{self, RgbImage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Circle,
    Square,
    Triangle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Color {
    Red,
    Green,
    Blue,
    Yellow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
    Top,
    Bottom,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 3] = [ShapeKind::Circle, ShapeKind::Square, ShapeKind::Triangle];

    pub fn word(self) -> &'static str {
        match self {
            ShapeKind::Circle => "circle",
            ShapeKind::Square => "square",
            ShapeKind::Triangle => "triangle",
        }
    }
}

impl Color {
    pub const ALL: [Color; 4] = [Color::Red, Color::Green, Color::Blue, Color::Yellow];

    pub fn word(self) -> &'static str {
        match self {
            Color::Red => "red",
            Color::Green => "green",
            Color::Blue => "blue",
            Color::Yellow => "yellow",
        }
    }

    pub fn rgb(self) -> [u8; 3] {
        match self {
            Color::Red => [230, 40, 40],
            Color::Green => [40, 200, 60],
            Color::Blue => [50, 80, 230],
            Color::Yellow => [235, 220, 40],
        }
    }
}

impl Side {
    pub const ALL: [Side; 4] = [Side::Left, Side::Right, Side::Top, Side::Bottom];

    pub fn word(self) -> &'static str {
        match self {
            Side::Left => "left",
            Side::Right => "right",
            Side::Top => "top",
            Side::Bottom => "bottom",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub shape: ShapeKind,
    pub color: Color,
    /// Centre in pixel coordinates (pixel `(y, x)` has centre `(y + 0.5, x + 0.5)`).
    pub cx: f64,
    pub cy: f64,
    /// Half extent of the bounding box.
    pub radius: f64,
}

impl SceneObject {
    /// Whether the pixel centre at `(y, x)` lies inside the object.
    pub fn covers(&self, y: usize, x: usize) -> bool {
        let dx = x as f64 + 0.5 - self.cx;
        let dy = y as f64 + 0.5 - self.cy;
        let r = self.radius;
        match self.shape {
            ShapeKind::Circle => dx * dx + dy * dy <= r * r,
            ShapeKind::Square => dx.abs() <= 0.85 * r && dy.abs() <= 0.85 * r,
            ShapeKind::Triangle => {
                // Apex up, base along the bottom of the box.
                let t = (dy + r) / (2.0 * r);
                (0.0..=1.0).contains(&t) && dx.abs() <= r * t
            }
        }
    }

    fn separated(&self, other: &SceneObject, gap: f64) -> bool {
        let dx = (self.cx - other.cx).abs() - self.radius - other.radius;
        let dy = (self.cy - other.cy).abs() - self.radius - other.radius;
        dx >= gap || dy >= gap
    }

    /// Signed distance of the centre past the image midline towards `side`.
    fn depth(&self, side: Side, height: usize, width: usize) -> f64 {
        let (mx, my) = (width as f64 / 2.0, height as f64 / 2.0);
        match side {
            Side::Left => mx - self.cx,
            Side::Right => self.cx - mx,
            Side::Top => my - self.cy,
            Side::Bottom => self.cy - my,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub color: Option<Color>,
    pub shape: ShapeKind,
    pub side: Option<Side>,
}

impl fmt::Display for Query {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(c) = self.color {
            write!(f, "{} ", c.word())?;
        }
        f.write_str(self.shape.word())?;
        if let Some(s) = self.side {
            write!(f, " on the {}", s.word())?;
        }
        Ok(())
    }
}

impl Query {
    /// Parses the generator's grammar back into a query.
    pub fn parse(text: &str) -> Option<Query> {
        let words = crate::language::normalize(text);
        let mut it = words.iter().map(String::as_str).peekable();
        let color = Color::ALL.into_iter().find(|c| it.peek() == Some(&c.word()));
        if color.is_some() {
            it.next();
        }
        let shape_word = it.next()?;
        let shape = ShapeKind::ALL.into_iter().find(|s| s.word() == shape_word)?;
        let side = match (it.next(), it.next(), it.next()) {
            (None, None, None) => None,
            (Some("on"), Some("the"), Some(w)) => Some(Side::ALL.into_iter().find(|s| s.word() == w)?),
            _ => return None,
        };
        if it.next().is_some() || (color.is_none() && side.is_none()) {
            return None;
        }
        Some(Query { color, shape, side })
    }
}

/// Every object in a `spec`-sized scene satisfying `query`. "On the left"
/// means the centre lies in the left half of the image, more than
/// `spec.side_margin` pixels past the midline; likewise for the other sides.
/// A query is unambiguous iff exactly one index comes back.
pub fn resolve(query: &Query, objects: &[SceneObject], spec: &SceneSpec) -> Vec<usize> {
    (0..objects.len())
        .filter(|&i| {
            let o = &objects[i];
            o.shape == query.shape
                && query.color.is_none_or(|c| c == o.color)
                && query
                    .side
                    .is_none_or(|s| o.depth(s, spec.height, spec.width) > spec.side_margin)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    pub min_radius: f64,
    pub max_radius: f64,
    /// Minimum gap between bounding boxes, in pixels.
    pub separation: f64,
    /// How far past the midline a centre must be to count as on a side.
    pub side_margin: f64,
}

impl SceneSpec {
    /// 2–4 objects sized relative to the canvas.
    pub fn for_size(height: usize, width: usize) -> Self {
        let s = height.min(width) as f64;
        SceneSpec {
            height,
            width,
            min_objects: 2,
            max_objects: 4,
            min_radius: s / 5.5,
            max_radius: s / 4.0,
            separation: 1.0,
            side_margin: 2.0,
        }
    }

    fn validate(&self) -> Result<()> {
        ensure!(
            self.min_objects >= 1 && self.min_objects <= self.max_objects,
            "object count range {}..={} is empty",
            self.min_objects,
            self.max_objects
        );
        ensure!(
            self.min_radius >= 1.0 && self.min_radius <= self.max_radius,
            "radius range {}..{} is invalid",
            self.min_radius,
            self.max_radius
        );
        ensure!(
            2.0 * self.min_radius <= self.height.min(self.width) as f64,
            "objects of radius {} do not fit a {}x{} canvas",
            self.min_radius,
            self.height,
            self.width
        );
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub image: RgbImage,
    pub query: String,
    pub mask: Mask,
    /// Scene metadata; empty for examples loaded from disk.
    pub objects: Vec<SceneObject>,
}

pub fn render(objects: &[SceneObject], height: usize, width: usize) -> RgbImage {
    let mut img = RgbImage::new(height, width);
    for o in objects {
        for y in 0..height {
            for x in 0..width {
                if o.covers(y, x) {
                    img.put(y, x, o.color.rgb());
                }
            }
        }
    }
    img
}

pub fn object_mask(o: &SceneObject, height: usize, width: usize) -> Mask {
    let mut m = Mask::empty(height, width);
    for y in 0..height {
        for x in 0..width {
            if o.covers(y, x) {
                m.set(y, x, true);
            }
        }
    }
    m
}

const SCENE_RETRIES: usize = 200;
const PLACEMENT_RETRIES: usize = 200;

fn place(spec: &SceneSpec, placed: &[SceneObject], shape: ShapeKind, color: Color, rng: &mut ChaCha8Rng) -> Option<SceneObject> {
    for _ in 0..PLACEMENT_RETRIES {
        let radius = rng.gen_range(spec.min_radius..=spec.max_radius);
        let (w, h) = (spec.width as f64, spec.height as f64);
        if 2.0 * radius > w || 2.0 * radius > h {
            continue;
        }
        let o = SceneObject {
            shape,
            color,
            cx: rng.gen_range(radius..=w - radius),
            cy: rng.gen_range(radius..=h - radius),
            radius,
        };
        if placed.iter().all(|p| p.separated(&o, spec.separation)) {
            return Some(o);
        }
    }
    None
}

fn try_scene(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Option<(Vec<SceneObject>, Query)> {
    let n = rng.gen_range(spec.min_objects..=spec.max_objects);
    let target_shape = *ShapeKind::ALL.choose(rng).unwrap();
    let target_color = *Color::ALL.choose(rng).unwrap();
    let mut objects = vec![place(spec, &[], target_shape, target_color, rng)?];
    while objects.len() < n {
        // Distractors share the referent's colour or shape.
        let (shape, color) = if rng.gen_bool(0.5) {
            (target_shape, *Color::ALL.choose(rng).unwrap())
        } else {
            (*ShapeKind::ALL.choose(rng).unwrap(), target_color)
        };
        objects.push(place(spec, &objects, shape, color, rng)?);
    }
    let mut forms = Vec::new();
    for side in Side::ALL {
        forms.push(Query {
            color: None,
            shape: target_shape,
            side: Some(side),
        });
        forms.push(Query {
            color: Some(target_color),
            shape: target_shape,
            side: Some(side),
        });
    }
    forms.push(Query {
        color: Some(target_color),
        shape: target_shape,
        side: None,
    });
    let valid: Vec<Query> = forms
        .into_iter()
        .filter(|q| resolve(q, &objects, spec) == [0])
        .collect();
    // Pick a grammar form first, then one of its valid instances.
    let mut kinds: Vec<(bool, bool)> = valid.iter().map(|q| (q.color.is_some(), q.side.is_some())).collect();
    kinds.sort_unstable();
    kinds.dedup();
    let kind = *kinds.choose(rng)?;
    let of_kind: Vec<&Query> = valid
        .iter()
        .filter(|q| (q.color.is_some(), q.side.is_some()) == kind)
        .collect();
    let query = **of_kind.choose(rng)?;
    // The referent is not always the first object drawn.
    let k = rng.gen_range(0..objects.len());
    objects.swap(0, k);
    Some((objects, query))
}

/// Deterministic scene for `seed`: image, unambiguous query and exact mask.
pub fn generate_example(seed: u64, spec: &SceneSpec) -> Result<Example> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..SCENE_RETRIES {
        if let Some((objects, query)) = try_scene(spec, &mut rng) {
            let hits = resolve(&query, &objects, spec);
            debug_assert_eq!(hits.len(), 1);
            let target = &objects[hits[0]];
            return Ok(Example {
                image: render(&objects, spec.height, spec.width),
                query: query.to_string(),
                mask: object_mask(target, spec.height, spec.width),
                objects,
            });
        }
    }
    Err(contract!(
        "could not build an unambiguous scene for {}x{} after {SCENE_RETRIES} attempts",
        spec.height,
        spec.width
    ))
}

/// `count` examples with per-example seeds drawn from `master_seed`.
pub fn generate_dataset(master_seed: u64, count: usize, spec: &SceneSpec) -> Result<Vec<Example>> {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    let seeds: Vec<u64> = (0..count).map(|_| rng.gen()).collect();
    seeds.into_iter().map(|s| generate_example(s, spec)).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    pub image: String,
    pub query: String,
    pub mask: String,
}

pub const MANIFEST: &str = "manifest.jsonl";

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| DmnError::io(path, e))
}

pub fn write_dataset(examples: &[Example], dir: &Path) -> Result<()> {
    create_dir(&dir.join("images"))?;
    create_dir(&dir.join("masks"))?;
    let manifest_path = dir.join(MANIFEST);
    let mut manifest = Vec::new();
    for (i, ex) in examples.iter().enumerate() {
        let rec = Record {
            image: format!("images/{i:05}.ppm"),
            query: ex.query.clone(),
            mask: format!("masks/{i:05}.pgm"),
        };
        pnm::write_ppm(&dir.join(&rec.image), &ex.image)?;
        pnm::write_mask(&dir.join(&rec.mask), &ex.mask)?;
        serde_json::to_writer(&mut manifest, &rec).expect("records serialize");
        manifest.push(b'\n');
    }
    let mut f = fs::File::create(&manifest_path).map_err(|e| DmnError::io(&manifest_path, e))?;
    f.write_all(&manifest).map_err(|e| DmnError::io(&manifest_path, e))
}

fn resolve_path(dir: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        dir.join(p)
    }
}

/// Reads the manifest records without touching the referenced files.
pub fn read_manifest(dir: &Path) -> Result<Vec<Record>> {
    let path = dir.join(MANIFEST);
    let f = fs::File::open(&path).map_err(|e| DmnError::io(&path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| DmnError::io(&path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line)
            .map_err(|e| DmnError::format(&path, format!("line {}: {e}", n + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn load_dataset(dir: &Path) -> Result<Vec<Example>> {
    read_manifest(dir)?
        .into_iter()
        .map(|rec| {
            let image_path = resolve_path(dir, &rec.image);
            let mask_path = resolve_path(dir, &rec.mask);
            let image = pnm::read_ppm(&image_path)?;
            let mask = pnm::read_mask(&mask_path)?;
            if (mask.height(), mask.width()) != (image.height, image.width) {
                return Err(DmnError::format(
                    &mask_path,
                    format!(
                        "mask is {}x{} but image {} is {}x{}",
                        mask.height(),
                        mask.width(),
                        image_path.display(),
                        image.height,
                        image.width
                    ),
                ));
            }
            Ok(Example {
                image,
                query: rec.query,
                mask,
                objects: Vec::new(),
            })
        })
        .collect()
}
