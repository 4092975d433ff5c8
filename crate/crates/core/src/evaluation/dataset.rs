//! Benchmark datasets: COCO annotation files and the per-image description
//! format.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::geometry::BBox;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DatasetFormat {
    #[default]
    Coco,
    Custom,
}

impl std::str::FromStr for DatasetFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "coco" => Ok(Self::Coco),
            "custom" => Ok(Self::Custom),
            other => Err(format!("unknown dataset format {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtBox {
    pub bbox: BBox,
    /// Index into [`Dataset::classes`].
    pub class: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetImage {
    pub id: u64,
    pub file: PathBuf,
    pub width: u32,
    pub height: u32,
    pub annotations: Vec<GtBox>,
    /// Classes detections on this image may match. `None` means every class.
    pub candidates: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub format: DatasetFormat,
    /// Directory image paths are relative to.
    pub root: PathBuf,
    /// COCO category names, or one entry per described annotation.
    pub classes: Vec<String>,
    pub images: Vec<DatasetImage>,
}

impl Dataset {
    pub fn image_path(&self, image: &DatasetImage) -> PathBuf {
        self.root.join(&image.file)
    }

    pub fn annotation_count(&self) -> usize {
        self.images.iter().map(|i| i.annotations.len()).sum()
    }
}

#[derive(Deserialize)]
struct CocoFile {
    images: Vec<CocoImage>,
    categories: Vec<CocoCategory>,
    #[serde(default)]
    annotations: Vec<CocoAnnotation>,
}

#[derive(Deserialize)]
struct CocoImage {
    id: u64,
    file_name: String,
    width: u32,
    height: u32,
}

#[derive(Deserialize)]
struct CocoCategory {
    id: u64,
    name: String,
}

#[derive(Deserialize)]
struct CocoAnnotation {
    #[serde(default)]
    id: Option<u64>,
    image_id: u64,
    category_id: u64,
    bbox: [f64; 4],
    #[serde(default)]
    iscrowd: u8,
}

#[derive(Deserialize)]
struct CustomFile {
    images: Vec<CustomImage>,
}

#[derive(Deserialize)]
struct CustomImage {
    file: String,
    width: u32,
    height: u32,
    annotations: Vec<CustomAnnotation>,
}

#[derive(Deserialize)]
struct CustomAnnotation {
    bbox: [f64; 4],
    description: String,
}

fn violation(path: &Path, context: impl Into<String>, message: impl Into<String>) -> EvalError {
    EvalError::SchemaViolation {
        file: path.display().to_string(),
        context: context.into(),
        message: message.into(),
    }
}

fn parse_json<T: for<'de> Deserialize<'de>>(path: &Path, text: &str) -> Result<T, EvalError> {
    serde_json::from_str(text).map_err(|e| violation(path, format!("line {} column {}", e.line(), e.column()), e.to_string()))
}

fn check_box(path: &Path, context: String, b: BBox, width: u32, height: u32) -> Result<BBox, EvalError> {
    if b.to_array().iter().any(|v| !v.is_finite()) {
        return Err(violation(path, context, "non-finite coordinate"));
    }
    if b.x_max < b.x_min || b.y_max < b.y_min {
        return Err(violation(path, context, format!("box {b} has max below min")));
    }
    let clamped = b.clamp_to(width, height);
    if clamped != b {
        tracing::debug!(%context, "annotation clamped to image bounds");
    }
    Ok(clamped)
}

pub fn load_dataset(path: &Path, format: DatasetFormat) -> Result<Dataset, EvalError> {
    let text = std::fs::read_to_string(path).map_err(|e| EvalError::Io(path.display().to_string(), e))?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    match format {
        DatasetFormat::Coco => load_coco(path, &text, root),
        DatasetFormat::Custom => load_custom(path, &text, root),
    }
}

fn load_coco(path: &Path, text: &str, root: PathBuf) -> Result<Dataset, EvalError> {
    let file: CocoFile = parse_json(path, text)?;
    let mut class_of: HashMap<u64, usize> = HashMap::new();
    let mut classes = Vec::with_capacity(file.categories.len());
    for (k, c) in file.categories.iter().enumerate() {
        if class_of.insert(c.id, classes.len()).is_some() {
            return Err(violation(path, format!("categories[{k}]"), format!("duplicate category id {}", c.id)));
        }
        classes.push(c.name.clone());
    }
    let mut image_of: HashMap<u64, usize> = HashMap::new();
    let mut images = Vec::with_capacity(file.images.len());
    for (k, im) in file.images.iter().enumerate() {
        if image_of.insert(im.id, images.len()).is_some() {
            return Err(violation(path, format!("images[{k}]"), format!("duplicate image id {}", im.id)));
        }
        images.push(DatasetImage {
            id: im.id,
            file: PathBuf::from(&im.file_name),
            width: im.width,
            height: im.height,
            annotations: Vec::new(),
            candidates: None,
        });
    }
    for (k, a) in file.annotations.iter().enumerate() {
        let context = match a.id {
            Some(id) => format!("annotations[{k}] (id {id})"),
            None => format!("annotations[{k}]"),
        };
        let &i = image_of
            .get(&a.image_id)
            .ok_or_else(|| violation(path, context.clone(), format!("unknown image_id {}", a.image_id)))?;
        let &class = class_of
            .get(&a.category_id)
            .ok_or_else(|| violation(path, context.clone(), format!("unknown category_id {}", a.category_id)))?;
        let [x, y, w, h] = a.bbox;
        let b = check_box(path, context, BBox::new(x, y, x + w, y + h), images[i].width, images[i].height)?;
        if a.iscrowd != 0 || !b.is_valid() {
            continue;
        }
        images[i].annotations.push(GtBox { bbox: b, class });
    }
    Ok(Dataset {
        format: DatasetFormat::Coco,
        root,
        classes,
        images,
    })
}

fn load_custom(path: &Path, text: &str, root: PathBuf) -> Result<Dataset, EvalError> {
    let file: CustomFile = parse_json(path, text)?;
    let mut classes = Vec::new();
    let mut images = Vec::with_capacity(file.images.len());
    for (i, im) in file.images.into_iter().enumerate() {
        let mut annotations = Vec::with_capacity(im.annotations.len());
        let mut candidates = Vec::with_capacity(im.annotations.len());
        for (k, a) in im.annotations.into_iter().enumerate() {
            let context = format!("images[{i}].annotations[{k}]");
            if a.description.trim().is_empty() {
                return Err(violation(path, context, "empty description"));
            }
            let b = check_box(path, context, BBox::from(a.bbox), im.width, im.height)?;
            let class = classes.len();
            classes.push(a.description.trim().to_string());
            candidates.push(class);
            if b.is_valid() {
                annotations.push(GtBox { bbox: b, class });
            }
        }
        images.push(DatasetImage {
            id: i as u64,
            file: PathBuf::from(im.file),
            width: im.width,
            height: im.height,
            annotations,
            candidates: Some(candidates),
        });
    }
    Ok(Dataset {
        format: DatasetFormat::Custom,
        root,
        classes,
        images,
    })
}

/// Writes `dataset` as a COCO file (boxes converted back to xywh).
pub fn to_coco_json(dataset: &Dataset) -> serde_json::Value {
    let mut annotations = Vec::new();
    for im in &dataset.images {
        for a in &im.annotations {
            annotations.push(serde_json::json!({
                "id": annotations.len() + 1,
                "image_id": im.id,
                "category_id": a.class + 1,
                "bbox": [a.bbox.x_min, a.bbox.y_min, a.bbox.width(), a.bbox.height()],
                "area": a.bbox.area(),
                "iscrowd": 0,
            }));
        }
    }
    serde_json::json!({
        "images": dataset.images.iter().map(|im| serde_json::json!({
            "id": im.id,
            "file_name": im.file.to_string_lossy(),
            "width": im.width,
            "height": im.height,
        })).collect::<Vec<_>>(),
        "categories": dataset.classes.iter().enumerate().map(|(k, n)| serde_json::json!({"id": k + 1, "name": n})).collect::<Vec<_>>(),
        "annotations": annotations,
    })
}
