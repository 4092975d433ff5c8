//! Runs the update mechanism on every dataset image and scores the result.

use std::time::{Duration, Instant};

use futures::StreamExt;
use serde::{Deserialize, Serialize};

use super::EvalError;
use super::dataset::{Dataset, DatasetFormat, DatasetImage};
use super::definitions::{DefinitionCache, DefinitionItem, generate_definitions};
use super::matching::{AugmentedClass, ClassEntry, DetectionText, MatchOutcome, MatchReport, match_labels};
use super::metrics::{EvalDetection, GroundTruth, MetricsReport, compute_metrics};
use crate::description::{
    AttributeSchema, DEFAULT_ATTRIBUTE_KEY, DescribeError, DescriptionError, PromptTemplates, StructuredDescription,
    decoupled_attribution, describe,
};
use crate::gateway::{Gateway, tracker_update};
use crate::grounding::{GroundingResult, ground_instances};
use crate::image::Frame;
use crate::text::strip_numbering_suffix;
use crate::validation::{DEFAULT_CROP_PADDING, apply_to_grounding, grounding_targets, validate_targets};

/// Update-mechanism steps in pipeline order.
pub const STEPS: [&str; 5] = ["description", "attribution", "detection", "segmentation", "validation"];

#[derive(Debug, Clone)]
pub struct BenchmarkConfig {
    pub odf: f64,
    pub validate: bool,
    /// Decoupled attribution task; the step is skipped without one.
    pub task: Option<String>,
    pub attribute_key: String,
    pub schema: AttributeSchema,
    pub templates: PromptTemplates,
    /// Extra classes for COCO-format datasets.
    pub augmented: Vec<AugmentedClass>,
    /// Images processed concurrently.
    pub parallelism: usize,
    /// Report precision/recall at the F1-maximizing confidence.
    pub sweep: bool,
    pub crop_padding: f64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            odf: 1.0,
            validate: false,
            task: None,
            attribute_key: DEFAULT_ATTRIBUTE_KEY.to_string(),
            schema: AttributeSchema::default(),
            templates: PromptTemplates::default(),
            augmented: Vec::new(),
            parallelism: 4,
            sweep: true,
            crop_padding: DEFAULT_CROP_PADDING,
        }
    }
}

/// Wall time per step; `None` when the step did not run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StepTimes {
    #[serde(with = "opt_millis")]
    pub description: Option<Duration>,
    #[serde(with = "opt_millis")]
    pub attribution: Option<Duration>,
    #[serde(with = "opt_millis")]
    pub detection: Option<Duration>,
    #[serde(with = "opt_millis")]
    pub segmentation: Option<Duration>,
    #[serde(with = "opt_millis")]
    pub validation: Option<Duration>,
}

impl StepTimes {
    pub fn get(&self, step: &str) -> Option<Duration> {
        match step {
            "description" => self.description,
            "attribution" => self.attribution,
            "detection" => self.detection,
            "segmentation" => self.segmentation,
            "validation" => self.validation,
            _ => None,
        }
    }

    pub fn total(&self) -> Duration {
        STEPS.iter().filter_map(|s| self.get(s)).sum()
    }
}

mod opt_millis {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Option<Duration>, s: S) -> Result<S::Ok, S::Error> {
        match d {
            Some(d) => s.serialize_some(&(d.as_secs_f64() * 1000.0)),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Duration>, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.map(|ms| Duration::from_secs_f64(ms.max(0.0) / 1000.0)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub step: String,
    /// Images on which the step ran.
    pub images: usize,
    pub total_ms: f64,
    pub mean_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image: u64,
    pub file: String,
    pub instances: usize,
    pub grounded: usize,
    /// Detections surviving validation (equal to `grounded` without it).
    pub kept: usize,
    pub times: StepTimes,
    pub matches: MatchReport,
    pub flags: Vec<String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub metrics: MetricsReport,
    pub timing: Vec<TimingRow>,
    pub images: Vec<ImageRecord>,
    pub images_failed: usize,
    /// Set when some images could not be processed; their annotations are
    /// excluded from the metrics.
    pub partial: bool,
    /// Mean described instances per processed image.
    pub mean_instances: f64,
    pub mean_grounded: f64,
    pub discarded: usize,
    /// Names of the dataset classes, indexed like the per-class table.
    pub class_names: Vec<String>,
}

impl BenchmarkReport {
    /// Zeroes wall-clock fields so that repeated runs serialize identically.
    pub fn stabilized(mut self) -> Self {
        for r in &mut self.timing {
            r.total_ms = 0.0;
            r.mean_ms = 0.0;
        }
        for im in &mut self.images {
            for t in [
                &mut im.times.description,
                &mut im.times.attribution,
                &mut im.times.detection,
                &mut im.times.segmentation,
                &mut im.times.validation,
            ] {
                if t.is_some() {
                    *t = Some(Duration::ZERO);
                }
            }
        }
        self
    }
}

struct ImageRun {
    desc: StructuredDescription,
    grounding: Option<GroundingResult>,
    grounded: usize,
    times: StepTimes,
    flags: Vec<String>,
}

async fn timed<T>(slot: &mut Option<Duration>, fut: impl std::future::Future<Output = T>) -> T {
    let start = Instant::now();
    let out = fut.await;
    *slot = Some(start.elapsed());
    out
}

/// Describe, attribute, ground, segment and optionally validate one image.
async fn run_image(frame: &Frame, config: &BenchmarkConfig, gateway: &Gateway) -> Result<ImageRun, String> {
    let mut times = StepTimes::default();
    let mut flags = Vec::new();
    let desc = match timed(&mut times.description, describe(frame, &config.schema, gateway, &config.templates)).await {
        Ok(d) => d,
        Err(DescribeError::Parse(DescriptionError::EmptyDescription { .. })) => {
            flags.push("empty description".into());
            return Ok(ImageRun {
                desc: StructuredDescription::new(Vec::new()),
                grounding: None,
                grounded: 0,
                times,
                flags,
            });
        }
        Err(e) => return Err(e.to_string()),
    };
    let desc = match &config.task {
        Some(task) => {
            let (d, report) = timed(
                &mut times.attribution,
                decoupled_attribution(&desc, frame, task, &config.attribute_key, gateway, &config.templates),
            )
            .await;
            if let Some(f) = report.failure {
                flags.push(format!("attribution failed: {f}"));
            }
            d
        }
        None => desc,
    };
    let grounding = timed(&mut times.detection, ground_instances(&desc, frame, &gateway.detector, config.odf))
        .await
        .map_err(|e| e.to_string())?;
    let grounded = grounding.assignments.len();
    if !grounding.ungrounded.is_empty() {
        flags.push(format!("{} ungrounded instances", grounding.ungrounded.len()));
    }
    let boxes: Vec<_> = grounding.assignments.iter().map(|a| a.detection.bbox).collect();
    if !boxes.is_empty() {
        timed(&mut times.segmentation, tracker_update(&gateway.tracker, frame, 0, &boxes, None))
            .await
            .map_err(|e| e.to_string())?;
    }
    let grounding = if config.validate && grounded > 0 {
        let targets = grounding_targets(&grounding);
        let outcome = timed(
            &mut times.validation,
            validate_targets(&targets, frame, &desc, gateway, &config.templates, config.crop_padding),
        )
        .await
        .map_err(|e| e.to_string())?;
        apply_to_grounding(&grounding, &outcome.result, &desc)
    } else {
        grounding
    };
    Ok(ImageRun {
        desc,
        grounding: Some(grounding),
        grounded,
        times,
        flags,
    })
}

async fn load_and_run(
    dataset: &Dataset,
    image: &DatasetImage,
    config: &BenchmarkConfig,
    gateway: &Gateway,
) -> Result<ImageRun, String> {
    let path = dataset.image_path(image);
    let frame = tokio::task::spawn_blocking(move || Frame::open(&path))
        .await
        .map_err(|e| e.to_string())?
        .map_err(|e| e.to_string())?;
    run_image(&frame, config, gateway).await
}

/// Dataset classes with generated definitions, then augmented entries for
/// COCO-format datasets.
pub async fn build_class_list(
    dataset: &Dataset,
    augmented: &[AugmentedClass],
    gateway: &Gateway,
    templates: &PromptTemplates,
    cache: &DefinitionCache,
) -> Vec<ClassEntry> {
    let aug: &[AugmentedClass] = match dataset.format {
        DatasetFormat::Coco => augmented,
        DatasetFormat::Custom => &[],
    };
    let mut items: Vec<DefinitionItem> = dataset.classes.iter().map(DefinitionItem::class).collect();
    let undefined: Vec<usize> = (0..aug.len()).filter(|&k| aug[k].definition.trim().is_empty()).collect();
    items.extend(undefined.iter().map(|&k| DefinitionItem::class(&aug[k].name)));
    let defs = generate_definitions(&items, gateway, templates, cache).await;
    let mut classes: Vec<ClassEntry> = dataset
        .classes
        .iter()
        .zip(&defs)
        .map(|(n, d)| ClassEntry::native(n, &d.text))
        .collect();
    let mut generated = defs[dataset.classes.len()..].iter();
    for a in aug {
        let definition = if a.definition.trim().is_empty() {
            generated.next().map(|d| d.text.clone()).unwrap_or_else(|| a.name.clone())
        } else {
            a.definition.clone()
        };
        classes.push(ClassEntry::augmented(&a.name, definition, a.rule_target.clone()));
    }
    classes
}

pub async fn run_benchmark(
    dataset: &Dataset,
    config: &BenchmarkConfig,
    gateway: &Gateway,
    cache: &DefinitionCache,
) -> Result<BenchmarkReport, EvalError> {
    let classes = build_class_list(dataset, &config.augmented, gateway, &config.templates, cache).await;
    super::matching::resolve_rules(&classes)?;

    let runs: Vec<Result<ImageRun, String>> = futures::stream::iter(&dataset.images)
        .map(|im| load_and_run(dataset, im, config, gateway))
        .buffered(config.parallelism.max(1))
        .collect()
        .await;

    let mut detections = Vec::new();
    let mut gts = Vec::new();
    let mut records = Vec::with_capacity(runs.len());
    let mut failed = 0usize;
    for (idx, (image, run)) in dataset.images.iter().zip(runs).enumerate() {
        let file = image.file.to_string_lossy().to_string();
        let run = match run {
            Ok(r) => r,
            Err(e) => {
                tracing::warn!(%file, error = %e, "image failed");
                failed += 1;
                records.push(ImageRecord {
                    image: image.id,
                    file,
                    instances: 0,
                    grounded: 0,
                    kept: 0,
                    times: StepTimes::default(),
                    matches: MatchReport::default(),
                    flags: Vec::new(),
                    error: Some(e),
                });
                continue;
            }
        };
        let mut flags = run.flags;
        if image.annotations.is_empty() {
            flags.push("no annotations".into());
        }
        gts.extend(image.annotations.iter().map(|a| GroundTruth {
            image: idx,
            class: a.class,
            bbox: a.bbox,
        }));
        let assignments = run.grounding.as_ref().map(|g| g.assignments.as_slice()).unwrap_or(&[]);
        let items: Vec<DefinitionItem> = assignments
            .iter()
            .map(|a| {
                let inst = &run.desc.instances[a.instance];
                DefinitionItem::detection(strip_numbering_suffix(&inst.object_name), &inst.description)
            })
            .collect();
        let defs = generate_definitions(&items, gateway, &config.templates, cache).await;
        let texts: Vec<DetectionText> = items
            .into_iter()
            .zip(defs)
            .map(|(i, d)| DetectionText {
                name: i.name,
                description: i.description.unwrap_or_default(),
                definition: d.text,
            })
            .collect();
        // Custom datasets only match against the image's own descriptions.
        let (candidates, index_map): (Vec<ClassEntry>, Option<&Vec<usize>>) = match &image.candidates {
            Some(c) => (c.iter().map(|&k| classes[k].clone()).collect(), Some(c)),
            None => (classes.clone(), None),
        };
        let matches = if texts.is_empty() || candidates.is_empty() {
            MatchReport::default()
        } else {
            match_labels(&texts, &candidates, &gateway.embedder).await?
        };
        for (m, a) in matches.entries.iter().zip(assignments) {
            if let MatchOutcome::EvaluatedAs { class, .. } = m.outcome {
                detections.push(EvalDetection {
                    image: idx,
                    class: index_map.map_or(class, |c| c[class]),
                    bbox: a.detection.bbox,
                    confidence: a.detection.confidence,
                });
            }
        }
        records.push(ImageRecord {
            image: image.id,
            file,
            instances: run.desc.len(),
            grounded: run.grounded,
            kept: assignments.len(),
            times: run.times,
            matches,
            flags,
            error: None,
        });
    }
    if failed == dataset.images.len() && failed > 0 {
        return Err(EvalError::AllImagesFailed(failed));
    }

    let processed: Vec<&ImageRecord> = records.iter().filter(|r| r.error.is_none()).collect();
    let n = processed.len().max(1) as f64;
    let timing = STEPS
        .iter()
        .map(|&step| {
            let ran: Vec<Duration> = processed.iter().filter_map(|r| r.times.get(step)).collect();
            let total: f64 = ran.iter().map(|d| d.as_secs_f64() * 1000.0).sum();
            TimingRow {
                step: step.to_string(),
                images: ran.len(),
                total_ms: total,
                mean_ms: if ran.is_empty() { 0.0 } else { total / ran.len() as f64 },
            }
        })
        .collect();
    let mut metrics = compute_metrics(&detections, &gts, config.sweep);
    if failed > 0 {
        metrics.flags.push(format!("{failed} of {} images failed", dataset.images.len()));
    }
    Ok(BenchmarkReport {
        metrics,
        timing,
        images_failed: failed,
        partial: failed > 0,
        mean_instances: processed.iter().map(|r| r.instances).sum::<usize>() as f64 / n,
        mean_grounded: processed.iter().map(|r| r.grounded).sum::<usize>() as f64 / n,
        discarded: processed.iter().map(|r| r.matches.discarded()).sum(),
        images: records,
        class_names: dataset.classes.clone(),
    })
}
