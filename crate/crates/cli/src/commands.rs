use std::io::Write as _;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use groundtrack::config::PipelineConfig;
use groundtrack::description::{
    AttributeSchema, DEFAULT_ATTRIBUTE_KEY, StructuredDescription, decoupled_attribution, describe,
    parse_structured_description,
};
use groundtrack::evaluation::report::{summary_table, write_reports};
use groundtrack::evaluation::{
    BenchmarkConfig, DatasetFormat, DefinitionCache, coco_augmented, load_augmented, load_dataset, run_benchmark,
};
use groundtrack::grounding::{GroundingError, ground_instances};
use groundtrack::image::Frame;
use groundtrack::mock::{MockFixtures, MockServices};
use groundtrack::pipeline::{PipelineOptions, StreamPipeline};
use groundtrack::synthetic::{CorpusOptions, Sequence, generate_corpus};
use groundtrack::{mock, overlay};

use crate::error::CliError;
use crate::{Cli, Command, Format, SynthKind};

/// Config file plus command-line overrides, validated.
fn resolve_config(cli: &Cli) -> Result<PipelineConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) if !p.exists() => return Err(CliError::Usage(format!("config file {} does not exist", p.display()))),
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(m) = &cli.mocks {
        cfg.mocks = Some(m.clone());
    }
    if cli.config.is_none() && cfg.mocks.is_none() {
        return Err(CliError::Usage("either --config or --mocks is required".into()));
    }
    if let Some(v) = cli.odf {
        cfg.odf = v;
    }
    if cli.validate {
        cfg.validate = true;
    }
    if let Some(t) = &cli.task {
        cfg.task = Some(t.clone());
    }
    if let Some(c) = cli.max_concurrency {
        cfg.max_concurrency = c;
    }
    if let Some(d) = &cli.output_dir {
        cfg.output_dir = d.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), CliError> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    bytes.push(b'\n');
    std::fs::write(path, bytes)?;
    Ok(())
}

/// Prints a line to stdout; a closed pipe is not an error.
fn emit(text: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{text}").and_then(|_| out.flush());
}

fn open_frame(path: &Path) -> Result<Frame, CliError> {
    if !path.exists() {
        return Err(CliError::Usage(format!("{} does not exist", path.display())));
    }
    Ok(Frame::open(path)?)
}

pub async fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Describe { image } => cmd_describe(&cli, image).await,
        Command::Ground {
            image,
            description,
            overlay,
        } => cmd_ground(&cli, image, description, *overlay).await,
        Command::Track {
            input,
            update_interval,
            trigger,
            overlay,
        } => cmd_track(&cli, input, *update_interval, trigger.as_deref(), *overlay).await,
        Command::Eval {
            dataset,
            format,
            no_augmented,
            no_sweep,
            label,
        } => cmd_eval(&cli, dataset, *format, *no_augmented, *no_sweep, label).await,
        Command::ServeMocks { fixtures, port, host } => cmd_serve_mocks(fixtures, host, *port).await,
        Command::Synth {
            out,
            kind,
            seed,
            count,
            confusion_rate,
            miss_rate,
            movers,
            enter,
        } => cmd_synth(out, *kind, *seed, *count, *confusion_rate, *miss_rate, *movers, enter),
    }
}

/// Writes `description.json` and prints it.
async fn cmd_describe(cli: &Cli, image: &Path) -> Result<(), CliError> {
    let cfg = resolve_config(cli)?;
    let frame = open_frame(image)?;
    let (gw, _) = cfg.gateway()?;
    let schema = cfg.schema()?;
    let templates = cfg.templates()?;
    let mut desc = describe(&frame, &schema, &gw, &templates).await?;
    if let Some(task) = &cfg.task {
        let (d, report) = decoupled_attribution(&desc, &frame, task, DEFAULT_ATTRIBUTE_KEY, &gw, &templates).await;
        if let Some(f) = &report.failure {
            tracing::warn!(failure = %f, "attribution failed");
        }
        desc = d;
    }
    std::fs::create_dir_all(&cfg.output_dir)?;
    write_json(&cfg.output_dir.join("description.json"), &desc)?;
    emit(&serde_json::to_string_pretty(&desc).unwrap_or_default());
    Ok(())
}

fn read_description(path: &Path, schema: &AttributeSchema) -> Result<StructuredDescription, CliError> {
    if !path.exists() {
        return Err(CliError::Usage(format!("description file {} does not exist", path.display())));
    }
    let text = std::fs::read_to_string(path)?;
    if let Ok(d) = serde_json::from_str::<StructuredDescription>(&text) {
        return Ok(d);
    }
    parse_structured_description(&text, schema, "file").map_err(|e| match e {
        groundtrack::description::DescriptionError::NoValidJson(e) => CliError::NoValidJson(e.to_string()),
        e => CliError::EmptyDescription(e.to_string()),
    })
}

/// Writes `grounding.json` (and `grounding.png`) and prints the JSON.
async fn cmd_ground(cli: &Cli, image: &Path, description: &Path, with_overlay: bool) -> Result<(), CliError> {
    let cfg = resolve_config(cli)?;
    let schema = cfg.schema()?;
    let desc = read_description(description, &schema)?;
    let frame = open_frame(image)?;
    let (gw, _) = cfg.gateway()?;
    let grounding = ground_instances(&desc, &frame, &gw.detector, cfg.odf)
        .await
        .map_err(|e| match e {
            GroundingError::Detector(e) => CliError::Service(e.to_string()),
            GroundingError::EmptyDescription => CliError::EmptyDescription(e.to_string()),
            GroundingError::InvalidOdf(_) => CliError::Config(e.to_string()),
        })?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    write_json(&cfg.output_dir.join("grounding.json"), &grounding)?;
    if with_overlay {
        overlay::render_grounding(&frame.rgb, &grounding)
            .save(cfg.output_dir.join("grounding.png"))
            .map_err(|e| CliError::Io(e.to_string()))?;
    }
    emit(&serde_json::to_string_pretty(&grounding).unwrap_or_default());
    Ok(())
}

fn list_frames(input: &Path) -> Result<Vec<PathBuf>, CliError> {
    if !input.is_dir() {
        return Err(CliError::Usage(format!(
            "{} is not a directory of frames (video input is not supported)",
            input.display()
        )));
    }
    let mut frames: Vec<PathBuf> = std::fs::read_dir(input)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
        })
        .collect();
    frames.sort();
    if frames.is_empty() {
        return Err(CliError::Usage(format!("no frames in {}", input.display())));
    }
    Ok(frames)
}

/// Writes `snapshots.jsonl` (one line per processed frame), `updates.jsonl`
/// and optionally `overlays/`.
async fn cmd_track(
    cli: &Cli,
    input: &Path,
    update_interval: Option<u64>,
    trigger: Option<&Path>,
    with_overlay: bool,
) -> Result<(), CliError> {
    let cfg = resolve_config(cli)?;
    let frames = list_frames(input)?;
    let (gw, _) = cfg.gateway()?;
    let options = PipelineOptions {
        schema: cfg.schema()?,
        templates: cfg.templates()?,
        odf: cfg.odf,
        validate: cfg.validate,
        task: cfg.task.clone(),
        crop_padding: cfg.crop_padding,
        update_interval,
        iou_gate: cfg.iou_gate,
        patience: cfg.patience,
        ..Default::default()
    };
    std::fs::create_dir_all(&cfg.output_dir)?;
    if with_overlay {
        std::fs::create_dir_all(cfg.output_dir.join("overlays"))?;
    }
    let mut snapshots = std::io::BufWriter::new(std::fs::File::create(cfg.output_dir.join("snapshots.jsonl"))?);
    let mut updates = std::io::BufWriter::new(std::fs::File::create(cfg.output_dir.join("updates.jsonl"))?);
    let mut pipeline = StreamPipeline::new(&gw, options);
    for (index, path) in frames.iter().enumerate() {
        let frame = match Frame::open(path) {
            Ok(f) => f,
            Err(e) => {
                tracing::warn!(file = %path.display(), error = %e, "skipping undecodable frame");
                continue;
            }
        };
        let force = match trigger {
            Some(t) if t.exists() => {
                let _ = std::fs::remove_file(t);
                true
            }
            _ => false,
        };
        let (snapshot, record) = match pipeline.process(&frame, force).await {
            Ok(r) => r,
            Err(e) => {
                tracing::warn!(file = %path.display(), error = %e, "tracker step failed; frame skipped");
                continue;
            }
        };
        let file = path.file_name().map(|f| f.to_string_lossy().to_string()).unwrap_or_default();
        let line = serde_json::json!({"source_index": index, "file": file, "frame": snapshot.frame, "tracks": snapshot.tracks});
        writeln!(snapshots, "{line}")?;
        if let Some(mut r) = record {
            if let Some(e) = &r.error {
                tracing::warn!(frame = r.frame, error = %e, "update failed");
            }
            if cli.stable_output {
                r.elapsed_ms = None;
            }
            writeln!(updates, "{}", serde_json::to_string(&r).unwrap_or_default())?;
        }
        if with_overlay {
            overlay::render_snapshot(&frame.rgb, &snapshot)
                .save(cfg.output_dir.join("overlays").join(format!("frame_{index:04}.png")))
                .map_err(|e| CliError::Io(e.to_string()))?;
        }
    }
    snapshots.flush()?;
    updates.flush()?;
    Ok(())
}

/// Writes `report.json`, `metrics.txt` and `timing.csv`; prints the summary.
async fn cmd_eval(
    cli: &Cli,
    dataset: &Path,
    format: Format,
    no_augmented: bool,
    no_sweep: bool,
    label: &str,
) -> Result<(), CliError> {
    let cfg = resolve_config(cli)?;
    if !dataset.exists() {
        return Err(CliError::Usage(format!("dataset {} does not exist", dataset.display())));
    }
    let format = match format {
        Format::Coco => DatasetFormat::Coco,
        Format::Custom => DatasetFormat::Custom,
    };
    let ds = load_dataset(dataset, format)?;
    let augmented = match (&cfg.augmented, format, no_augmented) {
        (_, _, true) | (_, DatasetFormat::Custom, _) => Vec::new(),
        (Some(p), _, _) => load_augmented(p)?,
        (None, _, _) => coco_augmented(),
    };
    let config = BenchmarkConfig {
        odf: cfg.odf,
        validate: cfg.validate,
        task: cfg.task.clone(),
        schema: cfg.schema()?,
        templates: cfg.templates()?,
        augmented,
        parallelism: cfg.parallelism,
        sweep: !no_sweep,
        crop_padding: cfg.crop_padding,
        ..Default::default()
    };
    let (gw, _) = cfg.gateway()?;
    let cache = DefinitionCache::new(gw.settings.model.clone());
    if let Some(p) = &cfg.definition_cache {
        if p.exists() {
            cache.load(p)?;
        }
    }
    let report = run_benchmark(&ds, &config, &gw, &cache).await?;
    if let Some(p) = &cfg.definition_cache {
        cache.save(p)?;
    }
    let report = if cli.stable_output { report.stabilized() } else { report };
    write_reports(&cfg.output_dir, label, &report)?;
    emit(summary_table(&[(label, &report)]).trim_end());
    if report.partial {
        eprintln!("{} of {} images failed", report.images_failed, report.images.len());
    }
    Ok(())
}

async fn cmd_serve_mocks(fixtures: &Path, host: &str, port: u16) -> Result<(), CliError> {
    let f = MockFixtures::load_dir(fixtures).map_err(|e| CliError::Config(e.to_string()))?;
    let addr: SocketAddr = format!("{host}:{port}")
        .parse()
        .map_err(|e| CliError::Usage(format!("bad address: {e}")))?;
    let services = Arc::new(MockServices::new(f));
    let (local, handle) = mock::server::spawn(services, addr).await?;
    emit(&format!("listening on http://{local}"));
    handle.await.map_err(|e| CliError::Io(e.to_string()))
}

#[allow(clippy::too_many_arguments)]
fn cmd_synth(
    out: &Path,
    kind: SynthKind,
    seed: u64,
    count: usize,
    confusion_rate: f64,
    miss_rate: f64,
    movers: usize,
    enter: &[usize],
) -> Result<(), CliError> {
    match kind {
        SynthKind::Corpus => {
            let corpus = generate_corpus(&CorpusOptions {
                seed,
                images: count,
                confusion_rate,
                validator_miss_rate: miss_rate,
                ..Default::default()
            });
            corpus.write(out)?;
        }
        SynthKind::Sequence => {
            if movers == 0 || movers > groundtrack::synthetic::VOCABULARY.len() {
                return Err(CliError::Usage(format!("movers must be in 1..={}", groundtrack::synthetic::VOCABULARY.len())));
            }
            let seq = Sequence::lanes(seed, movers, enter, count, 320, 240);
            seq.write(out)?;
            write_json(&out.join("sequence.json"), &seq)?;
        }
    }
    emit(&out.display().to_string());
    Ok(())
}
