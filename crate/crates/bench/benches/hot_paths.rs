use std::time::Duration;

use criterion::{BenchmarkId, Criterion, black_box, criterion_group, criterion_main};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use groundtrack::BBox;
use groundtrack::description::{AttributeSchema, parse_structured_description};
use groundtrack::evaluation::{EvalDetection, GroundTruth, compute_metrics};
use groundtrack::gateway::Detection;
use groundtrack::grounding::curate;
use groundtrack::validation::{OriginalGrounding, Proposed, ValidationProposal, group_names, solve_assignment};

fn random_box(rng: &mut ChaCha8Rng) -> BBox {
    let x = rng.random_range(0.0..600.0);
    let y = rng.random_range(0.0..400.0);
    BBox::new(x, y, x + rng.random_range(8.0..120.0), y + rng.random_range(8.0..120.0))
}

fn bench_curate(c: &mut Criterion) {
    let mut group = c.benchmark_group("curate");
    for &n in &[8usize, 32, 128] {
        let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
        let dets: Vec<Detection> = (0..n * 6)
            .map(|_| Detection {
                prompt_index: rng.random_range(0..n),
                bbox: random_box(&mut rng),
                confidence: rng.random_range(0.05..1.0),
            })
            .collect();
        for odf in [1.0, 2.0] {
            group.bench_with_input(BenchmarkId::new(format!("odf{odf}"), n), &dets, |b, dets| {
                b.iter(|| curate(n, black_box(dets), odf))
            });
        }
    }
    group.finish();
}

fn bench_assignment(c: &mut Criterion) {
    // Four name groups of six numbered instances, one track per instance.
    let names: Vec<String> = ["cup", "chair", "lamp", "book"]
        .iter()
        .flat_map(|b| (1..=6).map(move |k| format!("{b}_{k}")))
        .collect();
    let groups = group_names(&names);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let original: Vec<OriginalGrounding> = (0..names.len())
        .map(|i| OriginalGrounding {
            track_id: i as u64,
            instance: i,
            confidence: rng.random_range(0.1..1.0),
        })
        .collect();
    let proposals: Vec<ValidationProposal> = original
        .iter()
        .map(|o| ValidationProposal {
            track_id: o.track_id,
            proposed: if rng.random_bool(0.1) {
                Proposed::Invalid
            } else {
                let i = rng.random_range(0..names.len());
                Proposed::Instance {
                    instance: i,
                    object_name: names[i].clone(),
                }
            },
            raw: String::new(),
            latency: Duration::ZERO,
            note: None,
        })
        .collect();
    c.bench_function("solve_assignment/24_tracks", |b| {
        b.iter(|| solve_assignment(black_box(&original), black_box(&proposals), &groups, &names).unwrap())
    });
}

fn bench_metrics(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut gts = Vec::new();
    let mut dets = Vec::new();
    for image in 0..200 {
        for _ in 0..8 {
            let class = rng.random_range(0..20);
            let bbox = random_box(&mut rng);
            gts.push(GroundTruth { image, class, bbox });
            if rng.random_bool(0.8) {
                let d = rng.random_range(-4.0..4.0);
                dets.push(EvalDetection {
                    image,
                    class,
                    bbox: BBox::new(bbox.x_min + d, bbox.y_min + d, bbox.x_max + d, bbox.y_max + d),
                    confidence: rng.random_range(0.0..1.0),
                });
            }
        }
        for _ in 0..4 {
            dets.push(EvalDetection {
                image,
                class: rng.random_range(0..20),
                bbox: random_box(&mut rng),
                confidence: rng.random_range(0.0..1.0),
            });
        }
    }
    let mut group = c.benchmark_group("compute_metrics");
    group.sample_size(20);
    for sweep in [false, true] {
        group.bench_function(if sweep { "sweep" } else { "all" }, |b| {
            b.iter(|| compute_metrics(black_box(&dets), black_box(&gts), sweep))
        });
    }
    group.finish();
}

fn bench_parse(c: &mut Criterion) {
    let schema = AttributeSchema::default();
    let items: Vec<String> = (0..40)
        .map(|k| {
            format!(
                r#"{{"object_name": "item_{k}", "description": "a small red object number {k} resting on the shelf", "material": "wood"}}"#
            )
        })
        .collect();
    let raw = format!("Here is the list:\n```json\n[{}]\n```", items.join(",\n"));
    c.bench_function("parse_structured_description/40_items", |b| {
        b.iter(|| parse_structured_description(black_box(&raw), &schema, "bench").unwrap())
    });
}

criterion_group!(benches, bench_curate, bench_assignment, bench_metrics, bench_parse);
criterion_main!(benches);
