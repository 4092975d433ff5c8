use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use async_trait::async_trait;
use image::RgbImage;

use super::faults::FaultInjector;
use super::fixtures::{MockFixtures, TrackerMode};
use super::vision::{Component, components, dominant_entry};
use crate::gateway::wire::{TrackerReply, WireTrack};
use crate::gateway::{BackendError, TrackerBackend};
use crate::geometry::{BBox, iou};
use crate::image::ImagePayload;
use crate::mask::{BinaryMask, Rle};

#[derive(Debug, Clone)]
enum Follow {
    /// Follows the component of palette entry `entry` nearest `last`.
    Color { entry: usize, last: BBox },
    /// Fixed mask.
    Rect { mask: Rle },
}

#[derive(Debug, Clone)]
struct MockTrack {
    id: u64,
    follow: Follow,
}

#[derive(Debug, Default)]
struct State {
    tracks: Vec<MockTrack>,
    next_id: u64,
    steps: u64,
}

/// Video segmenter mock. State ids are `state-{n}`; track ids count up
/// from 0 within a state.
pub struct MockTracker {
    fixtures: Arc<MockFixtures>,
    faults: FaultInjector,
    states: Mutex<HashMap<String, State>>,
    next_state: AtomicU64,
}

/// Inclusive fill of `bbox` rounded to pixels: `(10,10,20,20)` covers 11x11.
pub fn rectangle_mask(bbox: &BBox, width: u32, height: u32) -> Rle {
    let mut m = BinaryMask::new(width, height);
    m.fill_inclusive(
        bbox.x_min.floor() as i64,
        bbox.y_min.floor() as i64,
        bbox.x_max.floor() as i64,
        bbox.y_max.floor() as i64,
    );
    m.encode()
}

fn best_component<'a>(comps: &'a [Component], entry: usize, target: &BBox) -> Option<&'a Component> {
    let mut best: Option<(&Component, f64)> = None;
    for c in comps.iter().filter(|c| c.entry == entry) {
        let o = iou(&c.bbox, target);
        if o > 0.0 && best.is_none_or(|(_, b)| o > b) {
            best = Some((c, o));
        }
    }
    best.map(|(c, _)| c)
}

impl MockTracker {
    pub fn new(fixtures: Arc<MockFixtures>) -> Self {
        let faults = FaultInjector::new(fixtures.faults.tracker.clone());
        Self {
            fixtures,
            faults,
            states: Mutex::new(HashMap::new()),
            next_state: AtomicU64::new(0),
        }
    }

    pub fn calls(&self) -> u64 {
        self.faults.calls()
    }

    fn decode(image: &ImagePayload) -> Result<RgbImage, BackendError> {
        image.decode().map_err(|e| BackendError::BadRequest(e.to_string()))
    }

    fn start(&self, img: &RgbImage, comps: &[Component], bbox: &BBox) -> (Follow, Rle) {
        let (w, h) = img.dimensions();
        if self.fixtures.tracker.mode == TrackerMode::Color {
            if let Some(entry) = dominant_entry(img, &self.fixtures.palette, bbox) {
                if let Some(c) = best_component(comps, entry, bbox) {
                    return (Follow::Color { entry, last: c.bbox }, c.to_rle(w, h));
                }
            }
        }
        let mask = rectangle_mask(bbox, w, h);
        (Follow::Rect { mask: mask.clone() }, mask)
    }

    fn advance(follow: &mut Follow, comps: &[Component], w: u32, h: u32) -> Rle {
        match follow {
            Follow::Rect { mask } => mask.clone(),
            Follow::Color { entry, last } => match best_component(comps, *entry, last) {
                Some(c) => {
                    *last = c.bbox;
                    c.to_rle(w, h)
                }
                None => Rle::empty(h, w),
            },
        }
    }

    fn scripted_empty(&self, track: u64, step: u64) -> bool {
        self.fixtures
            .tracker
            .empty
            .iter()
            .any(|e| e.track == track && (e.from_step..=e.to_step).contains(&step))
    }

    fn add(&self, state: &mut State, img: &RgbImage, comps: &[Component], boxes: &[BBox], out: &mut Vec<WireTrack>) {
        for b in boxes {
            let (follow, mask) = self.start(img, comps, b);
            let id = state.next_id;
            state.next_id += 1;
            state.tracks.push(MockTrack { id, follow });
            out.push(WireTrack { id, mask_rle: mask });
        }
    }
}

#[async_trait]
impl TrackerBackend for MockTracker {
    async fn init(&self, image: &ImagePayload, boxes: &[BBox]) -> Result<TrackerReply, BackendError> {
        self.faults.apply().await?;
        let img = Self::decode(image)?;
        let comps = components(&img, &self.fixtures.palette);
        let state_id = format!("state-{}", self.next_state.fetch_add(1, Ordering::SeqCst));
        let mut state = State::default();
        let mut tracks = Vec::new();
        self.add(&mut state, &img, &comps, boxes, &mut tracks);
        self.states.lock().unwrap().insert(state_id.clone(), state);
        Ok(TrackerReply { state_id, tracks })
    }

    async fn step(&self, state_id: &str, image: &ImagePayload, add_boxes: &[BBox]) -> Result<TrackerReply, BackendError> {
        self.faults.apply().await?;
        let img = Self::decode(image)?;
        let (w, h) = img.dimensions();
        let comps = components(&img, &self.fixtures.palette);
        let mut states = self.states.lock().unwrap();
        let state = states
            .get_mut(state_id)
            .ok_or_else(|| BackendError::StaleHandle(state_id.to_string()))?;
        state.steps += 1;
        let step = state.steps;
        let mut tracks = Vec::with_capacity(state.tracks.len() + add_boxes.len());
        for t in state.tracks.iter_mut() {
            let mask = Self::advance(&mut t.follow, &comps, w, h);
            let mask = if self.scripted_empty(t.id, step) { Rle::empty(h, w) } else { mask };
            tracks.push(WireTrack { id: t.id, mask_rle: mask });
        }
        self.add(state, &img, &comps, add_boxes, &mut tracks);
        Ok(TrackerReply {
            state_id: state_id.to_string(),
            tracks,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mock::fixtures::{Palette, PaletteEntry};
    use image::Rgb;

    fn rect_fixtures() -> Arc<MockFixtures> {
        let mut f = MockFixtures::default();
        f.tracker.mode = TrackerMode::Rectangle;
        Arc::new(f)
    }

    #[tokio::test]
    async fn rectangle_fill_is_inclusive() {
        let t = MockTracker::new(rect_fixtures());
        let img = ImagePayload::png(&RgbImage::new(40, 40));
        let r = t.init(&img, &[BBox::new(10.0, 10.0, 20.0, 20.0)]).await.unwrap();
        assert_eq!(r.state_id, "state-0");
        assert_eq!(r.tracks[0].mask_rle.area(), 121);
        let s = t.step(&r.state_id, &img, &[BBox::new(0.0, 0.0, 2.0, 2.0)]).await.unwrap();
        assert_eq!(s.tracks.iter().map(|t| t.id).collect::<Vec<_>>(), vec![0, 1]);
        assert_eq!(s.tracks[0].mask_rle, r.tracks[0].mask_rle);
    }

    #[tokio::test]
    async fn unknown_state_is_stale() {
        let t = MockTracker::new(rect_fixtures());
        let img = ImagePayload::png(&RgbImage::new(4, 4));
        assert_eq!(t.step("nope", &img, &[]).await, Err(BackendError::StaleHandle("nope".into())));
    }

    #[tokio::test]
    async fn color_mode_follows_motion() {
        let f = Arc::new(MockFixtures::with_palette(Palette {
            entries: vec![PaletteEntry::new([255, 0, 0], "box", "red box")],
        }));
        let t = MockTracker::new(f);
        let frame = |x0: u32| {
            let mut img = RgbImage::new(40, 20);
            for y in 5..10 {
                for x in x0..x0 + 6 {
                    img.put_pixel(x, y, Rgb([255, 0, 0]));
                }
            }
            ImagePayload::png(&img)
        };
        let r = t.init(&frame(2), &[BBox::new(2.0, 5.0, 8.0, 10.0)]).await.unwrap();
        assert_eq!(r.tracks[0].mask_rle.area(), 30);
        let s = t.step(&r.state_id, &frame(4), &[]).await.unwrap();
        let b = crate::mask::mask_to_bbox(&s.tracks[0].mask_rle).unwrap();
        assert_eq!(b, BBox::new(4.0, 5.0, 10.0, 10.0));
        // object gone: empty mask
        let s = t.step(&r.state_id, &ImagePayload::png(&RgbImage::new(40, 20)), &[]).await.unwrap();
        assert!(s.tracks[0].mask_rle.is_empty());
    }
}
