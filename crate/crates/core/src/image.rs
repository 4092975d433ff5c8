//! Encoded image payloads passed to model services, plus the decoded frame
//! the pipeline crops and renders from.

use std::io::Cursor;
use std::path::Path;
use std::sync::Arc;

use base64::Engine;
use base64::engine::general_purpose::STANDARD as B64;
use image::{ImageFormat, RgbImage};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::geometry::BBox;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("image payload is empty")]
    Empty,
    #[error("invalid base64 image payload: {0}")]
    Base64(#[from] base64::DecodeError),
    #[error("cannot decode image: {0}")]
    Decode(#[from] image::ImageError),
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("crop {0} has zero area after clamping")]
    DegenerateCrop(BBox),
}

/// Raw encoded bytes plus media type, as sent over the wire.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImagePayload {
    pub media_type: String,
    pub bytes: Arc<[u8]>,
}

impl ImagePayload {
    pub fn new(media_type: impl Into<String>, bytes: Vec<u8>) -> Result<Self, ImageError> {
        if bytes.is_empty() {
            return Err(ImageError::Empty);
        }
        Ok(Self {
            media_type: media_type.into(),
            bytes: bytes.into(),
        })
    }

    pub fn png(image: &RgbImage) -> Self {
        let mut buf = Cursor::new(Vec::new());
        image
            .write_to(&mut buf, ImageFormat::Png)
            .expect("PNG encoding into memory cannot fail");
        Self {
            media_type: "image/png".into(),
            bytes: buf.into_inner().into(),
        }
    }

    pub fn from_base64(media_type: impl Into<String>, data: &str) -> Result<Self, ImageError> {
        Self::new(media_type, B64.decode(data.trim())?)
    }

    pub fn to_base64(&self) -> String {
        B64.encode(&self.bytes)
    }

    pub fn data_url(&self) -> String {
        format!("data:{};base64,{}", self.media_type, self.to_base64())
    }

    /// Parses `data:<media>;base64,<payload>`.
    pub fn from_data_url(url: &str) -> Result<Self, ImageError> {
        let rest = url.strip_prefix("data:").unwrap_or(url);
        let (meta, data) = rest.split_once(',').unwrap_or(("image/png;base64", rest));
        let media = meta.strip_suffix(";base64").unwrap_or(meta);
        Self::from_base64(if media.is_empty() { "image/png" } else { media }, data)
    }

    pub fn sha256(&self) -> String {
        hex::encode(Sha256::digest(&self.bytes))
    }

    pub fn decode(&self) -> Result<RgbImage, ImageError> {
        Ok(image::load_from_memory(&self.bytes)?.to_rgb8())
    }
}

/// A decoded frame together with its encoded form.
#[derive(Debug, Clone)]
pub struct Frame {
    pub rgb: Arc<RgbImage>,
    pub payload: ImagePayload,
}

impl Frame {
    pub fn from_rgb(rgb: RgbImage) -> Self {
        let payload = ImagePayload::png(&rgb);
        Self {
            rgb: Arc::new(rgb),
            payload,
        }
    }

    pub fn from_payload(payload: ImagePayload) -> Result<Self, ImageError> {
        let rgb = payload.decode()?;
        Ok(Self {
            rgb: Arc::new(rgb),
            payload,
        })
    }

    pub fn open(path: &Path) -> Result<Self, ImageError> {
        let bytes = std::fs::read(path).map_err(|source| ImageError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let media = match path.extension().and_then(|e| e.to_str()).map(str::to_lowercase) {
            Some(e) if e == "jpg" || e == "jpeg" => "image/jpeg",
            _ => "image/png",
        };
        Self::from_payload(ImagePayload::new(media, bytes)?)
    }

    pub fn width(&self) -> u32 {
        self.rgb.width()
    }

    pub fn height(&self) -> u32 {
        self.rgb.height()
    }

    /// Crop at `bbox` grown by `padding` of its size per side, clamped to
    /// the frame and rounded outward to whole pixels.
    pub fn crop_padded(&self, bbox: &BBox, padding: f64) -> Result<(BBox, RgbImage), ImageError> {
        let region = bbox.pad(padding).round_out().clamp_to(self.width(), self.height());
        if !region.is_valid() {
            return Err(ImageError::DegenerateCrop(region));
        }
        let (x, y) = (region.x_min as u32, region.y_min as u32);
        let (w, h) = (region.width() as u32, region.height() as u32);
        let crop = image::imageops::crop_imm(self.rgb.as_ref(), x, y, w, h).to_image();
        Ok((region, crop))
    }
}
