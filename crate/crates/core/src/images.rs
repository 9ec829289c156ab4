//! Per-episode image store. Tool-returned images are registered here and
//! travel through the conversation as opaque handles.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::protocol::ImageHandle;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("failed to read image {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("failed to decode image: {0}")]
    Decode(#[from] image::ImageError),
    #[error("image is empty")]
    Empty,
    #[error("unknown image handle: {0}")]
    UnknownHandle(String),
}

/// Encoded image bytes plus dimensions. Stored behind `Arc` so episode
/// stores, conversations, and logs can share one copy.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageData {
    pub width: u32,
    pub height: u32,
    pub media_type: String,
    pub bytes: Vec<u8>,
}

impl ImageData {
    pub fn from_path(path: &Path) -> Result<Self, ImageError> {
        let bytes = std::fs::read(path).map_err(|source| ImageError::Read {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_bytes(bytes)
    }

    pub fn from_bytes(bytes: Vec<u8>) -> Result<Self, ImageError> {
        if bytes.is_empty() {
            return Err(ImageError::Empty);
        }
        let format = image::guess_format(&bytes)?;
        let decoded = image::load_from_memory(&bytes)?;
        let media_type = match format {
            image::ImageFormat::Jpeg => "image/jpeg",
            _ => "image/png",
        };
        Ok(Self {
            width: decoded.width(),
            height: decoded.height(),
            media_type: media_type.into(),
            bytes,
        })
    }

    /// Encodes an RGB pixel buffer as PNG. Encoding is pure, so identical
    /// pixels yield identical bytes.
    pub fn from_rgb_pixels(width: u32, height: u32, pixels: Vec<u8>) -> Self {
        debug_assert_eq!(pixels.len() as u32, width * height * 3);
        let buffer: image::RgbImage =
            image::ImageBuffer::from_raw(width, height, pixels).expect("pixel buffer size");
        let mut bytes = Vec::new();
        buffer
            .write_to(
                &mut std::io::Cursor::new(&mut bytes),
                image::ImageFormat::Png,
            )
            .expect("in-memory png encode");
        Self {
            width,
            height,
            media_type: "image/png".into(),
            bytes,
        }
    }

    pub fn sha256_hex(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(&self.bytes);
        hex_string(&hasher.finalize())
    }

    /// Crops by a normalized `[x_min, y_min, x_max, y_max]` box. The crop is
    /// snapped to whole pixels and never empty.
    pub fn crop(&self, bbox: [f64; 4]) -> Result<ImageData, ImageError> {
        let decoded = image::load_from_memory(&self.bytes)?;
        let (w, h) = (decoded.width() as f64, decoded.height() as f64);
        let x0 = (bbox[0] * w).floor().clamp(0.0, w - 1.0) as u32;
        let y0 = (bbox[1] * h).floor().clamp(0.0, h - 1.0) as u32;
        let x1 = (bbox[2] * w).ceil().clamp(1.0, w) as u32;
        let y1 = (bbox[3] * h).ceil().clamp(1.0, h) as u32;
        let cropped = decoded.crop_imm(x0, y0, (x1 - x0).max(1), (y1 - y0).max(1));
        let rgb = cropped.to_rgb8();
        Ok(ImageData::from_rgb_pixels(
            rgb.width(),
            rgb.height(),
            rgb.into_raw(),
        ))
    }

    pub fn to_rgb_pixels(&self) -> Result<(u32, u32, Vec<u8>), ImageError> {
        let decoded = image::load_from_memory(&self.bytes)?;
        let rgb = decoded.to_rgb8();
        Ok((rgb.width(), rgb.height(), rgb.into_raw()))
    }
}

fn hex_string(bytes: &[u8]) -> String {
    let mut out = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// Handle for the episode's query image.
pub const QUERY_IMAGE_HANDLE: &str = "query";

/// Images accumulated during one episode, keyed by handle. Confined to its
/// episode; no locking needed.
#[derive(Debug, Default)]
pub struct ImageStore {
    images: BTreeMap<ImageHandle, Arc<ImageData>>,
    next_id: usize,
}

impl ImageStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_query_image(image: Arc<ImageData>) -> Self {
        let mut store = Self::new();
        store
            .images
            .insert(QUERY_IMAGE_HANDLE.to_string(), image);
        store
    }

    /// Registers a tool-produced image and returns its handle. Handles are
    /// assigned sequentially, so replays produce identical handles.
    pub fn register(&mut self, image: ImageData) -> ImageHandle {
        self.next_id += 1;
        let handle = format!("img_{}", self.next_id);
        self.images.insert(handle.clone(), Arc::new(image));
        handle
    }

    pub fn get(&self, handle: &str) -> Result<Arc<ImageData>, ImageError> {
        self.images
            .get(handle)
            .cloned()
            .ok_or_else(|| ImageError::UnknownHandle(handle.to_string()))
    }

    pub fn handles(&self) -> impl Iterator<Item = (&ImageHandle, &Arc<ImageData>)> {
        self.images.iter()
    }
}

/// A flat test image with three horizontal color bands; handy for checking
/// crops by pixel content.
pub fn banded_test_image(width: u32, height: u32) -> ImageData {
    let bands = [[200u8, 40, 40], [40, 200, 40], [40, 40, 200]];
    let mut pixels = Vec::with_capacity((width * height * 3) as usize);
    for y in 0..height {
        let band = bands[(y * 3 / height.max(1)) as usize % 3];
        for _ in 0..width {
            pixels.extend_from_slice(&band);
        }
    }
    ImageData::from_rgb_pixels(width, height, pixels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_box_crop_preserves_content() {
        let img = banded_test_image(30, 30);
        let cropped = img.crop([0.0, 0.0, 1.0, 1.0]).unwrap();
        assert_eq!(
            img.to_rgb_pixels().unwrap(),
            cropped.to_rgb_pixels().unwrap()
        );
    }

    #[test]
    fn partial_crop_selects_the_right_band() {
        let img = banded_test_image(30, 30);
        // The top third is the red band.
        let cropped = img.crop([0.0, 0.0, 1.0, 0.33]).unwrap();
        let (_, _, pixels) = cropped.to_rgb_pixels().unwrap();
        assert_eq!(&pixels[0..3], &[200, 40, 40]);
        assert!(cropped.height <= 10 + 1);
    }

    #[test]
    fn store_assigns_sequential_handles() {
        let mut store = ImageStore::with_query_image(Arc::new(banded_test_image(4, 4)));
        let h1 = store.register(banded_test_image(4, 4));
        let h2 = store.register(banded_test_image(4, 4));
        assert_eq!(h1, "img_1");
        assert_eq!(h2, "img_2");
        assert!(store.get(QUERY_IMAGE_HANDLE).is_ok());
        assert!(matches!(
            store.get("img_9"),
            Err(ImageError::UnknownHandle(_))
        ));
    }

    #[test]
    fn identical_pixels_encode_identically() {
        let a = banded_test_image(16, 16);
        let b = banded_test_image(16, 16);
        assert_eq!(a.bytes, b.bytes);
        assert_eq!(a.sha256_hex(), b.sha256_hex());
    }

    #[test]
    fn empty_bytes_are_rejected() {
        assert!(matches!(
            ImageData::from_bytes(Vec::new()),
            Err(ImageError::Empty)
        ));
    }
}
