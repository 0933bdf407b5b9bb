//! Binary flood-extent rasters: one byte per pixel, nonzero means flooded.

use std::fmt;
use std::io::Cursor;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{DynamicImage, ExtendedColorType, GrayImage, ImageEncoder, ImageFormat};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SurfaceId(pub String);

impl SurfaceId {
    pub fn new(id: impl Into<String>) -> Self {
        SurfaceId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SurfaceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RasterError {
    #[error("cannot decode raster: {0}")]
    Decode(String),
    #[error("unsupported raster format: {0}")]
    Unsupported(String),
    #[error("raster has {actual} cells, expected {width}x{height}")]
    CellCount { width: u32, height: u32, actual: usize },
    #[error("raster has zero width or height")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RasterSurface {
    id: SurfaceId,
    name: String,
    width: u32,
    height: u32,
    cells: Vec<u8>,
}

impl RasterSurface {
    pub fn new(id: SurfaceId, name: impl Into<String>, width: u32, height: u32, cells: Vec<u8>) -> Result<Self, RasterError> {
        if width == 0 || height == 0 {
            return Err(RasterError::Empty);
        }
        if cells.len() as u64 != u64::from(width) * u64::from(height) {
            return Err(RasterError::CellCount { width, height, actual: cells.len() });
        }
        Ok(RasterSurface { id, name: name.into(), width, height, cells })
    }

    /// Decodes an 8-bit greyscale binary PGM (P5) or PNG.
    pub fn decode(id: SurfaceId, name: impl Into<String>, bytes: &[u8]) -> Result<Self, RasterError> {
        let format = match bytes {
            [b'P', b'5', ..] => ImageFormat::Pnm,
            [0x89, b'P', b'N', b'G', ..] => ImageFormat::Png,
            _ => return Err(RasterError::Unsupported("expected binary PGM (P5) or PNG".into())),
        };
        let img = image::load_from_memory_with_format(bytes, format).map_err(|e| RasterError::Decode(e.to_string()))?;
        let grey = match img {
            DynamicImage::ImageLuma8(g) => g,
            other => {
                return Err(RasterError::Unsupported(format!("expected 8-bit greyscale, got {:?}", other.color())));
            }
        };
        let (width, height) = grey.dimensions();
        RasterSurface::new(id, name, width, height, grey.into_raw())
    }

    pub fn id(&self) -> &SurfaceId {
        &self.id
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn cells(&self) -> &[u8] {
        &self.cells
    }

    pub fn flooded_count(&self) -> usize {
        self.cells.iter().filter(|&&v| v > 0).count()
    }

    fn grey_image(&self) -> GrayImage {
        GrayImage::from_raw(self.width, self.height, self.cells.clone()).expect("cell count checked")
    }

    /// Binary PGM (P5).
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = Vec::new();
        PnmEncoder::new(&mut out)
            .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
            .write_image(&self.cells, self.width, self.height, ExtendedColorType::L8)
            .expect("in-memory encode");
        out
    }

    pub fn to_png(&self) -> Vec<u8> {
        let mut out = Cursor::new(Vec::new());
        self.grey_image().write_to(&mut out, ImageFormat::Png).expect("in-memory encode");
        out.into_inner()
    }
}
