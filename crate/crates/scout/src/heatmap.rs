use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use scout_core::grid::Grid;
use scout_core::tensor::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::fsutil::write_atomic;
use crate::tensor_io::write_tensor;

/// 8-bit gray levels, scaled so the map maximum is 255. Non-positive maps
/// are all black.
pub fn gray_levels(grid: &Grid) -> Vec<u8> {
    let max = grid.max();
    grid.values()
        .iter()
        .map(|&v| {
            if max > 0.0 {
                (v.max(0.0) / max * 255.0).round() as u8
            } else {
                0
            }
        })
        .collect()
}

fn encode_png(width: usize, height: usize, color: png::ColorType, pixels: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut out, width as u32, height as u32);
        encoder.set_color(color);
        encoder.set_depth(png::BitDepth::Eight);
        let mut writer = encoder.write_header()?;
        writer.write_image_data(pixels)?;
    }
    Ok(out)
}

pub fn grid_png(grid: &Grid) -> Result<Vec<u8>> {
    encode_png(grid.cols(), grid.rows(), png::ColorType::Grayscale, &gray_levels(grid))
}

/// RGB PNG of a `3 × H × W` image with values in `[0, 1]`.
pub fn image_png(image: &Tensor) -> Result<Vec<u8>> {
    let [_, h, w] = [image.shape()[0], image.shape()[1], image.shape()[2]];
    let data = image.data();
    let mut pixels = Vec::with_capacity(3 * h * w);
    for i in 0..h * w {
        for c in 0..3 {
            pixels.push((data[c * h * w + i].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    encode_png(w, h, png::ColorType::Rgb, &pixels)
}

/// Heatmap as it travels in JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapPayload {
    pub width: usize,
    pub height: usize,
    /// Map maximum, i.e. the value that gray level 255 stands for.
    pub max: f64,
    pub png_base64: String,
}

impl HeatmapPayload {
    pub fn from_grid(grid: &Grid) -> Result<Self> {
        Ok(Self {
            width: grid.cols(),
            height: grid.rows(),
            max: grid.max(),
            png_base64: STANDARD.encode(grid_png(grid)?),
        })
    }
}

pub fn base64_png(bytes: &[u8]) -> String {
    STANDARD.encode(bytes)
}

/// Writes `<stem>.bin`, `<stem>.json` and `<stem>.png`.
pub fn write_heatmap(stem: &Path, grid: &Grid) -> Result<()> {
    write_tensor(stem, &grid.to_tensor())?;
    write_atomic(&stem.with_extension("png"), &grid_png(grid)?)
}
