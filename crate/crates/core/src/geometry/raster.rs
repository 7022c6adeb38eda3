use std::io::Cursor;
use std::path::Path;

use image::{GrayImage, ImageFormat, Luma, RgbImage};
use serde::{Deserialize, Serialize};

use super::{BBox, GeometryError};

/// 8-bit RGB triple.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Rgb(pub [u8; 3]);

impl Rgb {
    pub const BLACK: Rgb = Rgb([0, 0, 0]);
}

/// Row-major RGB8 image. Immutable once built; every transform returns a new one.
#[derive(Clone, PartialEq, Eq)]
pub struct RasterImage {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl std::fmt::Debug for RasterImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RasterImage")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish_non_exhaustive()
    }
}

impl RasterImage {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self, GeometryError> {
        if width == 0 || height == 0 {
            return Err(GeometryError::InvalidRaster(format!(
                "zero-sized image {width}x{height}"
            )));
        }
        let expected = width as usize * height as usize * 3;
        if pixels.len() != expected {
            return Err(GeometryError::InvalidRaster(format!(
                "buffer holds {} bytes, {width}x{height} RGB needs {expected}",
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: u32, height: u32, color: Rgb) -> Result<Self, GeometryError> {
        let pixels = color
            .0
            .iter()
            .copied()
            .cycle()
            .take(width as usize * height as usize * 3)
            .collect();
        Self::new(width, height, pixels)
    }

    /// Builds an image by evaluating `f(x, y)` at every pixel.
    pub fn from_fn(
        width: u32,
        height: u32,
        mut f: impl FnMut(u32, u32) -> Rgb,
    ) -> Result<Self, GeometryError> {
        let mut pixels = Vec::with_capacity(width as usize * height as usize * 3);
        for y in 0..height {
            for x in 0..width {
                pixels.extend_from_slice(&f(x, y).0);
            }
        }
        Self::new(width, height, pixels)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn frame(&self) -> BBox {
        BBox::full(self.width, self.height).expect("raster dimensions are non-zero")
    }

    pub fn pixel(&self, x: u32, y: u32) -> Rgb {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        Rgb([self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]])
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, GeometryError> {
        let img =
            image::load_from_memory(bytes).map_err(|e| GeometryError::Codec(e.to_string()))?;
        let rgb = img.to_rgb8();
        let (w, h) = rgb.dimensions();
        Self::new(w, h, rgb.into_raw())
    }

    pub fn open(path: &Path) -> Result<Self, GeometryError> {
        let bytes = std::fs::read(path)
            .map_err(|e| GeometryError::Codec(format!("{}: {e}", path.display())))?;
        Self::decode(&bytes)
    }

    pub fn to_png(&self) -> Vec<u8> {
        let img = RgbImage::from_raw(self.width, self.height, self.pixels.clone())
            .expect("buffer length checked at construction");
        let mut out = Cursor::new(Vec::new());
        img.write_to(&mut out, ImageFormat::Png)
            .expect("PNG encoding to memory cannot fail");
        out.into_inner()
    }
}

/// One boolean per pixel, row-major.
#[derive(Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl std::fmt::Debug for BinaryMask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BinaryMask")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("set", &self.count_set())
            .finish()
    }
}

impl BinaryMask {
    pub fn new(width: u32, height: u32, bits: Vec<bool>) -> Result<Self, GeometryError> {
        if width == 0 || height == 0 || bits.len() != width as usize * height as usize {
            return Err(GeometryError::InvalidRaster(format!(
                "mask of {} bits cannot be {width}x{height}",
                bits.len()
            )));
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn from_fn(
        width: u32,
        height: u32,
        mut f: impl FnMut(u32, u32) -> bool,
    ) -> Result<Self, GeometryError> {
        let mut bits = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self::new(width, height, bits)
    }

    /// Mask whose set bits are exactly the pixels inside `bbox`.
    pub fn rectangle(width: u32, height: u32, bbox: &BBox) -> Result<Self, GeometryError> {
        Self::from_fn(width, height, |x, y| bbox.covers(x, y))
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize]
    }

    pub fn count_set(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    /// Single-channel PNG, 0 = outside, 255 = inside.
    pub fn to_png(&self) -> Vec<u8> {
        let mut img = GrayImage::new(self.width, self.height);
        for (i, px) in img.pixels_mut().enumerate() {
            *px = Luma([if self.bits[i] { 255 } else { 0 }]);
        }
        let mut out = Cursor::new(Vec::new());
        img.write_to(&mut out, ImageFormat::Png)
            .expect("PNG encoding to memory cannot fail");
        out.into_inner()
    }

    /// Decodes a mask image; luma values of 128 and above count as inside.
    pub fn decode_png(bytes: &[u8]) -> Result<Self, GeometryError> {
        let img =
            image::load_from_memory(bytes).map_err(|e| GeometryError::Codec(e.to_string()))?;
        let gray = img.to_luma8();
        let (w, h) = gray.dimensions();
        Self::new(w, h, gray.pixels().map(|p| p.0[0] >= 128).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn buffer_length_is_checked() {
        assert!(RasterImage::new(2, 2, vec![0; 11]).is_err());
        assert!(RasterImage::new(0, 2, vec![]).is_err());
        assert!(RasterImage::new(2, 2, vec![0; 12]).is_ok());
        assert!(BinaryMask::new(2, 2, vec![true; 3]).is_err());
    }

    #[test]
    fn png_roundtrips() {
        let img = RasterImage::from_fn(5, 3, |x, y| Rgb([x as u8 * 40, y as u8 * 70, 9])).unwrap();
        assert_eq!(RasterImage::decode(&img.to_png()).unwrap(), img);
        let mask = BinaryMask::from_fn(5, 3, |x, y| (x + y) % 2 == 0).unwrap();
        assert_eq!(BinaryMask::decode_png(&mask.to_png()).unwrap(), mask);
    }

    #[test]
    fn rectangle_mask_sets_box_pixels() {
        let bbox = BBox::new(1, 1, 3, 3).unwrap();
        let m = BinaryMask::rectangle(4, 4, &bbox).unwrap();
        assert_eq!(m.count_set(), 4);
        for (x, y) in [(1, 1), (2, 1), (1, 2), (2, 2)] {
            assert!(m.get(x, y));
        }
    }
}
