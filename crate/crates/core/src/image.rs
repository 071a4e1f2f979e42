//! RGB images and masks with values in `[0, 1]`, PNG I/O and resampling.

use std::io::Cursor;
use std::path::Path;

use image::imageops::{self, FilterType};
use image::{ImageBuffer, ImageFormat, Luma, Rgb};
use serde::{Deserialize, Serialize};
use tryon_tensor::Tensor;

use crate::error::{read_file, write_file, Error, Result};

/// Rec. 601 luma weights.
pub const LUMA: [f32; 3] = [0.299, 0.587, 0.114];

pub fn luma(p: [f32; 3]) -> f32 {
    LUMA[0] * p[0] + LUMA[1] * p[1] + LUMA[2] * p[2]
}

/// Interleaved RGB, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

/// Single-channel map, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

/// Half-open pixel rectangle `[x0, x1) × [y0, y1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl BBox {
    pub fn width(&self) -> usize {
        self.x1 - self.x0
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), width * height * 3, "image data length");
        Self {
            width,
            height,
            data,
        }
    }

    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Self {
        let data = (0..width * height).flat_map(|_| rgb).collect();
        Self::new(width, height, data)
    }

    pub fn num_pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn pixel(&self, i: usize) -> [f32; 3] {
        [self.data[3 * i], self.data[3 * i + 1], self.data[3 * i + 2]]
    }

    pub fn set_pixel(&mut self, i: usize, p: [f32; 3]) {
        self.data[3 * i..3 * i + 3].copy_from_slice(&p);
    }

    pub fn at(&self, x: usize, y: usize) -> [f32; 3] {
        self.pixel(y * self.width + x)
    }

    pub fn luminance(&self) -> Vec<f32> {
        (0..self.num_pixels()).map(|i| luma(self.pixel(i))).collect()
    }

    pub fn same_size(&self, m: &Mask) -> bool {
        self.width == m.width && self.height == m.height
    }

    /// Rounds every value to the nearest 8-bit level, as a PNG round trip would.
    pub fn quantized(&self) -> Image {
        Image::new(
            self.width,
            self.height,
            self.data.iter().map(|&v| to_u8(v) as f32 / 255.0).collect(),
        )
    }

    pub fn crop(&self, b: BBox) -> Image {
        let mut data = Vec::with_capacity(b.area() * 3);
        for y in b.y0..b.y1 {
            let row = (y * self.width + b.x0) * 3;
            data.extend_from_slice(&self.data[row..row + b.width() * 3]);
        }
        Image::new(b.width(), b.height(), data)
    }

    pub fn resize(&self, width: usize, height: usize) -> Image {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let buf: ImageBuffer<Rgb<f32>, Vec<f32>> =
            ImageBuffer::from_raw(self.width as u32, self.height as u32, self.data.clone())
                .expect("buffer length matches");
        let out = imageops::resize(&buf, width as u32, height as u32, FilterType::Triangle);
        Image::new(width, height, out.into_raw().into_iter().map(|v| v.clamp(0.0, 1.0)).collect())
    }

    pub fn to_png(&self) -> Vec<u8> {
        let bytes: Vec<u8> = self.data.iter().map(|&v| to_u8(v)).collect();
        let buf: ImageBuffer<Rgb<u8>, Vec<u8>> =
            ImageBuffer::from_raw(self.width as u32, self.height as u32, bytes).expect("length");
        let mut out = Cursor::new(Vec::new());
        buf.write_to(&mut out, ImageFormat::Png).expect("in-memory PNG encode");
        out.into_inner()
    }

    pub fn from_png(bytes: &[u8]) -> std::result::Result<Image, String> {
        let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)
            .map_err(|e| e.to_string())?
            .to_rgb8();
        let (w, h) = img.dimensions();
        if w == 0 || h == 0 {
            return Err("empty image".into());
        }
        let data = img.into_raw().into_iter().map(|v| v as f32 / 255.0).collect();
        Ok(Image::new(w as usize, h as usize, data))
    }

    pub fn load(path: &Path) -> Result<Image> {
        Image::from_png(&read_file(path)?).map_err(|e| Error::decode(path, e))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_png())
    }

    /// `[3, H, W]` planar layout, as the networks consume.
    pub fn to_chw(&self) -> Vec<f32> {
        let n = self.num_pixels();
        let mut out = vec![0.0; 3 * n];
        for i in 0..n {
            for c in 0..3 {
                out[c * n + i] = self.data[3 * i + c];
            }
        }
        out
    }

    pub fn from_chw(width: usize, height: usize, chw: &[f32]) -> Image {
        let n = width * height;
        assert_eq!(chw.len(), 3 * n);
        let mut data = vec![0.0; 3 * n];
        for i in 0..n {
            for c in 0..3 {
                data[3 * i + c] = chw[c * n + i];
            }
        }
        Image::new(width, height, data)
    }

    pub fn max_abs_diff(&self, other: &Image) -> f32 {
        assert_eq!(self.data.len(), other.data.len());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Stacks same-sized images into a `[N, 3, H, W]` tensor.
pub fn images_to_tensor(images: &[&Image]) -> Tensor {
    assert!(!images.is_empty());
    let (w, h) = (images[0].width, images[0].height);
    let mut data = Vec::with_capacity(images.len() * 3 * w * h);
    for img in images {
        assert!(img.width == w && img.height == h, "batch images differ in size");
        data.extend(img.to_chw());
    }
    Tensor::new(&[images.len(), 3, h, w], data)
}

/// Splits a `[N, 3, H, W]` tensor back into images.
pub fn tensor_to_images(t: &Tensor) -> Vec<Image> {
    let s = t.shape();
    assert!(s.len() == 4 && s[1] == 3, "expected [N, 3, H, W], got {s:?}");
    let per = 3 * s[2] * s[3];
    t.data()
        .chunks(per)
        .map(|c| Image::from_chw(s[3], s[2], c))
        .collect()
}

impl Mask {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), width * height, "mask data length");
        Self {
            width,
            height,
            data,
        }
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::new(width, height, vec![0.0; width * height])
    }

    pub fn is_inside(&self, i: usize) -> bool {
        self.data[i] > 0.5
    }

    pub fn count_inside(&self) -> usize {
        self.data.iter().filter(|&&v| v > 0.5).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count_inside() == 0
    }

    /// Tight box of pixels with value above 0.5.
    pub fn bbox(&self) -> Option<BBox> {
        let mut b: Option<BBox> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.data[y * self.width + x] > 0.5 {
                    let r = b.get_or_insert(BBox {
                        x0: x,
                        y0: y,
                        x1: x + 1,
                        y1: y + 1,
                    });
                    r.x0 = r.x0.min(x);
                    r.x1 = r.x1.max(x + 1);
                    r.y1 = r.y1.max(y + 1);
                }
            }
        }
        b
    }

    pub fn crop(&self, b: BBox) -> Mask {
        let mut data = Vec::with_capacity(b.area());
        for y in b.y0..b.y1 {
            let row = y * self.width + b.x0;
            data.extend_from_slice(&self.data[row..row + b.width()]);
        }
        Mask::new(b.width(), b.height(), data)
    }

    pub fn resize(&self, width: usize, height: usize) -> Mask {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let buf: ImageBuffer<Luma<f32>, Vec<f32>> =
            ImageBuffer::from_raw(self.width as u32, self.height as u32, self.data.clone())
                .expect("buffer length matches");
        let out = imageops::resize(&buf, width as u32, height as u32, FilterType::Triangle);
        Mask::new(width, height, out.into_raw().into_iter().map(|v| v.clamp(0.0, 1.0)).collect())
    }

    pub fn to_png(&self) -> Vec<u8> {
        let bytes: Vec<u8> = self.data.iter().map(|&v| to_u8(v)).collect();
        let buf: ImageBuffer<Luma<u8>, Vec<u8>> =
            ImageBuffer::from_raw(self.width as u32, self.height as u32, bytes).expect("length");
        let mut out = Cursor::new(Vec::new());
        buf.write_to(&mut out, ImageFormat::Png).expect("in-memory PNG encode");
        out.into_inner()
    }

    pub fn from_png(bytes: &[u8]) -> std::result::Result<Mask, String> {
        let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)
            .map_err(|e| e.to_string())?
            .to_luma8();
        let (w, h) = img.dimensions();
        if w == 0 || h == 0 {
            return Err("empty mask".into());
        }
        let data = img.into_raw().into_iter().map(|v| v as f32 / 255.0).collect();
        Ok(Mask::new(w as usize, h as usize, data))
    }

    pub fn load(path: &Path) -> Result<Mask> {
        Mask::from_png(&read_file(path)?).map_err(|e| Error::decode(path, e))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_png())
    }
}
