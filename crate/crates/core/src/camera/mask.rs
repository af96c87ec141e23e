//! Binary masks, mask file I/O, and the threshold segmenter used in place of
//! a learned segmenter for synthetic images.

use std::collections::VecDeque;
use std::io::Write;
use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, GrayImage, ImageEncoder, ImageFormat, Luma};

use super::CameraError;

/// Single-channel binary image; `true` is foreground.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![false; width as usize * height as usize],
        }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut m = Self::new(width, height);
        for y in 0..height {
            for x in 0..width {
                m.set(x, y, f(x, y));
            }
        }
        m
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.data[y as usize * self.width as usize + x as usize]
    }

    /// Like [`get`](Self::get) but out-of-bounds reads are background.
    #[inline]
    pub fn get_signed(&self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && (x as u64) < self.width as u64 && (y as u64) < self.height as u64 && self.get(x as u32, y as u32)
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: bool) {
        let w = self.width as usize;
        self.data[y as usize * w + x as usize] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&v| v)
    }

    /// Foreground pixel coordinates in raster order.
    pub fn foreground(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let w = self.width;
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &v)| v)
            .map(move |(i, _)| (i as u32 % w, i as u32 / w))
    }

    pub fn to_gray(&self) -> GrayImage {
        GrayImage::from_fn(self.width, self.height, |x, y| Luma([if self.get(x, y) { 255 } else { 0 }]))
    }

    /// Pixels with value ≥ 128 are foreground.
    pub fn from_gray(img: &GrayImage) -> Self {
        Self::from_fn(img.width(), img.height(), |x, y| img.get_pixel(x, y)[0] >= 128)
    }

    /// Reads a binary P5 PGM or a PNG (format chosen by content).
    pub fn load(path: &Path) -> Result<Self, CameraError> {
        let img = image::ImageReader::open(path)
            .map_err(|e| CameraError::Io(format!("{}: {e}", path.display())))?
            .with_guessed_format()
            .map_err(|e| CameraError::Io(format!("{}: {e}", path.display())))?
            .decode()
            .map_err(|e| CameraError::Io(format!("{}: {e}", path.display())))?;
        Ok(Self::from_gray(&img.into_luma8()))
    }

    /// Writes a binary P5 PGM.
    pub fn save_pgm(&self, path: &Path) -> Result<(), CameraError> {
        let io = |e: &dyn std::fmt::Display| CameraError::Io(format!("{}: {e}", path.display()));
        let file = std::fs::File::create(path).map_err(|e| io(&e))?;
        let mut writer = std::io::BufWriter::new(file);
        let img = self.to_gray();
        PnmEncoder::new(&mut writer)
            .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
            .write_image(img.as_raw(), self.width, self.height, ExtendedColorType::L8)
            .map_err(|e| io(&e))?;
        writer.flush().map_err(|e| io(&e))
    }

    pub fn save_png(&self, path: &Path) -> Result<(), CameraError> {
        self.to_gray()
            .save_with_format(path, ImageFormat::Png)
            .map_err(|e| CameraError::Io(format!("{}: {e}", path.display())))
    }
}

/// Thresholds a grayscale image and splits the foreground into
/// 8-connected components, one mask per component with at least
/// `min_pixels` pixels. Components are ordered by their first pixel in
/// raster order.
pub fn segment_threshold(img: &GrayImage, threshold: u8, min_pixels: usize) -> Vec<BinaryMask> {
    let (w, h) = img.dimensions();
    let fg = |x: u32, y: u32| img.get_pixel(x, y)[0] >= threshold;
    let mut label = vec![0u32; w as usize * h as usize];
    let mut masks = Vec::new();
    let mut next = 1;
    let mut queue = VecDeque::new();
    for y in 0..h {
        for x in 0..w {
            let idx = (y * w + x) as usize;
            if !fg(x, y) || label[idx] != 0 {
                continue;
            }
            let mut mask = BinaryMask::new(w, h);
            let mut n = 0;
            label[idx] = next;
            queue.push_back((x, y));
            while let Some((px, py)) = queue.pop_front() {
                mask.set(px, py, true);
                n += 1;
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let (nx, ny) = (px as i64 + dx, py as i64 + dy);
                        if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                            continue;
                        }
                        let (nx, ny) = (nx as u32, ny as u32);
                        let nidx = (ny * w + nx) as usize;
                        if label[nidx] == 0 && fg(nx, ny) {
                            label[nidx] = next;
                            queue.push_back((nx, ny));
                        }
                    }
                }
            }
            next += 1;
            if n >= min_pixels {
                masks.push(mask);
            }
        }
    }
    masks
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn segments_two_blobs() {
        let img = GrayImage::from_fn(20, 10, |x, y| {
            let a = (2..5).contains(&x) && (2..5).contains(&y);
            let b = (10..18).contains(&x) && (3..9).contains(&y);
            Luma([if a || b { 200 } else { 10 }])
        });
        let masks = segment_threshold(&img, 128, 1);
        assert_eq!(masks.len(), 2);
        assert_eq!(masks[0].count(), 9);
        assert_eq!(masks[1].count(), 48);
        assert_eq!(segment_threshold(&img, 128, 10).len(), 1);
    }

    #[test]
    fn pgm_and_png_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let m = BinaryMask::from_fn(13, 7, |x, y| (x + y) % 3 == 0);
        let pgm = dir.path().join("m.pgm");
        m.save_pgm(&pgm).unwrap();
        let bytes = std::fs::read(&pgm).unwrap();
        assert!(bytes.starts_with(b"P5"));
        assert_eq!(BinaryMask::load(&pgm).unwrap(), m);
        let png = dir.path().join("m.png");
        m.save_png(&png).unwrap();
        assert_eq!(BinaryMask::load(&png).unwrap(), m);
    }
}
