//! Pixel-grid representation, exact nearest-neighbor upscaling, and the
//! directory-exchange protocol for external (super-resolution) upscalers.

mod exchange;

pub use exchange::{external_upscale, serve_exchange_nn, write_exchange_inputs};

use std::path::Path;

use crate::error::{Error, Result};

/// An 8-bit, 3-channel raster with row-major interleaved samples.
///
/// This is the unit of tiling and upscaling. Other bit depths and channel
/// counts are rejected at load; xView pan-sharpened RGB is 8-bit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelGrid {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl PixelGrid {
    pub const CHANNELS: usize = 3;

    pub fn new(width: u32, height: u32, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::EmptyRaster { width, height });
        }
        let expected = width as usize * height as usize * Self::CHANNELS;
        if data.len() != expected {
            return Err(Error::BufferSize {
                width,
                height,
                expected,
                got: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// A grid filled with a single color.
    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::EmptyRaster { width, height });
        }
        let n = width as usize * height as usize;
        let mut data = Vec::with_capacity(n * Self::CHANNELS);
        for _ in 0..n {
            data.extend_from_slice(&rgb);
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    fn index(&self, x: u32, y: u32) -> usize {
        (y as usize * self.width as usize + x as usize) * Self::CHANNELS
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = self.index(x, y);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let i = self.index(x, y);
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Exact sub-raster copy. No padding, no resampling.
    pub fn crop(&self, x: u32, y: u32, w: u32, h: u32) -> Result<PixelGrid> {
        if w == 0 || h == 0 {
            return Err(Error::EmptyRaster {
                width: w,
                height: h,
            });
        }
        if x.checked_add(w).is_none_or(|xe| xe > self.width)
            || y.checked_add(h).is_none_or(|ye| ye > self.height)
        {
            return Err(Error::PlacementOutOfBounds {
                tile_id: String::new(),
                offset_x: x,
                offset_y: y,
                w,
                h,
                parent_w: self.width,
                parent_h: self.height,
            });
        }
        let row_bytes = w as usize * Self::CHANNELS;
        let mut data = Vec::with_capacity(h as usize * row_bytes);
        for row in y..y + h {
            let start = self.index(x, row);
            data.extend_from_slice(&self.data[start..start + row_bytes]);
        }
        PixelGrid::new(w, h, data)
    }

    /// Nearest-neighbor upscale by an integer factor: pixel replication.
    ///
    /// `out(i, j) = src(i / factor, j / factor)` per channel, exactly — the
    /// piece-wise constant approximation with no half-pixel center offsets.
    pub fn nn_upscale(&self, factor: u32) -> Result<PixelGrid> {
        if factor == 0 {
            return Err(Error::ZeroFactor);
        }
        if factor == 1 {
            return Ok(self.clone());
        }
        let out_w = self.width * factor;
        let out_h = self.height * factor;
        let row_bytes = out_w as usize * Self::CHANNELS;
        let mut data = Vec::with_capacity(out_h as usize * row_bytes);
        let mut row_buf = vec![0u8; row_bytes];
        for sy in 0..self.height {
            for sx in 0..self.width {
                let px = self.pixel(sx, sy);
                let base = sx as usize * factor as usize * Self::CHANNELS;
                for r in 0..factor as usize {
                    row_buf[base + r * Self::CHANNELS..base + (r + 1) * Self::CHANNELS]
                        .copy_from_slice(&px);
                }
            }
            for _ in 0..factor {
                data.extend_from_slice(&row_buf);
            }
        }
        PixelGrid::new(out_w, out_h, data)
    }

    /// Load a PNG, requiring 8-bit 3-channel RGB.
    pub fn load_png(path: &Path) -> Result<Self> {
        let dynamic = image::ImageReader::open(path)
            .map_err(|source| Error::io(path, source))?
            .decode()
            .map_err(|source| Error::Image {
                path: path.to_path_buf(),
                source,
            })?;
        match dynamic {
            image::DynamicImage::ImageRgb8(img) => {
                PixelGrid::new(img.width(), img.height(), img.into_raw())
            }
            _ => Err(Error::UnsupportedPixelFormat {
                path: path.to_path_buf(),
            }),
        }
    }

    /// Write the grid as a PNG (lossless; the only interchange format).
    pub fn save_png(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|source| Error::io(parent, source))?;
        }
        let img = image::RgbImage::from_raw(self.width, self.height, self.data.clone())
            .expect("buffer length checked at construction");
        img.save_with_format(path, image::ImageFormat::Png)
            .map_err(|source| Error::Image {
                path: path.to_path_buf(),
                source,
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_grid(rng: &mut StdRng, w: u32, h: u32) -> PixelGrid {
        let data: Vec<u8> = (0..w as usize * h as usize * 3)
            .map(|_| rng.random())
            .collect();
        PixelGrid::new(w, h, data).unwrap()
    }

    #[test]
    fn constant_replication() {
        let g = PixelGrid::filled(1, 1, [9, 7, 5]).unwrap();
        let up = g.nn_upscale(4).unwrap();
        assert_eq!((up.width(), up.height()), (4, 4));
        for y in 0..4 {
            for x in 0..4 {
                assert_eq!(up.pixel(x, y), [9, 7, 5]);
            }
        }
    }

    #[test]
    fn checkerboard_blocks() {
        let a = [255, 0, 0];
        let b = [0, 0, 255];
        let mut g = PixelGrid::filled(2, 2, a).unwrap();
        g.set_pixel(1, 0, b);
        g.set_pixel(0, 1, b);
        let up = g.nn_upscale(2).unwrap();
        assert_eq!((up.width(), up.height()), (4, 4));
        for y in 0..4u32 {
            for x in 0..4u32 {
                let expect = if (x / 2 + y / 2) % 2 == 0 { a } else { b };
                assert_eq!(up.pixel(x, y), expect, "at ({x},{y})");
            }
        }
    }

    #[test]
    fn stage_one_tile_times_four() {
        let g = PixelGrid::filled(208, 208, [1, 2, 3]).unwrap();
        let up = g.nn_upscale(4).unwrap();
        assert_eq!((up.width(), up.height()), (832, 832));
    }

    #[test]
    fn factor_zero_rejected() {
        let g = PixelGrid::filled(2, 2, [0, 0, 0]).unwrap();
        assert!(matches!(g.nn_upscale(0), Err(Error::ZeroFactor)));
    }

    #[test]
    fn factor_one_is_identity() {
        let mut rng = StdRng::seed_from_u64(3);
        let g = random_grid(&mut rng, 7, 5);
        assert_eq!(g.nn_upscale(1).unwrap(), g);
    }

    #[test]
    fn buffer_size_checked() {
        assert!(PixelGrid::new(2, 2, vec![0u8; 11]).is_err());
        assert!(PixelGrid::new(0, 2, vec![]).is_err());
    }

    #[test]
    fn crop_window_matches_direct_indexing() {
        let mut rng = StdRng::seed_from_u64(11);
        let g = random_grid(&mut rng, 32, 24);
        let c = g.crop(10, 10, 5, 5).unwrap();
        for y in 0..5 {
            for x in 0..5 {
                assert_eq!(c.pixel(x, y), g.pixel(10 + x, 10 + y));
            }
        }
        assert!(g.crop(30, 0, 5, 5).is_err());
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("grid.png");
        let mut rng = StdRng::seed_from_u64(5);
        let g = random_grid(&mut rng, 17, 9);
        g.save_png(&path).unwrap();
        let back = PixelGrid::load_png(&path).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn non_rgb_png_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gray.png");
        let img = image::GrayImage::from_pixel(4, 4, image::Luma([128]));
        img.save_with_format(&path, image::ImageFormat::Png).unwrap();
        assert!(matches!(
            PixelGrid::load_png(&path),
            Err(Error::UnsupportedPixelFormat { .. })
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn composition_law(seed in 0u64..1000, w in 1u32..12, h in 1u32..12, a in 1u32..4, b in 1u32..4) {
            let mut rng = StdRng::seed_from_u64(seed);
            let g = random_grid(&mut rng, w, h);
            let two_step = g.nn_upscale(a).unwrap().nn_upscale(b).unwrap();
            let one_step = g.nn_upscale(a * b).unwrap();
            prop_assert_eq!(two_step, one_step);
        }

        #[test]
        fn color_multiset_preserved(seed in 0u64..1000, w in 1u32..10, h in 1u32..10, s in 2u32..5) {
            use std::collections::BTreeSet;
            let mut rng = StdRng::seed_from_u64(seed);
            let g = random_grid(&mut rng, w, h);
            let up = g.nn_upscale(s).unwrap();
            let colors = |p: &PixelGrid| -> BTreeSet<[u8; 3]> {
                let mut set = BTreeSet::new();
                for y in 0..p.height() {
                    for x in 0..p.width() {
                        set.insert(p.pixel(x, y));
                    }
                }
                set
            };
            prop_assert_eq!(colors(&g), colors(&up));
        }
    }
}
