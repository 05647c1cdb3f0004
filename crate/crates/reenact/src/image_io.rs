//! PNG loading and saving for `[3, H, W]` tensors.
//!
//! Files are 8-bit RGB; in memory every image is floating point in `[-1, 1]`.

use std::path::{Path, PathBuf};

use image::{ImageBuffer, Rgb, RgbImage};
use thiserror::Error;

use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum ImageIoError {
    #[error("reading image {path}: {source}")]
    Read { path: PathBuf, source: image::ImageError },
    #[error("writing image {path}: {source}")]
    Write { path: PathBuf, source: image::ImageError },
    #[error("expected a [3, H, W] tensor, got shape {0:?}")]
    NotAnImage(Vec<usize>),
}

pub fn pixel_to_unit(v: u8) -> f64 {
    v as f64 / 255.0 * 2.0 - 1.0
}

pub fn unit_to_pixel(v: f64) -> u8 {
    (((v + 1.0) / 2.0) * 255.0).round().clamp(0.0, 255.0) as u8
}

pub fn load_png(path: &Path) -> Result<Tensor, ImageIoError> {
    let img = image::open(path)
        .map_err(|source| ImageIoError::Read { path: path.to_path_buf(), source })?
        .to_rgb8();
    Ok(rgb_to_tensor(&img))
}

pub fn rgb_to_tensor(img: &RgbImage) -> Tensor {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0.0; 3 * h * w];
    for (x, y, px) in img.enumerate_pixels() {
        let (x, y) = (x as usize, y as usize);
        for c in 0..3 {
            data[(c * h + y) * w + x] = pixel_to_unit(px[c]);
        }
    }
    Tensor::new(vec![3, h, w], data)
}

pub fn tensor_to_rgb(t: &Tensor) -> Result<RgbImage, ImageIoError> {
    if t.shape().len() != 3 || t.channels() != 3 {
        return Err(ImageIoError::NotAnImage(t.shape().to_vec()));
    }
    let (h, w) = (t.height(), t.width());
    let img = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let (x, y) = (x as usize, y as usize);
        Rgb([
            unit_to_pixel(t.plane(0)[y * w + x]),
            unit_to_pixel(t.plane(1)[y * w + x]),
            unit_to_pixel(t.plane(2)[y * w + x]),
        ])
    });
    Ok(img)
}

pub fn save_png(t: &Tensor, path: &Path) -> Result<(), ImageIoError> {
    tensor_to_rgb(t)?
        .save(path)
        .map_err(|source| ImageIoError::Write { path: path.to_path_buf(), source })
}

/// Images side by side, separated by a one-pixel black gutter. All inputs
/// must share the same height.
pub fn hstack(images: &[&Tensor]) -> Result<Tensor, ImageIoError> {
    let h = images[0].height();
    let total_w: usize =
        images.iter().map(|t| t.width()).sum::<usize>() + images.len().saturating_sub(1);
    let mut out = Tensor::full(vec![3, h, total_w], -1.0);
    let mut x0 = 0;
    for t in images {
        if t.shape().len() != 3 || t.channels() != 3 || t.height() != h {
            return Err(ImageIoError::NotAnImage(t.shape().to_vec()));
        }
        let w = t.width();
        for c in 0..3 {
            for y in 0..h {
                let src = &t.plane(c)[y * w..(y + 1) * w];
                let dst_row = (c * h + y) * total_w + x0;
                out.data_mut()[dst_row..dst_row + w].copy_from_slice(src);
            }
        }
        x0 += w + 1;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pixel_conversion_round_trips() {
        for v in [0u8, 1, 77, 128, 254, 255] {
            assert_eq!(unit_to_pixel(pixel_to_unit(v)), v);
        }
    }

    #[test]
    fn png_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.png");
        let t = Tensor::new(
            vec![3, 2, 2],
            (0..12).map(|v| pixel_to_unit((v * 20) as u8)).collect(),
        );
        save_png(&t, &path).unwrap();
        let back = load_png(&path).unwrap();
        assert_eq!(t, back);
    }

    #[test]
    fn hstack_concatenates_with_gutter() {
        let a = Tensor::full(vec![3, 2, 2], 0.5);
        let b = Tensor::full(vec![3, 2, 3], -0.5);
        let s = hstack(&[&a, &b]).unwrap();
        assert_eq!(s.shape(), &[3, 2, 6]);
        assert_eq!(s.plane(0)[0], 0.5);
        assert_eq!(s.plane(0)[2], -1.0); // gutter
        assert_eq!(s.plane(0)[3], -0.5);
    }
}
