//! The image preprocessing chain and rotation augmentation.
//!
//! Raw 424x424x3 8-bit images pass through: center-crop to 170, bilinear
//! downscale to 80, center-crop to 64, divide by 255. Augmented copies are
//! rotated at the 170 stage so the zero-filled corners fall outside the
//! final crop.

use image::RgbImage;
use rand::Rng;

use crate::error::{Error, Result};
use crate::seeding::stream_rng;
use crate::tensor::ImageTensor;

pub const RAW_SIZE: usize = 424;
pub const CROP1_SIZE: usize = 170;
pub const RESIZE_SIZE: usize = 80;
pub const CROP2_SIZE: usize = 64;

/// Offset of a centered `out` window inside `inp`: floor((inp - out) / 2).
pub const fn center_offset(inp: usize, out: usize) -> usize {
    (inp - out) / 2
}

pub const CROP1_OFFSET: usize = center_offset(RAW_SIZE, CROP1_SIZE); // 127
pub const CROP2_OFFSET: usize = center_offset(RESIZE_SIZE, CROP2_SIZE); // 8

/// Decode an 8-bit RGB image into a batch-of-one tensor with values 0..=255.
pub fn tensor_from_rgb8(img: &RgbImage) -> ImageTensor<f32> {
    let (w, h) = img.dimensions();
    let data = img.as_raw().iter().map(|&b| b as f32).collect();
    ImageTensor::new(1, h as usize, w as usize, 3, data).expect("raw buffer length matches dims")
}

pub fn center_crop(src: &ImageTensor<f32>, out_h: usize, out_w: usize) -> Result<ImageTensor<f32>> {
    let (b, h, w, c) = src.dims();
    if out_h > h || out_w > w {
        return Err(Error::Shape(format!("cannot crop {h}x{w} to {out_h}x{out_w}")));
    }
    let oy = center_offset(h, out_h);
    let ox = center_offset(w, out_w);
    let mut out = ImageTensor::zeros(b, out_h, out_w, c);
    for bi in 0..b {
        for y in 0..out_h {
            let src_base = ((bi * h + y + oy) * w + ox) * c;
            let dst_base = ((bi * out_h + y) * out_w) * c;
            out.data_mut()[dst_base..dst_base + out_w * c]
                .copy_from_slice(&src.data()[src_base..src_base + out_w * c]);
        }
    }
    Ok(out)
}

#[inline]
fn lerp(a: f32, b: f32, t: f32) -> f32 {
    a + (b - a) * t
}

/// Bilinear sample at fractional coordinates, clamped to the frame.
fn sample_clamped(src: &ImageTensor<f32>, bi: usize, y: f32, x: f32, c: usize) -> f32 {
    let (_, h, w, _) = src.dims();
    let yc = y.clamp(0.0, (h - 1) as f32);
    let xc = x.clamp(0.0, (w - 1) as f32);
    let y0 = yc.floor() as usize;
    let x0 = xc.floor() as usize;
    let y1 = (y0 + 1).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    let fy = yc - y0 as f32;
    let fx = xc - x0 as f32;
    let top = lerp(src.get(bi, y0, x0, c), src.get(bi, y0, x1, c), fx);
    let bottom = lerp(src.get(bi, y1, x0, c), src.get(bi, y1, x1, c), fx);
    lerp(top, bottom, fy)
}

/// Bilinear resample to a new spatial size (pixel-center convention).
pub fn bilinear_resize(src: &ImageTensor<f32>, out_h: usize, out_w: usize) -> ImageTensor<f32> {
    let (b, h, w, c) = src.dims();
    let sy = h as f32 / out_h as f32;
    let sx = w as f32 / out_w as f32;
    let mut out = ImageTensor::zeros(b, out_h, out_w, c);
    for bi in 0..b {
        for y in 0..out_h {
            let src_y = (y as f32 + 0.5) * sy - 0.5;
            for x in 0..out_w {
                let src_x = (x as f32 + 0.5) * sx - 0.5;
                for ci in 0..c {
                    out.set(bi, y, x, ci, sample_clamped(src, bi, src_y, src_x, ci));
                }
            }
        }
    }
    out
}

/// Rotate every sample about its center by `radians`, bilinear resampling,
/// zero fill outside the source frame.
pub fn rotate_bilinear(src: &ImageTensor<f32>, radians: f32) -> ImageTensor<f32> {
    let (b, h, w, c) = src.dims();
    let cy = (h as f32 - 1.0) / 2.0;
    let cx = (w as f32 - 1.0) / 2.0;
    let (sin, cos) = radians.sin_cos();
    let mut out = ImageTensor::zeros(b, h, w, c);
    for bi in 0..b {
        for y in 0..h {
            for x in 0..w {
                // inverse-rotate the output coordinate into the source frame
                let dy = y as f32 - cy;
                let dx = x as f32 - cx;
                let sy = cy + dy * cos - dx * sin;
                let sx = cx + dy * sin + dx * cos;
                if sy < -0.5 || sy > h as f32 - 0.5 || sx < -0.5 || sx > w as f32 - 0.5 {
                    continue; // zero fill
                }
                for ci in 0..c {
                    out.set(bi, y, x, ci, sample_clamped(src, bi, sy, sx, ci));
                }
            }
        }
    }
    out
}

/// Center-crop a raw 424x424x3 image (0..=255 values) to the 170 stage.
pub fn crop_to_stage170(raw: &ImageTensor<f32>) -> Result<ImageTensor<f32>> {
    let (_, h, w, c) = raw.dims();
    if (h, w, c) != (RAW_SIZE, RAW_SIZE, 3) {
        return Err(Error::Shape(format!(
            "preprocess expects {RAW_SIZE}x{RAW_SIZE}x3 input, got {h}x{w}x{c}"
        )));
    }
    center_crop(raw, CROP1_SIZE, CROP1_SIZE)
}

/// Finish the chain from the 170 stage: downscale to 80, crop to 64,
/// scale into [0,1].
pub fn finish_from_stage170(stage: &ImageTensor<f32>) -> Result<ImageTensor<f32>> {
    let (_, h, w, c) = stage.dims();
    if (h, w, c) != (CROP1_SIZE, CROP1_SIZE, 3) {
        return Err(Error::Shape(format!(
            "stage tensor must be {CROP1_SIZE}x{CROP1_SIZE}x3, got {h}x{w}x{c}"
        )));
    }
    let resized = bilinear_resize(stage, RESIZE_SIZE, RESIZE_SIZE);
    let cropped = center_crop(&resized, CROP2_SIZE, CROP2_SIZE)?;
    Ok(cropped.map(|v| v / 255.0))
}

/// Full chain 424 -> 170 -> 80 -> 64 -> [0,1] on a raw-value tensor.
pub fn preprocess_raw(raw: &ImageTensor<f32>) -> Result<ImageTensor<f32>> {
    finish_from_stage170(&crop_to_stage170(raw)?)
}

/// Full chain on a decoded image file.
pub fn preprocess(img: &RgbImage) -> Result<ImageTensor<f32>> {
    preprocess_raw(&tensor_from_rgb8(img))
}

/// Append seeded random rotations of randomly chosen samples until the set
/// reaches `target_count`. Returns the grown set plus the source index of
/// every appended copy.
pub fn augment_rotate(
    images: &ImageTensor<f32>,
    target_count: usize,
    seed: u64,
) -> Result<(ImageTensor<f32>, Vec<usize>)> {
    let n = images.batch();
    if n == 0 {
        return Err(Error::Config("cannot augment an empty image set".into()));
    }
    if target_count < n {
        return Err(Error::Config(format!(
            "augment target {target_count} is below the current count {n}"
        )));
    }
    let mut rng = stream_rng(seed, 0xA06);
    let mut parts = vec![images.clone()];
    let mut sources = Vec::with_capacity(target_count - n);
    for _ in 0..target_count - n {
        let src = rng.gen_range(0..n);
        let angle = rng.gen_range(0.0..std::f32::consts::TAU);
        parts.push(rotate_bilinear(&images.sample(src), angle));
        sources.push(src);
    }
    Ok((ImageTensor::concat(&parts)?, sources))
}
