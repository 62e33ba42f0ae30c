use std::path::Path;

use ::image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::image::{Image, Mask, Plane};

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn img_err(path: &Path) -> impl FnOnce(::image::ImageError) -> Error + '_ {
    move |source| Error::Image {
        path: path.to_path_buf(),
        source,
    }
}

fn dims(w: usize, h: usize, path: &Path) -> Result<(u32, u32)> {
    match (u32::try_from(w), u32::try_from(h)) {
        (Ok(w), Ok(h)) if w > 0 && h > 0 => Ok((w, h)),
        _ => Err(Error::invalid(path.display().to_string(), format!("cannot write a {w}x{h} image"))),
    }
}

/// 8-bit RGB PNG, values clamped to `[0, 1]`.
pub fn save_image(path: &Path, img: &Image) -> Result<()> {
    let (w, h) = dims(img.width, img.height, path)?;
    let buf: RgbImage = ImageBuffer::from_fn(w, h, |x, y| Rgb(img.get(x as usize, y as usize).map(to_u8)));
    buf.save(path).map_err(img_err(path))
}

pub fn load_image(path: &Path) -> Result<Image> {
    let buf = ::image::open(path).map_err(img_err(path))?.to_rgb8();
    let (w, h) = (buf.width() as usize, buf.height() as usize);
    let mut img = Image::new(w, h);
    for (x, y, p) in buf.enumerate_pixels() {
        img.set(x as usize, y as usize, p.0.map(|c| c as f64 / 255.0));
    }
    Ok(img)
}

/// 8-bit grayscale PNG of a scalar plane, values clamped to `[0, 1]`.
pub fn save_plane(path: &Path, plane: &Plane) -> Result<()> {
    let (w, h) = dims(plane.width, plane.height, path)?;
    let buf: GrayImage = ImageBuffer::from_fn(w, h, |x, y| Luma([to_u8(plane.get(x as usize, y as usize))]));
    buf.save(path).map_err(img_err(path))
}

/// Single-channel PNG with 0 / 255.
pub fn save_mask(path: &Path, mask: &Mask) -> Result<()> {
    let (w, h) = dims(mask.width, mask.height, path)?;
    let buf: GrayImage = ImageBuffer::from_fn(w, h, |x, y| Luma([if mask.get(x as usize, y as usize) { 255 } else { 0 }]));
    buf.save(path).map_err(img_err(path))
}

/// Reads a mask; any value at or above 128 is set.
pub fn load_mask(path: &Path) -> Result<Mask> {
    let buf = ::image::open(path).map_err(img_err(path))?.to_luma8();
    let mut m = Mask::new(buf.width() as usize, buf.height() as usize);
    for (d, p) in m.data.iter_mut().zip(buf.pixels()) {
        *d = p.0[0] >= 128;
    }
    Ok(m)
}
