use std::path::Path;

use image::{DynamicImage, ImageBuffer, ImageReader, Luma};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Bit depth used when writing grayscale images.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

fn image_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Reads an 8- or 16-bit single-channel PNG or binary PGM as a 1×1×H×W
/// tensor with intensities divided by the format maximum.
pub fn load_grayscale(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    let img = reader
        .decode()
        .map_err(|e| image_err(path, e.to_string()))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f32> = match img {
        DynamicImage::ImageLuma8(buf) => buf.into_raw().into_iter().map(|v| v as f32 / 255.0).collect(),
        DynamicImage::ImageLuma16(buf) => buf
            .into_raw()
            .into_iter()
            .map(|v| v as f32 / 65535.0)
            .collect(),
        other => {
            return Err(image_err(
                path,
                format!("expected a single-channel image, found {:?}", other.color()),
            ))
        }
    };
    Tensor::new(&[1, 1, h, w], data)
}

fn quantize(v: f32, max: f32) -> f32 {
    (v.clamp(0.0, 1.0) * max).round()
}

/// Writes a 1×1×H×W (or H×W) tensor, clamping to [0, 1]. The container
/// format follows the file extension (`.png` or `.pgm`).
pub fn save_grayscale(path: impl AsRef<Path>, image: &Tensor, depth: BitDepth) -> Result<()> {
    let path = path.as_ref();
    let (h, w) = match image.shape() {
        &[1, 1, h, w] | &[h, w] => (h, w),
        s => return Err(Error::Shape(format!("cannot save tensor of shape {s:?} as an image"))),
    };
    let (w32, h32) = (w as u32, h as u32);
    let dynamic = match depth {
        BitDepth::Eight => {
            let raw = image.data().iter().map(|&v| quantize(v, 255.0) as u8).collect();
            DynamicImage::ImageLuma8(
                ImageBuffer::<Luma<u8>, Vec<u8>>::from_raw(w32, h32, raw).expect("buffer size"),
            )
        }
        BitDepth::Sixteen => {
            let raw = image.data().iter().map(|&v| quantize(v, 65535.0) as u16).collect();
            DynamicImage::ImageLuma16(
                ImageBuffer::<Luma<u16>, Vec<u16>>::from_raw(w32, h32, raw).expect("buffer size"),
            )
        }
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    dynamic
        .save(path)
        .map_err(|e| image_err(path, e.to_string()))
}

/// Writes an 8-bit RGB image from interleaved `[0, 1]` triples.
pub fn save_rgb(path: impl AsRef<Path>, width: usize, height: usize, rgb: &[f32]) -> Result<()> {
    let path = path.as_ref();
    if rgb.len() != width * height * 3 {
        return Err(Error::Shape("rgb buffer does not match image size".into()));
    }
    let raw = rgb.iter().map(|&v| quantize(v, 255.0) as u8).collect();
    let buf = ImageBuffer::<image::Rgb<u8>, Vec<u8>>::from_raw(width as u32, height as u32, raw)
        .expect("buffer size");
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    buf.save(path).map_err(|e| image_err(path, e.to_string()))
}
