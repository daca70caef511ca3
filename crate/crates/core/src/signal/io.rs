use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use image::codecs::png::PngEncoder;
use image::imageops::FilterType;
use image::{DynamicImage, ExtendedColorType, ImageEncoder, ImageFormat, ImageReader};

use crate::error::{Result, SmtError};
use crate::signal::{LuminanceImage, RgbImage};

fn format_err(path: &Path, e: impl std::fmt::Display) -> SmtError {
    SmtError::Format(format!("{}: {e}", path.display()))
}

/// Reads a PNG into an RGB image scaled to `[0, 1]`. Gray images are
/// replicated into three channels and alpha is dropped.
pub fn load_image(path: impl AsRef<Path>) -> Result<RgbImage> {
    let path = path.as_ref();
    let reader = ImageReader::open(path)
        .map_err(|e| SmtError::io(path, e))?
        .with_guessed_format()
        .map_err(|e| SmtError::io(path, e))?;
    if reader.format() != Some(ImageFormat::Png) {
        return Err(format_err(path, "not a PNG file"));
    }
    let decoded = reader.decode().map_err(|e| format_err(path, e))?;
    decode_rgb(path, decoded)
}

fn decode_rgb(path: &Path, img: DynamicImage) -> Result<RgbImage> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let pixels: Vec<f64> = match img {
        DynamicImage::ImageLuma8(_) | DynamicImage::ImageLumaA8(_) => img
            .into_luma8()
            .into_raw()
            .into_iter()
            .flat_map(|v| {
                let x = v as f64 / 255.0;
                [x, x, x]
            })
            .collect(),
        DynamicImage::ImageRgb8(_) | DynamicImage::ImageRgba8(_) => img
            .into_rgb8()
            .into_raw()
            .into_iter()
            .map(|v| v as f64 / 255.0)
            .collect(),
        DynamicImage::ImageLuma16(_) | DynamicImage::ImageLumaA16(_) => img
            .into_luma16()
            .into_raw()
            .into_iter()
            .flat_map(|v| {
                let x = v as f64 / 65535.0;
                [x, x, x]
            })
            .collect(),
        DynamicImage::ImageRgb16(_) | DynamicImage::ImageRgba16(_) => img
            .into_rgb16()
            .into_raw()
            .into_iter()
            .map(|v| v as f64 / 65535.0)
            .collect(),
        other => {
            return Err(format_err(
                path,
                format!("unsupported pixel layout {:?}", other.color()),
            ))
        }
    };
    RgbImage::new(h, w, pixels)
}

fn quantize(v: f64, max: f64) -> f64 {
    (v.clamp(0.0, 1.0) * max).round()
}

fn write_png(path: &Path, bytes: &[u8], w: usize, h: usize, color: ExtendedColorType) -> Result<()> {
    let file = File::create(path).map_err(|e| SmtError::io(path, e))?;
    PngEncoder::new(BufWriter::new(file))
        .write_image(bytes, w as u32, h as u32, color)
        .map_err(|e| format_err(path, e))
}

/// Writes an 8-bit RGB PNG; values are clamped to `[0, 1]`.
pub fn save_rgb8(path: impl AsRef<Path>, img: &RgbImage) -> Result<()> {
    let bytes: Vec<u8> = img.pixels().iter().map(|&v| quantize(v, 255.0) as u8).collect();
    write_png(path.as_ref(), &bytes, img.width(), img.height(), ExtendedColorType::Rgb8)
}

/// Writes an 8-bit grayscale PNG; values are clamped to `[0, 1]`.
pub fn save_gray8(path: impl AsRef<Path>, img: &LuminanceImage) -> Result<()> {
    let bytes: Vec<u8> = img.pixels().iter().map(|&v| quantize(v, 255.0) as u8).collect();
    write_png(path.as_ref(), &bytes, img.width(), img.height(), ExtendedColorType::L8)
}

/// Writes a 16-bit grayscale PNG; values are clamped to `[0, 1]`.
pub fn save_gray16(path: impl AsRef<Path>, img: &LuminanceImage) -> Result<()> {
    // the encoder takes native-endian samples and swaps them itself
    let bytes: Vec<u8> = img
        .pixels()
        .iter()
        .flat_map(|&v| (quantize(v, 65535.0) as u16).to_ne_bytes())
        .collect();
    write_png(path.as_ref(), &bytes, img.width(), img.height(), ExtendedColorType::L16)
}

/// Bilinear resize to `height x width`.
pub fn resize_rgb(img: &RgbImage, height: usize, width: usize) -> Result<RgbImage> {
    if img.shape() == (height, width) {
        return Ok(img.clone());
    }
    let buf = image::Rgb32FImage::from_raw(
        img.width() as u32,
        img.height() as u32,
        img.pixels().iter().map(|&v| v as f32).collect(),
    )
    .ok_or_else(|| SmtError::Shape("RGB buffer does not match its dimensions".into()))?;
    let resized = image::imageops::resize(&buf, width as u32, height as u32, FilterType::Triangle);
    RgbImage::new(
        height,
        width,
        resized.into_raw().into_iter().map(|v| v as f64).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{GrayImage, Luma, Rgb};

    #[test]
    fn white_and_black_rgb_pixels() {
        let dir = tempfile::tempdir().unwrap();
        for (byte, expected) in [(255u8, 1.0), (0u8, 0.0)] {
            let path = dir.path().join(format!("p{byte}.png"));
            image::RgbImage::from_pixel(1, 1, Rgb([byte, byte, byte]))
                .save(&path)
                .unwrap();
            let img = load_image(&path).unwrap();
            assert_eq!(img.pixels(), &[expected; 3]);
        }
    }

    #[test]
    fn gray_png_is_replicated() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.png");
        GrayImage::from_pixel(2, 1, Luma([128u8])).save(&path).unwrap();
        let img = load_image(&path).unwrap();
        assert_eq!(img.shape(), (1, 2));
        for &v in img.pixels() {
            assert_eq!(v, 128.0 / 255.0);
        }
        assert!((img.pixels()[0] - 0.50196).abs() < 1e-5);
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = load_image("/nonexistent/definitely/missing.png").unwrap_err();
        assert!(matches!(err, SmtError::Io { .. }));
    }

    #[test]
    fn non_png_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.png");
        std::fs::write(&path, b"this is not an image").unwrap();
        assert!(matches!(load_image(&path), Err(SmtError::Format(_))));
    }

    #[test]
    fn gray16_round_trip_is_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.png");
        let img = LuminanceImage::from_fn(5, 7, |r, c| (r * 7 + c) as f64 / 34.0).unwrap();
        save_gray16(&path, &img).unwrap();
        let back = load_image(&path).unwrap();
        for r in 0..5 {
            for c in 0..7 {
                assert!((back.get(r, c)[0] - img.get(r, c)).abs() <= 0.5 / 65535.0 + 1e-12);
            }
        }
    }

    #[test]
    fn rgb8_round_trip_exact_on_byte_grid() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.png");
        let img = RgbImage::from_fn(3, 2, |r, c| {
            [(r * 40) as f64 / 255.0, (c * 90) as f64 / 255.0, 17.0 / 255.0]
        })
        .unwrap();
        save_rgb8(&path, &img).unwrap();
        assert_eq!(load_image(&path).unwrap(), img);
    }

    #[test]
    fn resize_keeps_constant_images_constant() {
        let img = RgbImage::from_fn(40, 30, |_, _| [0.25, 0.5, 0.75]).unwrap();
        let out = resize_rgb(&img, 32, 32).unwrap();
        assert_eq!(out.shape(), (32, 32));
        for px in out.pixels().chunks(3) {
            assert!((px[0] - 0.25).abs() < 1e-6 && (px[2] - 0.75).abs() < 1e-6);
        }
    }
}
