//! PNG decoding into the core image type and 8-bit encoding back out.

use std::path::Path;

use lacon_core::signals::RgbImage;

use crate::error::{Error, IoContext, Result};

/// Decodes any supported image file to RGB with channels in `[0, 1]`.
/// Alpha is dropped and 16-bit inputs are scaled, not truncated.
pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    let bytes = std::fs::read(path).at(path)?;
    let decoded = image::load_from_memory(&bytes).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let (w, h) = (decoded.width(), decoded.height());
    // Going through f32 would perturb k/255 in the last bits.
    let data: Vec<[f64; 3]> = match decoded {
        image::DynamicImage::ImageRgb16(_)
        | image::DynamicImage::ImageRgba16(_)
        | image::DynamicImage::ImageLuma16(_)
        | image::DynamicImage::ImageLumaA16(_) => decoded
            .to_rgb16()
            .pixels()
            .map(|p| p.0.map(|c| f64::from(c) / 65535.0))
            .collect(),
        _ => decoded
            .to_rgb8()
            .pixels()
            .map(|p| p.0.map(|c| f64::from(c) / 255.0))
            .collect(),
    };
    Ok(RgbImage::new(w as usize, h as usize, data)?)
}

/// Quantizes to 8 bits per channel (round to nearest).
pub fn to_rgb8(img: &RgbImage) -> image::RgbImage {
    let mut out = image::RgbImage::new(img.width() as u32, img.height() as u32);
    for (dst, src) in out.pixels_mut().zip(img.data()) {
        dst.0 = src.map(|c| (c.clamp(0.0, 1.0) * 255.0).round() as u8);
    }
    out
}

pub fn encode_png(img: &RgbImage) -> Result<Vec<u8>> {
    let mut buf = std::io::Cursor::new(Vec::new());
    to_rgb8(img)
        .write_to(&mut buf, image::ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: "<memory>".into(),
            source,
        })?;
    Ok(buf.into_inner())
}

pub fn save_png(path: &Path, img: &RgbImage) -> Result<()> {
    std::fs::write(path, encode_png(img)?).at(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eight_bit_values_survive_a_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ramp.png");
        let data: Vec<[f64; 3]> = (0..256)
            .map(|i| {
                let v = i as f64 / 255.0;
                [v, (255 - i) as f64 / 255.0, v]
            })
            .collect();
        let img = RgbImage::new(16, 16, data).unwrap();
        save_png(&path, &img).unwrap();
        assert_eq!(load_rgb(&path).unwrap(), img);
    }

    #[test]
    fn garbage_is_a_decode_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.png");
        std::fs::write(&path, b"\x89PNG not really").unwrap();
        assert!(matches!(load_rgb(&path), Err(Error::Image { .. })));
    }
}
