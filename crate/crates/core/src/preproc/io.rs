//! PNG/JPEG decoding and PNG output.

use std::path::Path;

use image::ImageFormat;

use super::{GrayImage, PreprocError, Result, RgbImage};

/// Decodes PNG or JPEG bytes into RGB.
pub fn decode_rgb(bytes: &[u8]) -> Result<RgbImage> {
    let format = image::guess_format(bytes).map_err(|e| PreprocError::Decode(e.to_string()))?;
    if !matches!(format, ImageFormat::Png | ImageFormat::Jpeg) {
        return Err(PreprocError::Decode(format!("unsupported format {format:?}")));
    }
    let img = image::load_from_memory_with_format(bytes, format)
        .map_err(|e| PreprocError::Decode(e.to_string()))?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    RgbImage::from_raw(w, h, img.into_raw())
}

pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    let bytes = std::fs::read(path).map_err(|source| PreprocError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_rgb(&bytes).map_err(|e| match e {
        PreprocError::Decode(msg) => PreprocError::Decode(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn encode_png_rgb(img: &RgbImage) -> Vec<u8> {
    let mut out = Vec::new();
    let buf = image::RgbImage::from_raw(img.width() as u32, img.height() as u32, img.pixels().to_vec())
        .expect("dimensions checked at construction");
    buf.write_to(&mut std::io::Cursor::new(&mut out), ImageFormat::Png)
        .expect("PNG encoding to memory");
    out
}

pub fn save_png_rgb(path: &Path, img: &RgbImage) -> Result<()> {
    std::fs::write(path, encode_png_rgb(img)).map_err(|source| PreprocError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn save_png_gray(path: &Path, img: &GrayImage) -> Result<()> {
    let buf = image::GrayImage::from_raw(img.width() as u32, img.height() as u32, img.pixels().to_vec())
        .expect("dimensions checked at construction");
    buf.save_with_format(path, ImageFormat::Png).map_err(|e| match e {
        image::ImageError::IoError(source) => PreprocError::Io {
            path: path.to_path_buf(),
            source,
        },
        other => PreprocError::Decode(other.to_string()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip() {
        let img = RgbImage::from_raw(3, 2, (0..18).map(|v| v as u8 * 10).collect()).unwrap();
        let back = decode_rgb(&encode_png_rgb(&img)).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn text_is_rejected() {
        assert!(matches!(decode_rgb(b"hello, world"), Err(PreprocError::Decode(_))));
    }
}
