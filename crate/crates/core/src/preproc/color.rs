use super::{GrayImage, RgbImage};

/// Luminance conversion `Y = 0.299 R + 0.587 G + 0.114 B`, rounded half-up.
///
/// Evaluated in integer thousandths so the rounding is exact.
pub fn to_grayscale(img: &RgbImage) -> GrayImage {
    let pixels = img
        .pixels()
        .chunks_exact(3)
        .map(|px| {
            let y = 299 * px[0] as u32 + 587 * px[1] as u32 + 114 * px[2] as u32;
            ((y + 500) / 1000) as u8
        })
        .collect();
    GrayImage::from_raw(img.width(), img.height(), pixels).expect("same dimensions")
}

/// Pixels below `threshold` become 0, all others 255.
pub fn binary_threshold(img: &GrayImage, threshold: u8) -> GrayImage {
    let pixels = img
        .pixels()
        .iter()
        .map(|&p| if p < threshold { 0 } else { 255 })
        .collect();
    GrayImage::from_raw(img.width(), img.height(), pixels).expect("same dimensions")
}
