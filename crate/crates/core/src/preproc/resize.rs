use super::GrayImage;

/// Bilinear resize with pixel-centre alignment and edge clamping; results
/// are rounded half-up. A same-size call returns the input unchanged.
pub fn resize(img: &GrayImage, width: usize, height: usize) -> GrayImage {
    assert!(width >= 1 && height >= 1, "target dimensions must be positive");
    if img.width() == width && img.height() == height {
        return img.clone();
    }
    let (w, h) = (img.width(), img.height());
    let sx = w as f64 / width as f64;
    let sy = h as f64 / height as f64;
    let src = img.pixels();
    let at = |x: usize, y: usize| src[y * w + x] as f64;

    let mut out = Vec::with_capacity(width * height);
    for y in 0..height {
        let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let ty = fy - y0 as f64;
        for x in 0..width {
            let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let tx = fx - x0 as f64;
            let top = at(x0, y0) + (at(x1, y0) - at(x0, y0)) * tx;
            let bottom = at(x0, y1) + (at(x1, y1) - at(x0, y1)) * tx;
            let v = top + (bottom - top) * ty;
            out.push((v + 0.5).floor().clamp(0.0, 255.0) as u8);
        }
    }
    GrayImage::from_raw(width, height, out).expect("sized above")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_size_is_identity() {
        let px: Vec<u8> = (0..256 * 256).map(|i| (i * 7 % 251) as u8).collect();
        let g = GrayImage::from_raw(256, 256, px).unwrap();
        assert_eq!(resize(&g, 256, 256), g);
    }

    #[test]
    fn bilinear_midpoint() {
        let g = GrayImage::from_raw(2, 2, vec![0, 0, 100, 100]).unwrap();
        assert_eq!(resize(&g, 1, 1).pixels(), &[50]);
    }

    #[test]
    fn halving_shape() {
        let g = GrayImage::from_raw(512, 512, vec![9; 512 * 512]).unwrap();
        let r = resize(&g, 256, 256);
        assert_eq!((r.width(), r.height()), (256, 256));
        assert!(r.pixels().iter().all(|&p| p == 9));
    }

    #[test]
    fn upscale_clamps_edges() {
        let g = GrayImage::from_raw(2, 1, vec![0, 200]).unwrap();
        let r = resize(&g, 4, 1);
        assert_eq!(r.pixels(), &[0, 50, 150, 200]);
    }
}
