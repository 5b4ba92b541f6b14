use crate::image::{luminance, Image, RgbImage};

/// Highlight radius added around bright pixels.
pub const MASK_DILATION: usize = 2;

/// Pixels whose luma exceeds `threshold`, dilated by [`MASK_DILATION`].
pub fn specular_mask(rgb: &RgbImage, luminance_threshold: f64) -> Image<bool> {
    let (w, h) = (rgb.width(), rgb.height());
    let bright = rgb.map(|c| luminance(*c) > luminance_threshold);
    let r = MASK_DILATION;
    // Separable max filter with a square (Chebyshev) footprint.
    let horiz = Image::from_fn(w, h, |u, v| {
        (u.saturating_sub(r)..=(u + r).min(w - 1)).any(|x| *bright.get(x, v))
    });
    Image::from_fn(w, h, |u, v| {
        (v.saturating_sub(r)..=(v + r).min(h - 1)).any(|y| *horiz.get(u, y))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn black_and_white_images() {
        let black = Image::filled(20, 10, [0.0f32; 3]);
        assert!(specular_mask(&black, 0.9).as_slice().iter().all(|m| !m));
        let white = Image::filled(20, 10, [1.0f32; 3]);
        assert!(specular_mask(&white, 0.9).as_slice().iter().all(|m| *m));
    }

    #[test]
    fn dilation_is_two_pixels() {
        let mut img = Image::filled(11, 11, [0.1f32; 3]);
        img.set(5, 5, [1.0; 3]);
        let mask = specular_mask(&img, 0.9);
        let count = mask.as_slice().iter().filter(|m| **m).count();
        assert_eq!(count, 25);
        assert!(*mask.get(3, 7) && !*mask.get(2, 5));
    }
}
