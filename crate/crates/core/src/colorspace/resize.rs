use super::{AbImage, GrayImage};

/// Bilinear resampling of an interleaved `N`-channel plane with half-pixel
/// centers and edge clamping. No antialiasing filter is applied.
pub fn resize_bilinear<const N: usize>(
    src: &[[f32; N]],
    height: usize,
    width: usize,
    new_height: usize,
    new_width: usize,
) -> Vec<[f32; N]> {
    assert_eq!(src.len(), height * width);
    if height == new_height && width == new_width {
        return src.to_vec();
    }
    let sy = height as f64 / new_height as f64;
    let sx = width as f64 / new_width as f64;
    let taps = |i: usize, scale: f64, len: usize| {
        let pos = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
        let i0 = (pos.floor() as usize).min(len - 1);
        let i1 = (i0 + 1).min(len - 1);
        let t = (pos - i0 as f64).clamp(0.0, 1.0);
        (i0, i1, t)
    };
    let cols: Vec<_> = (0..new_width).map(|x| taps(x, sx, width)).collect();
    let mut out = Vec::with_capacity(new_height * new_width);
    for y in 0..new_height {
        let (y0, y1, ty) = taps(y, sy, height);
        for &(x0, x1, tx) in &cols {
            let mut px = [0f32; N];
            for (c, v) in px.iter_mut().enumerate() {
                let top = src[y0 * width + x0][c] as f64 * (1.0 - tx) + src[y0 * width + x1][c] as f64 * tx;
                let bot = src[y1 * width + x0][c] as f64 * (1.0 - tx) + src[y1 * width + x1][c] as f64 * tx;
                *v = (top * (1.0 - ty) + bot * ty) as f32;
            }
            out.push(px);
        }
    }
    out
}

pub fn resize_gray(gray: &GrayImage, height: usize, width: usize) -> GrayImage {
    let src: Vec<[f32; 1]> = gray.l.iter().map(|&v| [v]).collect();
    let l = resize_bilinear(&src, gray.height, gray.width, height, width).into_iter().map(|[v]| v).collect();
    GrayImage { height, width, l }
}

pub fn resize_ab(ab: &AbImage, height: usize, width: usize) -> AbImage {
    AbImage { height, width, ab: resize_bilinear(&ab.ab, ab.height, ab.width, height, width) }
}
