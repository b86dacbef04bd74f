//! Dense kernels: strided single-precision GEMM and image/column reshapes
//! for "same"-padded dilated convolution.

/// Row/column strides of a matrix operand.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Layout {
    pub rs: usize,
    pub cs: usize,
}

impl Layout {
    pub fn row_major(cols: usize) -> Self {
        Self { rs: cols, cs: 1 }
    }
    /// Transpose of a row-major matrix whose rows are `ld` apart.
    pub fn transposed(ld: usize) -> Self {
        Self { rs: 1, cs: ld }
    }
}

fn extent(rows: usize, cols: usize, l: Layout) -> usize {
    if rows == 0 || cols == 0 {
        0
    } else {
        (rows - 1) * l.rs + (cols - 1) * l.cs + 1
    }
}

/// `c = a · b + beta · c` for an `m×k` by `k×n` product.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: &[f32], la: Layout, b: &[f32], lb: Layout, beta: f32, c: &mut [f32], lc: Layout) {
    assert!(a.len() >= extent(m, k, la));
    assert!(b.len() >= extent(k, n, lb));
    assert!(c.len() >= extent(m, n, lc));
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            la.rs as isize,
            la.cs as isize,
            b.as_ptr(),
            lb.rs as isize,
            lb.cs as isize,
            beta,
            c.as_mut_ptr(),
            lc.rs as isize,
            lc.cs as isize,
        );
    }
}

/// Valid destination range `[x0, x1)` for a source offset `off` along an
/// axis of length `len`.
fn valid_range(len: usize, off: isize) -> (usize, usize) {
    let x0 = (-off).clamp(0, len as isize) as usize;
    let x1 = (len as isize - off).clamp(0, len as isize) as usize;
    (x0, x1.max(x0))
}

/// Unfolds one `c×h×w` image into a `(c·k·k)×(h·w)` matrix with zero padding
/// `dilation·(k/2)`.
pub(crate) fn im2col(x: &[f32], c: usize, h: usize, w: usize, k: usize, dilation: usize, col: &mut [f32]) {
    let pad = (dilation * (k / 2)) as isize;
    let hw = h * w;
    for ci in 0..c {
        let src = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            let oy = (ky * dilation) as isize - pad;
            for kx in 0..k {
                let ox = (kx * dilation) as isize - pad;
                let row = (ci * k + ky) * k + kx;
                let dst = &mut col[row * hw..(row + 1) * hw];
                let (x0, x1) = valid_range(w, ox);
                for y in 0..h {
                    let sy = y as isize + oy;
                    let drow = &mut dst[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        drow.fill(0.0);
                        continue;
                    }
                    let base = sy as usize * w;
                    drow[..x0].fill(0.0);
                    drow[x1..].fill(0.0);
                    if x1 == x0 {
                        continue;
                    }
                    let s0 = (x0 as isize + ox) as usize;
                    drow[x0..x1].copy_from_slice(&src[base + s0..base + s0 + (x1 - x0)]);
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates columns back into `dx`.
pub(crate) fn col2im(col: &[f32], c: usize, h: usize, w: usize, k: usize, dilation: usize, dx: &mut [f32]) {
    let pad = (dilation * (k / 2)) as isize;
    let hw = h * w;
    for ci in 0..c {
        let dst = &mut dx[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            let oy = (ky * dilation) as isize - pad;
            for kx in 0..k {
                let ox = (kx * dilation) as isize - pad;
                let row = (ci * k + ky) * k + kx;
                let src = &col[row * hw..(row + 1) * hw];
                let (x0, x1) = valid_range(w, ox);
                for y in 0..h {
                    let sy = y as isize + oy;
                    if sy < 0 || sy >= h as isize || x1 == x0 {
                        continue;
                    }
                    let base = sy as usize * w;
                    let s0 = (x0 as isize + ox) as usize;
                    for (d, s) in dst[base + s0..base + s0 + (x1 - x0)].iter_mut().zip(&src[y * w + x0..y * w + x1]) {
                        *d += s;
                    }
                }
            }
        }
    }
}
