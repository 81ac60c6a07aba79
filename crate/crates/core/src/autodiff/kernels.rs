//! Raw forward/backward kernels over flat buffers. Shapes are validated by the
//! tape before these are called.

use crate::tensor::Element;

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }

    fn out_plane(&self) -> usize {
        self.out_h * self.out_w
    }

    fn in_len(&self) -> usize {
        self.in_channels * self.height * self.width
    }
}

/// Unfolds one sample (Cin×H×W) into a (Cin·kh·kw)×(oh·ow) patch matrix.
fn im2col<T: Element>(g: &ConvGeometry, x: &[T], cols: &mut [T]) {
    let plane = g.out_plane();
    let pad = g.padding as isize;
    for ci in 0..g.in_channels {
        let src = &x[ci * g.height * g.width..(ci + 1) * g.height * g.width];
        for ki in 0..g.kernel_h {
            for kj in 0..g.kernel_w {
                let row = (ci * g.kernel_h + ki) * g.kernel_w + kj;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ki) as isize - pad;
                    let line = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if iy < 0 || iy >= g.height as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src_row = &src[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - pad;
                        *v = if ix < 0 || ix >= g.width as isize {
                            T::zero()
                        } else {
                            src_row[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the sample.
fn col2im<T: Element>(g: &ConvGeometry, cols: &[T], dx: &mut [T]) {
    let plane = g.out_plane();
    let pad = g.padding as isize;
    for ci in 0..g.in_channels {
        let dst = &mut dx[ci * g.height * g.width..(ci + 1) * g.height * g.width];
        for ki in 0..g.kernel_h {
            for kj in 0..g.kernel_w {
                let row = (ci * g.kernel_h + ki) * g.kernel_w + kj;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ki) as isize - pad;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let dst_row = &mut dst[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for ox in 0..g.out_w {
                        let ix = (ox * g.stride + kj) as isize - pad;
                        if ix >= 0 && ix < g.width as isize {
                            dst_row[ix as usize] = dst_row[ix as usize] + src[oy * g.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward<T: Element>(
    g: &ConvGeometry,
    x: &[T],
    weight: &[T],
    bias: &[T],
) -> Vec<T> {
    let plane = g.out_plane();
    let k = g.patch_len();
    let mut out = vec![T::zero(); g.batch * g.out_channels * plane];
    let mut cols = vec![T::zero(); k * plane];
    for n in 0..g.batch {
        im2col(g, &x[n * g.in_len()..(n + 1) * g.in_len()], &mut cols);
        let y = &mut out[n * g.out_channels * plane..(n + 1) * g.out_channels * plane];
        for (co, row) in y.chunks_exact_mut(plane).enumerate() {
            row.fill(bias[co]);
        }
        T::gemm(
            g.out_channels,
            k,
            plane,
            T::one(),
            weight,
            k as isize,
            1,
            &cols,
            plane as isize,
            1,
            T::one(),
            y,
            plane as isize,
            1,
        );
    }
    out
}

/// Gradients of a convolution; each output is computed only when requested.
pub(crate) struct ConvGrads<T> {
    pub input: Option<Vec<T>>,
    pub weight: Option<Vec<T>>,
    pub bias: Option<Vec<T>>,
}

pub(crate) fn conv2d_backward<T: Element>(
    g: &ConvGeometry,
    x: &[T],
    weight: &[T],
    dy: &[T],
    want: (bool, bool, bool),
) -> ConvGrads<T> {
    let plane = g.out_plane();
    let k = g.patch_len();
    let (want_x, want_w, want_b) = want;
    let mut dx = want_x.then(|| vec![T::zero(); g.batch * g.in_len()]);
    let mut dw = want_w.then(|| vec![T::zero(); g.out_channels * k]);
    let db = want_b.then(|| {
        let mut db = vec![T::zero(); g.out_channels];
        for n in 0..g.batch {
            for (co, acc) in db.iter_mut().enumerate() {
                let off = (n * g.out_channels + co) * plane;
                *acc = *acc + dy[off..off + plane].iter().copied().sum::<T>();
            }
        }
        db
    });
    let mut cols = vec![T::zero(); k * plane];
    for n in 0..g.batch {
        let dy_n = &dy[n * g.out_channels * plane..(n + 1) * g.out_channels * plane];
        if let Some(dw) = dw.as_mut() {
            im2col(g, &x[n * g.in_len()..(n + 1) * g.in_len()], &mut cols);
            // dW += dY · colsᵀ
            T::gemm(
                g.out_channels,
                plane,
                k,
                T::one(),
                dy_n,
                plane as isize,
                1,
                &cols,
                1,
                plane as isize,
                T::one(),
                dw,
                k as isize,
                1,
            );
        }
        if let Some(dx) = dx.as_mut() {
            // dcols = Wᵀ · dY
            T::gemm(
                k,
                g.out_channels,
                plane,
                T::one(),
                weight,
                1,
                k as isize,
                dy_n,
                plane as isize,
                1,
                T::zero(),
                &mut cols,
                plane as isize,
                1,
            );
            col2im(g, &cols, &mut dx[n * g.in_len()..(n + 1) * g.in_len()]);
        }
    }
    ConvGrads {
        input: dx,
        weight: dw,
        bias: db,
    }
}

/// `out[n, g] = Σ_f x[n, f] · w[g, f] + b[g]`
pub(crate) fn dense_forward<T: Element>(
    n: usize,
    f: usize,
    g: usize,
    x: &[T],
    w: &[T],
    b: &[T],
) -> Vec<T> {
    let mut out = Vec::with_capacity(n * g);
    for _ in 0..n {
        out.extend_from_slice(b);
    }
    T::gemm(
        n,
        f,
        g,
        T::one(),
        x,
        f as isize,
        1,
        w,
        1,
        f as isize,
        T::one(),
        &mut out,
        g as isize,
        1,
    );
    out
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn dense_backward<T: Element>(
    n: usize,
    f: usize,
    g: usize,
    x: &[T],
    w: &[T],
    dy: &[T],
    want: (bool, bool, bool),
) -> ConvGrads<T> {
    let dx = want.0.then(|| {
        let mut dx = vec![T::zero(); n * f];
        T::gemm(
            n,
            g,
            f,
            T::one(),
            dy,
            g as isize,
            1,
            w,
            f as isize,
            1,
            T::zero(),
            &mut dx,
            f as isize,
            1,
        );
        dx
    });
    let dw = want.1.then(|| {
        let mut dw = vec![T::zero(); g * f];
        T::gemm(
            g,
            n,
            f,
            T::one(),
            dy,
            1,
            g as isize,
            x,
            f as isize,
            1,
            T::zero(),
            &mut dw,
            f as isize,
            1,
        );
        dw
    });
    let db = want.2.then(|| {
        let mut db = vec![T::zero(); g];
        for row in dy.chunks_exact(g) {
            for (acc, &v) in db.iter_mut().zip(row) {
                *acc = *acc + v;
            }
        }
        db
    });
    ConvGrads {
        input: dx,
        weight: dw,
        bias: db,
    }
}
