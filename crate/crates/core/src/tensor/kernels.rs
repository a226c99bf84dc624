//! Slice-level forward/backward kernels. Shapes are validated by the tape
//! before these run.

use crate::scalar::Scalar;

/// Output extent of a convolution or pooling window along one axis, or
/// `None` when the window does not fit.
pub fn conv_out_extent(size: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = size + 2 * pad;
    if kernel == 0 || stride == 0 || kernel > padded {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub in_c: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_c: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn col_rows(&self) -> usize {
        self.in_c * self.kh * self.kw
    }

    pub fn out_plane(&self) -> usize {
        self.out_h * self.out_w
    }

    pub fn in_image(&self) -> usize {
        self.in_c * self.in_h * self.in_w
    }

    pub fn out_image(&self) -> usize {
        self.out_c * self.out_plane()
    }

    /// Input coordinate for output position `o` and kernel offset `k`, or
    /// `None` when it falls into the zero padding.
    #[inline]
    fn source(&self, o: usize, k: usize, extent: usize) -> Option<usize> {
        let pos = (o * self.stride + k) as isize - self.pad as isize;
        (pos >= 0 && (pos as usize) < extent).then_some(pos as usize)
    }
}

/// Unfolds one `[C, H, W]` image into a `[C*kh*kw, OH*OW]` column matrix.
pub(crate) fn im2col<T: Scalar>(g: &ConvGeom, image: &[T], cols: &mut [T]) {
    let plane = g.out_plane();
    for c in 0..g.in_c {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..g.out_h {
                    let sy = g.source(oy, ki, g.in_h);
                    for ox in 0..g.out_w {
                        dst[oy * g.out_w + ox] = match (sy, g.source(ox, kj, g.in_w)) {
                            (Some(y), Some(x)) => image[(c * g.in_h + y) * g.in_w + x],
                            _ => T::zero(),
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-and-adds columns back into an image.
pub(crate) fn col2im<T: Scalar>(g: &ConvGeom, cols: &[T], image: &mut [T]) {
    let plane = g.out_plane();
    for c in 0..g.in_c {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..g.out_h {
                    let Some(y) = g.source(oy, ki, g.in_h) else { continue };
                    for ox in 0..g.out_w {
                        if let Some(x) = g.source(ox, kj, g.in_w) {
                            image[(c * g.in_h + y) * g.in_w + x] += src[oy * g.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Forward convolution. Returns the output and, when `keep_cols` is set,
/// the per-image column matrices for the kernel gradient.
pub(crate) fn conv2d_forward<T: Scalar>(
    g: &ConvGeom,
    input: &[T],
    kernel: &[T],
    bias: &[T],
    keep_cols: bool,
) -> (Vec<T>, Option<Vec<T>>) {
    let rows = g.col_rows();
    let plane = g.out_plane();
    let mut out = vec![T::zero(); g.batch * g.out_image()];
    let mut saved = keep_cols.then(|| vec![T::zero(); g.batch * rows * plane]);
    let mut scratch = vec![T::zero(); rows * plane];
    for b in 0..g.batch {
        let cols: &mut [T] = match saved.as_mut() {
            Some(all) => &mut all[b * rows * plane..(b + 1) * rows * plane],
            None => &mut scratch,
        };
        im2col(g, &input[b * g.in_image()..(b + 1) * g.in_image()], cols);
        let dst = &mut out[b * g.out_image()..(b + 1) * g.out_image()];
        for (oc, chunk) in dst.chunks_mut(plane).enumerate() {
            chunk.fill(bias[oc]);
        }
        T::gemm(g.out_c, rows, plane, T::one(), kernel, false, cols, false, T::one(), dst);
    }
    (out, saved)
}

pub(crate) struct ConvGrads<T> {
    pub input: Option<Vec<T>>,
    pub kernel: Option<Vec<T>>,
    pub bias: Option<Vec<T>>,
}

pub(crate) fn conv2d_backward<T: Scalar>(
    g: &ConvGeom,
    grad_out: &[T],
    input: &[T],
    kernel: &[T],
    saved_cols: Option<&[T]>,
    need: [bool; 3],
) -> ConvGrads<T> {
    let rows = g.col_rows();
    let plane = g.out_plane();
    let [need_in, need_k, need_b] = need;
    let mut d_in = need_in.then(|| vec![T::zero(); g.batch * g.in_image()]);
    let mut d_k = need_k.then(|| vec![T::zero(); g.out_c * rows]);
    let mut d_b = need_b.then(|| vec![T::zero(); g.out_c]);
    let mut scratch = vec![T::zero(); rows * plane];
    let mut d_cols = vec![T::zero(); rows * plane];
    for b in 0..g.batch {
        let go = &grad_out[b * g.out_image()..(b + 1) * g.out_image()];
        if let Some(db) = d_b.as_mut() {
            for (oc, chunk) in go.chunks(plane).enumerate() {
                db[oc] += chunk.iter().copied().sum::<T>();
            }
        }
        if let Some(dk) = d_k.as_mut() {
            let cols: &[T] = match saved_cols {
                Some(all) => &all[b * rows * plane..(b + 1) * rows * plane],
                None => {
                    im2col(g, &input[b * g.in_image()..(b + 1) * g.in_image()], &mut scratch);
                    &scratch
                }
            };
            // dK[oc, r] += Σ_p go[oc, p] * cols[r, p]
            T::gemm(g.out_c, plane, rows, T::one(), go, false, cols, true, T::one(), dk);
        }
        if let Some(di) = d_in.as_mut() {
            // dCols[r, p] = Σ_oc K[oc, r] * go[oc, p]
            T::gemm(rows, g.out_c, plane, T::one(), kernel, true, go, false, T::zero(), &mut d_cols);
            col2im(g, &d_cols, &mut di[b * g.in_image()..(b + 1) * g.in_image()]);
        }
    }
    ConvGrads { input: d_in, kernel: d_k, bias: d_b }
}

/// Window max over each `k x k` patch with the given stride. Returns values
/// and, per output element, the linear input index that won. Ties go to the
/// first element in row-major window order, i.e. the lowest linear index.
pub(crate) fn maxpool_forward<T: Scalar>(
    input: &[T],
    (b, c, h, w): (usize, usize, usize, usize),
    k: usize,
    stride: usize,
    (oh, ow): (usize, usize),
) -> (Vec<T>, Vec<usize>) {
    let mut out = Vec::with_capacity(b * c * oh * ow);
    let mut arg = Vec::with_capacity(b * c * oh * ow);
    for plane in 0..b * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + oy * stride * w + ox * stride;
                for ky in 0..k {
                    for kx in 0..k {
                        let idx = base + (oy * stride + ky) * w + ox * stride + kx;
                        if input[idx] > input[best] {
                            best = idx;
                        }
                    }
                }
                out.push(input[best]);
                arg.push(best);
            }
        }
    }
    (out, arg)
}

/// Per-(batch, channel) max over the spatial plane with first-index ties.
pub(crate) fn spatial_max<T: Scalar>(input: &[T], planes: usize, plane: usize) -> (Vec<T>, Vec<usize>) {
    let mut out = Vec::with_capacity(planes);
    let mut arg = Vec::with_capacity(planes);
    for p in 0..planes {
        let slice = &input[p * plane..(p + 1) * plane];
        let mut best = 0;
        for (i, &v) in slice.iter().enumerate().skip(1) {
            if v > slice[best] {
                best = i;
            }
        }
        out.push(slice[best]);
        arg.push(p * plane + best);
    }
    (out, arg)
}

pub(crate) fn spatial_mean<T: Scalar>(input: &[T], planes: usize, plane: usize) -> Vec<T> {
    let denom = T::from_usize(plane).expect("plane size fits the scalar type");
    input.chunks(plane).take(planes).map(|s| s.iter().copied().sum::<T>() / denom).collect()
}

/// Logistic function clamped to the open interval (0, 1).
///
/// In f32 the unclamped value rounds to exactly 1 above ~17 and to 0 below
/// ~-104; codes must stay strictly inside the interval.
#[inline]
pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    let one = T::one();
    let y = if x >= T::zero() {
        one / (one + (-x).exp())
    } else {
        let e = x.exp();
        e / (one + e)
    };
    let below_one = one - T::epsilon() / (one + one);
    y.max(T::min_positive_value()).min(below_one)
}
