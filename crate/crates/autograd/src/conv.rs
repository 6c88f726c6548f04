//! im2col style helpers for 1-D convolutions over `[batch, channels, length]`.

/// Geometry shared by `unfold` and `fold`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Geometry {
    pub batch: usize,
    pub channels: usize,
    /// Length of the signal being indexed.
    pub signal_len: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    /// Number of sliding positions (columns per batch item).
    pub positions: usize,
}

impl Geometry {
    #[inline]
    fn source_index(&self, i: usize, kk: usize) -> Option<usize> {
        let pos = (i * self.stride + kk) as isize - self.pad as isize;
        if pos >= 0 && (pos as usize) < self.signal_len {
            Some(pos as usize)
        } else {
            None
        }
    }
}

/// Gather `[channels*kernel, batch*positions]` columns from a signal.
pub(crate) fn unfold(src: &[f64], g: Geometry) -> Vec<f64> {
    let cols = g.batch * g.positions;
    let mut out = vec![0.0; g.channels * g.kernel * cols];
    for c in 0..g.channels {
        for kk in 0..g.kernel {
            let row = &mut out[(c * g.kernel + kk) * cols..(c * g.kernel + kk + 1) * cols];
            for b in 0..g.batch {
                let base = (b * g.channels + c) * g.signal_len;
                for i in 0..g.positions {
                    if let Some(p) = g.source_index(i, kk) {
                        row[b * g.positions + i] = src[base + p];
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`unfold`]: scatter-add columns back into a signal.
pub(crate) fn fold(cols: &[f64], g: Geometry, dst: &mut [f64]) {
    let ncols = g.batch * g.positions;
    for c in 0..g.channels {
        for kk in 0..g.kernel {
            let row = &cols[(c * g.kernel + kk) * ncols..(c * g.kernel + kk + 1) * ncols];
            for b in 0..g.batch {
                let base = (b * g.channels + c) * g.signal_len;
                for i in 0..g.positions {
                    if let Some(p) = g.source_index(i, kk) {
                        dst[base + p] += row[b * g.positions + i];
                    }
                }
            }
        }
    }
}

/// `[batch, channels, len]` -> `[channels, batch*len]`.
pub(crate) fn to_channel_major(x: &[f64], batch: usize, channels: usize, len: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for b in 0..batch {
        for c in 0..channels {
            let s = (b * channels + c) * len;
            let d = c * batch * len + b * len;
            out[d..d + len].copy_from_slice(&x[s..s + len]);
        }
    }
    out
}

/// `[channels, batch*len]` -> `[batch, channels, len]`.
pub(crate) fn from_channel_major(x: &[f64], batch: usize, channels: usize, len: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for b in 0..batch {
        for c in 0..channels {
            let d = (b * channels + c) * len;
            let s = c * batch * len + b * len;
            out[d..d + len].copy_from_slice(&x[s..s + len]);
        }
    }
    out
}
