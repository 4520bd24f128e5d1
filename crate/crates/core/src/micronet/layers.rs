//! Per-sample kernels: 3×3 same-padded convolution and 2×2 max pooling.
//!
//! Feature maps are channel-major, `[channels][height][width]`.

/// Range of output positions `p` for which `p + offset` lands inside `0..len`.
#[inline]
fn valid_range(len: usize, offset: isize) -> (usize, usize) {
    let lo = if offset < 0 { (-offset) as usize } else { 0 };
    let hi = if offset > 0 {
        len.saturating_sub(offset as usize)
    } else {
        len
    };
    (lo.min(hi), hi)
}

/// `out[o] = bias[o] + Σ_c weight[o][c] ⋆ input[c]`, zero padding of one pixel.
pub(crate) fn conv3x3_forward(
    input: &[f64],
    in_channels: usize,
    height: usize,
    width: usize,
    weight: &[f64],
    bias: &[f64],
    out: &mut [f64],
) {
    let hw = height * width;
    let out_channels = bias.len();
    debug_assert_eq!(input.len(), in_channels * hw);
    debug_assert_eq!(weight.len(), out_channels * in_channels * 9);
    debug_assert_eq!(out.len(), out_channels * hw);

    for o in 0..out_channels {
        let out_o = &mut out[o * hw..(o + 1) * hw];
        out_o.fill(bias[o]);
        for c in 0..in_channels {
            let in_c = &input[c * hw..(c + 1) * hw];
            let kernel = &weight[(o * in_channels + c) * 9..(o * in_channels + c + 1) * 9];
            for ky in 0..3 {
                let dy = ky as isize - 1;
                let (y0, y1) = valid_range(height, dy);
                for kx in 0..3 {
                    let dx = kx as isize - 1;
                    let (x0, x1) = valid_range(width, dx);
                    let w = kernel[ky * 3 + kx];
                    for y in y0..y1 {
                        let iy = (y as isize + dy) as usize;
                        let src = &in_c[iy * width..(iy + 1) * width];
                        let dst = &mut out_o[y * width..(y + 1) * width];
                        let sx0 = (x0 as isize + dx) as usize;
                        for (d, s) in dst[x0..x1].iter_mut().zip(&src[sx0..sx0 + (x1 - x0)]) {
                            *d += w * s;
                        }
                    }
                }
            }
        }
    }
}

/// Accumulates the gradients of a 3×3 convolution.
///
/// Each of `grad_input`, `grad_weight` and `grad_bias` is optional so callers
/// only pay for what they need. All three accumulate (`+=`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv3x3_backward(
    input: &[f64],
    in_channels: usize,
    height: usize,
    width: usize,
    weight: &[f64],
    grad_out: &[f64],
    mut grad_input: Option<&mut [f64]>,
    mut grad_weight: Option<&mut [f64]>,
    grad_bias: Option<&mut [f64]>,
) {
    let hw = height * width;
    let out_channels = grad_out.len() / hw;

    if let Some(gb) = grad_bias {
        for o in 0..out_channels {
            gb[o] += grad_out[o * hw..(o + 1) * hw].iter().sum::<f64>();
        }
    }

    for o in 0..out_channels {
        let g_o = &grad_out[o * hw..(o + 1) * hw];
        for c in 0..in_channels {
            let base = (o * in_channels + c) * 9;
            for ky in 0..3 {
                let dy = ky as isize - 1;
                let (y0, y1) = valid_range(height, dy);
                for kx in 0..3 {
                    let dx = kx as isize - 1;
                    let (x0, x1) = valid_range(width, dx);
                    let sx0 = (x0 as isize + dx) as usize;
                    let n = x1 - x0;
                    if let Some(gw) = grad_weight.as_deref_mut() {
                        let in_c = &input[c * hw..(c + 1) * hw];
                        let mut acc = 0.0;
                        for y in y0..y1 {
                            let iy = (y as isize + dy) as usize;
                            let src = &in_c[iy * width + sx0..iy * width + sx0 + n];
                            let g = &g_o[y * width + x0..y * width + x1];
                            acc += g.iter().zip(src).map(|(a, b)| a * b).sum::<f64>();
                        }
                        gw[base + ky * 3 + kx] += acc;
                    }
                    if let Some(gi) = grad_input.as_deref_mut() {
                        let w = weight[base + ky * 3 + kx];
                        let gi_c = &mut gi[c * hw..(c + 1) * hw];
                        for y in y0..y1 {
                            let iy = (y as isize + dy) as usize;
                            let dst = &mut gi_c[iy * width + sx0..iy * width + sx0 + n];
                            let g = &g_o[y * width + x0..y * width + x1];
                            for (d, s) in dst.iter_mut().zip(g) {
                                *d += w * s;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// 2×2 stride-2 max pooling. `argmax` receives the flat input index chosen
/// for each output cell (first maximum in scan order).
pub(crate) fn maxpool2_forward(
    input: &[f64],
    channels: usize,
    height: usize,
    width: usize,
    out: &mut [f64],
    argmax: &mut [u32],
) {
    let (oh, ow) = (height / 2, width / 2);
    for c in 0..channels {
        for y in 0..oh {
            for x in 0..ow {
                let mut best_i = c * height * width + (2 * y) * width + 2 * x;
                let mut best = input[best_i];
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = c * height * width + (2 * y + dy) * width + 2 * x + dx;
                    if input[i] > best {
                        best = input[i];
                        best_i = i;
                    }
                }
                let o = c * oh * ow + y * ow + x;
                out[o] = best;
                argmax[o] = best_i as u32;
            }
        }
    }
}

pub(crate) fn maxpool2_backward(grad_out: &[f64], argmax: &[u32], grad_input: &mut [f64]) {
    for (g, &i) in grad_out.iter().zip(argmax) {
        grad_input[i as usize] += g;
    }
}
