//! Max pooling and the global/channel reductions the attention module needs.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::Tensor;

/// 2x2 window, stride 2. Returns the pooled map and the flat input index of
/// each window maximum; ties go to the first element in row-major scan order.
pub fn maxpool2d<S: Scalar>(x: &Tensor<S>) -> Result<(Tensor<S>, Vec<u32>)> {
    let (n, c, h, w) = x.dims4("maxpool2d_fwd")?;
    if h < 2 || w < 2 {
        return Err(Error::ShapeMismatch {
            op: "maxpool2d_fwd",
            lhs: x.shape().to_vec(),
            rhs: vec![n, c, 2, 2],
        });
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros(&[n, c, oh, ow]);
    let mut argmax = vec![0u32; n * c * oh * ow];
    let mut oi = 0;
    for ni in 0..n {
        for ci in 0..c {
            let base = (ni * c + ci) * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let i00 = base + (2 * oy) * w + 2 * ox;
                    let mut best_idx = i00;
                    let mut best = x.data()[i00];
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                        if x.data()[idx] > best {
                            best = x.data()[idx];
                            best_idx = idx;
                        }
                    }
                    out.data_mut()[oi] = best;
                    argmax[oi] = best_idx as u32;
                    oi += 1;
                }
            }
        }
    }
    Ok((out, argmax))
}

/// Route each output gradient back to its cached argmax.
pub fn maxpool2d_backward<S: Scalar>(
    input_shape: &[usize],
    argmax: &[u32],
    grad_out: &Tensor<S>,
) -> Result<Tensor<S>> {
    if argmax.len() != grad_out.len() {
        return Err(Error::ShapeMismatch {
            op: "maxpool2d_bwd",
            lhs: vec![argmax.len()],
            rhs: grad_out.shape().to_vec(),
        });
    }
    let mut grad_in = Tensor::zeros(input_shape);
    for (&idx, &g) in argmax.iter().zip(grad_out.data()) {
        grad_in.data_mut()[idx as usize] += g;
    }
    Ok(grad_in)
}

/// N x C x H x W -> N x C x 1 x 1, mean over the spatial axes.
pub fn global_avg_pool<S: Scalar>(x: &Tensor<S>) -> Result<Tensor<S>> {
    let (n, c, h, w) = x.dims4("global_avg_pool")?;
    let inv = S::one() / S::from_f64((h * w) as f64);
    let mut out = Tensor::zeros(&[n, c, 1, 1]);
    for (i, plane) in x.data().chunks(h * w).enumerate() {
        let mut acc = S::zero();
        for &v in plane {
            acc += v;
        }
        out.data_mut()[i] = acc * inv;
    }
    Ok(out)
}

pub fn global_avg_pool_backward<S: Scalar>(
    input_shape: &[usize],
    grad_out: &Tensor<S>,
) -> Result<Tensor<S>> {
    let (h, w) = (input_shape[2], input_shape[3]);
    let inv = S::one() / S::from_f64((h * w) as f64);
    let mut grad_in = Tensor::zeros(input_shape);
    for (plane, &g) in grad_in.data_mut().chunks_mut(h * w).zip(grad_out.data()) {
        let gv = g * inv;
        for v in plane {
            *v = gv;
        }
    }
    Ok(grad_in)
}

/// N x C x H x W -> N x C x 1 x 1, max over the spatial axes, with the flat
/// within-plane argmax for each (n, c).
pub fn global_max_pool<S: Scalar>(x: &Tensor<S>) -> Result<(Tensor<S>, Vec<u32>)> {
    let (n, c, h, w) = x.dims4("global_max_pool")?;
    let mut out = Tensor::zeros(&[n, c, 1, 1]);
    let mut argmax = vec![0u32; n * c];
    for (i, plane) in x.data().chunks(h * w).enumerate() {
        let mut best = plane[0];
        let mut best_idx = 0u32;
        for (j, &v) in plane.iter().enumerate().skip(1) {
            if v > best {
                best = v;
                best_idx = j as u32;
            }
        }
        out.data_mut()[i] = best;
        argmax[i] = best_idx;
    }
    Ok((out, argmax))
}

pub fn global_max_pool_backward<S: Scalar>(
    input_shape: &[usize],
    argmax: &[u32],
    grad_out: &Tensor<S>,
) -> Result<Tensor<S>> {
    let (h, w) = (input_shape[2], input_shape[3]);
    let mut grad_in = Tensor::zeros(input_shape);
    for (i, (plane, &g)) in grad_in
        .data_mut()
        .chunks_mut(h * w)
        .zip(grad_out.data())
        .enumerate()
    {
        plane[argmax[i] as usize] = g;
    }
    Ok(grad_in)
}

/// N x C x H x W -> N x 1 x H x W, mean over channels.
pub fn channel_avg<S: Scalar>(x: &Tensor<S>) -> Result<Tensor<S>> {
    let (n, c, h, w) = x.dims4("channel_avg")?;
    let hw = h * w;
    let inv = S::one() / S::from_f64(c as f64);
    let mut out = Tensor::zeros(&[n, 1, h, w]);
    for ni in 0..n {
        let out_plane = &mut out.data_mut()[ni * hw..(ni + 1) * hw];
        for ci in 0..c {
            let plane = &x.data()[(ni * c + ci) * hw..(ni * c + ci + 1) * hw];
            for (o, &v) in out_plane.iter_mut().zip(plane) {
                *o += v;
            }
        }
        for o in out_plane {
            *o *= inv;
        }
    }
    Ok(out)
}

pub fn channel_avg_backward<S: Scalar>(
    input_shape: &[usize],
    grad_out: &Tensor<S>,
) -> Result<Tensor<S>> {
    let c = input_shape[1];
    let hw = input_shape[2] * input_shape[3];
    let inv = S::one() / S::from_f64(c as f64);
    let mut grad_in = Tensor::zeros(input_shape);
    for ni in 0..input_shape[0] {
        let go = &grad_out.data()[ni * hw..(ni + 1) * hw];
        for ci in 0..c {
            let plane = &mut grad_in.data_mut()[(ni * c + ci) * hw..(ni * c + ci + 1) * hw];
            for (v, &g) in plane.iter_mut().zip(go) {
                *v = g * inv;
            }
        }
    }
    Ok(grad_in)
}

/// N x C x H x W -> N x 1 x H x W, max over channels; argmax holds the winning
/// channel per (n, h, w), ties to the lowest channel.
pub fn channel_max<S: Scalar>(x: &Tensor<S>) -> Result<(Tensor<S>, Vec<u32>)> {
    let (n, c, h, w) = x.dims4("channel_max")?;
    let hw = h * w;
    let mut out = Tensor::zeros(&[n, 1, h, w]);
    let mut argmax = vec![0u32; n * hw];
    for ni in 0..n {
        for p in 0..hw {
            let mut best = x.data()[ni * c * hw + p];
            let mut best_c = 0u32;
            for ci in 1..c {
                let v = x.data()[(ni * c + ci) * hw + p];
                if v > best {
                    best = v;
                    best_c = ci as u32;
                }
            }
            out.data_mut()[ni * hw + p] = best;
            argmax[ni * hw + p] = best_c;
        }
    }
    Ok((out, argmax))
}

pub fn channel_max_backward<S: Scalar>(
    input_shape: &[usize],
    argmax: &[u32],
    grad_out: &Tensor<S>,
) -> Result<Tensor<S>> {
    let c = input_shape[1];
    let hw = input_shape[2] * input_shape[3];
    let mut grad_in = Tensor::zeros(input_shape);
    for ni in 0..input_shape[0] {
        for p in 0..hw {
            let ci = argmax[ni * hw + p] as usize;
            grad_in.data_mut()[(ni * c + ci) * hw + p] = grad_out.data()[ni * hw + p];
        }
    }
    Ok(grad_in)
}

/// Stack two N x 1 x H x W maps into N x 2 x H x W.
pub fn concat_channels<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    let (n, ca, h, w) = a.dims4("concat_channels")?;
    let (nb, cb, hb, wb) = b.dims4("concat_channels")?;
    if (n, h, w) != (nb, hb, wb) {
        return Err(Error::ShapeMismatch {
            op: "concat_channels",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let hw = h * w;
    let mut out = Tensor::zeros(&[n, ca + cb, h, w]);
    for ni in 0..n {
        let dst = &mut out.data_mut()[ni * (ca + cb) * hw..(ni + 1) * (ca + cb) * hw];
        dst[..ca * hw].copy_from_slice(&a.data()[ni * ca * hw..(ni + 1) * ca * hw]);
        dst[ca * hw..].copy_from_slice(&b.data()[ni * cb * hw..(ni + 1) * cb * hw]);
    }
    Ok(out)
}

/// Undo [`concat_channels`] on a gradient.
pub fn split_channels<S: Scalar>(grad: &Tensor<S>, ca: usize) -> Result<(Tensor<S>, Tensor<S>)> {
    let (n, c, h, w) = grad.dims4("split_channels")?;
    let cb = c - ca;
    let hw = h * w;
    let mut a = Tensor::zeros(&[n, ca, h, w]);
    let mut b = Tensor::zeros(&[n, cb, h, w]);
    for ni in 0..n {
        let src = &grad.data()[ni * c * hw..(ni + 1) * c * hw];
        a.data_mut()[ni * ca * hw..(ni + 1) * ca * hw].copy_from_slice(&src[..ca * hw]);
        b.data_mut()[ni * cb * hw..(ni + 1) * cb * hw].copy_from_slice(&src[ca * hw..]);
    }
    Ok((a, b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_window_takes_max_and_routes_gradient() {
        let x = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, arg) = maxpool2d(&x).unwrap();
        assert_eq!(y.data(), &[4.0]);
        let g =
            maxpool2d_backward(&[1, 1, 2, 2], &arg, &Tensor::filled(&[1, 1, 1, 1], 1.0)).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn constant_window_ties_to_first_scan_index() {
        let x = Tensor::<f64>::filled(&[1, 1, 2, 2], 5.0);
        let (_, arg) = maxpool2d(&x).unwrap();
        assert_eq!(arg, vec![0]);
        let g =
            maxpool2d_backward(&[1, 1, 2, 2], &arg, &Tensor::filled(&[1, 1, 1, 1], 1.0)).unwrap();
        assert_eq!(g.data(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn floor_halving_chain_matches_model_sizes() {
        let mut x = Tensor::<f32>::zeros(&[1, 1, 150, 150]);
        let mut sizes = Vec::new();
        for _ in 0..4 {
            let (y, _) = maxpool2d(&x).unwrap();
            sizes.push((y.shape()[2], y.shape()[3]));
            x = y;
        }
        assert_eq!(sizes, vec![(75, 75), (37, 37), (18, 18), (9, 9)]);
    }

    #[test]
    fn odd_extent_drops_last_row_and_column() {
        let x = Tensor::from_vec(
            &[1, 1, 3, 3],
            vec![1.0, 2.0, 9.0, 3.0, 4.0, 9.0, 9.0, 9.0, 9.0],
        )
        .unwrap();
        let (y, _) = maxpool2d(&x).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data(), &[4.0]);
    }

    #[test]
    fn reductions_of_constant_return_constant() {
        let x = Tensor::<f64>::filled(&[2, 3, 4, 5], 2.5);
        assert!(global_avg_pool(&x)
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 2.5));
        assert!(global_max_pool(&x)
            .unwrap()
            .0
            .data()
            .iter()
            .all(|&v| v == 2.5));
        assert!(channel_avg(&x).unwrap().data().iter().all(|&v| v == 2.5));
        assert!(channel_max(&x).unwrap().0.data().iter().all(|&v| v == 2.5));
    }

    #[test]
    fn channel_reduction_shapes() {
        let x = Tensor::<f32>::zeros(&[2, 8, 5, 5]);
        assert_eq!(global_avg_pool(&x).unwrap().shape(), &[2, 8, 1, 1]);
        assert_eq!(channel_avg(&x).unwrap().shape(), &[2, 1, 5, 5]);
    }

    #[test]
    fn concat_then_split_roundtrips() {
        let a = Tensor::from_vec(&[1, 1, 1, 2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::from_vec(&[1, 1, 1, 2], vec![3.0, 4.0]).unwrap();
        let cat = concat_channels(&a, &b).unwrap();
        assert_eq!(cat.data(), &[1.0, 2.0, 3.0, 4.0]);
        let (ra, rb) = split_channels(&cat, 1).unwrap();
        assert_eq!(ra, a);
        assert_eq!(rb, b);
    }

    #[test]
    fn rejects_too_small_input() {
        let x = Tensor::<f32>::zeros(&[1, 1, 1, 4]);
        assert!(maxpool2d(&x).is_err());
    }
}
