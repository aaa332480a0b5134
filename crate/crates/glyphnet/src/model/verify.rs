//! The full gradient-verification suite: every layer plus the assembled
//! model, checked against 64-bit central differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cbam::{cbam_backward, cbam_forward, CbamParams};
use crate::error::Result;
use crate::model::{build_model, Model, ModelConfig};
use crate::tensor::conv::Conv2d;
use crate::tensor::dense::Dense;
use crate::tensor::gradcheck::{central_diff_check, GradCheckReport};
use crate::tensor::ops::{
    bce_logit_grad, bce_loss, relu, relu_backward, sigmoid, sigmoid_backward,
};
use crate::tensor::pool::{
    channel_avg, channel_avg_backward, channel_max, channel_max_backward, global_avg_pool,
    global_avg_pool_backward, global_max_pool, global_max_pool_backward, maxpool2d,
    maxpool2d_backward,
};
use crate::tensor::Tensor;

fn rand_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn no_skip(_: usize) -> bool {
    false
}

/// Model config small enough that finite differences over the whole network
/// stay cheap: 16 x 16 input collapsing to 1 x 1 after the four poolings.
pub fn verify_config() -> ModelConfig {
    ModelConfig {
        input_h: 16,
        input_w: 16,
        filters: [4, 4, 8, 8],
        kernel: 3,
        reduction: 4,
        spatial_kernel: 3,
        hidden: 8,
        threshold: 0.5,
    }
}

/// Run every layer check plus the assembled model and collect the records.
pub fn gradcheck_suite() -> Result<GradCheckReport> {
    let mut report = GradCheckReport::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0x6e74_6772);

    conv_checks(&mut report, &mut rng)?;
    dense_checks(&mut report, &mut rng)?;
    pool_checks(&mut report, &mut rng)?;
    gate_checks(&mut report, &mut rng)?;
    cbam_checks(&mut report, &mut rng)?;
    model_checks(&mut report, &mut rng)?;
    Ok(report)
}

fn conv_checks(report: &mut GradCheckReport, rng: &mut ChaCha8Rng) -> Result<()> {
    let layer = Conv2d::<f64>::new(2, 3, 3, rng)?;
    let x_shape = [2usize, 2, 6, 6];
    let x = Tensor::from_vec(&x_shape, rand_vec(rng, 2 * 2 * 6 * 6, -1.0, 1.0))?;
    let w_loss = rand_vec(rng, 2 * 3 * 6 * 6, -1.0, 1.0);
    let grad_out = Tensor::from_vec(&[2, 3, 6, 6], w_loss.clone())?;
    let (grad_x, grads) = layer.backward(&x, &grad_out)?;

    let mut theta = x.data().to_vec();
    report.push(central_diff_check(
        "conv.input",
        &mut theta,
        grad_x.data(),
        rng,
        no_skip,
        |t| {
            let xt = Tensor::from_vec(&x_shape, t.to_vec()).unwrap();
            dot(layer.forward(&xt).unwrap().data(), &w_loss)
        },
    ));

    let mut theta = layer.w.data().to_vec();
    report.push(central_diff_check(
        "conv.weight",
        &mut theta,
        grads.w.data(),
        rng,
        no_skip,
        |t| {
            let mut l = layer.clone();
            l.w = Tensor::from_vec(l.w.shape(), t.to_vec()).unwrap();
            dot(l.forward(&x).unwrap().data(), &w_loss)
        },
    ));

    let mut theta = layer.b.data().to_vec();
    report.push(central_diff_check(
        "conv.bias",
        &mut theta,
        grads.b.data(),
        rng,
        no_skip,
        |t| {
            let mut l = layer.clone();
            l.b = Tensor::from_vec(l.b.shape(), t.to_vec()).unwrap();
            dot(l.forward(&x).unwrap().data(), &w_loss)
        },
    ));
    Ok(())
}

fn dense_checks(report: &mut GradCheckReport, rng: &mut ChaCha8Rng) -> Result<()> {
    let layer = Dense::<f64>::new(5, 4, rng);
    let x = Tensor::from_vec(&[3, 5], rand_vec(rng, 15, -1.0, 1.0))?;
    let w_loss = rand_vec(rng, 12, -1.0, 1.0);
    let grad_out = Tensor::from_vec(&[3, 4], w_loss.clone())?;
    let (grad_x, grads) = layer.backward(&x, &grad_out)?;

    let mut theta = x.data().to_vec();
    report.push(central_diff_check(
        "dense.input",
        &mut theta,
        grad_x.data(),
        rng,
        no_skip,
        |t| {
            let xt = Tensor::from_vec(&[3, 5], t.to_vec()).unwrap();
            dot(layer.forward(&xt).unwrap().data(), &w_loss)
        },
    ));

    let mut theta = layer.w.data().to_vec();
    report.push(central_diff_check(
        "dense.weight",
        &mut theta,
        grads.w.data(),
        rng,
        no_skip,
        |t| {
            let mut l = layer.clone();
            l.w = Tensor::from_vec(l.w.shape(), t.to_vec()).unwrap();
            dot(l.forward(&x).unwrap().data(), &w_loss)
        },
    ));

    let mut theta = layer.b.data().to_vec();
    report.push(central_diff_check(
        "dense.bias",
        &mut theta,
        grads.b.data(),
        rng,
        no_skip,
        |t| {
            let mut l = layer.clone();
            l.b = Tensor::from_vec(l.b.shape(), t.to_vec()).unwrap();
            dot(l.forward(&x).unwrap().data(), &w_loss)
        },
    ));
    Ok(())
}

fn pool_checks(report: &mut GradCheckReport, rng: &mut ChaCha8Rng) -> Result<()> {
    let shape = [2usize, 3, 4, 4];
    let n = shape.iter().product();
    let x = Tensor::from_vec(&shape, rand_vec(rng, n, -1.0, 1.0))?;

    {
        let pool_shape = [2usize, 3, 2, 2];
        let w_loss = rand_vec(rng, pool_shape.iter().product(), -1.0, 1.0);
        let grad_out = Tensor::from_vec(&pool_shape, w_loss.clone())?;
        let (_, idx) = maxpool2d(&x)?;
        let grad_x = maxpool2d_backward(&shape, &idx, &grad_out)?;
        let mut theta = x.data().to_vec();
        report.push(central_diff_check(
            "maxpool.input",
            &mut theta,
            grad_x.data(),
            rng,
            no_skip,
            |t| {
                let xt = Tensor::from_vec(&shape, t.to_vec()).unwrap();
                dot(maxpool2d(&xt).unwrap().0.data(), &w_loss)
            },
        ));
    }

    {
        let w_loss = rand_vec(rng, 6, -1.0, 1.0);
        let grad_out = Tensor::from_vec(&[2, 3, 1, 1], w_loss.clone())?;
        let grad_x = global_avg_pool_backward(&shape, &grad_out)?;
        let mut theta = x.data().to_vec();
        report.push(central_diff_check(
            "global_avg_pool.input",
            &mut theta,
            grad_x.data(),
            rng,
            no_skip,
            |t| {
                let xt = Tensor::from_vec(&shape, t.to_vec()).unwrap();
                dot(global_avg_pool(&xt).unwrap().data(), &w_loss)
            },
        ));
    }

    {
        let w_loss = rand_vec(rng, 6, -1.0, 1.0);
        let grad_out = Tensor::from_vec(&[2, 3, 1, 1], w_loss.clone())?;
        let (_, idx) = global_max_pool(&x)?;
        let grad_x = global_max_pool_backward(&shape, &idx, &grad_out)?;
        let mut theta = x.data().to_vec();
        report.push(central_diff_check(
            "global_max_pool.input",
            &mut theta,
            grad_x.data(),
            rng,
            no_skip,
            |t| {
                let xt = Tensor::from_vec(&shape, t.to_vec()).unwrap();
                dot(global_max_pool(&xt).unwrap().0.data(), &w_loss)
            },
        ));
    }

    {
        let w_loss = rand_vec(rng, 2 * 16, -1.0, 1.0);
        let grad_out = Tensor::from_vec(&[2, 1, 4, 4], w_loss.clone())?;
        let grad_x = channel_avg_backward(&shape, &grad_out)?;
        let mut theta = x.data().to_vec();
        report.push(central_diff_check(
            "channel_avg.input",
            &mut theta,
            grad_x.data(),
            rng,
            no_skip,
            |t| {
                let xt = Tensor::from_vec(&shape, t.to_vec()).unwrap();
                dot(channel_avg(&xt).unwrap().data(), &w_loss)
            },
        ));
    }

    {
        let w_loss = rand_vec(rng, 2 * 16, -1.0, 1.0);
        let grad_out = Tensor::from_vec(&[2, 1, 4, 4], w_loss.clone())?;
        let (_, idx) = channel_max(&x)?;
        let grad_x = channel_max_backward(&shape, &idx, &grad_out)?;
        let mut theta = x.data().to_vec();
        report.push(central_diff_check(
            "channel_max.input",
            &mut theta,
            grad_x.data(),
            rng,
            no_skip,
            |t| {
                let xt = Tensor::from_vec(&shape, t.to_vec()).unwrap();
                dot(channel_max(&xt).unwrap().0.data(), &w_loss)
            },
        ));
    }
    Ok(())
}

fn gate_checks(report: &mut GradCheckReport, rng: &mut ChaCha8Rng) -> Result<()> {
    let shape = [4usize, 8];
    // Keep relu inputs away from the kink at zero.
    let x_relu: Vec<f64> = (0..32)
        .map(|_| {
            let mag = rng.gen_range(0.1..1.0);
            if rng.gen_bool(0.5) {
                mag
            } else {
                -mag
            }
        })
        .collect();
    let x = Tensor::from_vec(&shape, x_relu)?;
    let w_loss = rand_vec(rng, 32, -1.0, 1.0);
    let grad_out = Tensor::from_vec(&shape, w_loss.clone())?;
    let out = relu(&x);
    let grad_x = relu_backward(&out, &grad_out);
    let mut theta = x.data().to_vec();
    report.push(central_diff_check(
        "relu.input",
        &mut theta,
        grad_x.data(),
        rng,
        no_skip,
        |t| {
            let xt = Tensor::from_vec(&shape, t.to_vec()).unwrap();
            dot(relu(&xt).data(), &w_loss)
        },
    ));

    let x = Tensor::from_vec(&shape, rand_vec(rng, 32, -2.0, 2.0))?;
    let out = sigmoid(&x);
    let grad_x = sigmoid_backward(&out, &grad_out);
    let mut theta = x.data().to_vec();
    report.push(central_diff_check(
        "sigmoid.input",
        &mut theta,
        grad_x.data(),
        rng,
        no_skip,
        |t| {
            let xt = Tensor::from_vec(&shape, t.to_vec()).unwrap();
            dot(sigmoid(&xt).data(), &w_loss)
        },
    ));

    let preds = Tensor::from_vec(&[8, 1], rand_vec(rng, 8, 0.05, 0.95))?;
    let labels: Vec<f64> = (0..8).map(|i| (i % 2) as f64).collect();
    let (_, grad) = bce_loss(&preds, &labels)?;
    let mut theta = preds.data().to_vec();
    report.push(central_diff_check(
        "bce.predictions",
        &mut theta,
        grad.data(),
        rng,
        no_skip,
        |t| {
            let pt = Tensor::from_vec(&[8, 1], t.to_vec()).unwrap();
            bce_loss(&pt, &labels).unwrap().0
        },
    ));
    Ok(())
}

fn cbam_params_from(template: &CbamParams<f64>, theta: &[f64]) -> CbamParams<f64> {
    let mut params = template.clone();
    let mut offset = 0;
    for t in params.tensors_mut() {
        let n = t.len();
        let shape = t.shape().to_vec();
        *t = Tensor::from_vec(&shape, theta[offset..offset + n].to_vec()).unwrap();
        offset += n;
    }
    params
}

fn cbam_checks(report: &mut GradCheckReport, rng: &mut ChaCha8Rng) -> Result<()> {
    let params = CbamParams::<f64>::new(8, 4, 3, rng)?;
    let shape = [2usize, 8, 5, 5];
    let n: usize = shape.iter().product();
    let x = Tensor::from_vec(&shape, rand_vec(rng, n, -1.0, 1.0))?;
    let w_loss = rand_vec(rng, n, -1.0, 1.0);
    let grad_out = Tensor::from_vec(&shape, w_loss.clone())?;
    let (_, cache) = cbam_forward(&x, &params)?;
    let (grad_x, grads) = cbam_backward(&x, &params, &cache, &grad_out)?;

    let mut theta = x.data().to_vec();
    report.push(central_diff_check(
        "cbam.input",
        &mut theta,
        grad_x.data(),
        rng,
        no_skip,
        |t| {
            let xt = Tensor::from_vec(&shape, t.to_vec()).unwrap();
            dot(cbam_forward(&xt, &params).unwrap().0.data(), &w_loss)
        },
    ));

    let mut theta: Vec<f64> = params
        .tensors()
        .iter()
        .flat_map(|t| t.data().iter().copied())
        .collect();
    let analytic: Vec<f64> = grads
        .tensors()
        .iter()
        .flat_map(|t| t.data().iter().copied())
        .collect();
    report.push(central_diff_check(
        "cbam.params",
        &mut theta,
        &analytic,
        rng,
        no_skip,
        |t| {
            let p = cbam_params_from(&params, t);
            dot(cbam_forward(&x, &p).unwrap().0.data(), &w_loss)
        },
    ));
    Ok(())
}

fn model_with_params(template: &Model<f64>, theta: &[f64]) -> Model<f64> {
    let mut model = template.clone();
    let mut offset = 0;
    for t in model.params_mut() {
        let n = t.len();
        let shape = t.shape().to_vec();
        *t = Tensor::from_vec(&shape, theta[offset..offset + n].to_vec()).unwrap();
        offset += n;
    }
    model
}

fn model_checks(report: &mut GradCheckReport, rng: &mut ChaCha8Rng) -> Result<()> {
    let cfg = verify_config();
    let model: Model<f64> = build_model(&cfg, 0x6d6f64)?.cast();
    let x_shape = [2usize, 1, cfg.input_h, cfg.input_w];
    let n: usize = x_shape.iter().product();
    let x = Tensor::from_vec(&x_shape, rand_vec(rng, n, 0.0, 1.0))?;
    let labels = [1.0f64, 0.0];

    // Seed the backward pass the way training does: fused BCE gradient on
    // the logits, not the chain through sigmoid_backward.
    let (probs, cache) = model.forward(&x)?;
    let grad_logits = bce_logit_grad(&probs, &labels)?;
    let (grads, grad_x) = model.backward_from_logits(&cache, &grad_logits)?;

    let mut theta = x.data().to_vec();
    report.push(central_diff_check(
        "model.input",
        &mut theta,
        grad_x.data(),
        rng,
        no_skip,
        |t| {
            let xt = Tensor::from_vec(&x_shape, t.to_vec()).unwrap();
            bce_loss(&model.forward(&xt).unwrap().0, &labels).unwrap().0
        },
    ));

    let mut theta: Vec<f64> = model
        .params()
        .iter()
        .flat_map(|t| t.data().iter().copied())
        .collect();
    let analytic: Vec<f64> = grads
        .iter()
        .flat_map(|t| t.data().iter().copied())
        .collect();
    report.push(central_diff_check(
        "model.params",
        &mut theta,
        &analytic,
        rng,
        no_skip,
        |t| {
            let m = model_with_params(&model, t);
            bce_loss(&m.forward(&x).unwrap().0, &labels).unwrap().0
        },
    ));
    Ok(())
}
