//! Finite-difference verification of every differentiable stage, on toy
//! sizes in double precision.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::colorhist::{
    hist_backward, hist_forward, rgb_to_lrg, rgb_to_lrg_backward, HistogramParams, WidthMode,
};
use crate::model::{Architecture, Direction, ModelParams, NetworkConfig};
use crate::pyramid::{assemble_full, assemble_full_backward, build_pyramid, pyramid_backward, PatchRect};
use crate::tensor::gradcheck::{
    check_tensor_op, gradient_check, random_tensor, GradCheckConfig, GradCheckReport,
};
use crate::tensor::{
    avgpool_backward, avgpool_forward, concat_channels, concat_channels_backward, conv2d_backward,
    conv2d_forward, global_avgpool_backward, global_avgpool_forward, relu_backward, relu_forward,
    slice_patch, slice_patch_backward, Activation, ConvFilter, Padding, PoolGeometry, Shape, Tensor, Window,
};
use crate::trainer::l2_loss;

/// Side length of the toy images.
pub const TOY_SIZE: usize = 16;

/// Names of the checks in run order.
pub const CHECKS: [&str; 19] = [
    "conv3x3",
    "conv3x3-stride2",
    "conv1x1",
    "conv3x3-kernel",
    "conv3x3-bias",
    "avgpool-stride1",
    "avgpool-stride2",
    "global-avgpool",
    "relu",
    "concat",
    "slice",
    "rgb_to_lrg",
    "hist-input",
    "hist-params",
    "pyramid",
    "l2-loss",
    "model-scene",
    "model-mlp",
    "model-srcnn",
];

fn shape(n: usize, h: usize, w: usize, c: usize) -> Shape {
    Shape::new(n, h, w, c).expect("toy shapes are valid")
}

fn random_filter<R: Rng>(k: usize, cin: usize, cout: usize, stride: usize, rng: &mut R) -> ConvFilter<f64> {
    let mut f = ConvFilter::zeros(k, k, cin, cout, stride, Padding::Same).expect("valid filter");
    f.kernel.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
    f.bias.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
    f
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Runs every check. `corrupt` names a check whose analytic gradient is
/// deliberately perturbed, to exercise failure reporting.
pub fn run_gradcheck_suite(seed: u64, corrupt: Option<&str>) -> Vec<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let smooth = GradCheckConfig::smooth();
    let piecewise = GradCheckConfig::piecewise();
    let mut reports = Vec::new();
    let bend = |name: &str, g: Tensor<f64>| -> Tensor<f64> {
        if corrupt == Some(name) {
            g.map(|v| v * 1.1 + 1e-3)
        } else {
            g
        }
    };
    let bend_vec = |name: &str, g: Vec<f64>| -> Vec<f64> {
        if corrupt == Some(name) {
            g.into_iter().map(|v| v * 1.1 + 1e-3).collect()
        } else {
            g
        }
    };

    // Convolution, input gradients.
    for (name, k, stride) in [("conv3x3", 3, 1), ("conv3x3-stride2", 3, 2), ("conv1x1", 1, 1)] {
        let f = random_filter(k, 3, 4, stride, &mut rng);
        let x = random_tensor(shape(2, 7, 6, 3), -1.0, 1.0, &mut rng);
        reports.push(check_tensor_op(
            name,
            &x,
            |x| conv2d_forward(x, &f).expect("conv"),
            |x, g| bend(name, conv2d_backward(x, &f, g).expect("conv backward").0),
            &smooth,
            &mut rng,
        ));
    }

    // Convolution, parameter gradients.
    {
        let f = random_filter(3, 3, 4, 1, &mut rng);
        let x = random_tensor(shape(2, 6, 5, 3), -1.0, 1.0, &mut rng);
        let r = random_tensor(conv2d_forward(&x, &f).expect("conv").shape(), -1.0, 1.0, &mut rng);
        let (_, grads) = conv2d_backward(&x, &f, &r).expect("conv backward");
        let loss_kernel = |k: &[f64]| {
            let mut g = f.clone();
            g.kernel.copy_from_slice(k);
            dot(&conv2d_forward(&x, &g).expect("conv"), &r)
        };
        let name = "conv3x3-kernel";
        reports.push(gradient_check(
            name,
            &f.kernel,
            loss_kernel,
            &bend_vec(name, grads.kernel),
            &smooth,
        ));
        let loss_bias = |b: &[f64]| {
            let mut g = f.clone();
            g.bias.copy_from_slice(b);
            dot(&conv2d_forward(&x, &g).expect("conv"), &r)
        };
        let name = "conv3x3-bias";
        reports.push(gradient_check(
            name,
            &f.bias,
            loss_bias,
            &bend_vec(name, grads.bias),
            &smooth,
        ));
    }

    for (name, stride) in [("avgpool-stride1", 1), ("avgpool-stride2", 2)] {
        let x = random_tensor(shape(2, 9, 8, 3), -1.0, 1.0, &mut rng);
        reports.push(check_tensor_op(
            name,
            &x,
            |x| avgpool_forward(x, stride).expect("pool"),
            |x, g| {
                let geom = PoolGeometry::new(x.shape(), stride).expect("geometry");
                bend(name, avgpool_backward(g, &geom).expect("pool backward"))
            },
            &smooth,
            &mut rng,
        ));
    }

    {
        let name = "global-avgpool";
        let x = random_tensor(shape(2, 5, 7, 3), -1.0, 1.0, &mut rng);
        reports.push(check_tensor_op(
            name,
            &x,
            global_avgpool_forward,
            |x, g| {
                bend(
                    name,
                    global_avgpool_backward(g, x.shape()).expect("global backward"),
                )
            },
            &smooth,
            &mut rng,
        ));
    }

    {
        let name = "relu";
        let x = random_tensor(shape(1, 6, 6, 4), -1.0, 1.0, &mut rng);
        reports.push(check_tensor_op(
            name,
            &x,
            relu_forward,
            |x, g| bend(name, relu_backward(x, g).expect("relu backward")),
            &piecewise,
            &mut rng,
        ));
    }

    {
        // The second operand is a fixed constant; the check covers the
        // first operand's slice of the gradient.
        let name = "concat";
        let x = random_tensor(shape(2, 4, 5, 3), -1.0, 1.0, &mut rng);
        let other = random_tensor(shape(2, 4, 5, 2), -1.0, 1.0, &mut rng);
        reports.push(check_tensor_op(
            name,
            &x,
            |x| concat_channels(&[x, &other]).expect("concat"),
            |_, g| {
                let parts = concat_channels_backward(g, &[3, 2]).expect("split");
                bend(name, parts.into_iter().next().expect("two parts"))
            },
            &smooth,
            &mut rng,
        ));
    }

    {
        let name = "slice";
        let x = random_tensor(shape(2, 8, 8, 3), -1.0, 1.0, &mut rng);
        let win = Window::new(2, 1, 4, 5);
        reports.push(check_tensor_op(
            name,
            &x,
            |x| slice_patch(x, win).expect("slice"),
            |x, g| bend(name, slice_patch_backward(g, x.shape(), win).expect("scatter")),
            &smooth,
            &mut rng,
        ));
    }

    {
        let name = "rgb_to_lrg";
        let x = random_tensor(shape(1, 5, 5, 3), 0.05, 1.0, &mut rng);
        reports.push(check_tensor_op(
            name,
            &x,
            |x| rgb_to_lrg(x).expect("lrg"),
            |x, g| bend(name, rgb_to_lrg_backward(x, g).expect("lrg backward")),
            &smooth,
            &mut rng,
        ));
    }

    let hist = HistogramParams::<f64>::init_default(6, WidthMode::HalfWidth).expect("six bins");
    {
        let name = "hist-input";
        let x = random_tensor(shape(1, 6, 6, 3), 0.0, 1.0, &mut rng);
        reports.push(check_tensor_op(
            name,
            &x,
            |x| hist_forward(x, &hist).expect("hist"),
            |x, g| bend(name, hist_backward(x, &hist, g).expect("hist backward").input),
            &piecewise,
            &mut rng,
        ));
    }

    {
        let name = "hist-params";
        let x = random_tensor(shape(1, 6, 6, 3), 0.0, 1.0, &mut rng);
        let mut p = hist.clone();
        p.centers
            .iter_mut()
            .for_each(|c| *c += rng.random_range(-0.03..0.03));
        p.widths
            .iter_mut()
            .for_each(|w| *w += rng.random_range(0.0..0.05));
        let r = random_tensor(hist_forward(&x, &p).expect("hist").shape(), -1.0, 1.0, &mut rng);
        let g = hist_backward(&x, &p, &r).expect("hist backward");
        let n = p.centers.len();
        let mut point = p.centers.clone();
        point.extend_from_slice(&p.widths);
        let mut analytic = g.centers;
        analytic.extend(g.widths);
        let loss = |v: &[f64]| {
            let mut q = p.clone();
            q.centers.copy_from_slice(&v[..n]);
            q.widths.copy_from_slice(&v[n..]);
            dot(&hist_forward(&x, &q).expect("hist"), &r)
        };
        reports.push(gradient_check(
            name,
            &point,
            loss,
            &bend_vec(name, analytic),
            &piecewise,
        ));
    }

    {
        let name = "pyramid";
        let h = random_tensor(shape(1, TOY_SIZE, TOY_SIZE, 18), 0.0, 1.0, &mut rng);
        let rgb = random_tensor(shape(1, TOY_SIZE, TOY_SIZE, 3), 0.0, 1.0, &mut rng);
        reports.push(check_tensor_op(
            name,
            &h,
            |h| assemble_full(&build_pyramid(h).expect("pyramid"), &rgb).expect("assemble"),
            |h, g| {
                let shapes = build_pyramid(h).expect("pyramid").shapes();
                let (gp, _) = assemble_full_backward(g, shapes, rgb.shape()).expect("assemble backward");
                bend(name, pyramid_backward(h.shape(), &gp).expect("pyramid backward"))
            },
            &smooth,
            &mut rng,
        ));
    }

    {
        let name = "l2-loss";
        let target = random_tensor(shape(3, 4, 4, 3), 0.0, 1.0, &mut rng);
        let pred = random_tensor(target.shape(), -0.5, 1.5, &mut rng);
        let (_, g) = l2_loss(&pred, &target).expect("loss");
        let s = pred.shape();
        let loss = |x: &[f64]| {
            l2_loss(&Tensor::from_vec(s, x.to_vec()).expect("shape"), &target)
                .expect("loss")
                .0
        };
        reports.push(gradient_check(
            name,
            pred.data(),
            loss,
            bend(name, g).data(),
            &smooth,
        ));
    }

    // Composed models: every parameter, through patchwise training passes
    // with ReLU hidden layers.
    let img = random_tensor(shape(1, TOY_SIZE, TOY_SIZE, 3), 0.02, 1.0, &mut rng);
    let rects = [
        PatchRect::with_size(0, 0, 0, 8),
        PatchRect::with_size(0, 8, 5, 8),
        PatchRect::with_size(0, 3, 8, 8),
    ];
    let model_check = |name: &str, arch: Architecture, rng: &mut ChaCha8Rng| {
        let mut cfg = NetworkConfig::new(Direction::RawToSrgb, arch).with_hidden(4);
        cfg.activation = Activation::Relu;
        let mut p = ModelParams::<f64>::init(cfg, rng).expect("toy model");
        if let Some(h) = &mut p.hist {
            h.centers
                .iter_mut()
                .for_each(|c| *c += rng.random_range(-0.03..0.03));
        }
        let (pred, trace) = p.forward_patchwise(&img, &rects).expect("forward");
        let r = random_tensor(pred.shape(), -1.0, 1.0, rng);
        let analytic = p.backward(&trace, &r).expect("backward").flatten(&p);
        let loss = |flat: &[f64]| {
            let mut q = p.clone();
            q.load_flat(flat).expect("length");
            dot(&q.forward_patchwise(&img, &rects).expect("forward").0, &r)
        };
        gradient_check(name, &p.flatten(), loss, &bend_vec(name, analytic), &piecewise)
    };
    reports.push(model_check("model-scene", Architecture::Scene, &mut rng));
    reports.push(model_check("model-mlp", Architecture::Mlp, &mut rng));
    reports.push(model_check("model-srcnn", Architecture::Srcnn, &mut rng));
    reports
}
