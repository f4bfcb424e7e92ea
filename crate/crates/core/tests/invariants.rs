//! Property tests over the public API.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use scenepipe::colorhist::{hist_backward, hist_forward, HistogramParams, WidthMode};
use scenepipe::data::{load_manifest, read_rgb, save_manifest, write_rgb, BitDepth, ManifestEntry};
use scenepipe::model::{Architecture, Direction, ModelParams, NetworkConfig};
use scenepipe::tensor::{avgpool_forward, global_avgpool_forward};
use scenepipe::trainer::{adam_step, evaluate, AdamConfig, EvalReport, Example};
use scenepipe::{Shape, Tensor};

fn random_image(rng: &mut ChaCha8Rng, n: usize, h: usize, w: usize) -> Tensor<f32> {
    let data = (0..n * h * w * 3).map(|_| rng.random::<f32>()).collect();
    Tensor::from_vec(Shape::new(n, h, w, 3).unwrap(), data).unwrap()
}

fn model(arch: Architecture, seed: u64) -> ModelParams<f32> {
    let cfg = NetworkConfig::new(Direction::RawToSrgb, arch).with_hidden(6);
    ModelParams::init(cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn mlp_is_context_free(seed in 0u64..1000, y in 0usize..20, x in 0usize..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_image(&mut rng, 1, 20, 20);
        let mut b = random_image(&mut rng, 1, 20, 20);
        b.pixel_mut(0, y, x).copy_from_slice(a.pixel(0, y, x));
        let p = model(Architecture::Mlp, seed);
        let (pa, pb) = (p.forward_full(&a).unwrap(), p.forward_full(&b).unwrap());
        prop_assert_eq!(pa.pixel(0, y, x), pb.pixel(0, y, x));
    }

    #[test]
    fn prediction_ignores_batch_companions(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_image(&mut rng, 1, 16, 16);
        let b = random_image(&mut rng, 1, 16, 16);
        let p = model(Architecture::Scene, seed);
        let alone = p.forward_full(&a).unwrap();
        let together = p.forward_full(&Tensor::stack(&[&b, &a]).unwrap()).unwrap();
        prop_assert_eq!(alone.data(), together.item(1));
    }

    #[test]
    fn zero_learning_rate_keeps_parameters(seed in 0u64..1000) {
        let mut p = model(Architecture::Scene, seed);
        let before = p.flatten();
        let mut g = p.zero_gradients();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        g.hist_centers.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        for c in &mut g.convs {
            c.kernel.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        }
        adam_step(&mut p, &g, &AdamConfig { lr: 0.0, ..AdamConfig::default() }).unwrap();
        prop_assert_eq!(before, p.flatten());
        prop_assert_eq!(p.adam.step, 1);
    }

    #[test]
    fn evaluation_statistics_ignore_order(seed in 0u64..1000, rot in 0usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let examples: Vec<Example> = (0..4)
            .map(|i| {
                let input = random_image(&mut rng, 1, 12, 12);
                let target = random_image(&mut rng, 1, 12, 12);
                Example::new(format!("e{i}"), input, target).unwrap()
            })
            .collect();
        let p = model(Architecture::Mlp, seed);
        let mut shuffled = examples.clone();
        shuffled.rotate_left(rot);
        let (a, b): (EvalReport, EvalReport) =
            (evaluate(&p, &examples).unwrap(), evaluate(&p, &shuffled).unwrap());
        prop_assert_eq!(a.statistics(), b.statistics());
    }
}

proptest! {
    #[test]
    fn histogram_is_pointwise(seed in 0u64..1000, shift in 1usize..35) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let img = random_image(&mut rng, 1, 6, 6);
        let params = HistogramParams::<f32>::init_default(6, WidthMode::HalfWidth).unwrap();
        let out = hist_forward(&img, &params).unwrap();
        // Rotate pixel order; outputs rotate the same way.
        let mut moved = img.clone();
        let pixels: Vec<&[f32]> = img.data().chunks(3).collect();
        for (i, px) in moved.data_mut().chunks_mut(3).enumerate() {
            px.copy_from_slice(pixels[(i + shift) % pixels.len()]);
        }
        let out_moved = hist_forward(&moved, &params).unwrap();
        let c = out.shape().c;
        for i in 0..36 {
            let j = (i + shift) % 36;
            prop_assert_eq!(&out_moved.data()[i * c..(i + 1) * c], &out.data()[j * c..(j + 1) * c]);
        }
    }

    #[test]
    fn duplicated_batch_doubles_center_gradients(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..75).map(|_| rng.random::<f64>()).collect();
        let img = Tensor::from_vec(Shape::new(1, 5, 5, 3).unwrap(), data).unwrap();
        let params = HistogramParams::<f64>::init_default(6, WidthMode::HalfWidth).unwrap();
        let s = img.shape().with_channels(18);
        let g: Vec<f64> = (0..s.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let grad = Tensor::from_vec(s, g.clone()).unwrap();
        let single = hist_backward(&img, &params, &grad).unwrap();
        let pair = Tensor::stack(&[&img, &img]).unwrap();
        let grad2 = Tensor::from_vec(s.with_batch(2), [g.clone(), g].concat()).unwrap();
        let double = hist_backward(&pair, &params, &grad2).unwrap();
        for (a, b) in single.centers.iter().zip(&double.centers) {
            prop_assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn pooling_a_constant_gives_the_constant(v in -10.0f64..10.0, h in 1usize..12, w in 1usize..12, stride in 1usize..3) {
        let t = Tensor::filled(Shape::new(1, h, w, 2).unwrap(), v);
        let p = avgpool_forward(&t, stride).unwrap();
        prop_assert!(p.data().iter().all(|x| (x - v).abs() <= 1e-12 * v.abs().max(1.0)));
        let g = global_avgpool_forward(&t);
        prop_assert!(g.data().iter().all(|x| (x - v).abs() <= 1e-12 * v.abs().max(1.0)));
    }

    #[test]
    fn manifest_round_trips(ids in prop::collection::vec("[a-z][a-z0-9_]{0,8}", 1..6), gain in 0.1f64..8.0) {
        let dir = tempfile::tempdir().unwrap();
        let entries: Vec<ManifestEntry> = ids
            .iter()
            .enumerate()
            .map(|(i, id)| ManifestEntry {
                id: format!("{id}{i}"),
                raw_path: dir.path().join("raw").join(format!("{id}.png")),
                srgb_path: dir.path().join("srgb").join(format!("{id}.png")),
                wb_gains: [gain, 1.0, gain * 0.5 + i as f64],
            })
            .collect();
        let path = dir.path().join("m.csv");
        save_manifest(&path, &entries).unwrap();
        prop_assert_eq!(load_manifest(&path).unwrap(), entries);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn image_files_round_trip_within_quantization(seed in 0u64..1000, h in 1usize..9, w in 1usize..9) {
        let dir = tempfile::tempdir().unwrap();
        let img = random_image(&mut ChaCha8Rng::seed_from_u64(seed), 1, h, w);
        for depth in [BitDepth::Eight, BitDepth::Sixteen] {
            let path = dir.path().join("img.png");
            write_rgb(&path, &img, depth).unwrap();
            let (back, found) = read_rgb(&path).unwrap();
            prop_assert_eq!(found, depth);
            let bound = 0.5 / depth.max_value() as f32 + 1e-6;
            for (a, b) in back.data().iter().zip(img.data()) {
                prop_assert!((a - b).abs() <= bound);
            }
            // Stored values are fixed points of the round trip.
            write_rgb(&path, &back, depth).unwrap();
            prop_assert_eq!(read_rgb(&path).unwrap().0, back);
        }
    }
}
