//! Property-based invariants across the public API.

use std::path::Path;

use bipn::dataset::{gen_clip, ClipConfig, Frame};
use bipn::harness::io::{from_byte, to_byte, PNG_QUANTUM};
use bipn::harness::{baseline_crossfade, Checkpoint, TrainConfig};
use bipn::losses::{adv_gen_loss, rec_loss};
use bipn::metrics::{psnr, sharpdiff, ssim, DB_CAP};
use bipn::tensor::{
    conv_output_size, deconv_output_size, Conv2dOptions, Deconv2dOptions, Graph, ParamStore, Tensor,
};
use proptest::prelude::*;

fn frame(side: usize, channels: usize) -> impl Strategy<Value = Frame<f64>> {
    prop::collection::vec(-1.0f64..=1.0, side * side * channels)
        .prop_map(move |px| Frame::new(side, side, channels, px).unwrap())
}

fn pair(side: usize) -> impl Strategy<Value = (Frame<f64>, Frame<f64>)> {
    (1usize..=3).prop_flat_map(move |c| (frame(side, c), frame(side, c)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn psnr_is_symmetric_and_bounded((a, b) in pair(6)) {
        let ab = psnr(&a, &b, 2.0).unwrap();
        prop_assert_eq!(ab, psnr(&b, &a, 2.0).unwrap());
        prop_assert!((-1e-12..=DB_CAP).contains(&ab));
        prop_assert_eq!(psnr(&a, &a, 2.0).unwrap(), DB_CAP);
    }

    #[test]
    fn ssim_is_symmetric_and_at_most_one((a, b) in pair(12)) {
        let ab = ssim(&a, &b, 2.0).unwrap();
        prop_assert!((ab - ssim(&b, &a, 2.0).unwrap()).abs() < 1e-12);
        prop_assert!((-1.0..=1.0 + 1e-12).contains(&ab));
        prop_assert_eq!(ssim(&a, &a, 2.0).unwrap(), 1.0);
    }

    #[test]
    fn sharpdiff_ignores_constant_offsets(a in frame(5, 1), offset in -0.5f64..0.5) {
        let shifted = a.map(|v| v + offset);
        prop_assert_eq!(sharpdiff(&shifted, &a, 2.0).unwrap(), DB_CAP);
    }

    #[test]
    fn conv_then_deconv_restores_even_sides(half in 1usize..40, k in prop::sample::select(vec![3usize, 5])) {
        let n = 2 * half;
        let pad = k / 2;
        let down = conv_output_size(n, k, 2, pad).unwrap();
        prop_assert_eq!(down, half);
        prop_assert_eq!(deconv_output_size(down, k, 2, pad, 1), Some(n));
    }

    #[test]
    fn conv_shapes_match_the_size_rule(h in 3usize..12, w in 3usize..12, stride in 1usize..3) {
        let mut g = Graph::<f64>::inference();
        let x = g.constant(Tensor::zeros(&[1, 2, h, w]));
        let k = g.constant(Tensor::zeros(&[4, 2, 3, 3]));
        let y = g.conv2d_with(x, k, None, Conv2dOptions::new(stride, 1)).unwrap();
        let expect = [1, 4, conv_output_size(h, 3, stride, 1).unwrap(), conv_output_size(w, 3, stride, 1).unwrap()];
        prop_assert_eq!(g.shape(y), &expect[..]);
        let kd = g.constant(Tensor::zeros(&[4, 3, 3, 3]));
        let opts = Deconv2dOptions { stride: [2; 2], padding: [1; 2], output_padding: [1; 2] };
        let z = g.deconv2d_with(y, kd, None, opts).unwrap();
        let back = [1, 3, deconv_output_size(expect[2], 3, 2, 1, 1).unwrap(), deconv_output_size(expect[3], 3, 2, 1, 1).unwrap()];
        prop_assert_eq!(g.shape(z), &back[..]);
    }

    #[test]
    fn rec_loss_is_nonnegative_and_zero_only_on_equality(
        a in prop::collection::vec(-1.0f64..=1.0, 18),
        b in prop::collection::vec(-1.0f64..=1.0, 18),
    ) {
        let mut g = Graph::<f64>::new();
        let pa = g.constant(Tensor::from_f64(&[1, 2, 3, 3], &a).unwrap());
        let pb = g.constant(Tensor::from_f64(&[1, 2, 3, 3], &b).unwrap());
        let l = rec_loss(&mut g, &[pa], &[pb]).unwrap();
        let v = g.scalar(l.total);
        prop_assert!(v >= 0.0);
        prop_assert_eq!(v == 0.0, a == b);
        let same = rec_loss(&mut g, &[pa], &[pa]).unwrap();
        prop_assert_eq!(g.scalar(same.total), 0.0);
    }

    #[test]
    fn adv_gen_loss_decreases_with_the_score(p in 0.01f64..0.98, dp in 0.001f64..0.01) {
        let mut g = Graph::<f64>::new();
        let lo = g.constant(Tensor::from_f64(&[1, 1], &[p]).unwrap());
        let hi = g.constant(Tensor::from_f64(&[1, 1], &[p + dp]).unwrap());
        let a = adv_gen_loss(&mut g, &[lo]).unwrap();
        let b = adv_gen_loss(&mut g, &[hi]).unwrap();
        prop_assert!(g.scalar(b.total) < g.scalar(a.total));
        prop_assert!(g.scalar(b.total) >= 0.0);
    }

    #[test]
    fn byte_quantisation_is_within_half_a_step(v in -1.0f64..=1.0) {
        prop_assert!((from_byte(to_byte(v)) - v).abs() <= PNG_QUANTUM / 2.0 + 1e-12);
    }

    #[test]
    fn crossfade_blends_linearly(a in frame(3, 1), b in frame(3, 1), l in 1usize..8) {
        let frames = baseline_crossfade(&a, &b, l).unwrap();
        prop_assert_eq!(frames.len(), l);
        for (i, f) in frames.iter().enumerate() {
            let w = (i + 1) as f64 / (l + 1) as f64;
            for ((x, y), z) in a.pixels.iter().zip(&b.pixels).zip(&f.pixels) {
                prop_assert!(((1.0 - w) * x + w * y - z).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn clips_are_deterministic_and_in_range(seed in any::<u64>(), n in 1usize..=3) {
        let cfg = ClipConfig { frames: 5, n_shapes: n, height: 24, width: 24, ..ClipConfig::default() };
        let a = gen_clip::<f64>(seed, &cfg).unwrap();
        prop_assert_eq!(&a, &gen_clip::<f64>(seed, &cfg).unwrap());
        prop_assert_eq!(a.frames.len(), 5);
        for f in &a.frames {
            prop_assert!(f.pixels.iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn checkpoints_roundtrip_bit_exactly(
        seed in any::<u64>(),
        dims in prop::collection::vec(1usize..4, 1..4),
        steps in 0u64..1000,
        iteration in any::<u64>(),
    ) {
        let mut store = ParamStore::<f32>::new();
        store.insert_glorot("w", &dims, seed).unwrap();
        store.insert_uniform("v", &[dims[0], 2], 0.3, seed ^ 1).unwrap();
        store.entry_mut("w").unwrap().first_moment = Tensor::full(&dims, 0.125);
        store.set_step_count(steps);
        let ck = Checkpoint {
            config: TrainConfig { seed, ..TrainConfig::default() },
            iteration,
            generator: store.clone(),
            discriminator: ParamStore::new(),
            extractor: store,
        };
        let bytes = ck.to_bytes();
        let back = Checkpoint::<f32>::from_bytes(&bytes, Path::new("mem")).unwrap();
        prop_assert_eq!(&back, &ck);
        prop_assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn config_text_roundtrips(seed in any::<u64>(), bs in 1usize..32, lr in 1e-6f64..1e-2, scales in prop::sample::select(vec![1usize, 4])) {
        let mut cfg = TrainConfig { seed, batch_size: bs, ..TrainConfig::default() };
        cfg.adam.learning_rate = lr;
        cfg.model.scales = scales;
        let back = TrainConfig::from_text(&cfg.to_text()).unwrap();
        prop_assert_eq!(back, cfg);
    }
}
