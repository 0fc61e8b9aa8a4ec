use placement_core::autograd::Tape;
use placement_core::composer::{
    compose, regress_params, ImagePlane, PlacementParams, RegressorConfig,
};
use placement_core::losses::{
    adaptive_weights, discriminator_losses, generator_loss, mean_log, mean_log_complement,
    reconstruction_loss, reconstruction_loss_var,
};
use placement_core::nn::ParamStore;
use placement_core::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn p(a: f64, b: f64, c: f64) -> PlacementParams {
    PlacementParams::new(a, b, c).unwrap()
}

#[test]
fn reconstruction_identities() {
    let t = p(0.3, 0.6, 0.2);
    assert_eq!(reconstruction_loss(&t, &t), 0.0);
    let near_one = 1.0 - 1e-9;
    // cos(π/2 · (1 − 1e-9)) is about 1.6e-9, so the translation terms vanish.
    assert!(reconstruction_loss(&p(near_one, 0.1, 0.9), &p(near_one, 0.8, 0.2)) < 1e-8);
    let tiny = 1e-9;
    let v = reconstruction_loss(&p(tiny, 0.2, 0.2), &p(tiny, 0.7, 0.2));
    assert!((v - 0.25).abs() < 1e-7);
    // Equal translation errors weigh the same on either axis.
    let a = reconstruction_loss(&p(0.4, 0.5, 0.5), &p(0.4, 0.7, 0.5));
    let b = reconstruction_loss(&p(0.4, 0.5, 0.5), &p(0.4, 0.5, 0.7));
    assert_eq!(a, b);
}

#[test]
fn losses_match_loop_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        let scores = |rng: &mut ChaCha8Rng, n| -> Vec<f64> {
            (0..n).map(|_| rng.random_range(0.01..0.99)).collect()
        };
        let (real, fake, generated) = (
            scores(&mut rng, 7),
            scores(&mut rng, 5),
            scores(&mut rng, 6),
        );
        let (lr, lf) = discriminator_losses(&real, &fake, &generated).unwrap();
        let mut want_r = 0.0;
        for s in &real {
            want_r += s.ln();
        }
        want_r /= real.len() as f64;
        let (mut a, mut b) = (0.0, 0.0);
        for s in &fake {
            a += (1.0 - s).ln();
        }
        for s in &generated {
            b += (1.0 - s).ln();
        }
        let want_f = a / fake.len() as f64 + b / generated.len() as f64;
        assert!((lr - want_r).abs() < 1e-7 && (lf - want_f).abs() < 1e-7);

        let ts: Vec<_> = (0..6)
            .map(|_| p(rng.random_range(0.01..0.99), rng.random(), rng.random()))
            .collect();
        let gt: Vec<_> = (0..6)
            .map(|_| p(rng.random_range(0.01..0.99), rng.random(), rng.random()))
            .collect();
        let lambda = rng.random_range(0.0..100.0);
        let mut rec = 0.0;
        for (t, g) in ts.iter().zip(&gt) {
            let w = [
                (t.t_r * std::f64::consts::PI / 2.0).sin(),
                (t.t_r * std::f64::consts::PI / 2.0).cos(),
                (t.t_r * std::f64::consts::PI / 2.0).cos(),
            ];
            rec += w[0] * (t.t_r - g.t_r).powi(2)
                + w[1] * (t.t_x - g.t_x).powi(2)
                + w[2] * (t.t_y - g.t_y).powi(2);
        }
        rec /= 6.0;
        let adv = -generated.iter().map(|s| s.ln()).sum::<f64>() / 6.0;
        let got = generator_loss(&generated, &ts, &gt, lambda).unwrap();
        assert!((got - (adv + lambda * rec)).abs() < 1e-7);
    }
}

#[test]
fn loss_examples() {
    let (lr, _) = discriminator_losses(&[0.5; 4], &[], &[]).unwrap();
    assert_eq!(lr, 0.5f64.ln());
    let (lr, lf) = discriminator_losses(&[1.0 - 1e-9], &[1e-9], &[1e-9]).unwrap();
    assert!(lr < 0.0 && lr > -1e-8 && lf < 0.0 && lf > -1e-8);
    assert!(discriminator_losses(&[1.0], &[], &[]).is_err());
    assert!(discriminator_losses(&[0.5], &[0.0], &[]).is_err());
    let t = [p(0.3, 0.3, 0.3)];
    assert_eq!(generator_loss(&[0.5], &t, &t, 0.0).unwrap(), -(0.5f64.ln()));
    let gt = [p(0.5, 0.1, 0.9)];
    let at = |l| generator_loss(&[0.5], &t, &gt, l).unwrap() + 0.5f64.ln();
    assert!((at(50.0) - 2.0 * at(25.0)).abs() < 1e-12);
}

#[test]
fn tape_losses_agree_with_plain_functions() {
    let t = [[0.3, 0.6, 0.2], [0.8, 0.1, 0.5]];
    let gt = [[0.35, 0.4, 0.25], [0.6, 0.3, 0.5]];
    let mut tape = Tape::<f64>::new();
    let tv = tape.leaf(Tensor::from_f64(&[2, 3], &t.concat()).unwrap());
    let l = reconstruction_loss_var(&mut tape, tv, &gt).unwrap();
    let want = (0..2)
        .map(|b| {
            reconstruction_loss(
                &PlacementParams::from_array(t[b]).unwrap(),
                &PlacementParams::from_array(gt[b]).unwrap(),
            )
        })
        .sum::<f64>()
        / 2.0;
    assert!((tape.value(l).item() - want).abs() < 1e-12);
    // The weights are detached: the gradient is 2·w·(t − gt) / B.
    let g = tape.backward(l).get(tv).unwrap().clone();
    for b in 0..2 {
        let w = adaptive_weights(t[b][0]);
        for k in 0..3 {
            let want = 2.0 * w[k] * (t[b][k] - gt[b][k]) / 2.0;
            assert!((g.get2(b, k) - want).abs() < 1e-12);
        }
    }

    let scores = [0.2, 0.9, 1.0];
    let mut tape = Tape::<f64>::new();
    let s = tape.constant(Tensor::from_f64(&[3, 1], &scores).unwrap());
    let (a, b) = (mean_log(&mut tape, s), mean_log_complement(&mut tape, s));
    let clamp = |v: f64| v.clamp(1e-7, 1.0 - 1e-7);
    let want_a = scores.iter().map(|&v| clamp(v).ln()).sum::<f64>() / 3.0;
    let want_b = scores.iter().map(|&v| clamp(1.0 - v).ln()).sum::<f64>() / 3.0;
    assert!((tape.value(a).item() - want_a).abs() < 1e-12);
    assert!((tape.value(b).item() - want_b).abs() < 1e-12);
    assert!(tape.value(b).item().is_finite());
}

fn plane(channels: usize, n: usize, seed: u64) -> ImagePlane {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ImagePlane::from_fn(channels, n, n, |_, _, _| rng.random())
}

#[test]
fn composition_is_linear_in_the_images() {
    let n = 24;
    let (bg1, bg2, fg1, fg2) = (
        plane(3, n, 1),
        plane(3, n, 2),
        plane(3, n, 3),
        plane(3, n, 4),
    );
    let mask = plane(1, n, 5);
    let t = p(0.43, 0.31, 0.72);
    let extent = (0.8, 0.6);
    let mix = |a: &ImagePlane, b: &ImagePlane| {
        ImagePlane::from_fn(3, n, n, |c, i, j| {
            0.25 * a.get(c, i, j) + 0.5 * b.get(c, i, j)
        })
    };
    let (c1, _) = compose(&bg1, &fg1, &mask, &t, extent).unwrap();
    let (c2, _) = compose(&bg2, &fg2, &mask, &t, extent).unwrap();
    let (cm, _) = compose(&mix(&bg1, &bg2), &mix(&fg1, &fg2), &mask, &t, extent).unwrap();
    for ((a, b), m) in c1.data().iter().zip(c2.data()).zip(cm.data()) {
        assert!((0.25 * a + 0.5 * b - m).abs() < 1e-5);
    }
    assert!(cm.in_unit_range());
}

#[test]
fn half_mask_blends_evenly() {
    let n = 16;
    let (bg, fg) = (plane(3, n, 7), plane(3, n, 8));
    let mask = ImagePlane::filled(1, n, n, 0.5);
    // Unit scale at full extent is the identity warp.
    let t = p(1.0 - 1e-12, 0.5, 0.5);
    let (c, m) = compose(&bg, &fg, &mask, &t, (1.0, 1.0)).unwrap();
    for i in 0..n {
        for j in 0..n {
            assert!((m.get(0, i, j) - 0.5).abs() < 1e-4);
            for ch in 0..3 {
                let want = (fg.get(ch, i, j) + bg.get(ch, i, j)) / 2.0;
                assert!((c.get(ch, i, j) - want).abs() < 1e-4);
            }
        }
    }
}

#[test]
fn zero_regressor_predicts_the_center() {
    let cfg = RegressorConfig {
        d_noise: 16,
        hidden: [8, 4],
        noise_gain: 1.0,
    };
    let mut store = ParamStore::<f64>::new();
    cfg.init_params(&mut store, "r", 6, &mut ChaCha8Rng::seed_from_u64(0));
    let names: Vec<String> = store.names().map(String::from).collect();
    for name in &names {
        store
            .get_mut(name)
            .unwrap()
            .data_mut()
            .iter_mut()
            .for_each(|v| *v = 0.0);
    }
    let mut tape = Tape::new();
    let f = tape.constant(Tensor::from_fn(&[2, 6], |i| i as f64));
    let z = tape.constant(Tensor::from_fn(&[2, 16], |i| (i as f64).sin()));
    let t = regress_params(&mut tape, &store, "r", f, z).unwrap();
    assert!(tape.value(t).data().iter().all(|&v| v == 0.5));
}

#[test]
fn noise_changes_the_prediction() {
    let cfg = RegressorConfig::default();
    let mut store = ParamStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    cfg.init_params(&mut store, "r", 32, &mut rng);
    let features: Vec<f64> = (0..32).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut tape = Tape::new();
    let f = tape.constant(Tensor::from_fn(&[100, 32], |i| features[i % 32]));
    let z = tape.constant(Tensor::from_fn(&[100, cfg.d_noise], |_| {
        let v: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng);
        v
    }));
    let t = regress_params(&mut tape, &store, "r", f, z).unwrap();
    let tv = tape.value(t);
    for k in 0..3 {
        let col: Vec<f64> = (0..100).map(|b| tv.get2(b, k)).collect();
        let mean = col.iter().sum::<f64>() / 100.0;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 100.0;
        assert!(var > 0.0);
        assert!(col.iter().all(|v| *v > 0.0 && *v < 1.0));
    }
}
