use lightfx_core::diffusion::{
    apply_adapter, ddim_sample, from_model_space, initial_noise, loss_and_grads, make_schedule, predict_eps, q_sample,
    to_model_space, training_loss, Batch, Conditioning, ControlBranch, Denoiser, DenoiserSpec, LowRankAdapter, ModelRef,
    NoiseSchedule, Weights,
};
use lightfx_core::imagecore::Image;
use lightfx_core::nn::{Fm, Grads, ParamSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn tiny_spec() -> DenoiserSpec {
    DenoiserSpec { input_channels: 6, base_width: 4, depth: 2, class_vocab: 3, time_dim: 8 }
}

fn random_fm(c: usize, n: usize, h: usize, w: usize, rng: &mut ChaCha8Rng) -> Fm<f64> {
    Fm::from_vec(c, n, h, w, (0..c * n * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

fn tiny_batch(seed: u64) -> Batch<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Batch {
        x0: random_fm(3, 2, 8, 8, &mut rng),
        cond: Conditioning::new(random_fm(3, 2, 8, 8, &mut rng)).with_class(Some(vec![0, 2])),
    }
}

fn randomize(ps: &mut ParamSet<f64>, name_filter: impl Fn(&str) -> bool, std: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<usize> = ps.entries().iter().enumerate().filter(|(_, e)| name_filter(&e.name)).map(|(i, _)| i).collect();
    let mut owned = ps.clone();
    for (i, e) in ps.entries().iter().enumerate() {
        if ids.contains(&i) {
            let v: Vec<f64> = (0..e.value.len()).map(|_| std * rng.gen_range(-1.0..1.0)).collect();
            let mut next = ParamSet::new();
            for (j, f) in owned.entries().iter().enumerate() {
                next.add(f.name.clone(), &f.shape, if j == i { v.clone() } else { f.value.clone() });
            }
            owned = next;
        }
    }
    ps.load_from(&owned).unwrap();
}

/// Central differences at a few coordinates of every tensor.
fn check_against_fd(
    params: &ParamSet<f64>,
    grads: &Grads<f64>,
    mut loss_at: impl FnMut(&ParamSet<f64>) -> f64,
) -> (f64, usize) {
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let mut nonzero = 0;
    for (ti, entry) in params.entries().iter().enumerate() {
        let len = entry.value.len();
        for &k in &[0, len / 3, len / 2, len - 1] {
            let perturbed = |delta: f64| {
                let mut next = ParamSet::new();
                for (j, e) in params.entries().iter().enumerate() {
                    let mut v = e.value.clone();
                    if j == ti {
                        v[k] += delta;
                    }
                    next.add(e.name.clone(), &e.shape, v);
                }
                next
            };
            let fd = (loss_at(&perturbed(h)) - loss_at(&perturbed(-h))) / (2.0 * h);
            let an = grads.0[ti][k];
            let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-6);
            worst = worst.max(rel);
            nonzero += usize::from(fd.abs() > 1e-8);
            checked += 1;
        }
    }
    assert!(nonzero * 2 >= checked, "only {nonzero} of {checked} gradients are non-trivial");
    (worst, checked)
}

#[test]
fn forward_moments_match_schedule() {
    let sched = NoiseSchedule::default();
    let c = 1.0;
    for &t in &[0usize, 100, 200, 250, 300] {
        let x0 = Fm::from_vec(1, 1, 100, 100, vec![c; 10_000]);
        let mut rng = ChaCha8Rng::seed_from_u64(t as u64);
        let eps = Fm::from_vec(1, 1, 100, 100, (0..10_000).map(|_| StandardNormal.sample(&mut rng)).collect());
        let x_t = q_sample(&x0, &[t], &eps, &sched).unwrap();
        let n = x_t.data.len() as f64;
        let mean = x_t.data.iter().sum::<f64>() / n;
        let var = x_t.data.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        let ab: f64 = (0..=t).map(|s| 1.0 - (1e-4 + (2e-2 - 1e-4) * s as f64 / 999.0)).product();
        let (m_exp, v_exp) = (ab.sqrt() * c, 1.0 - ab);
        assert!((mean - m_exp).abs() <= 0.05 * m_exp, "t={t} mean {mean} vs {m_exp}");
        assert!((var - v_exp).abs() <= 0.05 * v_exp, "t={t} var {var} vs {v_exp}");
    }
}

#[test]
fn q_sample_rejects_out_of_range_timestep() {
    let sched = make_schedule(10, 1e-3, 1e-2).unwrap();
    let x0 = Fm::<f64>::zeros(1, 1, 2, 2);
    assert!(q_sample(&x0, &[10], &x0, &sched).is_err());
}

#[test]
fn fresh_model_predicts_zero_and_loss_is_unit_normal_variance() {
    let den = Denoiser::<f64>::new(DenoiserSpec::default(), 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let batch = Batch {
        x0: random_fm(3, 4, 16, 16, &mut rng),
        cond: Conditioning::new(random_fm(3, 4, 16, 16, &mut rng)),
    };
    let eps = predict_eps(&ModelRef::base(&den), &batch.x0, &batch.cond, &[3, 4, 5, 6]).unwrap();
    assert!(eps.data.iter().all(|&v| v == 0.0));
    let loss = training_loss(&ModelRef::base(&den), &batch, &NoiseSchedule::default(), &mut rng).unwrap();
    assert!((loss - 1.0).abs() < 0.1, "loss {loss}");
}

#[test]
fn training_loss_rejects_shape_mismatch() {
    let den = Denoiser::<f64>::new(tiny_spec(), 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut batch = tiny_batch(0);
    batch.cond.cond = random_fm(3, 2, 16, 16, &mut rng);
    assert!(training_loss(&ModelRef::base(&den), &batch, &NoiseSchedule::default(), &mut rng).is_err());
}

#[test]
fn base_gradients_match_finite_differences() {
    let mut den = Denoiser::<f64>::new(tiny_spec(), 3).unwrap();
    randomize(den.params_mut(), |n| n.starts_with("out"), 0.3, 9);
    let sched = NoiseSchedule::default();
    let batch = tiny_batch(4);
    let g = loss_and_grads(&ModelRef::base(&den), &batch, &sched, &mut ChaCha8Rng::seed_from_u64(77)).unwrap();
    let (worst, n) = check_against_fd(den.params(), &g.weights, |ps| {
        let m = ModelRef::with_weights(&den, ps);
        training_loss(&m, &batch, &sched, &mut ChaCha8Rng::seed_from_u64(77)).unwrap()
    });
    assert!(n > 20);
    assert!(worst < 1e-3, "worst relative error {worst}");
}

#[test]
fn adapter_gradients_match_finite_differences() {
    let mut den = Denoiser::<f64>::new(tiny_spec(), 3).unwrap();
    randomize(den.params_mut(), |n| n.starts_with("out"), 0.3, 9);
    let mut adapter = LowRankAdapter::new(&den, 2, 1.0, 11).unwrap();
    randomize(adapter.params_mut(), |n| n.ends_with(".down"), 0.2, 12);
    let sched = NoiseSchedule::default();
    let batch = tiny_batch(5);
    let merged = apply_adapter(den.params(), &adapter).unwrap();
    let g = loss_and_grads(&ModelRef::with_weights(&den, &merged), &batch, &sched, &mut ChaCha8Rng::seed_from_u64(8))
        .unwrap();
    let ag = adapter.grads_from_merged(&g.weights);
    let (worst, n) = check_against_fd(adapter.params(), &ag, |ps| {
        let mut a = adapter.clone();
        a.params_mut().load_from(ps).unwrap();
        let merged = apply_adapter(den.params(), &a).unwrap();
        training_loss(&ModelRef::with_weights(&den, &merged), &batch, &sched, &mut ChaCha8Rng::seed_from_u64(8)).unwrap()
    });
    assert!(n >= 4 * adapter.num_targets() * 2);
    assert!(worst < 1e-3, "worst relative error {worst}");
}

#[test]
fn control_gradients_match_finite_differences() {
    let mut den = Denoiser::<f64>::new(tiny_spec(), 3).unwrap();
    randomize(den.params_mut(), |n| n.starts_with("out"), 0.3, 9);
    let mut branch = ControlBranch::from_denoiser(&den, 3, 21).unwrap();
    randomize(branch.params_mut(), |n| n.ends_with(".zero.weight"), 0.3, 22);
    let sched = NoiseSchedule::default();
    let mut batch = tiny_batch(6);
    batch.cond.control = Some(random_fm(3, 2, 8, 8, &mut ChaCha8Rng::seed_from_u64(60)));
    let model = ModelRef::base(&den).with_control(&branch);
    let g = loss_and_grads(&model, &batch, &sched, &mut ChaCha8Rng::seed_from_u64(13)).unwrap();
    let cg = g.control.expect("control gradients");
    let (worst, n) = check_against_fd(branch.params(), &cg, |ps| {
        let mut b = branch.clone();
        b.params_mut().load_from(ps).unwrap();
        let m = ModelRef::base(&den).with_control(&b);
        training_loss(&m, &batch, &sched, &mut ChaCha8Rng::seed_from_u64(13)).unwrap()
    });
    assert!(n > 20);
    assert!(worst < 1e-3, "worst relative error {worst}");
}

fn bits(fm: &Fm<f32>) -> Vec<u32> {
    fm.data.iter().map(|v| v.to_bits()).collect()
}

#[test]
fn zero_initialized_adapter_and_branch_are_bit_identical() {
    let mut den = Denoiser::<f32>::new(DenoiserSpec::default(), 2).unwrap();
    let mut ps = den.params().clone().cast::<f64>();
    randomize(&mut ps, |n| n.starts_with("out"), 0.2, 1);
    den.params_mut().load_from(&ps.cast()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x_t = Fm::from_vec(3, 2, 16, 16, (0..1536).map(|_| rng.gen_range(-1.0f32..1.0)).collect());
    let cond = Conditioning::new(Fm::from_vec(3, 2, 16, 16, (0..1536).map(|_| rng.gen_range(-1.0f32..1.0)).collect()));
    let t = [10, 700];
    let base = predict_eps(&ModelRef::base(&den), &x_t, &cond, &t).unwrap();
    assert!(base.data.iter().any(|&v| v != 0.0));

    let adapter = LowRankAdapter::new(&den, 4, 1.0, 5).unwrap();
    let merged = apply_adapter(den.params(), &adapter).unwrap();
    let via_merged = predict_eps(&ModelRef::with_weights(&den, &merged), &x_t, &cond, &t).unwrap();
    assert_eq!(bits(&base), bits(&via_merged));
    let via_lowrank = predict_eps(&ModelRef::base(&den).with_unmerged(&adapter), &x_t, &cond, &t).unwrap();
    assert_eq!(bits(&base), bits(&via_lowrank));

    let branch = ControlBranch::from_denoiser(&den, 3, 6).unwrap();
    let signal = Fm::from_vec(3, 2, 16, 16, (0..1536).map(|_| rng.gen_range(0.0f32..1.0)).collect());
    let with_ctrl = predict_eps(&ModelRef::base(&den).with_control(&branch), &x_t, &cond.clone().with_control(Some(signal)), &t)
        .unwrap();
    assert_eq!(bits(&base), bits(&with_ctrl));
}

#[test]
fn merged_and_unmerged_adapter_agree() {
    let den = Denoiser::<f32>::new(DenoiserSpec::default(), 2).unwrap();
    let mut adapter = LowRankAdapter::new(&den, 4, 0.5, 5).unwrap();
    let mut aps = adapter.params().cast::<f64>();
    randomize(&mut aps, |_| true, 0.2, 6);
    adapter.params_mut().load_from(&aps.cast()).unwrap();
    let merged = apply_adapter(den.params(), &adapter).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x_t = Fm::from_vec(3, 1, 16, 16, (0..768).map(|_| rng.gen_range(-1.0f32..1.0)).collect());
    let cond = Conditioning::new(Fm::from_vec(3, 1, 16, 16, (0..768).map(|_| rng.gen_range(-1.0f32..1.0)).collect()));
    let a = predict_eps(&ModelRef::with_weights(&den, &merged), &x_t, &cond, &[400]).unwrap();
    let b = predict_eps(&ModelRef::base(&den).with_unmerged(&adapter), &x_t, &cond, &[400]).unwrap();
    let worst = a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).fold(0.0f32, f32::max);
    assert!(a.data.iter().any(|&v| v.abs() > 1e-3));
    assert!(worst < 1e-5, "max difference {worst}");
}

#[test]
fn rank_one_adapter_adds_scaled_outer_product() {
    let den = Denoiser::<f64>::new(tiny_spec(), 2).unwrap();
    let mut adapter = LowRankAdapter::new(&den, 1, 0.5, 5).unwrap();
    let mut ps = adapter.params().clone();
    randomize(&mut ps, |_| true, 1.0, 3);
    adapter.params_mut().load_from(&ps).unwrap();
    let merged = apply_adapter(den.params(), &adapter).unwrap();
    let entries = adapter.params().entries();
    let (up, down) = (&entries[0], &entries[1]);
    let name = up.name.trim_end_matches(".up");
    let base = den.params().entries().iter().find(|e| e.name == name).unwrap();
    let after = merged.entries().iter().find(|e| e.name == name).unwrap();
    let cols = down.value.len();
    for (i, (w0, w1)) in base.value.iter().zip(&after.value).enumerate() {
        let expect = w0 + 0.5 * up.value[i / cols] * down.value[i % cols];
        assert!((w1 - expect).abs() < 1e-12);
    }
}

#[test]
fn apply_adapter_rejects_foreign_base() {
    let den = Denoiser::<f64>::new(tiny_spec(), 2).unwrap();
    let other = Denoiser::<f64>::new(DenoiserSpec::default(), 2).unwrap();
    let adapter = LowRankAdapter::new(&den, 2, 1.0, 5).unwrap();
    assert!(apply_adapter(other.params(), &adapter).is_err());
}

#[test]
fn ddim_with_zero_noise_prediction_matches_hand_rollout() {
    let den = Denoiser::<f64>::new(tiny_spec(), 1).unwrap();
    let sched = NoiseSchedule::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cond = Conditioning::new(random_fm(3, 1, 8, 8, &mut rng)).with_class(Some(vec![1]));
    let out = ddim_sample(&ModelRef::base(&den), &cond, 3, &sched, &[42]).unwrap();

    let ab = |t: usize| -> f64 { (0..=t).map(|s| 1.0 - (1e-4 + (2e-2 - 1e-4) * s as f64 / 999.0)).product() };
    let x_init = initial_noise::<f64>(3, 8, 8, 42);
    let steps = [999usize, 665, 332];
    for (i, &x_start) in x_init.data.iter().enumerate() {
        let mut x = x_start;
        for (k, &t) in steps.iter().enumerate() {
            let a = ab(t);
            let a_prev = if k + 1 < steps.len() { ab(steps[k + 1]) } else { 1.0 };
            // eps = 0: x0 = x / sqrt(a), clipped, then eps re-derived from the clip.
            let x0 = (x / a.sqrt()).clamp(-1.0, 1.0);
            let e = (x - a.sqrt() * x0) / (1.0 - a).sqrt();
            x = a_prev.sqrt() * x0 + (1.0 - a_prev).sqrt() * e;
        }
        assert!((out.data[i] - x).abs() < 1e-12, "element {i}: {} vs {x}", out.data[i]);
    }
}

#[test]
fn ddim_is_deterministic_and_seed_sensitive() {
    let mut den = Denoiser::<f32>::new(DenoiserSpec::default(), 4).unwrap();
    let mut ps = den.params().cast::<f64>();
    randomize(&mut ps, |n| n.starts_with("out"), 0.2, 1);
    den.params_mut().load_from(&ps.cast()).unwrap();
    let sched = NoiseSchedule::default();
    let img = Image::<f32>::from_fn(16, 16, |r, c, ch| ((r * 3 + c * 5 + ch) % 11) as f32 / 10.0).unwrap();
    let cond = Conditioning::new(to_model_space(&[&img, &img]).unwrap());
    let a = ddim_sample(&ModelRef::base(&den), &cond, 5, &sched, &[1, 2]).unwrap();
    let b = ddim_sample(&ModelRef::base(&den), &cond, 5, &sched, &[1, 2]).unwrap();
    assert_eq!(bits(&a), bits(&b));
    let imgs = from_model_space(&a).unwrap();
    assert_eq!(imgs.len(), 2);
    assert_ne!(imgs[0], imgs[1]);
    for im in &imgs {
        assert_eq!(im.dims(), (16, 16));
        assert!(im.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
    assert!(ddim_sample(&ModelRef::base(&den), &cond, 0, &sched, &[1, 2]).is_err());
    assert!(ddim_sample(&ModelRef::base(&den), &cond, 5, &sched, &[1]).is_err());
}

#[test]
fn model_space_round_trip() {
    let img = Image::<f64>::from_fn(8, 8, |r, c, ch| ((r + 2 * c + 5 * ch) % 7) as f64 / 6.0).unwrap();
    let fm = to_model_space(&[&img]).unwrap();
    assert!(fm.data.iter().all(|v| (-1.0..=1.0).contains(v)));
    let back = from_model_space(&fm).unwrap();
    for (a, b) in img.data().iter().zip(back[0].data()) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn default_denoiser_fits_the_parameter_budget() {
    let den = Denoiser::<f32>::new(DenoiserSpec::default(), 0).unwrap();
    assert!(den.num_parameters() < 5_000_000);
    let wide = DenoiserSpec { base_width: 32, depth: 3, ..DenoiserSpec::default() };
    assert!(Denoiser::<f32>::new(wide, 0).unwrap().num_parameters() < 5_000_000);
}

#[test]
fn control_branch_requires_signal() {
    let den = Denoiser::<f64>::new(tiny_spec(), 1).unwrap();
    let branch = ControlBranch::from_denoiser(&den, 3, 2).unwrap();
    let batch = tiny_batch(1);
    let x_t = batch.x0.clone();
    assert!(predict_eps(&ModelRef::base(&den).with_control(&branch), &x_t, &batch.cond, &[1, 2]).is_err());
    let bad = batch.cond.clone().with_control(Some(Fm::zeros(3, 2, 16, 16)));
    assert!(predict_eps(&ModelRef::base(&den).with_control(&branch), &x_t, &bad, &[1, 2]).is_err());
    let _ = Weights::plain(den.params());
}
