use std::collections::BTreeMap;

use lightfx_core::decouple::{ModelShape, Split};
use lightfx_core::diffusion::{ControlBranch, Denoiser, LowRankAdapter};
use lightfx_core::imagecore::{Image, LightImage, LightTransform, Mask};
use lightfx_core::synthdata::{Corpus, Manifest};
use lightfx_core::translight::{
    base_relight, pretrain_base, stage1_condition, stage1_train, stage2_train, BaseConfig, Stage1Config, Stage2Config,
    TransLight, TransferRequest, BUNDLE_FILE,
};
use lightfx_core::triplets::{Triplet, TripletRecord, TripletSeeds};

const SHAPE: ModelShape = ModelShape { base_width: 4, depth: 2, time_dim: 8 };

fn base(seed: u64) -> Denoiser<f32> {
    Denoiser::new(SHAPE.spec(6, 0), seed).unwrap()
}

fn triplets(n: usize) -> Vec<Triplet<f32>> {
    let c = Corpus::<f32>::render(Manifest::plan(n, n, 5, 16).unwrap()).unwrap();
    (0..n)
        .map(|i| {
            let content = c.scenes[i].clone();
            let light = c.lights[i].clone();
            let image_with_light = Image::from_fn(16, 16, |r, col, ch| (content.get(r, col, ch) + light.as_image().get(r, col, ch)).min(1.0)).unwrap();
            let record = TripletRecord {
                id: format!("t{i:03}"),
                kind: Some(c.light_kind(i)),
                cos_alpha: 1.0,
                cos_beta: 1.0,
                gamma: 0.98,
                passed: true,
                reremoved: false,
                seeds: TripletSeeds::derive(1, i as u64),
                checkpoints: BTreeMap::new(),
            };
            Triplet { record, image_with_light, content, light, mask: c.masks[i].clone() }
        })
        .collect()
}

fn scene() -> (Image<f32>, LightImage<f32>) {
    let content = Image::from_fn(16, 16, |r, c, ch| ((r + c + ch) % 5) as f32 / 5.0).unwrap();
    let light = LightImage::from_image(Image::from_fn(16, 16, |r, c, _| if r < 5 && c < 6 { 0.8 } else { 0.0 }).unwrap());
    (content, light)
}

#[test]
fn base_relight_applies_the_warm_curve() {
    let img = Image::<f64>::filled(8, 8, 0.5).unwrap();
    let out = base_relight(&img);
    let v = 0.5f64.powf(1.25);
    assert!((out.get(0, 0, 0) - (1.12 * v).min(1.0)).abs() < 1e-12);
    assert!((out.get(0, 0, 2) - 0.8 * v).abs() < 1e-12);
}

#[test]
fn stage1_condition_adds_background_light() {
    let t = &triplets(2)[0];
    let cond = stage1_condition(t).unwrap();
    let (h, w) = t.mask.dims();
    for r in 0..h {
        for c in 0..w {
            let l = if t.mask.get(r, c) { 0.0 } else { t.light.as_image().get(r, c, 0) };
            assert!((cond.get(r, c, 0) - (t.content.get(r, c, 0) + l).min(1.0)).abs() < 1e-6);
        }
    }
}

#[test]
fn training_stages_leave_frozen_parts_untouched() {
    let ts = triplets(6);
    let refs: Vec<&Triplet<f32>> = ts.iter().collect();
    let b = base(1);
    let base_digest = b.params().digest();
    let s1 = Stage1Config { iterations: 3, batch_size: 2, learning_rate: 1e-2, adapter_rank: 2, adapter_scale: 1.0, seed: 3 };
    let (adapter, l1) = stage1_train(&b, &refs, &s1, |_| Ok(())).unwrap();
    assert_eq!(l1.len(), 3);
    assert_eq!(b.params().digest(), base_digest);
    assert_ne!(adapter.params().digest(), LowRankAdapter::new(&b, 2, 1.0, 3 ^ 0x1a).unwrap().params().digest());

    let adapter_digest = adapter.params().digest();
    let s2 = Stage2Config { iterations: 3, batch_size: 2, learning_rate: 1e-2, seed: 4 };
    let (branch, l2) = stage2_train(&b, Some(&adapter), &refs, &s2, |_| Ok(())).unwrap();
    assert_eq!(l2.len(), 3);
    assert_eq!(b.params().digest(), base_digest);
    assert_eq!(adapter.params().digest(), adapter_digest);
    assert_eq!(branch.control_channels(), 3);
}

#[test]
fn stages_reject_empty_triplet_sets() {
    let b = base(1);
    let s1 = Stage1Config { iterations: 1, batch_size: 1, learning_rate: 1e-3, adapter_rank: 2, adapter_scale: 1.0, seed: 0 };
    assert!(stage1_train(&b, &[], &s1, |_| Ok(())).is_err());
    let s2 = Stage2Config { iterations: 1, batch_size: 1, learning_rate: 1e-3, seed: 0 };
    assert!(stage2_train(&b, None, &[], &s2, |_| Ok(())).is_err());
    let bad = Stage1Config { adapter_rank: 0, ..s1 };
    assert!(stage1_train(&b, &[&triplets(1)[0]], &bad, |_| Ok(())).is_err());
}

#[test]
fn pretraining_is_seeded() {
    let c = Corpus::<f32>::render(Manifest::plan(8, 8, 2, 16).unwrap()).unwrap();
    let split = Split::new(8, 8, 0.25).unwrap();
    let cfg = BaseConfig { iterations: 3, batch_size: 2, learning_rate: 1e-3, seed: 5 };
    let (a, la) = pretrain_base(&c, &split, &SHAPE, &cfg, |_| Ok(())).unwrap();
    let (b, lb) = pretrain_base(&c, &split, &SHAPE, &cfg, |_| Ok(())).unwrap();
    assert_eq!(la, lb);
    assert_eq!(a.params().digest(), b.params().digest());
}

fn full_model() -> TransLight<f32> {
    let b = base(7);
    let mut m = TransLight::new(b.clone());
    m.adapter = Some(LowRankAdapter::new(&b, 2, 1.0, 8).unwrap());
    m.control = Some(ControlBranch::from_denoiser(&b, 3, 9).unwrap());
    m
}

#[test]
fn zero_initialized_parts_do_not_change_the_output() {
    let full = full_model();
    let plain = TransLight::new(full.base.clone());
    let (content, light) = scene();
    let mut req = TransferRequest::new(content, light);
    req.n_steps = 3;
    req.seed = 4;
    assert_eq!(full.transfer(&req).unwrap(), plain.transfer(&req).unwrap());
}

#[test]
fn bundle_round_trip_preserves_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let m = full_model();
    let manifest = m.save_bundle(dir.path(), serde_json::json!({"note": "x"})).unwrap();
    assert!(manifest.adapter.is_some() && manifest.control.is_some());
    let back = TransLight::<f32>::load_bundle(dir.path()).unwrap();
    assert_eq!(back.base.params().digest(), m.base.params().digest());
    let (content, light) = scene();
    let mut req = TransferRequest::new(content, light);
    req.n_steps = 2;
    assert_eq!(back.transfer(&req).unwrap(), m.transfer(&req).unwrap());

    let only_base = TransLight::new(m.base.clone());
    let dir2 = tempfile::tempdir().unwrap();
    let m2 = only_base.save_bundle(dir2.path(), serde_json::Value::Null).unwrap();
    assert!(m2.adapter.is_none() && m2.control.is_none());
    assert!(TransLight::<f32>::load_bundle(dir2.path()).unwrap().adapter.is_none());
}

#[test]
fn bundles_reject_tampering_and_foreign_bases() {
    let dir = tempfile::tempdir().unwrap();
    let m = full_model();
    m.save_bundle(dir.path(), serde_json::Value::Null).unwrap();

    let other = tempfile::tempdir().unwrap();
    TransLight::new(base(99)).save_bundle(other.path(), serde_json::Value::Null).unwrap();
    std::fs::copy(other.path().join("base/base.ckpt"), dir.path().join("base/base.ckpt")).unwrap();
    assert!(TransLight::<f32>::load_bundle(dir.path()).is_err());

    let mut json: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join(BUNDLE_FILE)).unwrap()).unwrap();
    json["base"] = serde_json::Value::String(lightfx_core::fsutil::sha256_file(&dir.path().join("base/base.ckpt")).unwrap());
    std::fs::write(dir.path().join(BUNDLE_FILE), serde_json::to_vec(&json).unwrap()).unwrap();
    assert!(TransLight::<f32>::load_bundle(dir.path()).is_err(), "adapter trained on a different base must be refused");
}

#[test]
fn transfer_is_seeded_and_keeps_dims() {
    let m = full_model();
    let (content, light) = scene();
    let mut req = TransferRequest::new(content, light);
    req.n_steps = 3;
    req.seed = 1;
    req.transform = LightTransform { dx: -2, dy: 1, hflip: true, vflip: false, quarter_turns: 2, intensity: 0.5 };
    req.fg_mask = Some(Mask::from_fn(16, 16, |r, _| r > 8));
    let a = m.transfer(&req).unwrap();
    assert_eq!(a.dims(), (16, 16));
    assert_eq!(a, m.transfer(&req).unwrap());
    let mut other = req.clone();
    other.seed = 2;
    assert_ne!(a, m.transfer(&other).unwrap());
    let batch = m.transfer_batch(&[req.clone(), other]).unwrap();
    assert_eq!(batch[0], a);
}

#[test]
fn transfer_validates_requests() {
    let m = full_model();
    let (content, light) = scene();
    let mut req = TransferRequest::new(content.clone(), light.clone());
    req.n_steps = 0;
    assert!(m.transfer(&req).is_err());

    let tall = Image::<f32>::filled(16, 8, 0.4).unwrap();
    let mut turned = TransferRequest::new(tall, LightImage::from_image(Image::filled(8, 16, 0.2).unwrap()));
    turned.n_steps = 2;
    assert!(m.transfer(&turned).is_err());
    turned.transform.quarter_turns = 1;
    assert_eq!(m.transfer(&turned).unwrap().dims(), (16, 8));

    let mut a = TransferRequest::new(content.clone(), light.clone());
    a.n_steps = 2;
    let mut b = a.clone();
    b.n_steps = 3;
    assert!(m.transfer_batch(&[a, b]).is_err());
    assert!(m.transfer_batch(&[]).unwrap().is_empty());
}

#[test]
fn prepared_condition_is_content_plus_moved_light() {
    let (content, light) = scene();
    let mut req = TransferRequest::new(content.clone(), light);
    req.transform = LightTransform { intensity: 0.5, ..LightTransform::IDENTITY };
    let (moved, cond) = req.prepare().unwrap();
    assert!((moved.as_image().get(0, 0, 0) - 0.4).abs() < 1e-6);
    assert!((cond.get(0, 0, 1) - (content.get(0, 0, 1) + 0.4).min(1.0)).abs() < 1e-6);
    assert_eq!(cond.get(10, 10, 2), content.get(10, 10, 2));
}
