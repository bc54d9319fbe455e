//! Behavioural probes of the trained reference transfer model.

use std::sync::OnceLock;

use lightfx_cli::commands::split_triplets;
use lightfx_cli::{Layout, RunConfig};
use lightfx_core::evalkit::{mean_abs_diff, psnr};
use lightfx_core::imagecore::{flip_horizontal, Image, LightTransform, Mask};
use lightfx_core::translight::{stage1_condition, TransLight, TransferRequest};
use lightfx_core::triplets::{load_triplets, Triplet};

const PROBES: usize = 16;
const STEPS: usize = 20;

struct Fixture {
    model: TransLight<f32>,
    held_out: Vec<Triplet<f32>>,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let (cfg, _): (RunConfig, _) = crate::reference().expect("reference run");
        let layout = Layout::new(&cfg.out_dir);
        let model = TransLight::load_bundle(&layout.full_bundle()).unwrap();
        let all = load_triplets::<f32>(&layout.triplets()).unwrap();
        let (_, test) = split_triplets(&all, cfg.eval.triplet_holdout);
        Fixture { model, held_out: test.into_iter().take(PROBES).cloned().collect() }
    })
}

fn request(t: &Triplet<f32>, seed: u64) -> TransferRequest<f32> {
    let mut r = TransferRequest::new(t.content.clone(), t.light.clone());
    r.fg_mask = Some(t.mask.clone());
    r.n_steps = STEPS;
    r.seed = seed;
    r
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = v.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn adapter_moves_the_base_toward_the_triplets() {
    let f = fixture();
    let with = TransLight { control: None, ..f.model.clone() };
    let without = TransLight { adapter: None, ..with.clone() };
    let conds: Vec<Image<f32>> = f.held_out.iter().map(|t| stage1_condition(t).unwrap()).collect();
    let refs: Vec<&Image<f32>> = conds.iter().collect();
    let lights: Vec<_> = f.held_out.iter().map(|t| &t.light).collect();
    let seeds: Vec<u64> = (0..conds.len() as u64).collect();
    let score = |m: &TransLight<f32>| {
        let out = m.generate(&refs, &lights, STEPS, &seeds).unwrap();
        mean(out.iter().zip(&f.held_out).map(|(o, t)| psnr(o, &t.image_with_light).unwrap()))
    };
    let (a, b) = (score(&with), score(&without));
    println!("stage-1 condition PSNR: base+adapter {a:.2} dB, base {b:.2} dB");
    assert!(a > b);
}

#[test]
fn the_reference_light_steers_the_output() {
    let f = fixture();
    let n = f.held_out.len();
    let own: Vec<_> = f.held_out.iter().enumerate().map(|(i, t)| request(t, i as u64)).collect();
    let swapped: Vec<_> = f
        .held_out
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let mut r = request(t, i as u64);
            r.light = f.held_out[(i + n / 2) % n].light.clone();
            r
        })
        .collect();
    let a = f.model.transfer_batch(&own).unwrap();
    let b = f.model.transfer_batch(&swapped).unwrap();
    let d = mean(a.iter().zip(&b).map(|(x, y)| mean_abs_diff(x, y).unwrap()));
    println!("mean |output(own light) - output(other light)| = {d:.4}");
    assert!(d > 0.01);
}

#[test]
fn removing_the_light_moves_the_output_toward_the_content() {
    let f = fixture();
    let lit: Vec<_> = f.held_out.iter().enumerate().map(|(i, t)| request(t, i as u64)).collect();
    let dark: Vec<_> = lit
        .iter()
        .map(|r| TransferRequest { transform: LightTransform { intensity: 0.0, ..LightTransform::IDENTITY }, ..r.clone() })
        .collect();
    let a = f.model.transfer_batch(&lit).unwrap();
    let b = f.model.transfer_batch(&dark).unwrap();
    let to_content = |out: &[Image<f32>]| mean(out.iter().zip(&f.held_out).map(|(o, t)| psnr(o, &t.content).unwrap()));
    let (lit_p, dark_p) = (to_content(&a), to_content(&b));
    println!("PSNR to content: intensity 1 {lit_p:.2} dB, intensity 0 {dark_p:.2} dB");
    assert!(dark_p > lit_p);
    assert!(dark_p > 25.0);
}

#[test]
fn flipping_the_light_on_symmetric_content_flips_the_output() {
    let f = fixture();
    let mirror = |t: &Triplet<f32>| {
        let (h, w) = t.content.dims();
        let content = Image::from_fn(h, w, |r, c, ch| t.content.get(r, c.min(w - 1 - c), ch)).unwrap();
        let mask = Mask::from_fn(h, w, |r, c| t.mask.get(r, c.min(w - 1 - c)));
        (content, mask)
    };
    let (mut plain, mut flipped) = (Vec::new(), Vec::new());
    for (i, t) in f.held_out.iter().enumerate() {
        let (content, mask) = mirror(t);
        let mut r = request(t, i as u64);
        r.content = content;
        r.fg_mask = Some(mask);
        flipped.push(TransferRequest { transform: LightTransform { hflip: true, ..LightTransform::IDENTITY }, seed: r.seed + 1000, ..r.clone() });
        plain.push(r);
    }
    let a = f.model.transfer_batch(&plain).unwrap();
    let b = f.model.transfer_batch(&flipped).unwrap();
    let mirrored = mean(a.iter().zip(&b).map(|(x, y)| mean_abs_diff(&flip_horizontal(x), y).unwrap()));
    let unmirrored = mean(a.iter().zip(&b).map(|(x, y)| mean_abs_diff(x, y).unwrap()));
    println!("flipped light vs flipped output: {mirrored:.4}; vs unflipped output: {unmirrored:.4}");
    assert!(mirrored < unmirrored);
}
