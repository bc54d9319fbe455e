#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

use std::collections::BTreeMap;
use std::sync::OnceLock;

use lightfx_core::imagecore::{composite, mask_background_light, Image, LightImage, SynthesisParams};
use lightfx_core::synthdata::{Corpus, LightKind, Manifest};
use lightfx_core::training::OptimConfig;
use lightfx_core::triplets::*;
use lightfx_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

const RES: usize = 32;

fn corpus() -> &'static Corpus<f32> {
    static C: OnceLock<Corpus<f32>> = OnceLock::new();
    C.get_or_init(|| Corpus::render(Manifest::plan(600, 200, 21, RES).unwrap()).unwrap())
}

fn embedder_spec() -> EmbedderSpec {
    EmbedderSpec { resolution: RES, width: 8, dim: 32 }
}

fn embedder_cfg(iterations: usize) -> OptimConfig {
    OptimConfig::new(iterations, 32, 3e-3, 5)
}

fn embedder() -> &'static (Embedder<f32>, Vec<Image<f32>>) {
    static E: OnceLock<(Embedder<f32>, Vec<Image<f32>>)> = OnceLock::new();
    E.get_or_init(|| {
        let images = corpus_images(corpus(), 2200, 3).unwrap();
        let (e, _) = train_embedder(&images[..2000], embedder_spec(), &embedder_cfg(2000), |_| Ok(())).unwrap();
        (e, images[2000..].to_vec())
    })
}

fn lit(i: usize) -> (Image<f32>, Image<f32>, LightImage<f32>) {
    let c = corpus();
    let s = i % c.scenes.len();
    let l = (i * 7 + 3) % c.lights.len();
    let lb = mask_background_light(&c.lights[l], &c.masks[s]).unwrap();
    let img = composite(&c.scenes[s], &lb, SynthesisParams::UNIT).unwrap();
    (img, c.scenes[s].clone(), lb)
}

#[test]
fn filter_truth_table_matches_formula() {
    let vals = [0.0, 0.5, 0.97, 0.979, 0.98, 0.981, 0.99, 1.0];
    for &a in &vals {
        for &b in &vals {
            let want = if b > a { a < 0.98 } else { false };
            assert_eq!(filter_check(a, b, 0.98), want, "alpha={a} beta={b}");
            assert_eq!(FilterDecision::evaluate(a, b, 0.98).passed, want);
        }
    }
}

#[test]
fn filter_examples() {
    assert!(filter_check(0.97, 0.99, 0.98));
    assert!(!filter_check(0.985, 0.99, 0.98));
    assert!(!filter_check(0.5, 0.4, 0.98));
    assert!(!filter_check(0.5, 0.5, 0.98));
    assert!(!filter_check(0.98, 0.99, 0.98));
}

#[test]
fn embeddings_are_unit_vectors() {
    let (e, held) = embedder();
    for v in e.embed_batch(&held.iter().take(50).collect::<Vec<_>>()).unwrap() {
        let n: f64 = v.iter().map(|x| x * x).sum();
        assert!((n - 1.0).abs() < 1e-9);
    }
}

#[test]
fn embedder_beats_mean_image_on_held_out() {
    let (e, held) = embedder();
    let train = corpus_images(corpus(), 1000, 3).unwrap();
    let n = train[0].data().len();
    let mut mean = vec![0.0f64; n];
    for im in &train {
        mean.iter_mut().zip(im.data()).for_each(|(m, &v)| *m += v as f64 / train.len() as f64);
    }
    let baseline = held
        .iter()
        .map(|im| im.data().iter().zip(&mean).map(|(&v, m)| (v as f64 - m).powi(2)).sum::<f64>() / n as f64)
        .sum::<f64>()
        / held.len() as f64;
    let ours = e.reconstruction_mse(&held.iter().collect::<Vec<_>>()).unwrap();
    assert!(ours < baseline, "autoencoder {ours} vs mean image {baseline}");
}

#[test]
fn nearest_neighbour_is_self() {
    let (e, held) = embedder();
    let emb = e.embed_batch(&held.iter().collect::<Vec<_>>()).unwrap();
    for (i, v) in emb.iter().enumerate().take(60) {
        let best = (0..emb.len()).max_by(|&a, &b| cosine(v, &emb[a]).total_cmp(&cosine(v, &emb[b]))).unwrap();
        assert!(best == i || emb[best] == *v, "image {i} matched {best}");
    }
}

#[test]
fn similarity_is_reflexive_and_symmetric() {
    let (e, held) = embedder();
    for pair in held.chunks(2).take(20) {
        assert!((similarity(e, &pair[0], &pair[0]).unwrap() - 1.0).abs() < 1e-9);
        let ab = similarity(e, &pair[0], &pair[1]).unwrap();
        assert_eq!(ab, similarity(e, &pair[1], &pair[0]).unwrap());
        assert!((-1.0..=1.0).contains(&ab));
    }
}

#[test]
fn similarity_falls_with_noise_amplitude() {
    let (e, held) = embedder();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let amps = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5];
    let mut means = Vec::new();
    for &a in &amps {
        let mut total = 0.0;
        for im in held.iter().take(100) {
            let noisy = if a == 0.0 {
                im.clone()
            } else {
                let n = Normal::new(0.0, a).unwrap();
                Image::from_clamped(RES, RES, im.data().iter().map(|&v| v + n.sample(&mut rng) as f32).collect()).unwrap()
            };
            total += similarity(e, im, &noisy).unwrap();
        }
        means.push(total / 100.0);
    }
    assert!(means.windows(2).all(|w| w[1] < w[0]), "{means:?}");
}

#[test]
fn embedder_needs_enough_images() {
    let images = corpus_images(corpus(), 999, 1).unwrap();
    assert!(train_embedder(&images, embedder_spec(), &embedder_cfg(1), |_| Ok(())).is_err());
}

#[test]
fn embedder_training_is_seeded_and_round_trips() {
    let images = corpus_images(corpus(), 1000, 2).unwrap();
    let (a, la) = train_embedder(&images, embedder_spec(), &embedder_cfg(5), |_| Ok(())).unwrap();
    let (b, lb) = train_embedder(&images, embedder_spec(), &embedder_cfg(5), |_| Ok(())).unwrap();
    assert_eq!(la, lb);
    assert_eq!(a.digest(), b.digest());
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("e.ckpt");
    a.save(&p).unwrap();
    let c = Embedder::<f32>::load(&p).unwrap();
    assert_eq!(c.digest(), a.digest());
    assert_eq!(c.embed(&images[0]).unwrap(), a.embed(&images[0]).unwrap());
}

use lightfx_core::evalkit::Embed;

/// Returns ground truth for the images it was built from.
struct Oracle {
    rows: Vec<(Image<f32>, Image<f32>, LightImage<f32>)>,
    zero_light: bool,
}

impl Decoupler<f32> for Oracle {
    fn remove(&self, images: &[&Image<f32>], _: &[u64]) -> Result<Vec<Image<f32>>> {
        Ok(images
            .iter()
            .map(|im| self.rows.iter().find(|r| &r.0 == *im || &r.1 == *im).map(|r| r.1.clone()).expect("known image"))
            .collect())
    }

    fn extract(&self, images: &[&Image<f32>], _: &[Option<LightKind>], _: &[u64]) -> Result<Vec<LightImage<f32>>> {
        Ok(images
            .iter()
            .map(|im| {
                let r = self.rows.iter().find(|r| &r.0 == *im).expect("known image");
                if self.zero_light {
                    LightImage::zeros(RES, RES).unwrap()
                } else {
                    r.2.clone()
                }
            })
            .collect())
    }

    fn checkpoint_ids(&self) -> BTreeMap<String, String> {
        BTreeMap::from([("oracle".to_string(), "ground-truth".to_string())])
    }
}

fn oracle_sources(n: usize, zero_light: bool) -> (Oracle, Vec<SourceImage<f32>>) {
    let c = corpus();
    let mut rows = Vec::new();
    let mut sources = Vec::new();
    let mut i = 0;
    while sources.len() < n {
        let (img, content, light) = lit(i);
        i += 1;
        // Only salient images enter generation.
        if light_saliency(&img) < TripletConfig::default().selection_threshold {
            continue;
        }
        let s = (i - 1) % c.scenes.len();
        sources.push(SourceImage { id: format!("t{:05}", sources.len()), image: img.clone(), kind: None, mask: Some(c.masks[s].clone()) });
        rows.push((img, content, light));
    }
    (Oracle { rows, zero_light }, sources)
}

/// With ground-truth decoupling the recomposition is exact, so cos(beta) is 1
/// and acceptance reduces to the light moving the embedding past gamma.
#[test]
fn oracle_decoupling_is_accepted_whenever_the_light_is_salient_in_embedding() {
    let (e, _) = embedder();
    let cfg = TripletConfig::default();
    let (oracle, sources) = oracle_sources(200, false);
    let dir = tempfile::tempdir().unwrap();
    let report = run_pipeline(&sources, &oracle, e, &cfg, dir.path()).unwrap();
    let rate = report.counts.accepted as f64 / report.counts.generated as f64;
    println!("oracle acceptance rate {:.3} ({} of {}), reasons {:?}", rate, report.counts.accepted, report.counts.generated, report.reasons);
    assert_eq!(report.counts.generated, 200);

    let mut accepted = 0;
    for (src, seed) in sources.iter().zip(0..) {
        let d = build_triplet(&oracle, e, &src.image, None, TripletSeeds::derive(cfg.seed, seed), &cfg).unwrap().decision;
        assert!((d.cos_beta - 1.0).abs() < 1e-6, "{}: cos(beta) = {}", src.id, d.cos_beta);
        assert_eq!(d.passed, d.cos_alpha < d.gamma, "{}: {d:?}", src.id);
        accepted += usize::from(d.passed);
    }
    assert_eq!(accepted, report.counts.accepted);
}

#[test]
fn zero_light_extraction_is_rejected() {
    let (e, _) = embedder();
    let (oracle, sources) = oracle_sources(20, true);
    for (src, seed) in sources.iter().zip(0..) {
        let c = build_triplet(&oracle, e, &src.image, None, TripletSeeds::derive(1, seed), &TripletConfig::default()).unwrap();
        assert_eq!(c.decision.cos_alpha, c.decision.cos_beta);
        assert!(!c.decision.passed);
    }
}

#[test]
fn pipeline_counts_layout_and_replay() {
    let (e, _) = embedder();
    let (oracle, mut sources) = oracle_sources(12, false);
    // A light-free image is dropped at selection; a zero-light image is rejected at filtering.
    sources.push(SourceImage { id: "plain".into(), image: corpus().scenes[0].clone(), kind: None, mask: None });
    let before: Vec<Image<f32>> = sources.iter().map(|s| s.image.clone()).collect();
    let mut rows = oracle.rows;
    rows.push((corpus().scenes[0].clone(), corpus().scenes[0].clone(), LightImage::zeros(RES, RES).unwrap()));
    let oracle = Oracle { rows, zero_light: false };
    let cfg = TripletConfig { seed: 4, ..Default::default() };
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    let r1 = run_pipeline(&sources, &oracle, e, &cfg, d1.path()).unwrap();
    let r2 = run_pipeline(&sources, &oracle, e, &cfg, d2.path()).unwrap();
    assert_eq!(r1, r2);
    let c = &r1.counts;
    assert_eq!(c.sources, 13);
    assert!(c.sources >= c.selected && c.selected >= c.generated && c.generated >= c.accepted);
    assert_eq!(c.generated, c.accepted + c.filtered_out);
    assert_eq!(r1.cos_alpha.total(), c.generated);
    let j1 = std::fs::read(d1.path().join(TRIPLETS_FILE)).unwrap();
    assert_eq!(j1, std::fs::read(d2.path().join(TRIPLETS_FILE)).unwrap());
    let loaded = load_triplets::<f32>(d1.path()).unwrap();
    assert_eq!(loaded.len(), c.accepted);
    for t in &loaded {
        assert!(t.record.passed);
        assert!(filter_check(t.record.cos_alpha, t.record.cos_beta, t.record.gamma));
        assert!(t.record.checkpoints.contains_key("embedder"));
        let src = sources.iter().find(|s| s.id == t.record.id).unwrap();
        let worst = t.image_with_light.data().iter().zip(src.image.data()).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
        assert!(worst <= 0.5 / 255.0 + 1e-6);
    }
    for (s, b) in sources.iter().zip(&before) {
        assert_eq!(&s.image, b);
    }
}

#[test]
fn empty_source_gives_empty_dataset() {
    let (e, _) = embedder();
    let oracle = Oracle { rows: vec![], zero_light: false };
    let dir = tempfile::tempdir().unwrap();
    let r = run_pipeline(&[], &oracle, e, &TripletConfig::default(), dir.path()).unwrap();
    assert_eq!((r.counts.sources, r.counts.selected, r.counts.generated, r.counts.accepted), (0, 0, 0, 0));
    assert!(load_triplets::<f32>(dir.path()).unwrap().is_empty());
}

#[test]
fn duplicate_ids_are_rejected() {
    let (e, _) = embedder();
    let (oracle, mut sources) = oracle_sources(2, false);
    sources[1].id = sources[0].id.clone();
    let dir = tempfile::tempdir().unwrap();
    assert!(run_pipeline(&sources, &oracle, e, &TripletConfig::default(), dir.path()).is_err());
}

#[test]
fn light_raises_saliency() {
    let c = corpus();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..100 {
        let s = rng.gen_range(0..c.scenes.len());
        let l = rng.gen_range(0..c.lights.len());
        let with = composite(&c.scenes[s], &c.lights[l], SynthesisParams::UNIT).unwrap();
        assert!(light_saliency(&with) > light_saliency(&c.scenes[s]));
    }
}

#[test]
fn selection_recalls_lit_images() {
    let c = corpus();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut images = Vec::new();
    for i in 0..1000 {
        let s = rng.gen_range(0..c.scenes.len());
        if i < 500 {
            let l = rng.gen_range(0..c.lights.len());
            images.push(composite(&c.scenes[s], &c.lights[l], SynthesisParams::UNIT).unwrap());
        } else {
            images.push(c.scenes[s].clone());
        }
    }
    let kept = select(&images, 0.15);
    let recall = kept.iter().filter(|&&i| i < 500).count() as f64 / 500.0;
    let false_pos = kept.iter().filter(|&&i| i >= 500).count();
    println!("recall {recall:.3}, unlit kept {false_pos}");
    assert!(recall >= 0.9, "recall {recall}");
}

#[test]
fn bad_config_is_rejected() {
    for cfg in [
        TripletConfig { gamma: 0.0, ..Default::default() },
        TripletConfig { gamma: 1.5, ..Default::default() },
        TripletConfig { selection_threshold: -0.1, ..Default::default() },
        TripletConfig { sampling_steps: 0, ..Default::default() },
    ] {
        assert!(cfg.validate().is_err());
    }
    assert!(TripletConfig::default().validate().is_ok());
}
