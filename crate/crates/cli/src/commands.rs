use std::path::{Path, PathBuf};
use std::time::Instant;

use lightfx_core::decouple::{train_extraction, train_removal, DecoupleModel, Role, Split};
use lightfx_core::evalkit::{
    evaluate_extraction, evaluate_removal, success_rate_harness, transfer_table, DecoupleOutcome, DecoupleSample,
    ExtractionEval, RemovalEval, SuccessReport, TransferTable, FULL, NO_ADAPTER,
};
use lightfx_core::fsutil::{create_dir_all, read_json, write_json};
use lightfx_core::imagecore::{
    composite, load_image, load_light, load_mask, mask_background_light, save_image, Image, LightImage, LightTransform,
    SynthesisParams,
};
use lightfx_core::synthdata::{gen_corpus, Corpus, LightKind};
use lightfx_core::training::{JsonlLog, LogRecord, OptimConfig};
use lightfx_core::translight::{pretrain_base, stage1_train, stage2_train, TransLight, TransferRequest};
use lightfx_core::triplets::{
    corpus_images, load_triplets, raster_path, read_records, run_pipeline, train_embedder, Embedder, ModelDecoupler,
    PipelineReport, SourceImage, Triplet, TripletRecord, REJECTED_FILE, REPORT_FILE, TRIPLETS_FILE,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::layout::{Layout, RunLock, RunManifest};
use crate::plot::plot_losses;

type F = f32;

fn progress(msg: impl AsRef<str>) {
    eprintln!("[lightfx] {}", msg.as_ref());
}

/// Streams a loss curve to `logs/<name>.jsonl`, echoing every `every`-th record.
fn logger(layout: &Layout, name: &str, total: usize) -> Result<(JsonlLog, usize, String), CliError> {
    create_dir_all(&layout.logs())?;
    Ok((JsonlLog::create(&layout.log(name))?, (total / 10).max(1), name.to_string()))
}

fn log_step(state: &mut (JsonlLog, usize, String), r: &LogRecord) -> lightfx_core::Result<()> {
    state.0.write(r)?;
    if (r.iteration + 1) % state.1 == 0 {
        progress(format!("{} iter {} loss {:.5} ({:.0}s)", state.2, r.iteration + 1, r.loss, r.wall_clock_s));
    }
    Ok(())
}

fn load_corpus(layout: &Layout) -> Result<Corpus<F>, CliError> {
    layout.require(&layout.corpus().join("manifest.json"), "corpus", "gen-data")?;
    Ok(Corpus::load(&layout.corpus())?)
}

fn split(cfg: &RunConfig, corpus: &Corpus<F>) -> Result<Split, CliError> {
    Ok(Split::new(corpus.scenes.len(), corpus.lights.len(), cfg.data.holdout)?)
}

pub fn gen_data(cfg: &RunConfig) -> Result<(), CliError> {
    let layout = Layout::new(&cfg.out_dir);
    let _lock = RunLock::acquire(&layout.root)?;
    progress(format!("generating {} scenes and {} lights at {}px", cfg.data.scenes, cfg.data.lights, cfg.resolution));
    gen_corpus(&layout.corpus(), cfg.data.scenes, cfg.data.lights, cfg.seed, cfg.resolution)?;
    let mut m = RunManifest::new("gen-data", cfg);
    m.seeds.insert("corpus".into(), cfg.seed);
    m.hash_tree(&layout.root, &layout.corpus())?;
    m.write(&layout)
}

#[derive(Serialize)]
struct Timing {
    seconds: f64,
}

pub fn train_decouple(cfg: &RunConfig) -> Result<(), CliError> {
    let layout = Layout::new(&cfg.out_dir);
    let _lock = RunLock::acquire(&layout.root)?;
    let corpus = load_corpus(&layout)?;
    let split = split(cfg, &corpus)?;
    create_dir_all(&layout.decouple())?;
    let start = Instant::now();

    let mut log = logger(&layout, "removal", cfg.removal.iterations)?;
    let (removal, _) = train_removal(&corpus, &split, &cfg.model, &cfg.removal, |r| log_step(&mut log, r))?;
    log.0.finish()?;
    removal.save(&layout.removal_ckpt())?;

    let mut log = logger(&layout, "extraction", cfg.extraction.iterations)?;
    let (extraction, _) = train_extraction(&corpus, &split, &cfg.model, &cfg.extraction, |r| log_step(&mut log, r))?;
    log.0.finish()?;
    extraction.save(&layout.extraction_ckpt())?;

    write_json(&layout.logs().join("decouple_timing.json"), &Timing { seconds: start.elapsed().as_secs_f64() })?;
    let mut m = RunManifest::new("train-decouple", cfg);
    m.seeds.insert("removal".into(), cfg.removal.seed);
    m.seeds.insert("extraction".into(), cfg.extraction.seed);
    m.hash_tree(&layout.root, &layout.decouple())?;
    m.write(&layout)
}

/// Which corpus scene and light a pipeline source image was built from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceRecord {
    pub id: String,
    pub scene: usize,
    pub light: usize,
    pub kind: LightKind,
}

pub fn plan_sources(corpus: &Corpus<F>, n: usize, seed: u64) -> Vec<SourceRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5005);
    (0..n)
        .map(|i| {
            let light = rng.gen_range(0..corpus.lights.len());
            SourceRecord { id: format!("p{i:05}"), scene: rng.gen_range(0..corpus.scenes.len()), light, kind: corpus.light_kind(light) }
        })
        .collect()
}

/// The lit image and the true background light of a source.
pub fn render_source(corpus: &Corpus<F>, s: &SourceRecord) -> Result<(Image<F>, LightImage<F>), CliError> {
    let lb = mask_background_light(&corpus.lights[s.light], &corpus.masks[s.scene])?;
    Ok((composite(&corpus.scenes[s.scene], &lb, SynthesisParams::UNIT)?, lb))
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let mut text = String::new();
    for r in rows {
        text.push_str(&serde_json::to_string(r).map_err(|e| CliError::Runtime(e.to_string()))?);
        text.push('\n');
    }
    Ok(lightfx_core::fsutil::write_atomic(path, text.as_bytes())?)
}

fn read_sources(path: &Path) -> Result<Vec<SourceRecord>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Missing(format!("{}: {e} (run `lightfx build-triplets` first)", path.display())))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display()))))
        .collect()
}

fn load_decouplers(layout: &Layout) -> Result<(DecoupleModel<F>, DecoupleModel<F>), CliError> {
    layout.require(&layout.removal_ckpt(), "removal checkpoint", "train-decouple")?;
    layout.require(&layout.extraction_ckpt(), "extraction checkpoint", "train-decouple")?;
    Ok((DecoupleModel::load(&layout.removal_ckpt(), Role::Removal)?, DecoupleModel::load(&layout.extraction_ckpt(), Role::Extraction)?))
}

pub fn build_triplets(cfg: &RunConfig) -> Result<(), CliError> {
    let layout = Layout::new(&cfg.out_dir);
    let _lock = RunLock::acquire(&layout.root)?;
    let corpus = load_corpus(&layout)?;
    let (removal, extraction) = load_decouplers(&layout)?;

    progress("training embedder");
    let images = corpus_images(&corpus, cfg.embedder.images, cfg.seed)?;
    let ecfg = OptimConfig::new(cfg.embedder.iterations, cfg.embedder.batch_size, cfg.embedder.learning_rate, cfg.seed);
    let mut log = logger(&layout, "embedder", cfg.embedder.iterations)?;
    let (embedder, _) = train_embedder(&images, cfg.embedder_spec(), &ecfg, |r| log_step(&mut log, r))?;
    log.0.finish()?;
    create_dir_all(&layout.embedder_dir())?;
    embedder.save(&layout.embedder_ckpt())?;

    let plan = plan_sources(&corpus, cfg.triplets.sources, cfg.seed);
    let sources = plan
        .iter()
        .map(|s| {
            let (image, _) = render_source(&corpus, s)?;
            Ok(SourceImage { id: s.id.clone(), image, kind: Some(s.kind), mask: Some(corpus.masks[s.scene].clone()) })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let root = layout.triplets();
    if root.exists() {
        std::fs::remove_dir_all(&root).map_err(|e| CliError::Runtime(format!("cannot clear {}: {e}", root.display())))?;
    }
    create_dir_all(&root)?;
    write_jsonl(&layout.sources_file(), &plan)?;
    progress(format!("decoupling {} source images", sources.len()));
    let dec = ModelDecoupler { removal: &removal, extraction: &extraction, n_steps: cfg.triplets.sampling_steps };
    let report = run_pipeline(&sources, &dec, &embedder, &cfg.triplets.filter(cfg.seed), &root)?;
    let c = &report.counts;
    progress(format!(
        "selected {} of {}, generated {}, accepted {}, filtered out {}",
        c.selected, c.sources, c.generated, c.accepted, c.filtered_out
    ));
    let mut m = RunManifest::new("build-triplets", cfg);
    m.seeds.insert("triplets".into(), cfg.seed);
    m.hash_tree(&layout.root, &layout.embedder_dir())?;
    m.hash_tree(&layout.root, &root)?;
    m.write(&layout)
}

/// Training and held-out triplets, split by position in id order.
pub fn split_triplets(triplets: &[Triplet<F>], holdout: f64) -> (Vec<&Triplet<F>>, Vec<&Triplet<F>>) {
    let n = triplets.len();
    let held = ((n as f64 * holdout).round() as usize).min(n.saturating_sub(1));
    let (a, b) = triplets.split_at(n - held);
    (a.iter().collect(), b.iter().collect())
}

fn load_dataset(layout: &Layout) -> Result<Vec<Triplet<F>>, CliError> {
    layout.require(&layout.triplets().join(TRIPLETS_FILE), "triplet dataset", "build-triplets")?;
    Ok(load_triplets(&layout.triplets())?)
}

pub fn train_translight(cfg: &RunConfig) -> Result<(), CliError> {
    let layout = Layout::new(&cfg.out_dir);
    let _lock = RunLock::acquire(&layout.root)?;
    let corpus = load_corpus(&layout)?;
    let triplets = load_dataset(&layout)?;
    let (train, held) = split_triplets(&triplets, cfg.eval.triplet_holdout);
    if train.is_empty() {
        return Err(CliError::Runtime("the triplet dataset has no accepted triplets to train on".into()));
    }
    progress(format!("{} training triplets, {} held out", train.len(), held.len()));
    let split = split(cfg, &corpus)?;

    let mut log = logger(&layout, "base", cfg.base.iterations)?;
    let (base, _) = pretrain_base(&corpus, &split, &cfg.model, &cfg.base, |r| log_step(&mut log, r))?;
    log.0.finish()?;

    let mut log = logger(&layout, "stage1", cfg.stage1.iterations)?;
    let (adapter, _) = stage1_train(&base, &train, &cfg.stage1, |r| log_step(&mut log, r))?;
    log.0.finish()?;

    let mut log = logger(&layout, "stage2", cfg.stage2.iterations)?;
    let (control, _) = stage2_train(&base, Some(&adapter), &train, &cfg.stage2, |r| log_step(&mut log, r))?;
    log.0.finish()?;

    let configs = serde_json::json!({ "base": cfg.base, "stage1": cfg.stage1, "stage2": cfg.stage2, "model": cfg.model });
    let mut full = TransLight::new(base.clone());
    full.adapter = Some(adapter);
    full.control = Some(control);
    let dir = layout.translight();
    if dir.exists() {
        std::fs::remove_dir_all(&dir).map_err(|e| CliError::Runtime(format!("cannot clear {}: {e}", dir.display())))?;
    }
    full.save_bundle(&layout.full_bundle(), configs.clone())?;

    if cfg.eval.ablation {
        let mut log = logger(&layout, "stage2_no_adapter", cfg.stage2.iterations)?;
        let (control, _) = stage2_train(&base, None, &train, &cfg.stage2, |r| log_step(&mut log, r))?;
        log.0.finish()?;
        let mut ablated = TransLight::new(base);
        ablated.control = Some(control);
        ablated.save_bundle(&layout.ablation_bundle(), configs)?;
    }
    let mut m = RunManifest::new("train-translight", cfg);
    m.seeds.insert("base".into(), cfg.base.seed);
    m.seeds.insert("stage1".into(), cfg.stage1.seed);
    m.seeds.insert("stage2".into(), cfg.stage2.seed);
    m.hash_tree(&layout.root, &dir)?;
    m.write(&layout)
}

/// Arguments of `lightfx infer`.
#[derive(Clone, Debug)]
pub struct InferArgs {
    pub bundle: PathBuf,
    pub content: PathBuf,
    pub light: PathBuf,
    pub mask: Option<PathBuf>,
    pub transform: LightTransform,
    pub steps: usize,
    pub seed: u64,
    pub out: PathBuf,
}

pub fn infer(args: &InferArgs) -> Result<(), CliError> {
    for (p, what) in [(&args.content, "content image"), (&args.light, "light image")] {
        if !p.exists() {
            return Err(CliError::Missing(format!("{what} {} does not exist", p.display())));
        }
    }
    if !args.bundle.join(lightfx_core::translight::BUNDLE_FILE).exists() {
        return Err(CliError::Missing(format!("model bundle not found at {} (run `lightfx train-translight` first)", args.bundle.display())));
    }
    let model = TransLight::<F>::load_bundle(&args.bundle)?;
    let content: Image<F> = load_image(&args.content)?;
    let light: LightImage<F> = load_light(&args.light)?;
    let fg_mask = args.mask.as_deref().map(load_mask).transpose()?;
    args.transform
        .validate(light.as_image().height(), light.as_image().width())
        .map_err(|e| CliError::Config(format!("invalid transform: {e}")))?;
    let req = TransferRequest { content, light, transform: args.transform, fg_mask, n_steps: args.steps, seed: args.seed };
    let out = model.transfer(&req)?;
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir_all(dir)?;
    }
    save_image(&args.out, &out)?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecoupleReport {
    pub removal: RemovalEval,
    pub extraction: ExtractionEval,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub decoupling: DecoupleReport,
    pub pipeline: PipelineReport,
    pub success: SuccessReport,
    pub transfer: TransferTable,
}

/// Held-out composites `composite(I, L_bg, 1, 1)` with ground truth.
pub fn decouple_samples(corpus: &Corpus<F>, split: &Split, n: usize, seed: u64) -> Result<Vec<DecoupleSample<F>>, CliError> {
    if split.test_scenes.is_empty() || split.test_lights.is_empty() {
        return Err(CliError::Config("data.holdout leaves no held-out scenes or lights".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xe7a1);
    (0..n)
        .map(|_| {
            let s = rng.gen_range(split.test_scenes.clone());
            let l = rng.gen_range(split.test_lights.clone());
            let lb = mask_background_light(&corpus.lights[l], &corpus.masks[s])?;
            Ok(DecoupleSample {
                input: composite(&corpus.scenes[s], &lb, SynthesisParams::UNIT)?,
                content: corpus.scenes[s].clone(),
                light: lb,
                kind: Some(corpus.light_kind(l)),
            })
        })
        .collect()
}

fn load_candidates(layout: &Layout, corpus: &Corpus<F>) -> Result<Vec<(TripletRecord, Image<F>, LightImage<F>, LightImage<F>)>, CliError> {
    let root = layout.triplets();
    let sources = read_sources(&layout.sources_file())?;
    let mut out = Vec::new();
    for (file, prefix) in [(TRIPLETS_FILE, ""), (REJECTED_FILE, "rejected/")] {
        layout.require(&root.join(file), "triplet records", "build-triplets")?;
        for rec in read_records(&root.join(file))? {
            let src = sources
                .iter()
                .find(|s| s.id == rec.id)
                .ok_or_else(|| CliError::Runtime(format!("triplet {} has no source record", rec.id)))?;
            let (_, truth) = render_source(corpus, src)?;
            let content = load_image(&raster_path(&root, &format!("{prefix}content"), &rec.id))?;
            let light = load_light(&raster_path(&root, &format!("{prefix}light"), &rec.id))?;
            out.push((rec, content, light, truth));
        }
    }
    out.sort_by(|a, b| a.0.id.cmp(&b.0.id));
    Ok(out)
}

pub fn evaluate(cfg: &RunConfig) -> Result<EvalReport, CliError> {
    let layout = Layout::new(&cfg.out_dir);
    let _lock = RunLock::acquire(&layout.root)?;
    let corpus = load_corpus(&layout)?;
    let (removal, extraction) = load_decouplers(&layout)?;
    layout.require(&layout.embedder_ckpt(), "embedder checkpoint", "build-triplets")?;
    let embedder = Embedder::<F>::load(&layout.embedder_ckpt())?;
    let split = split(cfg, &corpus)?;
    let ev = &cfg.eval;

    progress("evaluating decoupling on held-out composites");
    let samples = decouple_samples(&corpus, &split, ev.decouple_samples, cfg.seed)?;
    let decoupling = DecoupleReport {
        removal: evaluate_removal(&removal, &samples, ev.sampling_steps, cfg.seed, ev.batch_size)?,
        extraction: evaluate_extraction(&extraction, &samples, ev.sampling_steps, cfg.seed, ev.batch_size, ev.criteria.dark_threshold)?,
    };

    progress("scoring filtered and unfiltered triplet populations");
    let cands = load_candidates(&layout, &corpus)?;
    if cands.is_empty() {
        return Err(CliError::Runtime("the pipeline generated no candidates to score".into()));
    }
    let outcomes: Vec<DecoupleOutcome<'_, F>> =
        cands.iter().map(|(_, c, l, t)| DecoupleOutcome { content_pred: c, light_pred: l, light_true: t }).collect();
    let accepted: Vec<bool> = cands.iter().map(|c| c.0.passed).collect();
    if !accepted.iter().any(|&a| a) {
        return Err(CliError::Runtime("no candidate passed the filter; the filtered population is empty".into()));
    }
    let success = success_rate_harness(&outcomes, &accepted, &ev.criteria)?;
    let pipeline: PipelineReport = read_json(&layout.triplets().join(REPORT_FILE))?;

    progress("generating transfers for held-out triplets");
    let triplets = load_dataset(&layout)?;
    let (_, held) = split_triplets(&triplets, ev.triplet_holdout);
    layout.require(&layout.full_bundle(), "transfer model bundle", "train-translight")?;
    let full = TransLight::<F>::load_bundle(&layout.full_bundle())?;
    let ablated = if ev.ablation {
        layout.require(&layout.ablation_bundle(), "ablation bundle", "train-translight")?;
        Some(TransLight::<F>::load_bundle(&layout.ablation_bundle())?)
    } else {
        None
    };
    let mut models: Vec<(&str, &TransLight<F>)> = vec![(FULL, &full)];
    if let Some(a) = &ablated {
        models.push((NO_ADAPTER, a));
    }
    let transfer = transfer_table(&models, &embedder, &held, ev.sampling_steps, cfg.seed, ev.batch_size)?;

    let report = EvalReport { decoupling, pipeline, success, transfer };
    create_dir_all(&layout.eval())?;
    write_json(&layout.report(), &report)?;
    println!("{}", render_report(&report));
    let mut m = RunManifest::new("evaluate", cfg);
    m.seeds.insert("eval".into(), cfg.seed);
    m.hash_tree(&layout.root, &layout.report())?;
    m.write(&layout)?;
    Ok(report)
}

pub fn render_report(r: &EvalReport) -> String {
    let d = &r.decoupling;
    let mut s = String::new();
    s += &format!(
        "Decoupling ({} held-out composites)\n  removal PSNR {:.2} dB vs input {:.2} dB (gain {:+.2} dB)\n  extraction dark mean {:.4}, correlation {:.3} over {} samples, MSE {:.5}\n",
        d.removal.count,
        d.removal.model_psnr,
        d.removal.input_psnr,
        d.removal.gain_db(),
        d.extraction.dark_mean,
        d.extraction.correlation,
        d.extraction.correlated,
        d.extraction.mse
    );
    let c = &r.pipeline.counts;
    s += &format!(
        "Triplets\n  sources {}, selected {}, generated {}, accepted {}, filtered out {}, re-removed {}\n",
        c.sources, c.selected, c.generated, c.accepted, c.filtered_out, c.reremoved
    );
    s += "Success rate (%)      content   light   total     n\n";
    for (name, x) in [("filtered", &r.success.filtered), ("unfiltered", &r.success.unfiltered)] {
        s += &format!("  {name:<18} {:>8.2} {:>7.2} {:>7.2} {:>5}\n", x.content, x.light, x.total, x.count);
    }
    s += &format!("Transfer on {} held-out triplets\n  method                 PSNR    SSIM  emb-dist  LightFID\n", r.transfer.count);
    for row in &r.transfer.rows {
        s += &format!("  {:<20} {:>6.2} {:>7.4} {:>9.4} {:>9.4}\n", row.name, row.psnr, row.ssim, row.embed_distance, row.light_fid);
    }
    s
}

pub fn report(cfg: &RunConfig) -> Result<(), CliError> {
    let layout = Layout::new(&cfg.out_dir);
    layout.require(&layout.report(), "evaluation report", "evaluate")?;
    let r: EvalReport = read_json(&layout.report())?;
    println!("{}", render_report(&r));
    if layout.logs().exists() {
        for f in crate::layout::list_files(&layout.logs())? {
            if f.extension().is_some_and(|e| e == "jsonl") {
                let name = f.file_stem().expect("log files have a stem").to_string_lossy().to_string();
                let out = layout.eval().join(format!("loss_{name}.png"));
                plot_losses(&f, &out)?;
                println!("wrote {}", out.display());
            }
        }
    }
    Ok(())
}
