//! Image/content/light triplet construction: saliency-based selection,
//! decoupling, and embedding-similarity filtering.

pub mod embedder;
pub mod pipeline;
pub mod saliency;

pub use embedder::{corpus_images, cosine, similarity, train_embedder, Embedder, EmbedderSpec, MIN_TRAIN_IMAGES};
pub use pipeline::{
    build_candidates, build_triplet, filter_check, load_triplets, raster_path, read_records, run_pipeline, Candidate,
    Decoupler, FilterDecision, Histogram, ModelDecoupler, PipelineCounts, PipelineReport, SourceImage, Triplet,
    TripletConfig, TripletRecord, TripletSeeds, DEFAULT_GAMMA, REJECTED_FILE, REPORT_FILE, TRIPLETS_FILE,
};
pub use saliency::{light_saliency, select};
