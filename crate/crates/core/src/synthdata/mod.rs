//! Procedural content scenes and light materials.

pub mod corpus;
pub mod light;
pub mod scene;

pub use corpus::{gen_corpus, read_manifest, write_corpus, Corpus, LightEntry, Manifest, SceneEntry, CORPUS_VERSION};
pub use light::{gen_light_material, LightKind, LightSpec, MAX_FOOTPRINT};
pub use scene::{default_palette, gen_content_scene, SceneSpec, MAX_OBJECTS};
