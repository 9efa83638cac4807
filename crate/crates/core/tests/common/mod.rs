#![allow(dead_code)]

use std::path::PathBuf;

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use spacetime::embedding::{normalize_rows, parse_embedding_matrix, Embedding, SimilarityKernel};
use spacetime::ingestion::{initial_frames, VideoManifest};
use spacetime::orchestrator::{run_episode, Episode, EpisodeConfig, Trace};
use spacetime::scenario::Scenario;
use spacetime::selection::SelectionConfig;

pub fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

pub fn unit_vectors(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Embedding> {
    (0..n)
        .map(|_| loop {
            let v: Vec<f64> = (0..d).map(|_| gaussian(rng)).collect();
            if let Ok(e) = Embedding::normalize(&v) {
                break e;
            }
        })
        .collect()
}

/// Dense `exp(i_p · i_q)` built without the library kernel type.
pub fn dense_kernel(frames: &[Embedding]) -> DMatrix<f64> {
    let n = frames.len();
    DMatrix::from_fn(n, n, |p, q| {
        let dot: f64 = frames[p]
            .as_slice()
            .iter()
            .zip(frames[q].as_slice())
            .map(|(a, b)| a * b)
            .sum();
        dot.exp()
    })
}

pub fn as_dmatrix(k: &SimilarityKernel) -> DMatrix<f64> {
    DMatrix::from_row_slice(k.size(), k.size(), k.entries())
}

pub fn principal_det(m: &DMatrix<f64>, subset: &[usize]) -> f64 {
    let s = subset.len();
    DMatrix::from_fn(s, s, |a, b| m[(subset[a], subset[b])]).determinant()
}

pub fn fixtures_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub struct SofaFixture {
    pub manifest: VideoManifest,
    pub embeddings: Vec<Embedding>,
    pub scenario: Scenario,
}

pub const SOFA_QUESTION: &str = "How many sofa(s) are in this room?";

impl SofaFixture {
    pub fn load() -> Self {
        let dir = fixtures_dir().join("sofa");
        let manifest = VideoManifest::load(dir.join("manifest.txt")).unwrap();
        let raw = std::fs::read_to_string(dir.join("embeddings.txt")).unwrap();
        let embeddings = normalize_rows(&parse_embedding_matrix(&raw).unwrap()).unwrap();
        let scenario = Scenario::load(dir.join("scenario.json")).unwrap();
        Self {
            manifest,
            embeddings,
            scenario,
        }
    }

    /// Mirrors fixtures/sofa/config.toml.
    pub fn run(&self) -> Trace {
        let frames = initial_frames(&self.manifest, 4.0, 16).unwrap();
        let episode = Episode::new(SOFA_QUESTION, &self.manifest, self.manifest.frame_refs(&frames).unwrap())
            .with_embeddings(&self.embeddings)
            .with_selection(SelectionConfig::new(8));
        run_episode(
            &self.scenario.model(),
            &self.scenario.registry(),
            &episode,
            &EpisodeConfig::default(),
        )
        .unwrap()
    }
}
