use std::sync::Arc;

use async_trait::async_trait;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::faults::FaultInjector;
use super::fixtures::MockFixtures;
use crate::gateway::{BackendError, EmbedderBackend};

const STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "by", "for", "from", "in", "is", "it", "its", "of", "on", "or", "that",
    "the", "this", "to", "with",
];

/// Lowercase alphanumeric tokens without stopwords.
pub fn tokens(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty() && !STOPWORDS.contains(t))
        .map(str::to_string)
        .collect()
}

fn token_vector(token: &str, dim: usize) -> Vec<f32> {
    let seed: [u8; 32] = Sha256::digest(token.as_bytes()).into();
    let mut rng = ChaCha8Rng::from_seed(seed);
    (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect()
}

/// Hashed bag-of-words embedding (unnormalized). Texts without tokens hash
/// as a whole.
pub fn bag_of_words(text: &str, dim: usize) -> Vec<f32> {
    let mut toks = tokens(text);
    if toks.is_empty() {
        toks.push(text.to_string());
    }
    let mut v = vec![0.0f32; dim];
    for t in toks {
        for (acc, x) in v.iter_mut().zip(token_vector(&t, dim)) {
            *acc += x;
        }
    }
    v
}

/// Text embedder mock: exact codebook hits first, then hashed bag of words.
pub struct MockEmbedder {
    fixtures: Arc<MockFixtures>,
    faults: FaultInjector,
}

impl MockEmbedder {
    pub fn new(fixtures: Arc<MockFixtures>) -> Self {
        let faults = FaultInjector::new(fixtures.faults.embedder.clone());
        Self { fixtures, faults }
    }

    pub fn calls(&self) -> u64 {
        self.faults.calls()
    }

    pub fn vector(&self, text: &str) -> Vec<f32> {
        let script = &self.fixtures.embedder;
        script
            .codebook
            .get(text)
            .cloned()
            .unwrap_or_else(|| bag_of_words(text, script.dim))
    }
}

#[async_trait]
impl EmbedderBackend for MockEmbedder {
    async fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, BackendError> {
        self.faults.apply().await?;
        Ok(texts.iter().map(|t| self.vector(t)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::cosine;

    #[test]
    fn deterministic_and_word_sensitive() {
        let e = MockEmbedder::new(Arc::new(MockFixtures::default()));
        assert_eq!(e.vector("red cup"), e.vector("red cup"));
        assert_eq!(e.vector("the red cup"), e.vector("red cup"));
        let same = cosine(&e.vector("cup"), &e.vector("cup"));
        assert!((same - 1.0).abs() < 1e-6);
        let shared = cosine(&e.vector("red cup"), &e.vector("blue cup"));
        let unrelated = cosine(&e.vector("red cup"), &e.vector("green tractor"));
        assert!(shared > unrelated);
    }

    #[test]
    fn codebook_hit() {
        let mut f = MockFixtures::default();
        f.embedder.codebook.insert("cat".into(), vec![1.0, 0.0]);
        f.embedder.codebook.insert("dog".into(), vec![0.0, 1.0]);
        let e = MockEmbedder::new(Arc::new(f));
        assert_eq!(cosine(&e.vector("cat"), &e.vector("dog")), 0.0);
    }
}
