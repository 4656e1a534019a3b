//! The seeded owner-side flow: dataset, baseline training, key generation
//! and watermark embedding.

use serde::Serialize;

use crate::nn::{
    accuracy, embed_watermark, extract_plaintext, train_baseline, Dataset, DatasetSource, EmbedConfig, ExtractionTrace,
    KeyConfig, ModelSpec, ModelWeights, NnError, TrainConfig, WatermarkKey,
};

/// Reference desk model: 64 inputs, two hidden layers of 32, 4 classes.
pub const DESK_SPEC: &str = "64-FC(32)-ReLU-FC(32)-ReLU-FC(4)";

/// Held-out share of the dataset used for the accuracy report.
pub const TEST_FRACTION: f64 = 0.2;

#[derive(Debug, Clone)]
pub struct EmbedRequest {
    pub spec: ModelSpec,
    pub dataset: DatasetSource,
    pub seed: u64,
    pub key: KeyConfig,
    pub baseline: TrainConfig,
    pub embed: EmbedConfig,
}

impl EmbedRequest {
    /// Desk defaults with every stage seeded from `seed`.
    pub fn desk(seed: u64) -> Self {
        Self {
            spec: DESK_SPEC.parse().expect("desk spec parses"),
            dataset: DatasetSource::Blobs,
            seed,
            key: KeyConfig::default(),
            baseline: TrainConfig::default(),
            embed: EmbedConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EmbedSummary {
    pub baseline_accuracy: f64,
    pub watermarked_accuracy: f64,
    pub ber: f64,
}

#[derive(Debug, Clone)]
pub struct EmbedOutcome {
    pub spec: ModelSpec,
    pub train: Dataset,
    pub test: Dataset,
    pub baseline: ModelWeights,
    pub weights: ModelWeights,
    pub key: WatermarkKey,
    pub trace: ExtractionTrace,
    pub summary: EmbedSummary,
    /// Configurations with their seeds filled in.
    pub baseline_config: TrainConfig,
    pub embed_config: EmbedConfig,
}

pub fn run_embedding(req: &EmbedRequest) -> Result<EmbedOutcome, NnError> {
    let data = req.dataset.load(req.seed)?;
    let (train, test) = data.split(TEST_FRACTION, req.seed);
    let baseline_config = TrainConfig { seed: req.seed, ..req.baseline };
    let baseline = train_baseline(&req.spec, &train, &baseline_config)?;
    let key = WatermarkKey::generate(&req.spec, &train, &req.key, req.seed.wrapping_add(1))?;
    let mut embed_config = req.embed;
    embed_config.train.seed = req.seed.wrapping_add(2);
    let weights = embed_watermark(&req.spec, &baseline, &train, &key, &embed_config)?;
    let trace = extract_plaintext(&req.spec, &weights, &key)?;
    let summary = EmbedSummary {
        baseline_accuracy: accuracy(&req.spec, &baseline, &test),
        watermarked_accuracy: accuracy(&req.spec, &weights, &test),
        ber: trace.ber,
    };
    Ok(EmbedOutcome {
        spec: req.spec.clone(),
        train,
        test,
        baseline,
        weights,
        key,
        trace,
        summary,
        baseline_config,
        embed_config,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_embedding_reaches_zero_ber() {
        let out = run_embedding(&EmbedRequest::desk(0)).unwrap();
        assert_eq!(out.summary.ber, 0.0);
        assert!(out.summary.baseline_accuracy - out.summary.watermarked_accuracy <= 0.02);
        assert_eq!(out.key.triggers.len(), 16);
    }

    #[test]
    fn foreign_keys_and_baseline_do_not_extract() {
        use rand::SeedableRng;
        let out = run_embedding(&EmbedRequest::desk(1)).unwrap();
        // Fresh projection and signature over the same triggers: the bit
        // error rate is Binomial(32, 1/2) / 32, which lands in [0.3, 0.7]
        // with probability about 0.98.
        let mut inside = 0;
        let mut total = 0.0;
        for seed in 0..100 {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1000 + seed);
            let key = WatermarkKey::with_triggers(&out.spec, out.key.triggers.clone(), &KeyConfig::default(), &mut rng).unwrap();
            let ber = extract_plaintext(&out.spec, &out.weights, &key).unwrap().ber;
            inside += (0.3..=0.7).contains(&ber) as usize;
            total += ber;
        }
        assert!(inside >= 95, "{inside}");
        assert!((total / 100.0 - 0.5).abs() < 0.05, "{}", total / 100.0);
        for theta in [0.0, 0.05, 0.1] {
            let key = WatermarkKey { theta, ..out.key.clone() };
            assert!(!extract_plaintext(&out.spec, &out.baseline, &key).unwrap().valid(&key));
        }
    }

    #[test]
    fn zero_lambda_leaves_signature_random() {
        // Averaged over seeds, an unembedded key extracts about half its bits.
        let mut total = 0.0;
        for seed in 0..8 {
            let mut req = EmbedRequest::desk(seed);
            req.embed.lambda = 0.0;
            total += run_embedding(&req).unwrap().summary.ber;
        }
        let mean = total / 8.0;
        assert!((0.3..=0.7).contains(&mean), "{mean}");
    }
}
