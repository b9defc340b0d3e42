use unitfix_core::corpus::{apply_accent_shift, generate, LexiconParams, LexiconSpec, ShiftSpec};
use unitfix_core::mlm::{
    score_confidences, train_mlm, MlmTrainConfig, NeuralScorer, SpanMaskPolicy,
};
use unitfix_core::neural::{AdamConfig, EncoderConfig, LrSchedule};
use unitfix_core::{Serial, UnitVocab};

#[test]
fn shifted_units_score_below_their_standard_counterparts() {
    let spec = LexiconSpec::synthetic(&LexiconParams::default()).unwrap();
    let standard = generate(&Serial, &spec, 400, (2, 5), 1, "std").unwrap();
    let plain = generate(&Serial, &spec, 60, (2, 5), 2, "acc").unwrap();
    let accented =
        apply_accent_shift(&plain, &spec, &ShiftSpec::default_vowel_shift(0.5), 3).unwrap();
    let vocab = UnitVocab::new(50).unwrap();
    let mut encoder = EncoderConfig::unit_lm(50);
    encoder.layers = 1;
    encoder.model_dim = 32;
    encoder.ffn_dim = 64;
    encoder.max_len = 128;
    encoder.dropout = 0.0;
    let cfg = MlmTrainConfig {
        encoder,
        policy: SpanMaskPolicy {
            span_len: 3,
            ..SpanMaskPolicy::default()
        },
        schedule: LrSchedule {
            peak: 1e-2,
            warmup: 50,
            total: 600,
        },
        adam: AdamConfig::default(),
        batch_size: 8,
        seed: 4,
    };
    let corpus: Vec<Vec<u32>> = standard
        .utterances
        .iter()
        .map(|u| u.clusters.clone())
        .collect();
    let (params, log) = train_mlm(&Serial, &corpus, vocab, &cfg).unwrap();
    assert!(log.iter().all(|e| e.loss.is_finite()));
    let scorer = NeuralScorer::new(params).unwrap();

    let (mut shifted_sum, mut standard_sum, mut n) = (0.0, 0.0, 0usize);
    for u in &accented.utterances {
        let frames: Vec<usize> = (0..u.frames())
            .filter(|&i| u.clusters[i] != u.standard_clusters[i])
            .collect();
        if frames.is_empty() {
            continue;
        }
        let a = score_confidences(&scorer, &u.clusters).unwrap();
        let s = score_confidences(&scorer, &u.standard_clusters).unwrap();
        for i in frames {
            shifted_sum += a[i];
            standard_sum += s[i];
            n += 1;
        }
    }
    assert!(n > 50, "only {n} shifted frames");
    let (shifted, standard) = (shifted_sum / n as f64, standard_sum / n as f64);
    println!("mean confidence: shifted {shifted:.4}, standard {standard:.4} over {n} frames");
    assert!(shifted < standard);
}
