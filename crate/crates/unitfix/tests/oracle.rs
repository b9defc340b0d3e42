//! Brute-force reference implementations, their agreement with the library,
//! and the recorder that produced `tests/data/recorded_run.json`.

mod common;

use std::fs;

use common::{collapse_phones, levenshtein, naive_correct, oracle_per, Noisy, Pipeline, VARIANTS};
use proptest::prelude::*;
use unitfix::commands::load_scorer;
use unitfix::config::{load_config, VariantName};
use unitfix::formats::records::read_phone_map;
use unitfix::formats::text::{read_sequences, read_symbols};
use unitfix_core::corrector::{correct, CorrectionVariant, CorrectorConfig};
use unitfix_core::mlm::UnitScorer;
use unitfix_core::phonemap::{phone_error_rate, PhoneMap};
use unitfix_core::{ClusterSequence, UnitVocab};

fn variant(by_phone: bool, fill_all: bool) -> CorrectionVariant {
    let v = if by_phone {
        CorrectionVariant::phone_groups()
    } else {
        CorrectionVariant::cluster_groups()
    };
    if fill_all {
        v.fill_all()
    } else {
        v
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn naive_corrector_matches_library(
        seed in any::<u64>(),
        v in 2u32..9,
        tokens in prop::collection::vec(0u32..9, 1..50),
        phones in prop::collection::vec(0u32..4, 9),
        k in 1usize..8,
        p in 0.05f64..0.9,
        by_phone: bool,
        fill_all: bool,
    ) {
        let vocab = UnitVocab::new(v).unwrap();
        let tokens: Vec<u32> = tokens.into_iter().map(|t| t % v).collect();
        let names: Vec<String> = (0..4).map(|i| format!("P{i}")).collect();
        let map = PhoneMap::from_mapping(names, vec![], phones[..v as usize].to_vec()).unwrap();
        let scorer = Noisy { vocab, seed };
        let cfg = CorrectorConfig { iterations: k, p_mask: p, variant: variant(by_phone, fill_all) };
        let seq = ClusterSequence::new("u", tokens.clone(), vocab).unwrap();
        let lib = correct(&seq, &scorer, &cfg, Some(&map)).unwrap();
        prop_assert_eq!(lib.sequence.tokens, naive_correct(&tokens, &scorer, k, p, by_phone, fill_all, &map));
    }

    #[test]
    fn edit_counts_match_full_table(
        hyp in prop::collection::vec(0u32..6, 0..25),
        reference in prop::collection::vec(0u32..6, 1..25),
    ) {
        let c = phone_error_rate(&hyp, &reference).unwrap();
        prop_assert_eq!(c.errors(), levenshtein(&hyp, &reference));
        prop_assert_eq!(c.ref_len, reference.len());
    }
}

fn flags(name: &str) -> (bool, bool) {
    (name.starts_with("phone"), name.ends_with("fill-all"))
}

/// Regenerates the committed reference run. PER values come from the naive
/// corrector and the full-table edit distance; accuracies from the CLI.
#[test]
#[ignore = "regenerates tests/data/recorded_run.json (several minutes)"]
fn record_reference_run() {
    let dir = tempfile::tempdir().unwrap();
    let pipe = Pipeline::new(dir.path(), 1);
    pipe.prepare();
    let cfg = load_config(&pipe.config).unwrap();
    assert_eq!(cfg.corrector.variant, VariantName::PhoneGroupsFillAll);
    let scorer = load_scorer(&pipe.path("lm.json")).unwrap();
    let map = read_phone_map(&pipe.path("phone_map.json")).unwrap();
    let units = read_sequences(&pipe.path("units/accented.txt"), scorer.vocab()).unwrap();
    let refs = read_symbols(&pipe.path("data/accented/ref_phones.txt")).unwrap();
    let refs: Vec<Vec<u32>> = refs
        .iter()
        .map(|(_, r)| r.iter().map(|s| map.phone_id(s).unwrap()).collect())
        .collect();

    let score = |hyps: &[Vec<u32>]| {
        let pairs: Vec<(Vec<u32>, Vec<u32>)> = hyps
            .iter()
            .zip(&refs)
            .map(|(h, r)| (collapse_phones(h, &map), r.clone()))
            .collect();
        oracle_per(&pairs)
    };
    let mut per = serde_json::Map::new();
    let raw: Vec<Vec<u32>> = units.iter().map(|s| s.tokens.clone()).collect();
    per.insert("uncorrected".into(), score(&raw).into());
    for name in VARIANTS {
        let (by_phone, fill_all) = flags(name);
        let fixed: Vec<Vec<u32>> = units
            .iter()
            .map(|s| {
                naive_correct(
                    &s.tokens,
                    &scorer,
                    cfg.corrector.k,
                    cfg.corrector.p_mask,
                    by_phone,
                    fill_all,
                    &map,
                )
            })
            .collect();
        per.insert(name.into(), score(&fixed).into());
    }

    pipe.correct_and_score();
    pipe.adapt();
    let mut acc = serde_json::Map::new();
    for name in ["base", "corrected", "uncorrected"] {
        acc.insert(name.into(), pipe.accuracy(name).into());
    }
    let record = serde_json::json!({
        "config": "acceptance.json",
        "per": per,
        "masked_frame_accuracy": acc,
    });
    let text = serde_json::to_string_pretty(&record).unwrap() + "\n";
    fs::write(common::data_dir().join("recorded_run.json"), &text).unwrap();
    println!("{text}");
    for name in std::iter::once("uncorrected").chain(VARIANTS) {
        println!("library {name}: {:.4}", pipe.per(name));
    }
}
