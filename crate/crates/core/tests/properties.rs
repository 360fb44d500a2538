use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use workbench_core::lexical::normalize;
use workbench_core::prompt::{Document, MediaKind, PromptBundle, Stage};
use workbench_core::provider::{call_index, transcript_key, ProviderConfig, ReasoningEffort};

#[derive(Deserialize)]
struct NormalizeCase {
    input: String,
    normalized: String,
}

/// Golden written by tests/oracles/normalize_oracle.py.
#[test]
fn normalize_agrees_with_the_python_oracle() {
    let golden = include_str!("golden/normalize.jsonl");
    let mut n = 0;
    for line in golden.lines() {
        let case: NormalizeCase = serde_json::from_str(line).unwrap();
        assert_eq!(normalize(&case.input), case.normalized, "input {:?}", case.input);
        n += 1;
    }
    assert!(n > 50, "only {n} cases");
}

#[test]
fn normalize_is_idempotent() {
    let golden = include_str!("golden/normalize.jsonl");
    for line in golden.lines() {
        let case: NormalizeCase = serde_json::from_str(line).unwrap();
        assert_eq!(normalize(&case.normalized), case.normalized);
    }
}

fn word(rng: &mut ChaCha8Rng) -> String {
    let len = rng.gen_range(0..12);
    (0..len).map(|_| char::from(rng.gen_range(b'a'..=b'z'))).collect()
}

fn bundle(rng: &mut ChaCha8Rng) -> PromptBundle {
    let attachments = (0..rng.gen_range(0..3))
        .map(|_| {
            let kind = if rng.gen_bool(0.5) { MediaKind::Pdf } else { MediaKind::PlainText };
            Document::new(word(rng), word(rng).into_bytes(), kind)
        })
        .collect();
    PromptBundle {
        stage: if rng.gen_bool(0.5) { Stage::StageOne } else { Stage::StageTwo },
        setting: None,
        system_text: word(rng),
        input_payload: word(rng),
        attachments,
    }
}

#[test]
fn transcript_keys_do_not_collide() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let config = ProviderConfig::default();
    let mut seen = HashSet::new();
    let mut distinct_inputs = HashSet::new();
    for i in 0..1000u32 {
        let b = bundle(&mut rng);
        let idx = call_index(i % 40, i % 3);
        let fingerprint = format!("{:?}|{}|{}|{:?}|{idx}", b.stage, b.system_text, b.input_payload, b.attachments);
        let key = transcript_key(&b, &config, idx);
        assert_eq!(key, transcript_key(&b.clone(), &config, idx));
        if distinct_inputs.insert(fingerprint) {
            assert!(seen.insert(key), "collision at pair {i}");
        }
    }
    assert!(seen.len() > 900);
}

#[test]
fn every_key_field_matters() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let config = ProviderConfig::default();
    for _ in 0..200 {
        let mut b = bundle(&mut rng);
        b.attachments.push(Document::new("a.txt", b"body".to_vec(), MediaKind::PlainText));
        let idx = call_index(rng.gen_range(0..100), rng.gen_range(0..3));
        let base = transcript_key(&b, &config, idx);
        let mut variants = Vec::new();

        let mut v = b.clone();
        v.stage = if b.stage == Stage::StageOne { Stage::StageTwo } else { Stage::StageOne };
        variants.push((v, config.clone(), idx));
        let mut v = b.clone();
        v.system_text.push('x');
        variants.push((v, config.clone(), idx));
        let mut v = b.clone();
        v.input_payload.push('x');
        variants.push((v, config.clone(), idx));
        // Moving a character across a field boundary is a different request.
        if !b.system_text.is_empty() {
            let mut v = b.clone();
            let c = v.system_text.pop().unwrap();
            v.input_payload.insert(0, c);
            variants.push((v, config.clone(), idx));
        }
        let mut v = b.clone();
        v.attachments.last_mut().unwrap().bytes.push(b'!');
        variants.push((v, config.clone(), idx));
        let mut v = b.clone();
        v.attachments.last_mut().unwrap().media_kind = MediaKind::Pdf;
        variants.push((v, config.clone(), idx));
        let mut v = b.clone();
        v.attachments.last_mut().unwrap().name.push('x');
        variants.push((v, config.clone(), idx));
        let mut v = b.clone();
        v.attachments.pop();
        variants.push((v, config.clone(), idx));
        variants.push((b.clone(), ProviderConfig { model_id: "other".into(), ..config.clone() }, idx));
        variants.push((b.clone(), ProviderConfig { reasoning_effort: ReasoningEffort::Low, ..config.clone() }, idx));
        variants.push((b.clone(), ProviderConfig { temperature: 0.5, ..config.clone() }, idx));
        variants.push((b.clone(), config.clone(), idx + 1));
        variants.push((b.clone(), config.clone(), idx ^ (1 << 32)));

        for (n, (vb, vc, vi)) in variants.iter().enumerate() {
            assert_ne!(transcript_key(vb, vc, *vi), base, "variant {n}");
        }
    }
}

#[test]
fn price_table_is_not_part_of_the_key() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let b = bundle(&mut rng);
    let config = ProviderConfig::default();
    let mut cheaper = config.clone();
    cheaper.price_table.input_per_1m /= rust_decimal::Decimal::TWO;
    assert_eq!(transcript_key(&b, &config, 0), transcript_key(&b, &cheaper, 0));
}
