mod oracles;

use std::collections::HashMap;

use oracles::{random_tensor, randomize_norms, rng, tiny_model};
use spkr_core::data::MemorySource;
use spkr_core::eval::{evaluate_trials, DurationBucket, EvalOptions, TrialSet};
use spkr_core::frontend::{FeatureMatrix, Offset};
use spkr_core::{BlockFamily, Error, SpeakerModel};

fn setup() -> (SpeakerModel<f32>, MemorySource, TrialSet) {
    let mut m = tiny_model(BlockFamily::ResNet, 3, 7);
    randomize_norms(m.store_mut(), &mut rng(7));
    let mut r = rng(8);
    let mut feats = HashMap::new();
    for (i, frames) in [150, 320, 480, 260, 90, 410].into_iter().enumerate() {
        let t = random_tensor(&[80, frames], &mut r).cast();
        feats.insert(format!("s{}-{i}", i % 2), FeatureMatrix::new(t, false).unwrap());
    }
    let trials = TrialSet::parse(
        "1 s0-0 s0-2\n0 s0-0 s1-1\n1 s1-1 s1-3\n0 s1-3 s0-4\n1 s0-2+s0-4 s0-0\n0 s1-5 s0-2\n1 s1-5 s1-1\n0 s0-4 s1-5\n",
        "trials",
    )
    .unwrap();
    (m.cast(), MemorySource(feats), trials)
}

fn options() -> EvalOptions {
    EvalOptions {
        truncations: vec![2.0, 3.0, 4.0],
        buckets: DurationBucket::parse_list("0-2,2-4,4-").unwrap(),
        offset: Offset::Random { seed: 3 },
        workers: 2,
        ..EvalOptions::default()
    }
}

#[test]
fn rows_and_determinism() {
    let (model, source, trials) = setup();
    let a = evaluate_trials(&model, &trials, &source, &options()).unwrap();
    let b = evaluate_trials(&model, &trials, &source, &options()).unwrap();
    assert_eq!(a, b);
    let labels: Vec<&str> = a.rows.iter().map(|r| r.label.as_str()).collect();
    assert_eq!(labels, ["2s", "3s", "4s", "regular", "0-2s", "2-4s", ">4s"]);
    for label in ["2s", "3s", "4s", "regular"] {
        assert_eq!(a.row(label).unwrap().trials, trials.len());
    }
    let bucketed: usize = a.rows[4..].iter().map(|r| r.trials).sum();
    assert_eq!(bucketed, trials.len());
    assert_eq!(a.scores.len(), trials.len());
    let text = a.to_text();
    assert!(text.contains("eer_2s=") && text.contains("\neer=") && !text.contains("mindcf_regular"));
}

#[test]
fn truncation_longer_than_every_utterance_matches_regular() {
    let (model, source, trials) = setup();
    let opts = EvalOptions {
        truncations: vec![60.0],
        offset: Offset::Start,
        ..EvalOptions::default()
    };
    let r = evaluate_trials(&model, &trials, &source, &opts).unwrap();
    assert_eq!(r.rows[0].eer, r.row("regular").unwrap().eer);
}

#[test]
fn missing_utterances_are_listed() {
    let (model, mut source, trials) = setup();
    source.0.remove("s0-2");
    source.0.remove("s1-5");
    let err = evaluate_trials(&model, &trials, &source, &EvalOptions::default()).unwrap_err();
    let Error::MissingUtterances(mut ids) = err else {
        panic!("unexpected {err}")
    };
    ids.sort();
    assert_eq!(ids, ["s0-2", "s1-5"]);
}
