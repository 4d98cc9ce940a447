use sgdpo_core::data::{synth_dataset, tokenize_all, vocab_for, SynthSpec};
use sgdpo_lab::jsonl::{load_jsonl, save_jsonl};

#[test]
fn synth_jsonl_round_trip_keeps_tokens() {
    let d = tempfile::tempdir().unwrap();
    for rule in ["copy-run", "suffix", "noise"] {
        let data = synth_dataset(&SynthSpec {
            n_examples: 120,
            rule: rule.into(),
            seed: 5,
            ..SynthSpec::default()
        })
        .unwrap();
        let path = d.path().join(format!("{rule}.jsonl"));
        save_jsonl(&path, &data).unwrap();
        let back = load_jsonl(&path).unwrap();
        assert_eq!(back, data);
        let v = vocab_for(&data);
        assert_eq!(
            tokenize_all(&back, &v).unwrap(),
            tokenize_all(&data, &v).unwrap()
        );
    }
}

#[test]
fn bytes_outside_ascii_survive() {
    let d = tempfile::tempdir().unwrap();
    let data = vec![sgdpo_core::data::PreferenceExample {
        prompt: "naïve \"q\"\n".into(),
        chosen: "ü\t".into(),
        rejected: "x".into(),
    }];
    let path = d.path().join("u.jsonl");
    save_jsonl(&path, &data).unwrap();
    assert_eq!(load_jsonl(&path).unwrap(), data);
}
