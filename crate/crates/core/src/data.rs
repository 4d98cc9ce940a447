//! Preference examples, tokenization and the synthetic dataset generators.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::policy::{TokenSeq, Vocab};

/// One `(x, y_w, y_l)` triple as raw text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PreferenceExample {
    pub prompt: String,
    pub chosen: String,
    pub rejected: String,
}

/// Token ids of a [`PreferenceExample`]; responses end with `eos`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedExample {
    pub prompt: TokenSeq,
    pub chosen: TokenSeq,
    pub rejected: TokenSeq,
}

impl PreferenceExample {
    pub fn tokenize(&self, vocab: &Vocab) -> Result<TokenizedExample> {
        if self.chosen.is_empty() || self.rejected.is_empty() {
            return Err(Error::Empty("chosen/rejected text"));
        }
        Ok(TokenizedExample {
            prompt: vocab.encode(self.prompt.as_bytes())?,
            chosen: vocab.encode_response(self.chosen.as_bytes())?,
            rejected: vocab.encode_response(self.rejected.as_bytes())?,
        })
    }
}

/// Tokenize a dataset; errors carry the example index.
pub fn tokenize_all(data: &[PreferenceExample], vocab: &Vocab) -> Result<Vec<TokenizedExample>> {
    data.iter()
        .enumerate()
        .map(|(i, ex)| ex.tokenize(vocab).map_err(|e| Error::in_example(i, e)))
        .collect()
}

/// Smallest vocabulary covering every byte of the dataset.
pub fn vocab_for(data: &[PreferenceExample]) -> Vocab {
    let mut seen = [false; 256];
    for ex in data {
        for s in [&ex.prompt, &ex.chosen, &ex.rejected] {
            for &b in s.as_bytes() {
                seen[b as usize] = true;
            }
        }
    }
    let bytes: Vec<u8> = (0u8..=255).filter(|&b| seen[b as usize]).collect();
    Vocab::from_bytes(&bytes)
}

/// Built-in generators.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthRule {
    /// The prompt ends in a run of one symbol; the chosen response repeats
    /// that symbol, the rejected response is uniform noise.
    CopyRun,
    /// Chosen and rejected share a noise prefix and differ in the last `k`
    /// symbols: the chosen suffix repeats the prompt's last symbol, the
    /// rejected suffix is noise that differs at every position.
    Suffix,
    /// Chosen and rejected are independent noise; labels carry no signal.
    Noise,
}

impl SynthRule {
    pub const ALL: [SynthRule; 3] = [SynthRule::CopyRun, SynthRule::Suffix, SynthRule::Noise];

    pub fn id(self) -> &'static str {
        match self {
            SynthRule::CopyRun => "copy-run",
            SynthRule::Suffix => "suffix",
            SynthRule::Noise => "noise",
        }
    }

    /// Accepts the rule name or its short letter (`a`, `b`, `c`).
    pub fn from_id(id: &str) -> Result<Self> {
        match id {
            "copy-run" | "a" => Ok(SynthRule::CopyRun),
            "suffix" | "b" => Ok(SynthRule::Suffix),
            "noise" | "c" => Ok(SynthRule::Noise),
            other => Err(Error::config(format!("unknown synthetic rule `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    /// Symbols to draw from.
    pub alphabet: Vec<u8>,
    pub n_examples: usize,
    /// Inclusive prompt length range.
    pub prompt_len: (usize, usize),
    /// Inclusive response length range (bytes, before `eos`).
    pub response_len: (usize, usize),
    pub rule: String,
    /// Differing suffix length for [`SynthRule::Suffix`].
    pub suffix_k: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            alphabet: b"abcdefghijklmnop".to_vec(),
            n_examples: 500,
            prompt_len: (4, 8),
            response_len: (4, 8),
            rule: String::from("copy-run"),
            suffix_k: 2,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<SynthRule> {
        let rule = SynthRule::from_id(&self.rule)?;
        let mut a = self.alphabet.clone();
        a.sort_unstable();
        a.dedup();
        if a.len() < 2 {
            return Err(Error::config(
                "alphabet needs at least two distinct symbols",
            ));
        }
        let (pl, ph) = self.prompt_len;
        let (rl, rh) = self.response_len;
        if pl == 0 || rl == 0 || pl > ph || rl > rh {
            return Err(Error::config("length ranges must be positive and ordered"));
        }
        if rule == SynthRule::Suffix && (self.suffix_k == 0 || self.suffix_k > rl) {
            return Err(Error::config(
                "suffix_k must be at least 1 and at most the minimum response length",
            ));
        }
        Ok(rule)
    }
}

fn pick(rng: &mut ChaCha8Rng, alphabet: &[u8]) -> u8 {
    alphabet[rng.gen_range(0..alphabet.len())]
}

fn pick_other(rng: &mut ChaCha8Rng, alphabet: &[u8], not: u8) -> u8 {
    loop {
        let c = pick(rng, alphabet);
        if c != not {
            return c;
        }
    }
}

fn noise(rng: &mut ChaCha8Rng, alphabet: &[u8], len: usize) -> Vec<u8> {
    (0..len).map(|_| pick(rng, alphabet)).collect()
}

fn text(bytes: Vec<u8>) -> String {
    // alphabets are validated to be ASCII by the callers that need UTF-8;
    // non-ASCII symbols are mapped through Latin-1
    bytes.into_iter().map(char::from).collect()
}

pub fn synth_dataset(spec: &SynthSpec) -> Result<Vec<PreferenceExample>> {
    let rule = spec.validate()?;
    if spec.alphabet.iter().any(|b| !b.is_ascii()) {
        return Err(Error::config("synthetic alphabets must be ASCII"));
    }
    let mut alphabet = spec.alphabet.clone();
    alphabet.sort_unstable();
    alphabet.dedup();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (pl, ph) = spec.prompt_len;
    let (rl, rh) = spec.response_len;

    let mut out = Vec::with_capacity(spec.n_examples);
    for _ in 0..spec.n_examples {
        let plen = rng.gen_range(pl..=ph);
        let ex = match rule {
            SynthRule::CopyRun => {
                let c = pick(&mut rng, &alphabet);
                let run = rng.gen_range(1..=plen.min(3));
                let mut prompt: Vec<u8> = Vec::with_capacity(plen);
                if plen > run {
                    prompt.extend(noise(&mut rng, &alphabet, plen - run - 1));
                    prompt.push(pick_other(&mut rng, &alphabet, c));
                }
                prompt.extend(core::iter::repeat_n(c, run));
                let lw = rng.gen_range(rl..=rh);
                let ll = rng.gen_range(rl..=rh);
                PreferenceExample {
                    prompt: text(prompt),
                    chosen: text(alloc::vec![c; lw]),
                    rejected: text(noise(&mut rng, &alphabet, ll)),
                }
            }
            SynthRule::Suffix => {
                let prompt = noise(&mut rng, &alphabet, plen);
                let c = *prompt.last().expect("prompt length is positive");
                let len = rng.gen_range(rl..=rh);
                let k = spec.suffix_k;
                let shared = noise(&mut rng, &alphabet, len - k);
                let mut chosen = shared.clone();
                chosen.extend(core::iter::repeat_n(c, k));
                let mut rejected = shared;
                for _ in 0..k {
                    rejected.push(pick_other(&mut rng, &alphabet, c));
                }
                PreferenceExample {
                    prompt: text(prompt),
                    chosen: text(chosen),
                    rejected: text(rejected),
                }
            }
            SynthRule::Noise => {
                let prompt = noise(&mut rng, &alphabet, plen);
                let lw = rng.gen_range(rl..=rh);
                let ll = rng.gen_range(rl..=rh);
                PreferenceExample {
                    prompt: text(prompt),
                    chosen: text(noise(&mut rng, &alphabet, lw)),
                    rejected: text(noise(&mut rng, &alphabet, ll)),
                }
            }
        };
        out.push(ex);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic() {
        let spec = SynthSpec {
            n_examples: 50,
            ..SynthSpec::default()
        };
        assert_eq!(synth_dataset(&spec).unwrap(), synth_dataset(&spec).unwrap());
        let other = SynthSpec {
            seed: 1,
            ..spec.clone()
        };
        assert_ne!(
            synth_dataset(&spec).unwrap(),
            synth_dataset(&other).unwrap()
        );
    }

    #[test]
    fn copy_run_structure() {
        let spec = SynthSpec {
            n_examples: 200,
            ..SynthSpec::default()
        };
        for ex in synth_dataset(&spec).unwrap() {
            let last = *ex.prompt.as_bytes().last().unwrap();
            assert!(ex.chosen.bytes().all(|b| b == last));
            assert!((4..=8).contains(&ex.prompt.len()));
            assert!((4..=8).contains(&ex.chosen.len()));
            assert!((4..=8).contains(&ex.rejected.len()));
        }
    }

    #[test]
    fn suffix_rule_differs_only_in_suffix() {
        let spec = SynthSpec {
            n_examples: 200,
            rule: "suffix".into(),
            suffix_k: 2,
            ..SynthSpec::default()
        };
        for ex in synth_dataset(&spec).unwrap() {
            let (c, r) = (ex.chosen.as_bytes(), ex.rejected.as_bytes());
            assert_eq!(c.len(), r.len());
            let n = c.len();
            assert_eq!(c[..n - 2], r[..n - 2]);
            assert!(c[n - 2] != r[n - 2] && c[n - 1] != r[n - 1]);
        }
    }

    #[test]
    fn unknown_rule() {
        let spec = SynthSpec {
            rule: "zebra".into(),
            ..SynthSpec::default()
        };
        assert!(matches!(synth_dataset(&spec), Err(Error::Config(_))));
    }

    #[test]
    fn tokenization() {
        let data = synth_dataset(&SynthSpec {
            n_examples: 20,
            ..SynthSpec::default()
        })
        .unwrap();
        let vocab = vocab_for(&data);
        let toks = tokenize_all(&data, &vocab).unwrap();
        for (t, ex) in toks.iter().zip(&data) {
            assert_eq!(t.chosen.len(), ex.chosen.len() + 1);
            assert_eq!(*t.chosen.last().unwrap(), vocab.eos());
            assert_eq!(vocab.decode(&t.prompt), ex.prompt.as_bytes());
        }
        let bad = [PreferenceExample {
            prompt: "a".into(),
            chosen: "Z".into(),
            rejected: "a".into(),
        }];
        assert!(matches!(
            tokenize_all(&bad, &Vocab::from_bytes(b"a")),
            Err(Error::InExample { index: 0, .. })
        ));
    }
}
