//! Whitespace-tokenized corpus ingestion, vocabulary and LM batching.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub const UNK: &str = "<unk>";
pub const EOS: &str = "<eos>";

/// Bijective token/id mapping, ids assigned by descending frequency.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    token_to_id: HashMap<String, usize>,
    id_to_token: Vec<String>,
    unk_id: usize,
    eos_id: usize,
}

impl Vocab {
    /// Builds the vocabulary from raw lines.
    ///
    /// Every line contributes one `<eos>`. `<unk>` and `<eos>` are always
    /// present; when `max_size` truncates, the least frequent ordinary tokens
    /// are dropped first.
    pub fn build<S: AsRef<str>>(lines: &[S], max_size: usize) -> Result<Self> {
        let mut counts: HashMap<&str, u64> = HashMap::new();
        let mut n_lines = 0u64;
        for line in lines {
            let mut any = false;
            for tok in line.as_ref().split_whitespace() {
                *counts.entry(tok).or_default() += 1;
                any = true;
            }
            if any || !line.as_ref().is_empty() {
                n_lines += 1;
            }
        }
        if counts.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        if max_size < 2 {
            return Err(Error::config("max_vocab", "must leave room for <unk> and <eos>"));
        }
        *counts.entry(EOS).or_default() += n_lines;
        counts.entry(UNK).or_default();

        let mut entries: Vec<(&str, u64)> = counts.into_iter().collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

        let mut id_to_token: Vec<String> = Vec::with_capacity(max_size.min(entries.len()));
        let budget = max_size - 2;
        let mut ordinary = 0;
        for (tok, _) in &entries {
            if *tok == UNK || *tok == EOS {
                id_to_token.push(tok.to_string());
            } else if ordinary < budget {
                id_to_token.push(tok.to_string());
                ordinary += 1;
            }
        }
        Ok(Self::from_tokens(id_to_token))
    }

    fn from_tokens(id_to_token: Vec<String>) -> Self {
        let token_to_id: HashMap<String, usize> =
            id_to_token.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        let unk_id = token_to_id[UNK];
        let eos_id = token_to_id[EOS];
        Self {
            token_to_id,
            id_to_token,
            unk_id,
            eos_id,
        }
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    pub fn unk_id(&self) -> usize {
        self.unk_id
    }

    pub fn eos_id(&self) -> usize {
        self.eos_id
    }

    pub fn id(&self, token: &str) -> usize {
        self.token_to_id.get(token).copied().unwrap_or(self.unk_id)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.id_to_token.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }

    /// One id per token plus `eos_id` per line.
    pub fn encode<S: AsRef<str>>(&self, lines: &[S]) -> Vec<usize> {
        let mut ids = Vec::new();
        for line in lines {
            let line = line.as_ref();
            if line.is_empty() {
                continue;
            }
            ids.extend(line.split_whitespace().map(|t| self.id(t)));
            ids.push(self.eos_id);
        }
        ids
    }

    /// Inverse of [`Vocab::encode`] for a single line (trailing `<eos>` dropped).
    pub fn decode(&self, ids: &[usize]) -> String {
        let ids = match ids.last() {
            Some(&last) if last == self.eos_id => &ids[..ids.len() - 1],
            _ => ids,
        };
        ids.iter()
            .map(|&i| self.token(i).unwrap_or(UNK))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// One token per line, in id order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for t in &self.id_to_token {
            let _ = writeln!(out, "{t}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let tokens: Vec<String> = text.lines().map(str::to_string).collect();
        if !tokens.iter().any(|t| t == UNK) || !tokens.iter().any(|t| t == EOS) {
            return Err(Error::Checkpoint("vocab file lacks <unk> or <eos>".into()));
        }
        Ok(Self::from_tokens(tokens))
    }
}

/// Fraction of ids equal to `unk_id`, used to report validation OOV rate.
pub fn oov_rate(ids: &[usize], vocab: &Vocab) -> f64 {
    if ids.is_empty() {
        return 0.0;
    }
    ids.iter().filter(|&&i| i == vocab.unk_id()).count() as f64 / ids.len() as f64
}

/// Next-token training window: `targets[b][t]` is the stream successor of `inputs[b][t]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenBatch {
    pub batch_size: usize,
    pub seq_len: usize,
    /// Row-major (batch_size x seq_len).
    pub inputs: Vec<usize>,
    pub targets: Vec<usize>,
}

impl TokenBatch {
    pub fn new(batch_size: usize, seq_len: usize, inputs: Vec<usize>, targets: Vec<usize>) -> Self {
        assert_eq!(inputs.len(), batch_size * seq_len);
        assert_eq!(targets.len(), batch_size * seq_len);
        Self {
            batch_size,
            seq_len,
            inputs,
            targets,
        }
    }

    pub fn n_tokens(&self) -> usize {
        self.inputs.len()
    }
}

/// Number of batches produced by [`make_batches`] for a stream of `len` ids.
pub fn batch_count(len: usize, batch_size: usize, seq_len: usize) -> usize {
    let lane = len / batch_size;
    if lane == 0 {
        return 0;
    }
    (lane - 1) / seq_len
}

/// Continuous-lane LM batching.
///
/// The stream is cut into `batch_size` contiguous lanes of `len / batch_size`
/// ids; batch `i` takes window `[i*seq_len, (i+1)*seq_len)` from every lane.
pub fn make_batches(ids: &[usize], batch_size: usize, seq_len: usize) -> Result<Vec<TokenBatch>> {
    let need = batch_size * seq_len + 1;
    if batch_size == 0 || seq_len == 0 || ids.len() < need {
        return Err(Error::CorpusTooSmall {
            have: ids.len(),
            need,
        });
    }
    let n = batch_count(ids.len(), batch_size, seq_len);
    if n == 0 {
        return Err(Error::CorpusTooSmall {
            have: ids.len(),
            need: batch_size * (seq_len + 1),
        });
    }
    let lane = ids.len() / batch_size;
    let batches = (0..n)
        .map(|i| {
            let mut inputs = Vec::with_capacity(batch_size * seq_len);
            let mut targets = Vec::with_capacity(batch_size * seq_len);
            for b in 0..batch_size {
                let start = b * lane + i * seq_len;
                inputs.extend_from_slice(&ids[start..start + seq_len]);
                targets.extend_from_slice(&ids[start + 1..start + seq_len + 1]);
            }
            TokenBatch::new(batch_size, seq_len, inputs, targets)
        })
        .collect();
    Ok(batches)
}

pub fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(str::to_string).collect())
}

/// Training and validation streams encoded with the training vocabulary.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub vocab: Vocab,
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
}

impl Corpus {
    pub fn from_lines<S: AsRef<str>>(train: &[S], valid: &[S], max_vocab: usize) -> Result<Self> {
        let vocab = Vocab::build(train, max_vocab)?;
        let train = vocab.encode(train);
        let valid = vocab.encode(valid);
        Ok(Self { vocab, train, valid })
    }

    pub fn load(train_path: &Path, valid_path: &Path, max_vocab: usize) -> Result<Self> {
        let train = read_lines(train_path)?;
        let valid = read_lines(valid_path)?;
        Self::from_lines(&train, &valid, max_vocab)
    }

    pub fn valid_oov_rate(&self) -> f64 {
        oov_rate(&self.valid, &self.vocab)
    }
}

/// Synthetic train/valid split drawn from one generator stream, so both
/// halves share the same bigram structure. Validation gets a tenth of the
/// training token count. Counts include one `<eos>` per line.
pub fn synthetic_corpus(train_tokens: usize, vocab_words: usize, seed: u64, max_vocab: usize) -> Result<Corpus> {
    let valid_tokens = (train_tokens / 10).max(1);
    let lines = synthetic_lines(train_tokens + valid_tokens, vocab_words, seed);
    let mut seen = 0;
    let split = lines
        .iter()
        .position(|l| {
            seen += l.split_whitespace().count() + 1;
            seen >= train_tokens
        })
        .map_or(lines.len(), |i| i + 1);
    Corpus::from_lines(&lines[..split], &lines[split..], max_vocab)
}

/// Deterministic Zipfian bigram corpus for smoke runs and tests.
///
/// Each word has a preferred successor drawn with probability `stickiness`,
/// otherwise the next word follows a Zipf distribution, so both unigram and
/// bigram structure are learnable.
pub fn synthetic_lines(n_tokens: usize, vocab_words: usize, seed: u64) -> Vec<String> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let weights: Vec<f64> = (1..=vocab_words).map(|r| 1.0 / r as f64).collect();
    let total: f64 = weights.iter().sum();
    let cdf: Vec<f64> = weights
        .iter()
        .scan(0.0, |acc, w| {
            *acc += w / total;
            Some(*acc)
        })
        .collect();
    let successor: Vec<usize> = (0..vocab_words).map(|_| rng.gen_range(0..vocab_words)).collect();
    let stickiness = 0.5;

    let mut lines = Vec::new();
    let mut produced = 0;
    let mut prev = 0usize;
    while produced < n_tokens {
        let len = rng.gen_range(8..24).min(n_tokens - produced);
        let mut words = Vec::with_capacity(len);
        for _ in 0..len {
            let w = if rng.gen::<f64>() < stickiness {
                successor[prev]
            } else {
                let u: f64 = rng.gen();
                cdf.partition_point(|&c| c < u).min(vocab_words - 1)
            };
            words.push(format!("w{w}"));
            prev = w;
        }
        produced += len;
        lines.push(words.join(" "));
    }
    lines
}
