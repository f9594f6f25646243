//! Closed synthetic grammar standing in for real speech datasets.
//!
//! Text ids `0..=9` are digits, followed by `+`, `echo`, `rev` and then
//! plain words. Three prompt families have deterministic answers:
//!
//! - `a + b` with single digits answers the decimal digits of the sum;
//! - `echo w..` answers the operands unchanged;
//! - `rev w..` answers the operands reversed.
//!
//! "Speech" for a text is a pure function of it: every token becomes
//! `samples_per_token` samples `token * B^4 + r`, `r` counting within the
//! token.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{CodecConfig, Signal};
use crate::error::{Error, Result};
use crate::layout::{codec_for, Corpus, TaskKind, TrainingExample};
use crate::vocab::{TokenId, VocabSpec};

pub const PLUS: TokenId = 10;
pub const ECHO: TokenId = 11;
pub const REV: TokenId = 12;
pub const FIRST_WORD: TokenId = 13;

const WORDS: [&str; 19] = [
    "cat", "dog", "sun", "red", "big", "cup", "map", "owl", "pen", "hat", "sky", "box", "fig", "jam",
    "key", "lid", "mud", "net", "oak",
];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grammar {
    pub text_size: u32,
    pub codec_base: u32,
    pub samples_per_token: usize,
    /// Largest operand count of `echo`/`rev` prompts and of plain phrases.
    pub max_operands: usize,
}

impl Grammar {
    pub fn for_vocab(spec: &VocabSpec) -> Result<Self> {
        let codec = codec_for(spec)?;
        let g = Self {
            text_size: spec.text_size(),
            codec_base: codec.base(),
            samples_per_token: 4,
            max_operands: 3,
        };
        g.check(spec)?;
        Ok(g)
    }

    /// Fails when the vocabulary cannot hold the grammar's tokens or the
    /// codec cannot represent its samples.
    pub fn check(&self, spec: &VocabSpec) -> Result<()> {
        if self.text_size != spec.text_size() {
            return Err(Error::Config(format!(
                "grammar text_size {} != vocabulary text_size {}",
                self.text_size,
                spec.text_size()
            )));
        }
        if self.text_size < FIRST_WORD + 3 {
            return Err(Error::Config(format!(
                "text vocabulary of {} leaves fewer than 3 words",
                self.text_size
            )));
        }
        let codec = codec_for(spec)?;
        if codec.base() != self.codec_base {
            return Err(Error::Config(format!(
                "grammar codec base {} != vocabulary base {}",
                self.codec_base,
                codec.base()
            )));
        }
        let b4 = (self.codec_base as u64).pow(4);
        if self.samples_per_token == 0 || self.samples_per_token as u64 > b4 {
            return Err(Error::Config(format!(
                "samples_per_token {} outside [1, {b4}]",
                self.samples_per_token
            )));
        }
        if self.text_size as u64 * b4 > codec.sample_limit() {
            return Err(Error::Config(format!(
                "text ids up to {} do not fit base-{} samples",
                self.text_size, self.codec_base
            )));
        }
        if self.max_operands == 0 {
            return Err(Error::Config("max_operands must be positive".into()));
        }
        Ok(())
    }

    pub fn codec(&self) -> Result<CodecConfig> {
        CodecConfig::new(self.codec_base)
    }

    pub fn token_name(&self, id: TokenId) -> String {
        match id {
            0..=9 => id.to_string(),
            PLUS => "+".into(),
            ECHO => "echo".into(),
            REV => "rev".into(),
            _ => match WORDS.get((id - FIRST_WORD) as usize) {
                Some(w) => (*w).into(),
                None => format!("w{id}"),
            },
        }
    }

    pub fn render(&self, text: &[TokenId]) -> String {
        text.iter().map(|&t| self.token_name(t)).collect::<Vec<_>>().join(" ")
    }

    /// Whitespace separated token names or raw ids.
    pub fn parse(&self, text: &str) -> Result<Vec<TokenId>> {
        text.split_whitespace()
            .map(|w| {
                (0..self.text_size)
                    .find(|&id| self.token_name(id) == w)
                    .ok_or_else(|| Error::Config(format!("unknown token {w:?}")))
            })
            .collect()
    }

    /// The grammar's answer to `prompt`, if it is a well-formed question.
    pub fn answer(&self, prompt: &[TokenId]) -> Option<Vec<TokenId>> {
        match prompt {
            [a, PLUS, b] if *a < 10 && *b < 10 => {
                let s = a + b;
                Some(if s >= 10 { vec![s / 10, s % 10] } else { vec![s] })
            }
            [ECHO, rest @ ..] if !rest.is_empty() && rest.iter().all(|&t| self.is_operand(t)) => Some(rest.to_vec()),
            [REV, rest @ ..] if !rest.is_empty() && rest.iter().all(|&t| self.is_operand(t)) => {
                Some(rest.iter().rev().copied().collect())
            }
            _ => None,
        }
    }

    fn is_operand(&self, t: TokenId) -> bool {
        t < 10 || (FIRST_WORD..self.text_size).contains(&t)
    }

    /// Speech for `text`.
    pub fn synthesize(&self, text: &[TokenId]) -> Signal {
        let b4 = (self.codec_base as u64).pow(4);
        let mut samples = Vec::with_capacity(text.len() * self.samples_per_token);
        for &t in text {
            for r in 0..self.samples_per_token {
                samples.push(t as u64 * b4 + r as u64);
            }
        }
        Signal::new(samples)
    }

    fn operand(&self, rng: &mut ChaCha8Rng) -> TokenId {
        let n_words = self.text_size - FIRST_WORD;
        let k = rng.random_range(0..10 + n_words);
        if k < 10 {
            k
        } else {
            FIRST_WORD + k - 10
        }
    }

    fn operands(&self, rng: &mut ChaCha8Rng) -> Vec<TokenId> {
        let n = rng.random_range(1..=self.max_operands);
        (0..n).map(|_| self.operand(rng)).collect()
    }

    /// A random well-formed question.
    pub fn question(&self, rng: &mut ChaCha8Rng) -> Vec<TokenId> {
        match *[0, 1, 2].choose(rng).unwrap() {
            0 => vec![rng.random_range(0..10), PLUS, rng.random_range(0..10)],
            1 => [vec![ECHO], self.operands(rng)].concat(),
            _ => [vec![REV], self.operands(rng)].concat(),
        }
    }

    /// One example of `task` drawn from `rng`.
    pub fn example(&self, task: TaskKind, rng: &mut ChaCha8Rng) -> TrainingExample {
        let mut ex = TrainingExample {
            task,
            text_in: Vec::new(),
            signal_in: Signal::default(),
            text_out: Vec::new(),
            signal_out: Signal::default(),
        };
        match task {
            TaskKind::Asr => {
                let phrase = self.operands(rng);
                ex.signal_in = self.synthesize(&phrase);
                ex.text_out = phrase;
            }
            TaskKind::Tts => {
                let phrase = self.operands(rng);
                ex.signal_out = self.synthesize(&phrase);
                ex.text_in = phrase;
            }
            TaskKind::TextQa => {
                let q = self.question(rng);
                ex.text_out = self.answer(&q).expect("generated questions are well formed");
                ex.text_in = q;
            }
            TaskKind::AudioQaTextOut | TaskKind::AudioQaFull => {
                let q = self.question(rng);
                ex.signal_in = self.synthesize(&q);
                ex.text_out = self.answer(&q).expect("generated questions are well formed");
                if task == TaskKind::AudioQaFull {
                    ex.signal_out = self.synthesize(&ex.text_out);
                }
            }
        }
        ex
    }
}

/// `count` examples cycling through all five task kinds.
pub fn gen_data(grammar: &Grammar, spec: &VocabSpec, count: usize, seed: u64) -> Result<Corpus> {
    if count == 0 {
        return Err(Error::Config("count must be at least 1".into()));
    }
    grammar.check(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let examples = (0..count)
        .map(|i| grammar.example(TaskKind::ALL[i % TaskKind::ALL.len()], &mut rng))
        .collect();
    let corpus = Corpus::new(examples);
    corpus.validate(spec)?;
    Ok(corpus)
}
