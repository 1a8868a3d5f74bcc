use crate::error::{Error, Result};

use super::VOCAB_SIZE;

/// A batch of `(context window, next token)` pairs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenWindowBatch {
    window: usize,
    /// Row-major `len × window` token ids.
    contexts: Vec<u32>,
    targets: Vec<u32>,
}

impl TokenWindowBatch {
    pub fn new(contexts: Vec<Vec<u32>>, targets: Vec<u32>) -> Result<Self> {
        if contexts.is_empty() {
            return Err(Error::input("empty batch"));
        }
        if contexts.len() != targets.len() {
            return Err(Error::input(format!(
                "{} contexts but {} targets",
                contexts.len(),
                targets.len()
            )));
        }
        let window = contexts[0].len();
        if window == 0 || contexts.iter().any(|c| c.len() != window) {
            return Err(Error::input(
                "context windows must share one non-zero length",
            ));
        }
        let flat: Vec<u32> = contexts.into_iter().flatten().collect();
        if let Some(bad) = flat
            .iter()
            .chain(&targets)
            .find(|&&t| t as usize >= VOCAB_SIZE)
        {
            return Err(Error::input(format!(
                "token id {bad} out of range [0, 255]"
            )));
        }
        Ok(TokenWindowBatch {
            window,
            contexts: flat,
            targets,
        })
    }

    /// The windows starting at each of `starts` in `tokens`.
    pub fn from_starts(tokens: &[u8], window: usize, starts: &[usize]) -> Result<Self> {
        if starts.is_empty() {
            return Err(Error::input("empty batch"));
        }
        let mut contexts = Vec::with_capacity(starts.len() * window);
        let mut targets = Vec::with_capacity(starts.len());
        for &s in starts {
            if s + window >= tokens.len() {
                return Err(Error::input(format!(
                    "window at {s} runs past the end of a {}-token sequence",
                    tokens.len()
                )));
            }
            contexts.extend(tokens[s..s + window].iter().map(|&t| t as u32));
            targets.push(tokens[s + window] as u32);
        }
        Ok(TokenWindowBatch {
            window,
            contexts,
            targets,
        })
    }

    /// Every window of `tokens`, in order.
    pub fn all_windows(tokens: &[u8], window: usize) -> Result<Self> {
        if tokens.len() <= window {
            return Err(Error::input(format!(
                "sequence of {} tokens is too short for window {window}",
                tokens.len()
            )));
        }
        let starts: Vec<usize> = (0..tokens.len() - window).collect();
        Self::from_starts(tokens, window, &starts)
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn context(&self, i: usize) -> &[u32] {
        &self.contexts[i * self.window..(i + 1) * self.window]
    }

    pub fn targets(&self) -> &[u32] {
        &self.targets
    }

    /// Single-sample batches, one per window.
    pub fn split_samples(&self) -> Vec<TokenWindowBatch> {
        (0..self.len())
            .map(|i| TokenWindowBatch {
                window: self.window,
                contexts: self.context(i).to_vec(),
                targets: vec![self.targets[i]],
            })
            .collect()
    }

    pub fn concat(batches: &[TokenWindowBatch]) -> Result<Self> {
        let first = batches
            .first()
            .ok_or_else(|| Error::input("empty batch list"))?;
        if batches.iter().any(|b| b.window != first.window) {
            return Err(Error::input("batches have different windows"));
        }
        Ok(TokenWindowBatch {
            window: first.window,
            contexts: batches
                .iter()
                .flat_map(|b| b.contexts.iter().copied())
                .collect(),
            targets: batches
                .iter()
                .flat_map(|b| b.targets.iter().copied())
                .collect(),
        })
    }

    /// The batch repeated `times` times.
    pub fn repeat(&self, times: usize) -> Self {
        TokenWindowBatch {
            window: self.window,
            contexts: self.contexts.repeat(times),
            targets: self.targets.repeat(times),
        }
    }
}

/// Calibration windows kept at per-sample granularity.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CalibrationSet {
    samples: Vec<TokenWindowBatch>,
}

impl CalibrationSet {
    pub fn new(samples: Vec<TokenWindowBatch>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::input("empty calibration set"));
        }
        if samples.iter().any(|s| s.len() != 1) {
            return Err(Error::input(
                "calibration samples must each hold one window",
            ));
        }
        if samples.iter().any(|s| s.window != samples[0].window) {
            return Err(Error::input("calibration samples have different windows"));
        }
        Ok(CalibrationSet { samples })
    }

    pub fn from_batch(batch: &TokenWindowBatch) -> Result<Self> {
        Self::new(batch.split_samples())
    }

    pub fn samples(&self) -> &[TokenWindowBatch] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// All samples in one batch; the mean loss over it is the calibration loss.
    pub fn as_batch(&self) -> TokenWindowBatch {
        TokenWindowBatch::concat(&self.samples).expect("non-empty with a shared window")
    }
}
