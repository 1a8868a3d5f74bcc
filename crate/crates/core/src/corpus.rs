//! Corpus handling: contiguous train/calibration/eval splits and a seeded
//! synthetic English-like text generator for self-contained experiments.

use rand::seq::index;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::model::{CalibrationSet, TokenWindowBatch};
use crate::rng::{self, Rng};

pub const DEFAULT_CALIB_SIZE: usize = 128;
pub const DEFAULT_SPLITS: [f64; 3] = [0.8, 0.1, 0.1];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CorpusSplits {
    pub train: Vec<u8>,
    pub calib: Vec<u8>,
    pub eval: Vec<u8>,
    /// `n_calib` single windows drawn from the calibration split.
    pub calib_set: CalibrationSet,
}

pub fn check_fractions(fractions: [f64; 3]) -> Result<()> {
    if fractions.iter().any(|f| f.is_nan() || *f <= 0.0)
        || fractions.iter().sum::<f64>() > 1.0 + 1e-12
    {
        return Err(Error::input(format!(
            "split fractions {fractions:?} must be positive and sum to at most 1"
        )));
    }
    Ok(())
}

/// Contiguous byte-range split `[train | calib | eval]`, followed by a seeded
/// draw of `n_calib` distinct windows from the calibration range.
pub fn split_corpus(
    bytes: &[u8],
    fractions: [f64; 3],
    window: usize,
    n_calib: usize,
    seed: u64,
) -> Result<CorpusSplits> {
    check_fractions(fractions)?;
    let len = bytes.len() as f64;
    let cut = |f: f64| ((len * f) + 1e-9).floor() as usize;
    let (a, b, c) = (cut(fractions[0]), cut(fractions[1]), cut(fractions[2]));
    let (train, rest) = bytes.split_at(a.min(bytes.len()));
    let (calib, rest) = rest.split_at(b.min(rest.len()));
    let eval = &rest[..c.min(rest.len())];
    for (name, part) in [("train", train), ("calibration", calib), ("eval", eval)] {
        if part.len() <= window + 1 {
            return Err(Error::input(format!(
                "{name} split of {} bytes is too short for window {window}",
                part.len()
            )));
        }
    }
    let available = calib.len() - window;
    if n_calib == 0 || n_calib > available {
        return Err(Error::input(format!(
            "calibration split has {available} windows, cannot draw {n_calib}"
        )));
    }
    let mut r = rng::seeded(seed);
    let mut starts = index::sample(&mut r, available, n_calib).into_vec();
    starts.sort_unstable();
    let calib_set =
        CalibrationSet::from_batch(&TokenWindowBatch::from_starts(calib, window, &starts)?)?;
    Ok(CorpusSplits {
        train: train.to_vec(),
        calib: calib.to_vec(),
        eval: eval.to_vec(),
        calib_set,
    })
}

const NAMES: &[&str] = &[
    "Anna", "Boris", "Clara", "Dmitri", "Elena", "Felix", "Greta", "Hugo", "Ida", "Jonas",
];
const NOUNS: &[&str] = &[
    "house", "river", "garden", "letter", "window", "road", "village", "market", "horse",
    "mountain", "book", "table", "door", "field", "city", "ship", "bridge", "forest", "lamp",
    "winter", "morning", "evening", "stone", "voice", "hand", "friend", "brother", "sister",
    "mother", "father", "child", "doctor", "teacher", "soldier", "farmer", "king", "queen",
];
const VERBS: &[&str] = &[
    "saw",
    "found",
    "opened",
    "closed",
    "carried",
    "watched",
    "remembered",
    "painted",
    "built",
    "crossed",
    "followed",
    "wrote",
    "read",
    "heard",
    "left",
    "visited",
    "sold",
    "bought",
];
const INTRANSITIVE: &[&str] = &[
    "waited", "smiled", "slept", "walked", "laughed", "listened", "returned", "rested",
];
const ADJECTIVES: &[&str] = &[
    "old", "small", "quiet", "bright", "dark", "long", "cold", "warm", "green", "empty", "distant",
    "narrow", "heavy", "gentle", "strange",
];
const PLACES: &[&str] = &[
    "near the river",
    "in the garden",
    "by the window",
    "on the road",
    "at the market",
    "under the bridge",
    "in the city",
    "across the field",
    "before dawn",
    "after supper",
];
const CONNECTIVES: &[&str] = &["and then", "but", "so", "while", "because"];

/// Skewed pick: low indices are much more frequent, like word frequencies.
fn pick<'a>(rng: &mut Rng, words: &[&'a str]) -> &'a str {
    let u: f64 = rng.gen();
    words[((u * u) * words.len() as f64) as usize]
}

fn noun_phrase(rng: &mut Rng, out: &mut String) {
    if rng.gen_bool(0.2) {
        out.push_str(pick(rng, NAMES));
        return;
    }
    out.push_str(if rng.gen_bool(0.7) { "the " } else { "a " });
    if rng.gen_bool(0.4) {
        out.push_str(pick(rng, ADJECTIVES));
        out.push(' ');
    }
    out.push_str(pick(rng, NOUNS));
}

fn clause(rng: &mut Rng, out: &mut String) {
    noun_phrase(rng, out);
    out.push(' ');
    if rng.gen_bool(0.7) {
        out.push_str(pick(rng, VERBS));
        out.push(' ');
        noun_phrase(rng, out);
    } else {
        out.push_str(pick(rng, INTRANSITIVE));
    }
    if rng.gen_bool(0.35) {
        out.push(' ');
        out.push_str(pick(rng, PLACES));
    }
}

fn sentence(rng: &mut Rng, out: &mut String) {
    let start = out.len();
    clause(rng, out);
    if rng.gen_bool(0.3) {
        out.push_str(", ");
        out.push_str(pick(rng, CONNECTIVES));
        out.push(' ');
        clause(rng, out);
    }
    if let Some(first) = out[start..].chars().next() {
        let upper = first.to_ascii_uppercase().to_string();
        out.replace_range(start..start + 1, &upper);
    }
    out.push(if rng.gen_bool(0.1) { '?' } else { '.' });
}

/// `len` bytes of seeded synthetic prose: short sentences over a small
/// vocabulary with skewed word frequencies, grouped into paragraphs.
pub fn synthetic_corpus(seed: u64, len: usize) -> Vec<u8> {
    let mut rng = rng::seeded(seed);
    let mut out = String::with_capacity(len + 256);
    while out.len() < len {
        let sentences = rng.gen_range(2..7);
        for i in 0..sentences {
            if i > 0 {
                out.push(' ');
            }
            sentence(&mut rng, &mut out);
        }
        out.push('\n');
    }
    out.truncate(len);
    out.into_bytes()
}
