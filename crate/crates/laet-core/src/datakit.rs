//! Dataset ingestion, prompt formatting, splits, and seeded synthetic task
//! generation.
//!
//! Datasets are JSONL: one object per line with keys `instruction`, `text`
//! and `answer`. Prompts are rendered byte-exactly as
//! `"{instruction}{text} Answer:"`.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds::derive_seed;

/// One labeled example as read from disk.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub instruction: String,
    pub text: String,
    pub answer: String,
}

/// Classification with a fixed class list, or scalar regression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskMode {
    Classification,
    Regression,
}

/// Encoded training target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Target {
    Class(usize),
    Scalar(f64),
}

/// Ordered class list defining stable class indices, or regression mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelCodec {
    pub classes: Vec<String>,
    pub mode: TaskMode,
}

impl LabelCodec {
    /// Infer a codec from the answers of a record set: regression when every
    /// answer parses as a decimal number, otherwise the lexicographically
    /// sorted distinct answers.
    pub fn infer(records: &[DatasetRecord]) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::InvalidArgument("empty dataset".into()));
        }
        if records.iter().any(|r| r.answer.is_empty()) {
            return Err(Error::InvalidArgument("record with empty answer".into()));
        }
        let numeric = records.iter().all(|r| r.answer.parse::<f64>().is_ok());
        if numeric {
            return Ok(LabelCodec {
                classes: Vec::new(),
                mode: TaskMode::Regression,
            });
        }
        let mut classes: Vec<String> = records
            .iter()
            .map(|r| r.answer.clone())
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        classes.sort();
        if classes.len() < 2 {
            return Err(Error::InvalidArgument(
                "classification dataset must contain at least two classes".into(),
            ));
        }
        Ok(LabelCodec {
            classes,
            mode: TaskMode::Classification,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn encode(&self, answer: &str) -> Result<Target> {
        match self.mode {
            TaskMode::Classification => self
                .classes
                .binary_search_by(|c| c.as_str().cmp(answer))
                .map(Target::Class)
                .map_err(|_| {
                    Error::InvalidArgument(format!("answer '{answer}' not in the class list"))
                }),
            TaskMode::Regression => answer
                .parse::<f64>()
                .map(Target::Scalar)
                .map_err(|e| Error::InvalidArgument(format!("bad scalar answer '{answer}': {e}"))),
        }
    }

    pub fn class_name(&self, index: usize) -> &str {
        &self.classes[index]
    }
}

/// A tokenized example ready for probing or fine-tuning.
#[derive(Debug, Clone)]
pub struct Example {
    pub tokens: Vec<u32>,
    pub target: Target,
}

// ---------------------------------------------------------------------------
// JSONL I/O
// ---------------------------------------------------------------------------

#[derive(Deserialize)]
struct RawRecord {
    instruction: String,
    text: String,
    answer: serde_json::Value,
}

/// Load a JSONL dataset and infer its label codec. Blank lines are skipped;
/// unknown keys are ignored; numbers in the answer field are accepted and
/// kept in their literal form.
pub fn load_jsonl(path: &Path) -> Result<(Vec<DatasetRecord>, LabelCodec)> {
    let content = fs::read_to_string(path)?;
    let mut records = Vec::new();
    for (idx, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: idx + 1,
            message: e.to_string(),
        })?;
        let answer = match raw.answer {
            serde_json::Value::String(s) => s,
            serde_json::Value::Number(n) => n.to_string(),
            other => {
                return Err(Error::Parse {
                    line: idx + 1,
                    message: format!("answer must be a string or number, got {other}"),
                })
            }
        };
        records.push(DatasetRecord {
            instruction: raw.instruction,
            text: raw.text,
            answer,
        });
    }
    let codec = LabelCodec::infer(&records)?;
    Ok((records, codec))
}

/// Write records as UTF-8 JSONL, one object per line, LF-terminated.
pub fn write_jsonl(records: &[DatasetRecord], path: &Path) -> Result<()> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(|e| Error::Io(e.into()))?;
        out.push(b'\n');
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&out)?;
    Ok(())
}

/// Render the prompt for one record: `"{instruction}{text} Answer:"`.
pub fn format_prompt(record: &DatasetRecord) -> String {
    format!("{}{} Answer:", record.instruction, record.text)
}

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

fn apportion(total: usize, fractions: (f64, f64, f64)) -> (usize, usize, usize) {
    // Cumulative rounding keeps the three sizes within one record of the
    // exact proportions and exhausts the input when fractions sum to 1.
    let (f1, f2, f3) = fractions;
    let c1 = (total as f64 * f1).round() as usize;
    let c2 = (total as f64 * (f1 + f2)).round() as usize;
    let sum = f1 + f2 + f3;
    let c3 = if (sum - 1.0).abs() < 1e-9 {
        total
    } else {
        (total as f64 * sum).round() as usize
    };
    let c1 = c1.min(total);
    let c2 = c2.clamp(c1, total);
    let c3 = c3.clamp(c2, total);
    (c1, c2 - c1, c3 - c2)
}

/// Seeded split into train/validation/test. Classification splits are
/// stratified per class; each split's class counts stay within one record of
/// exact proportionality.
pub fn split(
    records: &[DatasetRecord],
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<(Vec<DatasetRecord>, Vec<DatasetRecord>, Vec<DatasetRecord>)> {
    let (f1, f2, f3) = fractions;
    if f1 <= 0.0 || f2 < 0.0 || f3 < 0.0 {
        return Err(Error::InvalidArgument(
            "split fractions must be positive (train) and non-negative".into(),
        ));
    }
    if f1 + f2 + f3 > 1.0 + 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "split fractions sum to {} > 1",
            f1 + f2 + f3
        )));
    }
    let mut rng = StdRng::seed_from_u64(derive_seed(seed, "split"));
    let codec = LabelCodec::infer(records)?;

    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut test = Vec::new();

    match codec.mode {
        TaskMode::Classification => {
            // Group record indices per class, preserving file order inside
            // each group, then shuffle and slice per class.
            let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
            for (i, r) in records.iter().enumerate() {
                groups.entry(r.answer.as_str()).or_default().push(i);
            }
            for (_, mut idxs) in groups {
                idxs.shuffle(&mut rng);
                let (n1, n2, n3) = apportion(idxs.len(), fractions);
                for (pos, &i) in idxs.iter().enumerate() {
                    if pos < n1 {
                        train.push(records[i].clone());
                    } else if pos < n1 + n2 {
                        val.push(records[i].clone());
                    } else if pos < n1 + n2 + n3 {
                        test.push(records[i].clone());
                    }
                }
            }
        }
        TaskMode::Regression => {
            let mut idxs: Vec<usize> = (0..records.len()).collect();
            idxs.shuffle(&mut rng);
            let (n1, n2, n3) = apportion(idxs.len(), fractions);
            for (pos, &i) in idxs.iter().enumerate() {
                if pos < n1 {
                    train.push(records[i].clone());
                } else if pos < n1 + n2 {
                    val.push(records[i].clone());
                } else if pos < n1 + n2 + n3 {
                    test.push(records[i].clone());
                }
            }
        }
    }
    Ok((train, val, test))
}

// ---------------------------------------------------------------------------
// Synthetic tasks
// ---------------------------------------------------------------------------

/// Synthetic task family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SynthTask {
    /// The class is decided by a keyword appearing anywhere in the text.
    Keyword,
    /// The class is decided only by the final text token; the token multiset
    /// is identical across examples, so order-insensitive reductions carry
    /// no class signal.
    Suffix,
}

impl SynthTask {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "keyword" => Ok(SynthTask::Keyword),
            "suffix" => Ok(SynthTask::Suffix),
            other => Err(Error::InvalidArgument(format!(
                "unknown synthetic task '{other}' (expected keyword|suffix)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SynthTask::Keyword => "keyword",
            SynthTask::Suffix => "suffix",
        }
    }
}

/// Generation parameters for a synthetic dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub task: SynthTask,
    pub size: usize,
    pub classes: usize,
    pub noise: f64,
}

/// Class keywords: letter triples that are pairwise disjoint and avoid every
/// letter of the prompt template, so one byte suffices to identify a class.
pub const KEYWORDS: [&str; 7] = ["abc", "dfg", "hij", "klm", "opq", "tuv", "xyz"];

/// Copies of each class digit in the fixed suffix-task multiset.
const SUFFIX_CLASS_COPIES: usize = 2;
/// Extra non-class digits padding the suffix-task multiset.
const SUFFIX_PAD_DIGITS: usize = 4;

/// Generate a deterministic synthetic dataset.
pub fn synth_generate(spec: &SynthSpec, seed: u64) -> Result<Vec<DatasetRecord>> {
    if spec.classes < 2 {
        return Err(Error::InvalidArgument("need at least two classes".into()));
    }
    if spec.classes > KEYWORDS.len() {
        return Err(Error::InvalidArgument(format!(
            "at most {} synthetic classes supported",
            KEYWORDS.len()
        )));
    }
    if spec.size < spec.classes * 10 {
        return Err(Error::InvalidArgument(format!(
            "size {} too small for {} classes (need at least {})",
            spec.size,
            spec.classes,
            spec.classes * 10
        )));
    }
    if !(0.0..=1.0).contains(&spec.noise) {
        return Err(Error::InvalidArgument("noise must be in [0, 1]".into()));
    }
    let mut rng = StdRng::seed_from_u64(derive_seed(seed, "synth"));
    let mut records = Vec::with_capacity(spec.size);
    for i in 0..spec.size {
        let class = i % spec.classes;
        let (text, answer) = match spec.task {
            SynthTask::Keyword => keyword_example(class, &mut rng),
            SynthTask::Suffix => suffix_example(class, spec.classes, &mut rng),
        };
        let answer = if spec.noise > 0.0 && rng.gen::<f64>() < spec.noise {
            flip_answer(spec, class, &mut rng)
        } else {
            answer
        };
        records.push(DatasetRecord {
            instruction: String::new(),
            text,
            answer,
        });
    }
    Ok(records)
}

fn keyword_example(class: usize, rng: &mut StdRng) -> (String, String) {
    let keyword = KEYWORDS[class];
    let n_filler = rng.gen_range(2..=3);
    let mut words: Vec<String> = (0..n_filler)
        .map(|_| {
            (0..3)
                .map(|_| char::from(b'0' + rng.gen_range(0..10u8)))
                .collect()
        })
        .collect();
    let at = rng.gen_range(0..=words.len());
    words.insert(at, keyword.to_string());
    (words.join(" "), keyword.to_string())
}

fn suffix_example(class: usize, k: usize, rng: &mut StdRng) -> (String, String) {
    // Fixed multiset: each class digit appears SUFFIX_CLASS_COPIES times and
    // the pad digits once each; the emitted text always realizes exactly
    // this multiset with the class digit last, so token counts are constant
    // across classes.
    let mut bag: Vec<u8> = Vec::with_capacity(k * SUFFIX_CLASS_COPIES + SUFFIX_PAD_DIGITS);
    for c in 0..k {
        let copies = if c == class {
            SUFFIX_CLASS_COPIES - 1
        } else {
            SUFFIX_CLASS_COPIES
        };
        bag.extend(std::iter::repeat(b'0' + c as u8).take(copies));
    }
    for pad in 0..SUFFIX_PAD_DIGITS {
        bag.push(b'0' + (k + pad) as u8);
    }
    bag.shuffle(rng);
    bag.push(b'0' + class as u8);
    // Class names must not parse as numbers, or the codec would infer a
    // regression task.
    let answer = format!("c{class}");
    (String::from_utf8(bag).unwrap(), answer)
}

fn flip_answer(spec: &SynthSpec, class: usize, rng: &mut StdRng) -> String {
    let offset = rng.gen_range(1..spec.classes);
    let other = (class + offset) % spec.classes;
    match spec.task {
        SynthTask::Keyword => KEYWORDS[other].to_string(),
        SynthTask::Suffix => format!("c{other}"),
    }
}
