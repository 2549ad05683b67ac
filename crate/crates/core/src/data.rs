//! Dataset loading and byte batching.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::mpsc::{sync_channel, Receiver};
use std::thread;

use crate::config::{DataFormat, DatasetSpec};
use crate::rng::{streams, Rng};
use crate::Error;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Example {
    pub text: String,
    pub label: usize,
}

#[derive(Clone, Debug)]
pub struct Splits {
    pub train: Vec<Example>,
    pub test: Vec<Example>,
}

/// Padded byte matrix with a prefix validity mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ByteBatch {
    bytes: Vec<u8>,
    mask: Vec<u8>,
    labels: Vec<usize>,
    batch: usize,
    len: usize,
    /// Rows that came from empty texts (encoded as one valid zero byte).
    pub empty_rows: usize,
}

impl ByteBatch {
    /// Validates the layout: `bytes` and `mask` are `batch × len`, every mask
    /// row is a non-empty prefix of ones, padded bytes are zero.
    pub fn new(
        bytes: Vec<u8>,
        mask: Vec<u8>,
        labels: Vec<usize>,
        len: usize,
        num_classes: usize,
    ) -> Result<Self, Error> {
        let batch = labels.len();
        if len == 0 || bytes.len() != batch * len || mask.len() != batch * len {
            return Err(Error::Shape(format!(
                "byte batch: {} bytes / {} mask entries for {batch} rows of length {len}",
                bytes.len(),
                mask.len()
            )));
        }
        for r in 0..batch {
            let row = &mask[r * len..(r + 1) * len];
            if row[0] != 1 {
                return Err(Error::Data(format!("batch row {r} has no valid position")));
            }
            let valid = row.iter().take_while(|&&m| m == 1).count();
            if row[valid..].iter().any(|&m| m != 0) {
                return Err(Error::Data(format!(
                    "batch row {r}: mask is not a prefix mask"
                )));
            }
            if bytes[r * len + valid..(r + 1) * len]
                .iter()
                .any(|&b| b != 0)
            {
                return Err(Error::Data(format!(
                    "batch row {r}: padding bytes must be 0"
                )));
            }
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::Data(format!(
                "label {y} out of range for {num_classes} classes"
            )));
        }
        Ok(ByteBatch {
            bytes,
            mask,
            labels,
            batch,
            len,
            empty_rows: 0,
        })
    }

    pub fn from_texts(
        texts: &[&str],
        labels: &[usize],
        max_len: usize,
        num_classes: usize,
    ) -> Result<Self, Error> {
        assert_eq!(texts.len(), labels.len(), "one label per text");
        let mut bytes = Vec::with_capacity(texts.len() * max_len);
        let mut mask = Vec::with_capacity(texts.len() * max_len);
        let mut empty = 0;
        for t in texts {
            let (b, m, was_empty) = encode_text(t, max_len);
            bytes.extend(b);
            mask.extend(m);
            empty += was_empty as usize;
        }
        let mut out = Self::new(bytes, mask, labels.to_vec(), max_len, num_classes)?;
        out.empty_rows = empty;
        Ok(out)
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.batch == 0
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn mask(&self) -> &[u8] {
        &self.mask
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn row_bytes(&self, r: usize) -> &[u8] {
        &self.bytes[r * self.len..(r + 1) * self.len]
    }

    pub fn valid_len(&self, r: usize) -> usize {
        self.mask[r * self.len..(r + 1) * self.len]
            .iter()
            .filter(|&&m| m == 1)
            .count()
    }

    /// Copy padded (or truncated) to a new length `len ≥ 1`.
    pub fn with_len(&self, len: usize) -> ByteBatch {
        let mut bytes = vec![0u8; self.batch * len];
        let mut mask = vec![0u8; self.batch * len];
        for r in 0..self.batch {
            let keep = self.len.min(len);
            bytes[r * len..r * len + keep]
                .copy_from_slice(&self.bytes[r * self.len..r * self.len + keep]);
            mask[r * len..r * len + keep]
                .copy_from_slice(&self.mask[r * self.len..r * self.len + keep]);
        }
        ByteBatch {
            bytes,
            mask,
            labels: self.labels.clone(),
            batch: self.batch,
            len,
            empty_rows: self.empty_rows,
        }
    }
}

/// UTF-8 bytes of `text`, prefix-truncated to `max_len` and zero-padded.
/// An empty text becomes a single valid zero byte; the flag reports it.
pub fn encode_text(text: &str, max_len: usize) -> (Vec<u8>, Vec<u8>, bool) {
    assert!(max_len >= 1, "max_len must be at least 1");
    let src = text.as_bytes();
    let n = src.len().min(max_len);
    let mut bytes = vec![0u8; max_len];
    let mut mask = vec![0u8; max_len];
    bytes[..n].copy_from_slice(&src[..n]);
    mask[..n.max(1)].iter_mut().for_each(|m| *m = 1);
    (bytes, mask, n == 0)
}

/// Splits examples into batches of `batch_size` (the last may be short),
/// shuffled by `rng` when given.
pub fn batchify(
    examples: &[Example],
    max_len: usize,
    batch_size: usize,
    num_classes: usize,
    rng: Option<&mut Rng>,
) -> Result<Vec<ByteBatch>, Error> {
    if max_len == 0 || batch_size == 0 {
        return Err(Error::Config(
            "max_len and batch_size must be positive".into(),
        ));
    }
    let mut order: Vec<usize> = (0..examples.len()).collect();
    if let Some(rng) = rng {
        rng.shuffle(&mut order);
    }
    order
        .chunks(batch_size)
        .map(|idx| {
            let texts: Vec<&str> = idx.iter().map(|&i| examples[i].text.as_str()).collect();
            let labels: Vec<usize> = idx.iter().map(|&i| examples[i].label).collect();
            ByteBatch::from_texts(&texts, &labels, max_len, num_classes)
        })
        .collect()
}

/// Feeds batches from a producer thread through a bounded queue; the
/// producer blocks while `capacity` batches are waiting.
pub fn stream_batches(batches: Vec<ByteBatch>, capacity: usize) -> Receiver<ByteBatch> {
    let (tx, rx) = sync_channel(capacity.max(1));
    thread::spawn(move || {
        for b in batches {
            if tx.send(b).is_err() {
                break;
            }
        }
    });
    rx
}

pub fn class_counts(examples: &[Example], num_classes: usize) -> Vec<usize> {
    let mut counts = vec![0; num_classes];
    for e in examples {
        counts[e.label] += 1;
    }
    counts
}

pub fn load_dataset(spec: &DatasetSpec, seed: u64) -> Result<Splits, Error> {
    let mut train = load_file(&spec.train_path, spec)?;
    let mut test = load_file(&spec.test_path, spec)?;
    if spec.expect_train > 0 && train.len() != spec.expect_train {
        return Err(Error::Data(format!(
            "{}: expected {} training rows, found {}",
            spec.train_path.display(),
            spec.expect_train,
            train.len()
        )));
    }
    if spec.expect_test > 0 && test.len() != spec.expect_test {
        return Err(Error::Data(format!(
            "{}: expected {} test rows, found {}",
            spec.test_path.display(),
            spec.expect_test,
            test.len()
        )));
    }
    let mut rng = Rng::stream(seed, streams::DATA);
    train = subsample(train, spec.train_limit, &mut rng);
    test = subsample(test, spec.test_limit, &mut rng);
    Ok(Splits { train, test })
}

fn subsample(examples: Vec<Example>, limit: usize, rng: &mut Rng) -> Vec<Example> {
    if limit == 0 || limit >= examples.len() {
        return examples;
    }
    let mut idx: Vec<usize> = (0..examples.len()).collect();
    rng.shuffle(&mut idx);
    idx.truncate(limit);
    idx.sort_unstable();
    let mut keep = vec![false; examples.len()];
    idx.iter().for_each(|&i| keep[i] = true);
    examples
        .into_iter()
        .zip(keep)
        .filter_map(|(e, k)| k.then_some(e))
        .collect()
}

struct LabelMap<'a> {
    names: &'a [String],
    index: HashMap<&'a str, usize>,
}

impl<'a> LabelMap<'a> {
    fn new(names: &'a [String]) -> Self {
        let index = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.as_str(), i))
            .collect();
        LabelMap { names, index }
    }

    fn resolve(&self, raw: &str) -> Option<usize> {
        let raw = raw.trim();
        if let Some(&i) = self.index.get(raw) {
            return Some(i);
        }
        raw.parse::<usize>().ok().filter(|&i| i < self.names.len())
    }

    fn unknown(&self, path: &Path, line: usize, raw: &str) -> Error {
        Error::Parse {
            path: path.to_path_buf(),
            line,
            message: format!(
                "unknown label {raw:?}; expected an index below {} or one of {:?}",
                self.names.len(),
                self.names
            ),
        }
    }
}

fn load_file(path: &Path, spec: &DatasetSpec) -> Result<Vec<Example>, Error> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let labels = LabelMap::new(&spec.class_names);
    match spec.format {
        DataFormat::Csv => load_delimited(file, path, b',', spec, &labels),
        DataFormat::Tsv => load_delimited(file, path, b'\t', spec, &labels),
        DataFormat::Jsonl => load_jsonl(file, path, spec, &labels),
    }
}

fn load_delimited(
    file: File,
    path: &Path,
    delimiter: u8,
    spec: &DatasetSpec,
    labels: &LabelMap,
) -> Result<Vec<Example>, Error> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .quoting(delimiter == b',')
        .from_reader(file);
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let headers = reader
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    let column = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| {
            parse_err(
                1,
                format!("missing column {name:?} in header {:?}", headers),
            )
        })
    };
    let (text_col, label_col) = (column(&spec.text_field)?, column(&spec.label_field)?);
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let (Some(text), Some(raw)) = (record.get(text_col), record.get(label_col)) else {
            return Err(parse_err(line, "row is missing fields".into()));
        };
        let label = labels
            .resolve(raw)
            .ok_or_else(|| labels.unknown(path, line, raw))?;
        out.push(Example {
            text: text.to_string(),
            label,
        });
    }
    Ok(out)
}

fn load_jsonl(
    file: File,
    path: &Path,
    spec: &DatasetSpec,
    labels: &LabelMap,
) -> Result<Vec<Example>, Error> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: lineno,
            message,
        };
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
        let text = value
            .get(&spec.text_field)
            .and_then(|v| v.as_str())
            .ok_or_else(|| err(format!("missing string field {:?}", spec.text_field)))?;
        let raw = match value.get(&spec.label_field) {
            Some(serde_json::Value::String(s)) => s.clone(),
            Some(serde_json::Value::Number(n)) => n.to_string(),
            _ => return Err(err(format!("missing label field {:?}", spec.label_field))),
        };
        let label = labels
            .resolve(&raw)
            .ok_or_else(|| labels.unknown(path, lineno, &raw))?;
        out.push(Example {
            text: text.to_string(),
            label,
        });
    }
    Ok(out)
}
