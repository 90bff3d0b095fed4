//! Datasets, unlabeled corpora, class distributions and checkpoint persistence.

mod checkpoint;
pub mod fixtures;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, HeadState, Manifest, Stage, FORMAT_VERSION};

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const LABELED_HEADER: &str = "id\ttext\tlabel";

/// A classification task: a name plus its ordered label inventory.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSchema {
    pub name: String,
    pub labels: Vec<String>,
}

impl TaskSchema {
    pub fn new(name: impl Into<String>, labels: Vec<String>) -> Result<Self> {
        let name = name.into();
        if labels.is_empty() {
            return Err(Error::InvalidArgument(format!("schema {name} has no labels")));
        }
        let mut seen = HashSet::new();
        for l in &labels {
            if l.is_empty() {
                return Err(Error::InvalidArgument(format!("schema {name} has an empty label")));
            }
            if !seen.insert(l.as_str()) {
                return Err(Error::InvalidArgument(format!("schema {name} repeats label {l:?}")));
            }
        }
        Ok(TaskSchema { name, labels })
    }

    /// Task 1: four-way hope tone.
    pub fn coarse() -> Self {
        TaskSchema {
            name: "coarse".into(),
            labels: ["blended_tone", "discouraging", "encouraging", "uninvolved"]
                .map(String::from)
                .to_vec(),
        }
    }

    /// Task 2: five-way hope type.
    pub fn fine() -> Self {
        TaskSchema {
            name: "fine".into(),
            labels: [
                "fading_hope",
                "hopelessness",
                "inspiring_hope",
                "optimistic_hope",
                "realistic_hope",
            ]
            .map(String::from)
            .to_vec(),
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "coarse" => Ok(Self::coarse()),
            "fine" => Ok(Self::fine()),
            other => Err(Error::InvalidArgument(format!(
                "unknown task {other:?} (expected coarse or fine)"
            ))),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    #[default]
    Train,
    Dev,
    Test,
}

impl SplitTag {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitTag::Train),
            "dev" => Ok(SplitTag::Dev),
            "test" => Ok(SplitTag::Test),
            other => Err(Error::InvalidArgument(format!("unknown split {other:?}"))),
        }
    }
}

impl fmt::Display for SplitTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitTag::Train => "train",
            SplitTag::Dev => "dev",
            SplitTag::Test => "test",
        })
    }
}

/// What a loader does with a row or line whose text is empty.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EmptyTextPolicy {
    Reject,
    Keep,
    Skip,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledExample {
    pub id: String,
    pub text: String,
    /// Index into the dataset schema's labels.
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledDataset {
    pub schema: TaskSchema,
    pub examples: Vec<LabeledExample>,
    pub split: SplitTag,
}

impl LabeledDataset {
    pub fn new(schema: TaskSchema, examples: Vec<LabeledExample>, split: SplitTag) -> Result<Self> {
        let mut ids = HashSet::new();
        for ex in &examples {
            if ex.label >= schema.len() {
                return Err(Error::LabelOutOfRange {
                    label: ex.label,
                    n_labels: schema.len(),
                });
            }
            if !ids.insert(ex.id.as_str()) {
                return Err(Error::DuplicateId(ex.id.clone()));
            }
        }
        Ok(LabeledDataset {
            schema,
            examples,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn label_name(&self, ex: &LabeledExample) -> &str {
        &self.schema.labels[ex.label]
    }

    pub fn to_tsv(&self) -> Result<String> {
        let mut out = String::from(LABELED_HEADER);
        out.push('\n');
        for ex in &self.examples {
            check_field(&ex.id, "id", &ex.id)?;
            check_field(&ex.text, "text", &ex.id)?;
            out.push_str(&ex.id);
            out.push('\t');
            out.push_str(&ex.text);
            out.push('\t');
            out.push_str(self.label_name(ex));
            out.push('\n');
        }
        Ok(out)
    }
}

fn check_field(value: &str, what: &str, id: &str) -> Result<()> {
    if value.contains(['\t', '\n', '\r']) {
        return Err(Error::InvalidArgument(format!(
            "row {id}: {what} contains a tab or newline"
        )));
    }
    Ok(())
}

/// Reads a file and decodes it as UTF-8, reporting the offset of the first
/// invalid byte.
pub fn read_utf8(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    String::from_utf8(bytes).map_err(|e| Error::Utf8 {
        path: path.to_path_buf(),
        offset: e.utf8_error().valid_up_to(),
    })
}

/// Splits on `\n`, strips a trailing `\r`, and drops the empty piece after a
/// final newline. Yields 1-based line numbers.
pub(crate) fn lines_numbered(content: &str) -> impl Iterator<Item = (usize, &str)> {
    let body = content.strip_suffix('\n').unwrap_or(content);
    let empty = content.is_empty();
    body.split('\n')
        .map(|l| l.strip_suffix('\r').unwrap_or(l))
        .enumerate()
        .filter(move |_| !empty)
        .map(|(i, l)| (i + 1, l))
}

pub fn load_labeled_dataset(path: &Path, schema: &TaskSchema, split: SplitTag) -> Result<LabeledDataset> {
    load_labeled_dataset_with(path, schema, split, EmptyTextPolicy::Reject)
}

pub fn load_labeled_dataset_with(
    path: &Path,
    schema: &TaskSchema,
    split: SplitTag,
    empty_text: EmptyTextPolicy,
) -> Result<LabeledDataset> {
    let content = read_utf8(path)?;
    parse_labeled_tsv(&content, path, schema, split, empty_text)
}

pub fn parse_labeled_tsv(
    content: &str,
    path: &Path,
    schema: &TaskSchema,
    split: SplitTag,
    empty_text: EmptyTextPolicy,
) -> Result<LabeledDataset> {
    let malformed = |line: usize, message: String| Error::Malformed {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = lines_numbered(content);
    match lines.next() {
        Some((_, h)) if h == LABELED_HEADER => {}
        Some((n, h)) => return Err(malformed(n, format!("expected header {LABELED_HEADER:?}, found {h:?}"))),
        None => return Err(malformed(1, "missing header".into())),
    }
    let mut examples = Vec::new();
    let mut ids = HashSet::new();
    for (n, line) in lines {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(malformed(
                n,
                format!("expected 3 tab-separated fields, found {}", fields.len()),
            ));
        }
        let (id, text, label) = (fields[0], fields[1], fields[2]);
        if id.is_empty() {
            return Err(malformed(n, "empty id".into()));
        }
        let label_idx = schema.index_of(label).ok_or_else(|| Error::UnknownLabel {
            id: id.to_string(),
            label: label.to_string(),
            schema: schema.name.clone(),
        })?;
        if !ids.insert(id.to_string()) {
            return Err(Error::DuplicateId(id.to_string()));
        }
        if text.is_empty() {
            match empty_text {
                EmptyTextPolicy::Reject => return Err(malformed(n, format!("row {id}: empty text"))),
                EmptyTextPolicy::Skip => continue,
                EmptyTextPolicy::Keep => {}
            }
        }
        examples.push(LabeledExample {
            id: id.to_string(),
            text: text.to_string(),
            label: label_idx,
        });
    }
    Ok(LabeledDataset {
        schema: schema.clone(),
        examples,
        split,
    })
}

pub fn write_labeled_dataset(ds: &LabeledDataset, path: &Path) -> Result<()> {
    write_atomic(path, ds.to_tsv()?.as_bytes())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
}

/// Unlabeled documents in insertion order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Corpus {
    pub docs: Vec<Document>,
}

impl Corpus {
    /// Builds a corpus with sequential ids `"0"`, `"1"`, ...
    pub fn from_texts<I, S>(texts: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Corpus {
            docs: texts
                .into_iter()
                .enumerate()
                .map(|(i, t)| Document {
                    id: i.to_string(),
                    text: t.into(),
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.docs.iter().map(|d| d.text.as_str())
    }

    /// Drops documents whose text exactly repeats an earlier one.
    pub fn dedup_exact(&self) -> Corpus {
        let mut seen = HashSet::new();
        Corpus {
            docs: self
                .docs
                .iter()
                .filter(|d| seen.insert(d.text.as_str()))
                .cloned()
                .collect(),
        }
    }

    pub fn to_text(&self) -> Result<String> {
        let mut out = String::new();
        for d in &self.docs {
            if d.text.contains(['\n', '\r']) {
                return Err(Error::InvalidArgument(format!("document {} contains a newline", d.id)));
            }
            out.push_str(&d.text);
            out.push('\n');
        }
        Ok(out)
    }
}

/// One document per line; blank lines are skipped and ids are assigned
/// sequentially over the kept lines.
pub fn load_corpus(path: &Path) -> Result<Corpus> {
    let content = read_utf8(path)?;
    Ok(Corpus::from_texts(
        lines_numbered(&content)
            .map(|(_, l)| l)
            .filter(|l| !l.trim().is_empty()),
    ))
}

pub fn save_corpus(corpus: &Corpus, path: &Path) -> Result<()> {
    write_atomic(path, corpus.to_text()?.as_bytes())
}

pub const UNLABELED_HEADER: &str = "id\ttext";

/// Parses an `id<TAB>text` file with header. An empty file yields no
/// documents.
pub fn load_unlabeled_tsv(path: &Path) -> Result<Vec<Document>> {
    let content = read_utf8(path)?;
    let mut lines = lines_numbered(&content);
    let Some((_, header)) = lines.next() else {
        return Ok(Vec::new());
    };
    if header != UNLABELED_HEADER {
        return Err(Error::Malformed {
            path: path.to_path_buf(),
            line: 1,
            message: format!("expected header {UNLABELED_HEADER:?}"),
        });
    }
    let mut ids = HashSet::new();
    let mut docs = Vec::new();
    for (line, row) in lines {
        let (id, text) = row.split_once('\t').ok_or_else(|| Error::Malformed {
            path: path.to_path_buf(),
            line,
            message: "expected 2 tab-separated fields".into(),
        })?;
        if id.is_empty() || text.contains('\t') {
            return Err(Error::Malformed {
                path: path.to_path_buf(),
                line,
                message: "expected a non-empty id and exactly 2 fields".into(),
            });
        }
        if !ids.insert(id.to_string()) {
            return Err(Error::DuplicateId(id.to_string()));
        }
        docs.push(Document {
            id: id.to_string(),
            text: text.to_string(),
        });
    }
    Ok(docs)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistributionReport {
    pub counts: BTreeMap<String, usize>,
    pub total: usize,
    pub fractions: BTreeMap<String, f64>,
    /// max count / min count; `None` when some class has no examples.
    pub imbalance_ratio: Option<f64>,
    pub has_empty_class: bool,
}

impl DistributionReport {
    pub fn render(&self, schema: &TaskSchema) -> String {
        let mut out = String::from("class\tcount\tfraction\n");
        for l in &schema.labels {
            out.push_str(&format!("{l}\t{}\t{:.4}\n", self.counts[l], self.fractions[l]));
        }
        out.push_str(&format!("total\t{}\t1.0000\n", self.total));
        match self.imbalance_ratio {
            Some(r) => out.push_str(&format!("imbalance_ratio\t{r:.4}\n")),
            None => out.push_str("imbalance_ratio\tundefined (empty class)\n"),
        }
        out
    }
}

pub fn class_distribution(ds: &LabeledDataset) -> Result<DistributionReport> {
    if ds.is_empty() {
        return Err(Error::Empty("class distribution of an empty dataset".into()));
    }
    let mut per_class = vec![0usize; ds.schema.len()];
    for ex in &ds.examples {
        per_class[ex.label] += 1;
    }
    let total = ds.len();
    let counts: BTreeMap<String, usize> = ds.schema.labels.iter().cloned().zip(per_class.iter().copied()).collect();
    let fractions = counts
        .iter()
        .map(|(l, &c)| (l.clone(), c as f64 / total as f64))
        .collect();
    let max = *per_class.iter().max().expect("non-empty schema");
    let min = *per_class.iter().min().expect("non-empty schema");
    Ok(DistributionReport {
        counts,
        total,
        fractions,
        imbalance_ratio: (min > 0).then(|| max as f64 / min as f64),
        has_empty_class: min == 0,
    })
}

/// Writes `bytes` to a sibling temp file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    fn parse(content: &str) -> Result<LabeledDataset> {
        parse_labeled_tsv(
            content,
            &PathBuf::from("mem.tsv"),
            &TaskSchema::coarse(),
            SplitTag::Train,
            EmptyTextPolicy::Reject,
        )
    }

    #[test]
    fn parses_four_rows() {
        let ds = parse(
            "id\ttext\tlabel\n1\tsuper\tencouraging\n2\tok\tuninvolved\n3\tno\tdiscouraging\n4\thm\tblended_tone\n",
        )
        .unwrap();
        assert_eq!(ds.len(), 4);
        assert_eq!(ds.label_name(&ds.examples[2]), "discouraging");
    }

    #[test]
    fn unknown_label_names_row_and_label() {
        let err = parse("id\ttext\tlabel\nr7\tx\thopeful\n").unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::UnknownLabel { .. }));
        assert!(msg.contains("r7") && msg.contains("hopeful"), "{msg}");
    }

    #[test]
    fn duplicate_id_rejected() {
        let err = parse("id\ttext\tlabel\na\tx\tencouraging\na\ty\tencouraging\n").unwrap_err();
        assert!(matches!(err, Error::DuplicateId(id) if id == "a"));
    }

    #[test]
    fn malformed_row_reports_line() {
        let err = parse("id\ttext\tlabel\na\tx\tencouraging\nb\tx\ty\tencouraging\n").unwrap_err();
        assert!(matches!(err, Error::Malformed { line: 3, .. }), "{err}");
        let err = parse("id\ttext\n").unwrap_err();
        assert!(matches!(err, Error::Malformed { line: 1, .. }));
    }

    #[test]
    fn empty_text_policies() {
        let src = "id\ttext\tlabel\na\t\tencouraging\nb\tx\tuninvolved\n";
        assert!(parse(src).is_err());
        let p = PathBuf::from("m");
        let keep = parse_labeled_tsv(src, &p, &TaskSchema::coarse(), SplitTag::Dev, EmptyTextPolicy::Keep).unwrap();
        assert_eq!(keep.len(), 2);
        let skip = parse_labeled_tsv(src, &p, &TaskSchema::coarse(), SplitTag::Dev, EmptyTextPolicy::Skip).unwrap();
        assert_eq!(skip.len(), 1);
    }

    #[test]
    fn crlf_tolerated() {
        let ds = parse("id\ttext\tlabel\r\na\tx\tencouraging\r\n").unwrap();
        assert_eq!(ds.examples[0].label, 2);
    }

    #[test]
    fn distribution_single_example() {
        let ds = parse("id\ttext\tlabel\na\tx\tencouraging\n").unwrap();
        let d = class_distribution(&ds).unwrap();
        assert_eq!(d.fractions["encouraging"], 1.0);
        assert_eq!(d.fractions["uninvolved"], 0.0);
        assert!(d.has_empty_class);
        assert_eq!(d.imbalance_ratio, None);
    }

    #[test]
    fn distribution_of_empty_dataset_is_error() {
        let ds = parse("id\ttext\tlabel\n").unwrap();
        assert!(matches!(class_distribution(&ds), Err(Error::Empty(_))));
    }

    #[test]
    fn schema_validation() {
        assert!(TaskSchema::new("x", vec![]).is_err());
        assert!(TaskSchema::new("x", vec!["a".into(), "a".into()]).is_err());
        assert!(TaskSchema::new("x", vec!["".into()]).is_err());
        assert_eq!(TaskSchema::coarse().len(), 4);
        assert_eq!(TaskSchema::fine().len(), 5);
    }

    #[test]
    fn corpus_lines() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.txt");
        fs::write(&p, "one\ntwo\nthree\n").unwrap();
        let c = load_corpus(&p).unwrap();
        assert_eq!(c.docs.iter().map(|d| d.id.as_str()).collect::<Vec<_>>(), ["0", "1", "2"]);
        fs::write(&p, "one\n\nthree").unwrap();
        assert_eq!(load_corpus(&p).unwrap().len(), 2);
        fs::write(&p, b"ok\nab\xffcd\n").unwrap();
        let err = load_corpus(&p).unwrap_err();
        assert!(matches!(err, Error::Utf8 { offset: 5, .. }), "{err}");
    }

    #[test]
    fn dedup_keeps_first() {
        let c = Corpus::from_texts(["a", "b", "a"]).dedup_exact();
        assert_eq!(c.texts().collect::<Vec<_>>(), ["a", "b"]);
    }
}
