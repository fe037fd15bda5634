//! Triple stores, vocabularies, modality feature matrices, and the indexes
//! used for 1-vs-all training targets and filtered evaluation.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const FEATURE_MAGIC: &[u8; 4] = b"MMFT";
pub const FEATURE_VERSION: u32 = 1;

pub const TRAIN_FILE: &str = "train.txt";
pub const VALID_FILE: &str = "valid.txt";
pub const TEST_FILE: &str = "test.txt";
pub const ENTITY_MANIFEST: &str = "entities.txt";
pub const RELATION_MANIFEST: &str = "relations.txt";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub head: usize,
    pub relation: usize,
    pub tail: usize,
}

impl Triple {
    pub const fn new(head: usize, relation: usize, tail: usize) -> Self {
        Self { head, relation, tail }
    }
}

/// Which side of a triple a query asks for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// `(h, r, ?)`
    Tail,
    /// `(?, r, t)`, answered through the inverse relation.
    Head,
}

/// A 1-vs-all query: the known entity, the relation, and which side is missing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Query {
    pub entity: usize,
    pub relation: usize,
    pub direction: Direction,
}

impl Query {
    pub fn tail(head: usize, relation: usize) -> Self {
        Self {
            entity: head,
            relation,
            direction: Direction::Tail,
        }
    }

    pub fn head(tail: usize, relation: usize) -> Self {
        Self {
            entity: tail,
            relation,
            direction: Direction::Head,
        }
    }

    /// Row in a `2|R|`-row relation table: inverse relations follow the forward ones.
    pub fn relation_slot(&self, num_relations: usize) -> usize {
        match self.direction {
            Direction::Tail => self.relation,
            Direction::Head => self.relation + num_relations,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Vocab {
    entities: Vec<String>,
    entity_ids: HashMap<String, usize>,
    relations: Vec<String>,
    relation_ids: HashMap<String, usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VocabMode {
    /// Unseen names are appended to the vocabulary.
    Build,
    /// Unseen names are an error.
    Reuse,
}

fn index_names(kind: &str, names: Vec<String>) -> Result<(Vec<String>, HashMap<String, usize>)> {
    let mut ids = HashMap::with_capacity(names.len());
    for (i, name) in names.iter().enumerate() {
        if ids.insert(name.clone(), i).is_some() {
            return Err(Error::Vocab(format!("duplicate {kind} name {name:?}")));
        }
    }
    Ok((names, ids))
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_names(entities: Vec<String>, relations: Vec<String>) -> Result<Self> {
        let (entities, entity_ids) = index_names("entity", entities)?;
        let (relations, relation_ids) = index_names("relation", relations)?;
        Ok(Self {
            entities,
            entity_ids,
            relations,
            relation_ids,
        })
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn entity_id(&self, name: &str) -> Option<usize> {
        self.entity_ids.get(name).copied()
    }

    pub fn relation_id(&self, name: &str) -> Option<usize> {
        self.relation_ids.get(name).copied()
    }

    pub fn entity_name(&self, id: usize) -> Option<&str> {
        self.entities.get(id).map(String::as_str)
    }

    pub fn relation_name(&self, id: usize) -> Option<&str> {
        self.relations.get(id).map(String::as_str)
    }

    pub fn entities(&self) -> &[String] {
        &self.entities
    }

    pub fn relations(&self) -> &[String] {
        &self.relations
    }

    fn resolve_entity(&mut self, name: &str, mode: VocabMode) -> Result<usize> {
        if let Some(id) = self.entity_ids.get(name) {
            return Ok(*id);
        }
        match mode {
            VocabMode::Build => {
                let id = self.entities.len();
                self.entities.push(name.to_owned());
                self.entity_ids.insert(name.to_owned(), id);
                Ok(id)
            }
            VocabMode::Reuse => Err(Error::Vocab(format!("unknown entity {name:?}"))),
        }
    }

    fn resolve_relation(&mut self, name: &str, mode: VocabMode) -> Result<usize> {
        if let Some(id) = self.relation_ids.get(name) {
            return Ok(*id);
        }
        match mode {
            VocabMode::Build => {
                let id = self.relations.len();
                self.relations.push(name.to_owned());
                self.relation_ids.insert(name.to_owned(), id);
                Ok(id)
            }
            VocabMode::Reuse => Err(Error::Vocab(format!("unknown relation {name:?}"))),
        }
    }

    /// Resolves a relation given either its name or its numeric id.
    pub fn lookup_relation(&self, key: &str) -> Option<usize> {
        self.relation_id(key)
            .or_else(|| key.parse::<usize>().ok().filter(|&id| id < self.num_relations()))
    }
}

/// Reads a manifest: one name per line, line `i` is id `i`.
pub fn read_manifest(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(|l| l.trim_end_matches('\r').to_owned()).collect())
}

pub fn write_manifest(path: &Path, names: &[String]) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path).map_err(|e| Error::io(path, e))?);
    for name in names {
        writeln!(out, "{name}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Reads TAB-separated `head  relation  tail` lines into `vocab`'s id space.
/// Duplicate lines are dropped; blank lines are skipped.
pub fn read_triples(path: &Path, vocab: &mut Vocab, mode: VocabMode) -> Result<Vec<Triple>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_triples(BufReader::new(file), path, vocab, mode)
}

pub fn parse_triples(reader: impl BufRead, path: &Path, vocab: &mut Vocab, mode: VocabMode) -> Result<Vec<Triple>> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let parse_err = |detail: String| Error::Parse {
            path: path.to_owned(),
            line: lineno + 1,
            detail,
        };
        let [h, r, t] = fields.as_slice() else {
            return Err(parse_err(format!(
                "expected 3 TAB-separated fields, found {}",
                fields.len()
            )));
        };
        let head = vocab.resolve_entity(h, mode).map_err(|e| parse_err(e.to_string()))?;
        let relation = vocab.resolve_relation(r, mode).map_err(|e| parse_err(e.to_string()))?;
        let tail = vocab.resolve_entity(t, mode).map_err(|e| parse_err(e.to_string()))?;
        let triple = Triple::new(head, relation, tail);
        if seen.insert(triple) {
            out.push(triple);
        }
    }
    Ok(out)
}

pub fn write_triples(path: &Path, triples: &[Triple], vocab: &Vocab) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path).map_err(|e| Error::io(path, e))?);
    for t in triples {
        let name = |id: usize, kind: &str, n: Option<&str>| {
            n.map(str::to_owned)
                .ok_or_else(|| Error::Vocab(format!("{kind} id {id} out of range")))
        };
        let h = name(t.head, "entity", vocab.entity_name(t.head))?;
        let r = name(t.relation, "relation", vocab.relation_name(t.relation))?;
        let tl = name(t.tail, "entity", vocab.entity_name(t.tail))?;
        writeln!(out, "{h}\t{r}\t{tl}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TripleStore {
    pub train: Vec<Triple>,
    pub valid: Vec<Triple>,
    pub test: Vec<Triple>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" | "validation" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        })
    }
}

impl TripleStore {
    pub fn split(&self, split: Split) -> &[Triple] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    pub fn all(&self) -> impl Iterator<Item = &Triple> {
        self.train.iter().chain(&self.valid).chain(&self.test)
    }

    /// Checks id ranges and per-split uniqueness.
    pub fn validate(&self, num_entities: usize, num_relations: usize) -> Result<()> {
        for (name, split) in [("train", &self.train), ("valid", &self.valid), ("test", &self.test)] {
            let mut seen = BTreeSet::new();
            for t in split {
                if t.head >= num_entities || t.tail >= num_entities || t.relation >= num_relations {
                    return Err(Error::Data(format!("{name} triple {t:?} has an out-of-range id")));
                }
                if !seen.insert(*t) {
                    return Err(Error::Data(format!("{name} contains duplicate triple {t:?}")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub entities: usize,
    pub relations: usize,
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

/// Published statistics for the standard multimodal benchmarks.
pub const KNOWN_DATASETS: &[(&str, DatasetStats)] = &[
    (
        "DB15K",
        DatasetStats {
            entities: 14_777,
            relations: 279,
            train: 69_319,
            valid: 9_903,
            test: 19_806,
        },
    ),
    (
        "FB15K",
        DatasetStats {
            entities: 14_951,
            relations: 1_345,
            train: 414_549,
            valid: 59_221,
            test: 118_443,
        },
    ),
    (
        "YAGO15K",
        DatasetStats {
            entities: 15_283,
            relations: 32,
            train: 86_020,
            valid: 12_289,
            test: 24_577,
        },
    ),
    (
        "FB15K-237",
        DatasetStats {
            entities: 14_541,
            relations: 237,
            train: 272_115,
            valid: 17_535,
            test: 20_466,
        },
    ),
];

pub fn known_stats(name: &str) -> Option<DatasetStats> {
    let norm = |s: &str| s.to_ascii_uppercase().replace(['_', ' '], "-");
    let key = norm(name);
    KNOWN_DATASETS
        .iter()
        .find(|(n, _)| norm(n) == key || norm(n).replace('-', "") == key.replace('-', ""))
        .map(|(_, s)| *s)
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub name: String,
    pub vocab: Vocab,
    pub triples: TripleStore,
}

impl Dataset {
    /// Loads `train.txt`, `valid.txt`, `test.txt` from `dir`.
    ///
    /// With `entities.txt` and `relations.txt` present the manifests fix the
    /// id space and every split is read in reuse mode. Otherwise the
    /// vocabulary is built from the train split and valid/test must not
    /// introduce new names.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let ent_path = dir.join(ENTITY_MANIFEST);
        let rel_path = dir.join(RELATION_MANIFEST);
        let (mut vocab, train_mode) = if ent_path.exists() && rel_path.exists() {
            let vocab = Vocab::from_names(read_manifest(&ent_path)?, read_manifest(&rel_path)?)?;
            (vocab, VocabMode::Reuse)
        } else {
            (Vocab::new(), VocabMode::Build)
        };
        let train = read_triples(&dir.join(TRAIN_FILE), &mut vocab, train_mode)?;
        let valid = read_optional(&dir.join(VALID_FILE), &mut vocab)?;
        let test = read_optional(&dir.join(TEST_FILE), &mut vocab)?;
        let name = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        Ok(Self {
            name,
            vocab,
            triples: TripleStore { train, valid, test },
        })
    }

    pub fn num_entities(&self) -> usize {
        self.vocab.num_entities()
    }

    pub fn num_relations(&self) -> usize {
        self.vocab.num_relations()
    }

    pub fn stats(&self) -> DatasetStats {
        DatasetStats {
            entities: self.num_entities(),
            relations: self.num_relations(),
            train: self.triples.train.len(),
            valid: self.triples.valid.len(),
            test: self.triples.test.len(),
        }
    }

    /// Writes splits and manifests so that [`Dataset::load_dir`] reproduces this dataset.
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_manifest(&dir.join(ENTITY_MANIFEST), self.vocab.entities())?;
        write_manifest(&dir.join(RELATION_MANIFEST), self.vocab.relations())?;
        write_triples(&dir.join(TRAIN_FILE), &self.triples.train, &self.vocab)?;
        write_triples(&dir.join(VALID_FILE), &self.triples.valid, &self.vocab)?;
        write_triples(&dir.join(TEST_FILE), &self.triples.test, &self.vocab)
    }
}

fn read_optional(path: &Path, vocab: &mut Vocab) -> Result<Vec<Triple>> {
    if path.exists() {
        read_triples(path, vocab, VocabMode::Reuse)
    } else {
        Ok(Vec::new())
    }
}

/// Shuffles `triples` with `rng` and cuts 70% / 10% / 20% train / valid / test.
pub fn split_70_10_20<R: Rng + ?Sized>(mut triples: Vec<Triple>, rng: &mut R) -> TripleStore {
    triples.shuffle(rng);
    let n = triples.len();
    let n_train = n * 7 / 10;
    let n_valid = n / 10;
    let test = triples.split_off(n_train + n_valid);
    let valid = triples.split_off(n_train);
    TripleStore {
        train: triples,
        valid,
        test,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Modality {
    #[serde(rename = "s")]
    Structural,
    #[serde(rename = "v")]
    Visual,
    #[serde(rename = "t")]
    Textual,
    #[serde(rename = "m")]
    Multimodal,
}

impl Modality {
    pub const ALL: [Modality; 4] = [
        Modality::Structural,
        Modality::Visual,
        Modality::Textual,
        Modality::Multimodal,
    ];
    pub const ENCODED: [Modality; 3] = [Modality::Structural, Modality::Visual, Modality::Textual];

    pub fn tag(self) -> &'static str {
        match self {
            Modality::Structural => "s",
            Modality::Visual => "v",
            Modality::Textual => "t",
            Modality::Multimodal => "m",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Modality::Structural => "structural",
            Modality::Visual => "visual",
            Modality::Textual => "textual",
            Modality::Multimodal => "multimodal",
        }
    }
}

impl std::str::FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "s" | "struct" | "structural" => Ok(Modality::Structural),
            "v" | "visual" | "image" => Ok(Modality::Visual),
            "t" | "text" | "textual" => Ok(Modality::Textual),
            "m" | "multimodal" | "fused" => Ok(Modality::Multimodal),
            other => Err(Error::Config(format!("unknown modality {other:?}"))),
        }
    }
}

impl std::fmt::Display for Modality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

/// How CSV rows left empty (entities without an image or description) are filled.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MissingFill {
    #[default]
    Zero,
    Mean,
}

/// Frozen per-entity features for one encoded modality, row `i` = entity `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModalityFeatures {
    pub modality: Modality,
    pub matrix: Tensor,
}

impl ModalityFeatures {
    pub fn new(modality: Modality, matrix: Tensor) -> Result<Self> {
        if modality == Modality::Multimodal {
            return Err(Error::Data("multimodal features are computed, not loaded".into()));
        }
        let (rows, _) = matrix.dims2()?;
        if let Some(i) = (0..rows).find(|&i| matrix.row(i).iter().any(|v| !v.is_finite())) {
            return Err(Error::Data(format!(
                "{} features: non-finite value in row {i}",
                modality.name()
            )));
        }
        Ok(Self { modality, matrix })
    }

    pub fn num_rows(&self) -> usize {
        self.matrix.rows()
    }

    pub fn width(&self) -> usize {
        self.matrix.cols()
    }
}

/// Loads a feature file (binary `MMFT` or CSV) and checks it has one row per entity.
pub fn load_features(
    path: &Path,
    modality: Modality,
    num_entities: usize,
    fill: MissingFill,
) -> Result<ModalityFeatures> {
    let matrix = read_feature_matrix(path, fill)?;
    if matrix.rows() != num_entities {
        return Err(Error::Data(format!(
            "{}: {} features have {} rows but the vocabulary has {} entities",
            path.display(),
            modality.name(),
            matrix.rows(),
            num_entities
        )));
    }
    ModalityFeatures::new(modality, matrix).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

/// Reads a feature matrix, detecting the binary format by its magic bytes.
pub fn read_feature_matrix(path: &Path, fill: MissingFill) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(FEATURE_MAGIC) {
        decode_binary_features(&bytes).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
    } else {
        parse_csv_features(&bytes, path, fill)
    }
}

pub fn decode_binary_features(bytes: &[u8]) -> Result<Tensor> {
    let mut r = bytes;
    let mut magic = [0u8; 4];
    let mut word = [0u8; 4];
    let short = |_| Error::Data("truncated feature header".into());
    r.read_exact(&mut magic).map_err(short)?;
    if &magic != FEATURE_MAGIC {
        return Err(Error::Data("bad feature magic".into()));
    }
    let mut next_u32 = |r: &mut &[u8]| -> Result<u32> {
        r.read_exact(&mut word).map_err(short)?;
        Ok(u32::from_le_bytes(word))
    };
    let version = next_u32(&mut r)?;
    if version != FEATURE_VERSION {
        return Err(Error::Data(format!("unsupported feature version {version}")));
    }
    let rows = next_u32(&mut r)? as usize;
    let cols = next_u32(&mut r)? as usize;
    let expected = rows * cols * 4;
    if r.len() != expected {
        return Err(Error::Data(format!(
            "feature payload is {} bytes, header promises {rows}×{cols} = {expected}",
            r.len()
        )));
    }
    let mut data = Vec::with_capacity(rows * cols);
    for (i, chunk) in r.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        if !v.is_finite() {
            return Err(Error::Data(format!(
                "non-finite feature value in row {}",
                i / cols.max(1)
            )));
        }
        data.push(f64::from(v));
    }
    Tensor::new(&[rows, cols], data)
}

pub fn encode_binary_features(matrix: &Tensor) -> Result<Vec<u8>> {
    let (rows, cols) = matrix.dims2()?;
    let mut out = Vec::with_capacity(16 + rows * cols * 4);
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    out.extend_from_slice(&(rows as u32).to_le_bytes());
    out.extend_from_slice(&(cols as u32).to_le_bytes());
    for &v in matrix.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn write_features(path: &Path, matrix: &Tensor) -> Result<()> {
    let bytes = encode_binary_features(matrix)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn parse_csv_features(bytes: &[u8], path: &Path, fill: MissingFill) -> Result<Tensor> {
    let text = std::str::from_utf8(bytes)
        .map_err(|_| Error::Data(format!("{}: neither MMFT nor UTF-8 CSV", path.display())))?;
    let mut rows: Vec<Option<Vec<f64>>> = Vec::new();
    let mut width = None;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            rows.push(None);
            continue;
        }
        let row = line
            .split(',')
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse {
                path: path.to_owned(),
                line: i + 1,
                detail: e.to_string(),
            })?;
        if let Some(bad) = row.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "{}: non-finite value in row {i}, column {bad}",
                path.display()
            )));
        }
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(Error::Parse {
                    path: path.to_owned(),
                    line: i + 1,
                    detail: format!("expected {w} columns, found {}", row.len()),
                })
            }
            _ => {}
        }
        rows.push(Some(row));
    }
    let width = width.unwrap_or(0);
    let present: Vec<&Vec<f64>> = rows.iter().flatten().collect();
    let filler = match fill {
        MissingFill::Zero => vec![0.0; width],
        MissingFill::Mean => {
            let mut mean = vec![0.0; width];
            for r in &present {
                mean.iter_mut().zip(r.iter()).for_each(|(m, v)| *m += v);
            }
            let n = present.len().max(1) as f64;
            mean.iter_mut().for_each(|m| *m /= n);
            mean
        }
    };
    let n = rows.len();
    let data = rows
        .into_iter()
        .flat_map(|r| r.unwrap_or_else(|| filler.clone()))
        .collect();
    Tensor::new(&[n, width], data)
}

/// Per-direction answer sets keyed by the known entity and relation.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DirectionalIndex {
    tails: BTreeMap<(usize, usize), BTreeSet<usize>>,
    heads: BTreeMap<(usize, usize), BTreeSet<usize>>,
}

impl DirectionalIndex {
    fn insert(&mut self, t: &Triple) {
        self.tails.entry((t.head, t.relation)).or_default().insert(t.tail);
        self.heads.entry((t.tail, t.relation)).or_default().insert(t.head);
    }

    /// Known answers for a query.
    pub fn answers(&self, q: &Query) -> Option<&BTreeSet<usize>> {
        let key = (q.entity, q.relation);
        match q.direction {
            Direction::Tail => self.tails.get(&key),
            Direction::Head => self.heads.get(&key),
        }
    }

    pub fn contains(&self, t: &Triple) -> bool {
        self.tails
            .get(&(t.head, t.relation))
            .is_some_and(|s| s.contains(&t.tail))
    }

    pub fn tail_buckets(&self) -> &BTreeMap<(usize, usize), BTreeSet<usize>> {
        &self.tails
    }

    pub fn head_buckets(&self) -> &BTreeMap<(usize, usize), BTreeSet<usize>> {
        &self.heads
    }

    /// Every distinct query: tail queries in key order, then head queries.
    pub fn queries(&self) -> Vec<Query> {
        self.tails
            .keys()
            .map(|&(h, r)| Query::tail(h, r))
            .chain(self.heads.keys().map(|&(t, r)| Query::head(t, r)))
            .collect()
    }
}

/// Multi-label 1-vs-all targets from the training split.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TargetsIndex(DirectionalIndex);

impl TargetsIndex {
    pub fn build(train: &[Triple]) -> Self {
        let mut idx = DirectionalIndex::default();
        train.iter().for_each(|t| idx.insert(t));
        Self(idx)
    }
}

impl std::ops::Deref for TargetsIndex {
    type Target = DirectionalIndex;
    fn deref(&self) -> &DirectionalIndex {
        &self.0
    }
}

/// Every known true triple across train, valid and test, for filtered ranking.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FilterIndex(DirectionalIndex);

impl FilterIndex {
    pub fn build(store: &TripleStore) -> Self {
        let mut idx = DirectionalIndex::default();
        store.all().for_each(|t| idx.insert(t));
        Self(idx)
    }
}

impl std::ops::Deref for FilterIndex {
    type Target = DirectionalIndex;
    fn deref(&self) -> &DirectionalIndex {
        &self.0
    }
}

/// Replaces the head or the tail (chosen uniformly) of each triple with a
/// uniformly drawn different entity. Corruptions are not checked against
/// the set of true triples.
pub fn corrupt_triples<R: Rng + ?Sized>(batch: &[Triple], num_entities: usize, rng: &mut R) -> Result<Vec<Triple>> {
    if num_entities < 2 {
        return Err(Error::Data(format!(
            "cannot corrupt triples with {num_entities} entities"
        )));
    }
    let draw_other = |orig: usize, rng: &mut R| {
        let x = rng.gen_range(0..num_entities - 1);
        if x >= orig {
            x + 1
        } else {
            x
        }
    };
    Ok(batch
        .iter()
        .map(|t| {
            if rng.gen_bool(0.5) {
                Triple::new(draw_other(t.head, rng), t.relation, t.tail)
            } else {
                Triple::new(t.head, t.relation, draw_other(t.tail, rng))
            }
        })
        .collect())
}

/// Standard on-disk location of a modality's feature file inside a dataset directory.
pub fn default_feature_path(dir: &Path, modality: Modality) -> PathBuf {
    let stem = match modality {
        Modality::Structural => "struct",
        Modality::Visual => "visual",
        Modality::Textual => "text",
        Modality::Multimodal => "multimodal",
    };
    dir.join(format!("{stem}.mmft"))
}
