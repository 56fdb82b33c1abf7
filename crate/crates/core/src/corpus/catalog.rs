//! Item content: token vocabularies and per-item feature sets.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{CorpusError, TransactionLog};

pub const UNKNOWN_TOKEN: &str = "<unk>";
pub const UNKNOWN_TOKEN_ID: u32 = 0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureSetKind {
    /// Ordered token sequence, e.g. a title.
    Sequential,
    /// Unordered token set, e.g. aspects or tags.
    Bag,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSetSpec {
    pub name: String,
    pub kind: FeatureSetKind,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub sets: Vec<FeatureSetSpec>,
}

impl FeatureSchema {
    pub fn new(sets: impl IntoIterator<Item = (&'static str, FeatureSetKind)>) -> Self {
        FeatureSchema {
            sets: sets
                .into_iter()
                .map(|(name, kind)| FeatureSetSpec {
                    name: name.to_string(),
                    kind,
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.sets.iter().position(|s| s.name == name)
    }

    /// Index of the first sequential set, if any.
    pub fn first_sequential(&self) -> Option<usize> {
        self.sets.iter().position(|s| s.kind == FeatureSetKind::Sequential)
    }
}

/// Reads a schema sidecar: one `set_name<TAB>sequential|bag` line per set.
pub fn read_schema<R: BufRead>(reader: R) -> Result<FeatureSchema, CorpusError> {
    let mut sets = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (name, kind) = line.split_once('\t').ok_or_else(|| CorpusError::Parse {
            line: i + 1,
            message: "expected `name<TAB>kind`".into(),
        })?;
        let kind = match kind.trim() {
            "sequential" => FeatureSetKind::Sequential,
            "bag" => FeatureSetKind::Bag,
            other => {
                return Err(CorpusError::Parse {
                    line: i + 1,
                    message: format!("unknown set kind {other:?}"),
                })
            }
        };
        if sets.iter().any(|s: &FeatureSetSpec| s.name == name) {
            return Err(CorpusError::Parse {
                line: i + 1,
                message: format!("duplicate set {name:?}"),
            });
        }
        sets.push(FeatureSetSpec {
            name: name.to_string(),
            kind,
        });
    }
    Ok(FeatureSchema { sets })
}

pub fn write_schema<W: Write>(mut w: W, schema: &FeatureSchema) -> std::io::Result<()> {
    for s in &schema.sets {
        let kind = match s.kind {
            FeatureSetKind::Sequential => "sequential",
            FeatureSetKind::Bag => "bag",
        };
        writeln!(w, "{}\t{}", s.name, kind)?;
    }
    Ok(())
}

/// One line of a catalog file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CatalogRecord {
    pub item_id: String,
    pub features: BTreeMap<String, Vec<String>>,
}

pub fn read_catalog<R: BufRead>(reader: R) -> Result<Vec<CatalogRecord>, CorpusError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_catalog<W: Write>(mut w: W, records: &[CatalogRecord]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Token-to-id map with the unknown token reserved at id 0.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Vocabulary::new()
    }
}

impl Vocabulary {
    pub fn new() -> Self {
        Vocabulary::from_tokens(vec![UNKNOWN_TOKEN.to_string()])
    }

    /// Rebuilds a vocabulary from its id-ordered token list.
    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Vocabulary { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 1
    }

    /// Id of `token`, or [`UNKNOWN_TOKEN_ID`].
    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNKNOWN_TOKEN_ID)
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    fn get_or_insert(&mut self, token: &str) -> u32 {
        if let Some(&id) = self.index.get(token) {
            return id;
        }
        let id = self.tokens.len() as u32;
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), id);
        id
    }
}

/// Token ids of one item, one list per schema set, in schema order.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemFeatures {
    pub sets: Vec<Vec<u32>>,
}

impl ItemFeatures {
    pub fn new(sets: Vec<Vec<u32>>) -> Self {
        ItemFeatures { sets }
    }
}

/// Featurized items plus the vocabularies that produced them.
///
/// Vocabularies grow while items are added and stop growing once the catalog
/// is frozen; afterwards unseen tokens map to the unknown id.
#[derive(Clone, Debug)]
pub struct ItemCatalog {
    schema: FeatureSchema,
    vocabularies: Vec<Vocabulary>,
    names: Vec<String>,
    titles: Vec<String>,
    features: Vec<ItemFeatures>,
    index: HashMap<String, usize>,
    frozen: bool,
}

impl ItemCatalog {
    pub fn new(schema: FeatureSchema) -> Self {
        let vocabularies = vec![Vocabulary::new(); schema.len()];
        ItemCatalog {
            schema,
            vocabularies,
            names: Vec::new(),
            titles: Vec::new(),
            features: Vec::new(),
            index: HashMap::new(),
            frozen: false,
        }
    }

    /// Empty catalog over fixed vocabularies, e.g. those stored with a model.
    pub fn with_vocabularies(schema: FeatureSchema, vocabularies: Vec<Vocabulary>) -> Self {
        let mut cat = ItemCatalog::new(schema);
        cat.vocabularies = vocabularies;
        cat.frozen = true;
        cat
    }

    /// Adds every record, growing vocabularies, then freezes.
    pub fn build<'a, I>(schema: FeatureSchema, records: I) -> Result<Self, CorpusError>
    where
        I: IntoIterator<Item = &'a CatalogRecord>,
    {
        let mut cat = ItemCatalog::new(schema);
        for r in records {
            cat.insert(r)?;
        }
        cat.freeze();
        Ok(cat)
    }

    /// Like [`ItemCatalog::build`], but only items accepted by `in_vocab`
    /// contribute tokens; the rest are added afterwards with unseen tokens
    /// mapped to the unknown id.
    pub fn build_with_vocab_from<'a, I>(
        schema: FeatureSchema,
        records: I,
        in_vocab: impl Fn(&str) -> bool,
    ) -> Result<Self, CorpusError>
    where
        I: IntoIterator<Item = &'a CatalogRecord>,
    {
        let (known, rest): (Vec<_>, Vec<_>) = records.into_iter().partition(|r| in_vocab(&r.item_id));
        let mut cat = ItemCatalog::build(schema, known)?;
        for r in rest {
            cat.insert(r)?;
        }
        Ok(cat)
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Maps a record's raw tokens to ids without touching the vocabularies.
    pub fn tokenize(&self, record: &CatalogRecord) -> Result<ItemFeatures, CorpusError> {
        self.check_schema(record)?;
        let sets = self
            .schema
            .sets
            .iter()
            .zip(&self.vocabularies)
            .map(|(spec, vocab)| {
                record
                    .features
                    .get(&spec.name)
                    .map(|toks| toks.iter().map(|t| vocab.id(t)).collect())
                    .unwrap_or_default()
            })
            .collect();
        Ok(ItemFeatures { sets })
    }

    fn check_schema(&self, record: &CatalogRecord) -> Result<(), CorpusError> {
        match record.features.keys().find(|k| self.schema.position(k).is_none()) {
            Some(set) => Err(CorpusError::Schema {
                item: record.item_id.clone(),
                set: set.clone(),
            }),
            None => Ok(()),
        }
    }

    /// Adds an item and returns its catalog position.
    pub fn insert(&mut self, record: &CatalogRecord) -> Result<usize, CorpusError> {
        self.check_schema(record)?;
        if self.index.contains_key(&record.item_id) {
            return Err(CorpusError::Invalid(format!(
                "duplicate catalog item {}",
                record.item_id
            )));
        }
        let features = if self.frozen {
            self.tokenize(record)?
        } else {
            let sets = self
                .schema
                .sets
                .iter()
                .zip(self.vocabularies.iter_mut())
                .map(|(spec, vocab)| {
                    record
                        .features
                        .get(&spec.name)
                        .map(|toks| toks.iter().map(|t| vocab.get_or_insert(t)).collect())
                        .unwrap_or_default()
                })
                .collect();
            ItemFeatures { sets }
        };
        let title_set = self.schema.first_sequential().unwrap_or(0);
        let title = self
            .schema
            .sets
            .get(title_set)
            .and_then(|s| record.features.get(&s.name))
            .map(|t| t.join(" "))
            .unwrap_or_default();
        let pos = self.names.len();
        self.names.push(record.item_id.clone());
        self.titles.push(title);
        self.features.push(features);
        self.index.insert(record.item_id.clone(), pos);
        Ok(pos)
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn vocabularies(&self) -> &[Vocabulary] {
        &self.vocabularies
    }

    pub fn vocab_sizes(&self) -> Vec<usize> {
        self.vocabularies.iter().map(Vocabulary::len).collect()
    }

    /// Token id in set `set`, or the unknown id.
    pub fn lookup_token(&self, set: usize, token: &str) -> u32 {
        self.vocabularies[set].id(token)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn position(&self, item: &str) -> Option<usize> {
        self.index.get(item).copied()
    }

    pub fn name(&self, pos: usize) -> &str {
        &self.names[pos]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Raw tokens of the first sequential set, space-joined.
    pub fn title(&self, pos: usize) -> &str {
        &self.titles[pos]
    }

    pub fn features(&self, pos: usize) -> &ItemFeatures {
        &self.features[pos]
    }

    pub fn get(&self, item: &str) -> Option<&ItemFeatures> {
        self.position(item).map(|p| &self.features[p])
    }

    /// Features aligned with the log's item ids.
    pub fn features_for_log(&self, log: &TransactionLog) -> Result<Vec<ItemFeatures>, CorpusError> {
        log.item_names()
            .iter()
            .map(|name| {
                self.get(name)
                    .cloned()
                    .ok_or_else(|| CorpusError::UnknownItem(name.clone()))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> FeatureSchema {
        FeatureSchema::new([("title", FeatureSetKind::Sequential), ("aspects", FeatureSetKind::Bag)])
    }

    fn record(id: &str, title: &str) -> CatalogRecord {
        let mut features = BTreeMap::new();
        features.insert(
            "title".to_string(),
            title.split_whitespace().map(String::from).collect(),
        );
        CatalogRecord {
            item_id: id.to_string(),
            features,
        }
    }

    #[test]
    fn first_seen_dense_ids() {
        let mut cat = ItemCatalog::new(schema());
        cat.insert(&record("a", "red shoe")).unwrap();
        assert_eq!(cat.vocabularies()[0].tokens(), &["<unk>", "red", "shoe"]);
        assert_eq!(cat.get("a").unwrap().sets[0], vec![1, 2]);
        assert!(cat.get("a").unwrap().sets[1].is_empty());

        cat.insert(&record("b", "red hat")).unwrap();
        assert_eq!(cat.get("b").unwrap().sets[0], vec![1, 3]);
    }

    #[test]
    fn frozen_lookup_yields_unknown() {
        let cat = ItemCatalog::build(schema(), &[record("a", "red shoe")]).unwrap();
        assert_eq!(cat.lookup_token(0, "blue"), UNKNOWN_TOKEN_ID);
        let mut cat = cat;
        cat.insert(&record("b", "blue shoe")).unwrap();
        assert_eq!(cat.get("b").unwrap().sets[0], vec![0, 2]);
        assert_eq!(cat.vocabularies()[0].len(), 3);
    }

    #[test]
    fn unknown_set_is_schema_error() {
        let mut r = record("a", "x");
        r.features.insert("color".into(), vec!["red".into()]);
        let mut cat = ItemCatalog::new(schema());
        assert!(matches!(cat.insert(&r), Err(CorpusError::Schema { .. })));
    }

    #[test]
    fn schema_file_roundtrip() {
        let mut buf = Vec::new();
        write_schema(&mut buf, &schema()).unwrap();
        assert_eq!(
            String::from_utf8(buf.clone()).unwrap(),
            "title\tsequential\naspects\tbag\n"
        );
        assert_eq!(read_schema(buf.as_slice()).unwrap(), schema());
        assert!(read_schema("title\tlist\n".as_bytes()).is_err());
    }

    #[test]
    fn catalog_file_parse() {
        let line = r#"{"item_id":"i1","features":{"title":["red","shoe"]}}"#;
        let recs = read_catalog(line.as_bytes()).unwrap();
        assert_eq!(recs[0], record("i1", "red shoe"));
        assert!(matches!(
            read_catalog("{\"item\":1}\n".as_bytes()),
            Err(CorpusError::Parse { line: 1, .. })
        ));
    }
}
