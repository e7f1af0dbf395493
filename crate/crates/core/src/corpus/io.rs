use super::*;
use crate::retrieval::CategoryPredictor;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

pub const ENTITIES_FILE: &str = "entities.jsonl";
pub const BEHAVIOR_FILE: &str = "behavior.tsv";
pub const SEARCH_FILE: &str = "search.tsv";
pub const INSTANCES_FILE: &str = "instances.jsonl";

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
enum EntityLine {
    Category {
        key: String,
    },
    User {
        key: String,
        #[serde(default)]
        continuous: Vec<f64>,
    },
    Item {
        key: String,
        title: Vec<String>,
        category: String,
        #[serde(default)]
        discrete: Vec<(u32, u32)>,
        #[serde(default)]
        continuous: Vec<f64>,
    },
    Query {
        key: String,
        text: Vec<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        top_categories: Option<Vec<String>>,
        #[serde(default)]
        discrete: Vec<(u32, u32)>,
        #[serde(default)]
        continuous: Vec<f64>,
    },
    Scenario {
        key: String,
        categories: Vec<String>,
        keywords: Vec<String>,
    },
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceLine {
    uid: String,
    qid: String,
    label: u8,
    context: ContextFeatures,
    decision_time: Timestamp,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn malformed(path: &Path, line: usize, reason: impl Into<String>) -> CorpusError {
    CorpusError::MalformedLine {
        file: path.display().to_string(),
        line,
        reason: reason.into(),
    }
}

/// Non-blank lines with 1-based line numbers. Errors with `EmptyFile` when none.
fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if !line.trim().is_empty() {
            out.push((n + 1, line));
        }
    }
    if out.is_empty() {
        return Err(CorpusError::EmptyFile(path.to_path_buf()));
    }
    Ok(out)
}

#[derive(Default)]
struct KeyMap {
    keys: Vec<String>,
    ids: HashMap<String, u32>,
}

impl KeyMap {
    fn insert_new(&mut self, key: &str) -> Option<u32> {
        if self.ids.contains_key(key) {
            return None;
        }
        let id = self.keys.len() as u32;
        self.keys.push(key.to_string());
        self.ids.insert(key.to_string(), id);
        Some(id)
    }

    fn intern(&mut self, key: &str) -> u32 {
        match self.ids.get(key) {
            Some(&id) => id,
            None => self.insert_new(key).expect("fresh key"),
        }
    }

    fn get(&self, kind: &'static str, key: &str) -> Result<u32> {
        self.ids.get(key).copied().ok_or_else(|| CorpusError::UnknownId {
            kind,
            key: key.to_string(),
        })
    }
}

/// Reads the three corpus files. Records referencing unknown entities are rejected.
pub fn ingest(
    search_log_path: &Path,
    behavior_log_path: &Path,
    entities_path: &Path,
) -> Result<Corpus> {
    let entity_lines = read_lines(entities_path)?;
    let mut parsed = Vec::with_capacity(entity_lines.len());
    for (n, line) in &entity_lines {
        let entity: EntityLine = serde_json::from_str(line)
            .map_err(|e| malformed(entities_path, *n, e.to_string()))?;
        parsed.push((*n, entity));
    }

    // First pass: assign dense ids per kind in order of appearance.
    let mut users = KeyMap::default();
    let mut items = KeyMap::default();
    let mut queries = KeyMap::default();
    let mut categories = KeyMap::default();
    let mut scenarios = KeyMap::default();
    for (n, entity) in &parsed {
        let (map, key) = match entity {
            EntityLine::Category { key } => (&mut categories, key),
            EntityLine::User { key, .. } => (&mut users, key),
            EntityLine::Item { key, .. } => (&mut items, key),
            EntityLine::Query { key, .. } => (&mut queries, key),
            EntityLine::Scenario { key, .. } => (&mut scenarios, key),
        };
        if map.insert_new(key).is_none() {
            return Err(malformed(entities_path, *n, format!("duplicate key `{key}`")));
        }
    }

    // Second pass: resolve references. Words are interned items -> queries -> scenarios.
    let mut words = KeyMap::default();
    let mut user_rows = Vec::with_capacity(users.keys.len());
    let mut item_rows = Vec::with_capacity(items.keys.len());
    let mut query_rows = Vec::with_capacity(queries.keys.len());
    let mut scenario_rows = Vec::with_capacity(scenarios.keys.len());
    let mut pending_top: Vec<Option<Vec<CategoryId>>> = Vec::new();

    let check_dim = |n: usize, want: &mut Option<usize>, got: usize, kind: &str| {
        match *want {
            Some(d) if d != got => Err(malformed(
                entities_path,
                n,
                format!("{kind} continuous features have {got} dims, expected {d}"),
            )),
            _ => {
                *want = Some(got);
                Ok(())
            }
        }
    };
    let check_finite = |n: usize, xs: &[f64]| {
        if xs.iter().all(|x| x.is_finite()) {
            Ok(())
        } else {
            Err(malformed(entities_path, n, "non-finite continuous feature"))
        }
    };
    let (mut user_dim, mut item_dim, mut query_dim) = (None, None, None);

    for (n, entity) in parsed.iter().filter(|(_, e)| matches!(e, EntityLine::User { .. })) {
        if let EntityLine::User { continuous, .. } = entity {
            check_dim(*n, &mut user_dim, continuous.len(), "user")?;
            check_finite(*n, continuous)?;
            user_rows.push(User {
                id: UserId(user_rows.len() as u32),
                continuous_feats: continuous.clone(),
            });
        }
    }
    for (n, entity) in parsed.iter().filter(|(_, e)| matches!(e, EntityLine::Item { .. })) {
        if let EntityLine::Item {
            title,
            category,
            discrete,
            continuous,
            ..
        } = entity
        {
            if title.is_empty() {
                return Err(malformed(entities_path, *n, "item title must be non-empty"));
            }
            check_dim(*n, &mut item_dim, continuous.len(), "item")?;
            check_finite(*n, continuous)?;
            item_rows.push(Item {
                id: ItemId(item_rows.len() as u32),
                title_tokens: title.iter().map(|w| WordId(words.intern(w))).collect(),
                category: CategoryId(categories.get("category", category)?),
                discrete_feats: discrete.clone(),
                continuous_feats: continuous.clone(),
            });
        }
    }
    for (n, entity) in parsed.iter().filter(|(_, e)| matches!(e, EntityLine::Query { .. })) {
        if let EntityLine::Query {
            text,
            top_categories,
            discrete,
            continuous,
            ..
        } = entity
        {
            if text.is_empty() {
                return Err(malformed(entities_path, *n, "query text must be non-empty"));
            }
            check_dim(*n, &mut query_dim, continuous.len(), "query")?;
            check_finite(*n, continuous)?;
            let top = match top_categories {
                None => None,
                Some(cats) if cats.is_empty() || cats.len() > 3 => {
                    return Err(malformed(entities_path, *n, "top_categories must list 1-3 ids"))
                }
                Some(cats) => Some(
                    cats.iter()
                        .map(|c| categories.get("category", c).map(CategoryId))
                        .collect::<Result<Vec<_>>>()?,
                ),
            };
            pending_top.push(top);
            query_rows.push(Query {
                id: QueryId(query_rows.len() as u32),
                text_tokens: text.iter().map(|w| WordId(words.intern(w))).collect(),
                top_categories: [CategoryId(0); 3],
                discrete_feats: discrete.clone(),
                continuous_feats: continuous.clone(),
            });
        }
    }
    for (_, entity) in &parsed {
        if let EntityLine::Scenario {
            categories: cats,
            keywords,
            ..
        } = entity
        {
            scenario_rows.push(Scenario {
                id: ScenarioId(scenario_rows.len() as u32),
                categories: cats
                    .iter()
                    .map(|c| categories.get("category", c).map(CategoryId))
                    .collect::<Result<Vec<_>>>()?,
                keywords: keywords.iter().map(|w| WordId(words.intern(w))).collect(),
            });
        }
    }

    if !query_rows.is_empty() && categories.keys.is_empty() {
        return Err(malformed(entities_path, 0, "queries present but no categories"));
    }
    let predictor = CategoryPredictor::new(&item_rows, categories.keys.len());
    for (query, top) in query_rows.iter_mut().zip(pending_top) {
        query.top_categories = match top {
            Some(cats) => pad_by_repetition(&cats),
            None => predictor.predict(&query.text_tokens),
        };
    }

    let events = read_behavior_log(behavior_log_path, &users, &items)?;
    let search_log = read_search_log(search_log_path, &queries, &items)?;

    let dict = Dictionaries {
        users: users.keys,
        items: items.keys,
        queries: queries.keys,
        categories: categories.keys,
        scenarios: scenarios.keys,
        words: words.keys,
    };
    Ok(Corpus::from_parts(
        user_rows,
        item_rows,
        query_rows,
        scenario_rows,
        events,
        search_log,
        dict,
    ))
}

pub(crate) fn pad_by_repetition(cats: &[CategoryId]) -> [CategoryId; 3] {
    let mut out = [cats[0]; 3];
    for (i, slot) in out.iter_mut().enumerate() {
        *slot = cats[i % cats.len()];
    }
    out
}

fn read_behavior_log(path: &Path, users: &KeyMap, items: &KeyMap) -> Result<Vec<BehaviorEvent>> {
    let mut events = Vec::new();
    for (n, line) in read_lines(path)? {
        let fields: Vec<&str> = line.split('\t').collect();
        let [user, item, action, ts] = fields[..] else {
            return Err(malformed(path, n, "expected 4 tab-separated fields"));
        };
        let action = action
            .parse::<u8>()
            .ok()
            .and_then(ActionType::from_code)
            .ok_or_else(|| malformed(path, n, format!("invalid action `{action}`")))?;
        let timestamp: Timestamp = ts
            .parse()
            .map_err(|_| malformed(path, n, format!("invalid timestamp `{ts}`")))?;
        if timestamp <= 0 {
            return Err(malformed(path, n, "timestamp must be positive"));
        }
        events.push(BehaviorEvent {
            user: UserId(users.get("user", user)?),
            item: ItemId(items.get("item", item)?),
            action,
            timestamp,
        });
    }
    Ok(events)
}

fn read_search_log(path: &Path, queries: &KeyMap, items: &KeyMap) -> Result<Vec<SearchLogRecord>> {
    let mut records = Vec::new();
    for (n, line) in read_lines(path)? {
        let Some((query, list)) = line.split_once('\t') else {
            return Err(malformed(path, n, "expected `query<TAB>items`"));
        };
        if list.is_empty() {
            return Err(malformed(path, n, "empty retrieved item list"));
        }
        let mut retrieved = Vec::new();
        for key in list.split(',') {
            let id = ItemId(items.get("item", key)?);
            if retrieved.contains(&id) {
                return Err(malformed(path, n, format!("duplicate item `{key}`")));
            }
            retrieved.push(id);
        }
        records.push(SearchLogRecord {
            query: QueryId(queries.get("query", query)?),
            retrieved_items: retrieved,
        });
    }
    Ok(records)
}

/// Ingests `dir/{search.tsv, behavior.tsv, entities.jsonl}`.
pub fn ingest_dir(dir: &Path) -> Result<Corpus> {
    ingest(
        &dir.join(SEARCH_FILE),
        &dir.join(BEHAVIOR_FILE),
        &dir.join(ENTITIES_FILE),
    )
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(io_err(path))
}

fn words(corpus: &Corpus, tokens: &[WordId]) -> Vec<String> {
    tokens
        .iter()
        .map(|w| corpus.dict.words[w.index()].clone())
        .collect()
}

/// Canonical entities file: categories, users, items, queries, scenarios.
pub fn write_entities(corpus: &Corpus, path: &Path) -> Result<()> {
    let mut out = create(path)?;
    let d = &corpus.dict;
    let mut lines: Vec<EntityLine> = Vec::new();
    lines.extend(d.categories.iter().map(|k| EntityLine::Category { key: k.clone() }));
    lines.extend(corpus.users.iter().map(|u| EntityLine::User {
        key: d.users[u.id.index()].clone(),
        continuous: u.continuous_feats.clone(),
    }));
    lines.extend(corpus.items.iter().map(|i| EntityLine::Item {
        key: d.items[i.id.index()].clone(),
        title: words(corpus, &i.title_tokens),
        category: d.categories[i.category.index()].clone(),
        discrete: i.discrete_feats.clone(),
        continuous: i.continuous_feats.clone(),
    }));
    lines.extend(corpus.queries.iter().map(|q| EntityLine::Query {
        key: d.queries[q.id.index()].clone(),
        text: words(corpus, &q.text_tokens),
        top_categories: Some(
            q.top_categories
                .iter()
                .map(|c| d.categories[c.index()].clone())
                .collect(),
        ),
        discrete: q.discrete_feats.clone(),
        continuous: q.continuous_feats.clone(),
    }));
    lines.extend(corpus.scenarios.iter().map(|s| EntityLine::Scenario {
        key: d.scenarios[s.id.index()].clone(),
        categories: s
            .categories
            .iter()
            .map(|c| d.categories[c.index()].clone())
            .collect(),
        keywords: words(corpus, &s.keywords),
    }));
    for line in lines {
        let json = serde_json::to_string(&line).expect("entity serializes");
        writeln!(out, "{json}").map_err(io_err(path))?;
    }
    out.flush().map_err(io_err(path))
}

pub fn write_behavior_log(corpus: &Corpus, path: &Path) -> Result<()> {
    let mut out = create(path)?;
    for ev in &corpus.events {
        writeln!(
            out,
            "{}\t{}\t{}\t{}",
            corpus.dict.users[ev.user.index()],
            corpus.dict.items[ev.item.index()],
            ev.action.code(),
            ev.timestamp
        )
        .map_err(io_err(path))?;
    }
    out.flush().map_err(io_err(path))
}

pub fn write_search_log(corpus: &Corpus, path: &Path) -> Result<()> {
    let mut out = create(path)?;
    for rec in &corpus.search_log {
        let items: Vec<&str> = rec
            .retrieved_items
            .iter()
            .map(|i| corpus.dict.items[i.index()].as_str())
            .collect();
        writeln!(
            out,
            "{}\t{}",
            corpus.dict.queries[rec.query.index()],
            items.join(",")
        )
        .map_err(io_err(path))?;
    }
    out.flush().map_err(io_err(path))
}

/// Writes the three corpus files into `dir`, creating it if needed.
pub fn write_dir(corpus: &Corpus, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_entities(corpus, &dir.join(ENTITIES_FILE))?;
    write_behavior_log(corpus, &dir.join(BEHAVIOR_FILE))?;
    write_search_log(corpus, &dir.join(SEARCH_FILE))
}

pub fn write_instances(corpus: &Corpus, instances: &[Instance], path: &Path) -> Result<()> {
    let mut out = create(path)?;
    for inst in instances {
        let line = instance_line(corpus, inst);
        writeln!(out, "{line}").map_err(io_err(path))?;
    }
    out.flush().map_err(io_err(path))
}

/// One instance-file line (no trailing newline).
pub(crate) fn instance_line(corpus: &Corpus, inst: &Instance) -> String {
    let line = InstanceLine {
        uid: corpus.dict.users[inst.user.index()].clone(),
        qid: corpus.dict.queries[inst.query.index()].clone(),
        label: inst.label,
        context: inst.context,
        decision_time: inst.decision_time,
    };
    serde_json::to_string(&line).expect("instance serializes")
}

/// Reads an instance file; histories are assembled from the corpus behavior log.
pub fn read_instances(corpus: &Corpus, path: &Path) -> Result<Vec<Instance>> {
    let mut out = Vec::new();
    for (n, line) in read_lines(path)? {
        let rec: InstanceLine =
            serde_json::from_str(&line).map_err(|e| malformed(path, n, e.to_string()))?;
        if rec.label > 1 {
            return Err(malformed(path, n, "label must be 0 or 1"));
        }
        if rec.context.hour_of_day > 23 {
            return Err(malformed(path, n, "hour must be 0-23"));
        }
        let user = corpus.user_by_key(&rec.uid).ok_or(CorpusError::UnknownId {
            kind: "user",
            key: rec.uid.clone(),
        })?;
        let query = corpus.query_by_key(&rec.qid).ok_or(CorpusError::UnknownId {
            kind: "query",
            key: rec.qid.clone(),
        })?;
        out.push(Instance {
            user,
            query,
            label: rec.label,
            context: rec.context,
            history: corpus.history_before(user, rec.decision_time),
            decision_time: rec.decision_time,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        p
    }

    const ENTITIES: &str = r#"{"kind":"category","key":"shoes"}
{"kind":"category","key":"hats"}
{"kind":"user","key":"alice","continuous":[0.5]}
{"kind":"user","key":"bob","continuous":[1.0]}
{"kind":"item","key":"i1","title":["red","shoe"],"category":"shoes","discrete":[],"continuous":[]}
{"kind":"item","key":"i2","title":["wool","hat"],"category":"hats","discrete":[[0,2]],"continuous":[]}
{"kind":"query","key":"q1","text":["shoe"],"discrete":[],"continuous":[]}
{"kind":"scenario","key":"winter","categories":["hats"],"keywords":["wool"]}
"#;

    fn fixture(dir: &Path, behavior: &str, search: &str) -> Result<Corpus> {
        let e = write(dir, ENTITIES_FILE, ENTITIES);
        let b = write(dir, BEHAVIOR_FILE, behavior);
        let s = write(dir, SEARCH_FILE, search);
        ingest(&s, &b, &e)
    }

    #[test]
    fn three_line_behavior_log() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = fixture(
            dir.path(),
            "alice\ti1\t1\t100\nalice\ti2\t2\t200\nbob\ti2\t4\t150\n",
            "q1\ti1,i2\n",
        )
        .unwrap();
        assert_eq!(corpus.events.len(), 3);
        assert_eq!(corpus.events[1].action, ActionType::Purchase);
        assert_eq!(corpus.n_words(), 4);
        assert_eq!(corpus.items[1].category, CategoryId(1));
        // missing query categories come from the title vote, padded with frequent ones
        assert_eq!(corpus.queries[0].top_categories[0], CategoryId(0));
    }

    #[test]
    fn bad_action_is_malformed() {
        let dir = tempfile::tempdir().unwrap();
        let err = fixture(dir.path(), "alice\ti1\t7\t100\n", "q1\ti1\n").unwrap_err();
        assert!(
            matches!(err, CorpusError::MalformedLine { line: 1, .. }),
            "{err}"
        );
    }

    #[test]
    fn unknown_item_in_search_log() {
        let dir = tempfile::tempdir().unwrap();
        let err = fixture(dir.path(), "alice\ti1\t1\t100\n", "q1\ti1,i9\n").unwrap_err();
        assert!(
            matches!(err, CorpusError::UnknownId { kind: "item", ref key } if key == "i9"),
            "{err}"
        );
    }

    #[test]
    fn empty_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let err = fixture(dir.path(), "", "q1\ti1\n").unwrap_err();
        assert!(matches!(err, CorpusError::EmptyFile(_)));
    }

    #[test]
    fn duplicate_retrieved_item_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let err = fixture(dir.path(), "alice\ti1\t1\t100\n", "q1\ti1,i1\n").unwrap_err();
        assert!(matches!(err, CorpusError::MalformedLine { .. }));
    }

    #[test]
    fn instances_get_history_before_decision_time() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = fixture(
            dir.path(),
            "alice\ti1\t1\t100\nalice\ti2\t2\t200\nbob\ti2\t4\t150\n",
            "q1\ti1,i2\n",
        )
        .unwrap();
        let p = write(
            dir.path(),
            INSTANCES_FILE,
            r#"{"uid":"alice","qid":"q1","label":1,"context":{"season":"winter","special_day":false,"hour":3},"decision_time":200}
"#,
        );
        let inst = read_instances(&corpus, &p).unwrap();
        assert_eq!(inst.len(), 1);
        assert_eq!(inst[0].history.len(), 1);
        assert_eq!(inst[0].history[0].timestamp, 100);

        write_instances(&corpus, &inst, &dir.path().join("out.jsonl")).unwrap();
        assert_eq!(
            fs::read_to_string(&p).unwrap(),
            fs::read_to_string(dir.path().join("out.jsonl")).unwrap()
        );
    }
}
