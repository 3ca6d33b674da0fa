//! Multi-behavior interaction store: TSV ingestion, dense re-indexing,
//! leave-one-out splitting and behavior-subset views.
//!
//! Input is one event per line, `user<TAB>item<TAB>behavior`, no header.
//! Users and items receive dense indices in order of first appearance.
//! Without timestamps, a user's "latest" target event is the one whose last
//! occurrence comes latest in the file, so callers should pre-sort by time.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Rng;

/// Number of sampled negatives ranked against each held-out item.
pub const EVAL_NEGATIVES: usize = 99;

/// Users need at least this many target events to be held out for evaluation.
pub const MIN_TARGET_EVENTS: usize = 2;

/// Ordered behavior labels plus the index of the target behavior.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BehaviorSchema {
    names: Vec<String>,
    target: usize,
}

impl BehaviorSchema {
    pub fn new(names: Vec<String>, target: usize) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::Schema("at least one behavior type is required".into()));
        }
        let mut seen = BTreeSet::new();
        for n in &names {
            if n.is_empty() {
                return Err(Error::Schema("behavior labels must be nonempty".into()));
            }
            if !seen.insert(n.as_str()) {
                return Err(Error::Schema(format!("duplicate behavior label {n:?}")));
            }
        }
        if target >= names.len() {
            return Err(Error::Schema(format!(
                "target index {target} out of range for {} behaviors",
                names.len()
            )));
        }
        Ok(BehaviorSchema { names, target })
    }

    /// Builds a schema from labels and the target label, e.g. from
    /// `--behaviors view,cart,buy --target buy`.
    pub fn from_labels<S: AsRef<str>>(labels: &[S], target: &str) -> Result<Self> {
        let names: Vec<String> = labels.iter().map(|s| s.as_ref().trim().to_string()).collect();
        let target_idx = names
            .iter()
            .position(|n| n == target)
            .ok_or_else(|| Error::Schema(format!("target {target:?} is not among the behaviors")))?;
        Self::new(names, target_idx)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn target(&self) -> usize {
        self.target
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.names.iter().position(|n| n == label)
    }
}

/// Sparse binary I×J×L tensor of implicit-feedback events.
#[derive(Clone, Debug, PartialEq)]
pub struct InteractionTensor {
    schema: BehaviorSchema,
    /// `events[user][behavior]` is a sorted, duplicate-free item list.
    events: Vec<Vec<Vec<usize>>>,
    /// Target items per user ordered by their last occurrence in the source.
    target_order: Vec<Vec<usize>>,
    user_ids: Vec<String>,
    item_ids: Vec<String>,
    user_index: HashMap<String, usize>,
    item_index: HashMap<String, usize>,
}

impl InteractionTensor {
    /// Assembles a tensor from per-user, per-behavior item lists. Lists are
    /// sorted and deduplicated; the target order follows ascending item index.
    pub fn from_events(
        schema: BehaviorSchema,
        user_ids: Vec<String>,
        item_ids: Vec<String>,
        mut events: Vec<Vec<Vec<usize>>>,
    ) -> Result<Self> {
        if events.len() != user_ids.len() {
            return Err(Error::Dimension(format!(
                "{} event rows for {} users",
                events.len(),
                user_ids.len()
            )));
        }
        let num_items = item_ids.len();
        for per_user in events.iter_mut() {
            if per_user.len() != schema.len() {
                return Err(Error::Dimension(format!(
                    "{} behavior lists for {} behaviors",
                    per_user.len(),
                    schema.len()
                )));
            }
            for list in per_user.iter_mut() {
                list.sort_unstable();
                list.dedup();
                if list.last().is_some_and(|&j| j >= num_items) {
                    return Err(Error::Dimension("item index out of range".into()));
                }
            }
        }
        let target_order = events.iter().map(|u| u[schema.target()].clone()).collect();
        Self::assemble(schema, events, target_order, user_ids, item_ids)
    }

    fn assemble(
        schema: BehaviorSchema,
        events: Vec<Vec<Vec<usize>>>,
        target_order: Vec<Vec<usize>>,
        user_ids: Vec<String>,
        item_ids: Vec<String>,
    ) -> Result<Self> {
        let user_index = index_map(&user_ids, "user")?;
        let item_index = index_map(&item_ids, "item")?;
        Ok(InteractionTensor {
            schema,
            events,
            target_order,
            user_ids,
            item_ids,
            user_index,
            item_index,
        })
    }

    pub fn schema(&self) -> &BehaviorSchema {
        &self.schema
    }

    pub fn num_users(&self) -> usize {
        self.user_ids.len()
    }

    pub fn num_items(&self) -> usize {
        self.item_ids.len()
    }

    pub fn num_behaviors(&self) -> usize {
        self.schema.len()
    }

    pub fn target(&self) -> usize {
        self.schema.target()
    }

    /// Sorted items the user interacted with under `behavior`.
    pub fn items(&self, user: usize, behavior: usize) -> &[usize] {
        &self.events[user][behavior]
    }

    pub fn behavior_lists(&self, user: usize) -> &[Vec<usize>] {
        &self.events[user]
    }

    pub fn target_items(&self, user: usize) -> &[usize] {
        &self.events[user][self.schema.target()]
    }

    /// Target items in source order (last occurrence wins).
    pub fn target_sequence(&self, user: usize) -> &[usize] {
        &self.target_order[user]
    }

    /// Sorted union of the user's items over every behavior.
    pub fn interacted_any(&self, user: usize) -> Vec<usize> {
        let mut all: Vec<usize> = self.events[user].iter().flatten().copied().collect();
        all.sort_unstable();
        all.dedup();
        all
    }

    pub fn contains(&self, user: usize, item: usize, behavior: usize) -> bool {
        self.events[user][behavior].binary_search(&item).is_ok()
    }

    pub fn num_events(&self) -> usize {
        self.events.iter().flatten().map(Vec::len).sum()
    }

    pub fn user_events(&self, user: usize) -> usize {
        self.events[user].iter().map(Vec::len).sum()
    }

    pub fn user_ids(&self) -> &[String] {
        &self.user_ids
    }

    pub fn item_ids(&self) -> &[String] {
        &self.item_ids
    }

    pub fn user_index(&self, id: &str) -> Option<usize> {
        self.user_index.get(id).copied()
    }

    pub fn item_index(&self, id: &str) -> Option<usize> {
        self.item_index.get(id).copied()
    }

    /// All events as external `(user, item, behavior)` triples.
    pub fn triples(&self) -> BTreeSet<(String, String, String)> {
        let mut out = BTreeSet::new();
        for (u, per_user) in self.events.iter().enumerate() {
            for (b, items) in per_user.iter().enumerate() {
                for &j in items {
                    out.insert((
                        self.user_ids[u].clone(),
                        self.item_ids[j].clone(),
                        self.schema.names()[b].clone(),
                    ));
                }
            }
        }
        out
    }

    /// Writes the tensor back as TSV. Target events are emitted last and in
    /// source order so a reload reproduces the held-out choice.
    pub fn write_tsv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let target = self.schema.target();
        for (u, per_user) in self.events.iter().enumerate() {
            for (b, items) in per_user.iter().enumerate() {
                if b == target {
                    continue;
                }
                for &j in items {
                    writeln!(
                        out,
                        "{}\t{}\t{}",
                        self.user_ids[u],
                        self.item_ids[j],
                        self.schema.names()[b]
                    )?;
                }
            }
            for &j in &self.target_order[u] {
                writeln!(
                    out,
                    "{}\t{}\t{}",
                    self.user_ids[u],
                    self.item_ids[j],
                    self.schema.names()[target]
                )?;
            }
        }
        Ok(())
    }

    pub fn save_tsv(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_tsv(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn index_map(ids: &[String], kind: &str) -> Result<HashMap<String, usize>> {
    let mut map = HashMap::with_capacity(ids.len());
    for (i, id) in ids.iter().enumerate() {
        if map.insert(id.clone(), i).is_some() {
            return Err(Error::Consistency(format!("duplicate {kind} id {id:?}")));
        }
    }
    Ok(map)
}

/// Loads a TSV event file under `schema`.
pub fn load_interactions(path: &Path, schema: &BehaviorSchema) -> Result<InteractionTensor> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_interactions(BufReader::new(file), schema).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

/// Parses TSV events from any reader. Duplicate triples collapse to one.
pub fn read_interactions<R: BufRead>(reader: R, schema: &BehaviorSchema) -> Result<InteractionTensor> {
    let mut user_ids = Vec::new();
    let mut item_ids = Vec::new();
    let mut user_index: HashMap<String, usize> = HashMap::new();
    let mut item_index: HashMap<String, usize> = HashMap::new();
    let mut events: Vec<Vec<BTreeSet<usize>>> = Vec::new();
    // (user, item) -> line of last target occurrence
    let mut target_seen: Vec<HashMap<usize, usize>> = Vec::new();

    for (n, line) in reader.lines().enumerate() {
        let lineno = n + 1;
        let line = line.map_err(|e| Error::io("<input>", e))?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                line: lineno,
                message: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
        }
        let (user, item, label) = (fields[0], fields[1], fields[2]);
        if user.is_empty() || item.is_empty() {
            return Err(Error::Parse {
                line: lineno,
                message: "empty user or item id".into(),
            });
        }
        let behavior = schema.index_of(label).ok_or_else(|| Error::UnknownBehavior {
            line: lineno,
            label: label.to_string(),
        })?;
        let u = *user_index.entry(user.to_string()).or_insert_with(|| {
            user_ids.push(user.to_string());
            events.push(vec![BTreeSet::new(); schema.len()]);
            target_seen.push(HashMap::new());
            user_ids.len() - 1
        });
        let j = *item_index.entry(item.to_string()).or_insert_with(|| {
            item_ids.push(item.to_string());
            item_ids.len() - 1
        });
        events[u][behavior].insert(j);
        if behavior == schema.target() {
            target_seen[u].insert(j, lineno);
        }
    }

    let target_order = target_seen
        .into_iter()
        .map(|seen| {
            let mut by_line: Vec<(usize, usize)> = seen.into_iter().map(|(j, l)| (l, j)).collect();
            by_line.sort_unstable();
            by_line.into_iter().map(|(_, j)| j).collect()
        })
        .collect();
    let events = events
        .into_iter()
        .map(|per_user| per_user.into_iter().map(|s| s.into_iter().collect()).collect())
        .collect();
    InteractionTensor::assemble(schema.clone(), events, target_order, user_ids, item_ids)
}

/// Leave-one-out evaluation split.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalSplit {
    /// Held-out target item per user; `None` for users not evaluated.
    pub held_out: Vec<Option<usize>>,
    /// Sampled negatives per evaluated user (empty otherwise).
    pub negatives: Vec<Vec<usize>>,
    pub seed: u64,
}

impl EvalSplit {
    pub fn evaluated_users(&self) -> impl Iterator<Item = usize> + '_ {
        self.held_out.iter().enumerate().filter_map(|(u, h)| h.map(|_| u))
    }

    pub fn num_evaluated(&self) -> usize {
        self.held_out.iter().filter(|h| h.is_some()).count()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("split serializes")
    }
}

/// Holds out each eligible user's latest target event and samples
/// [`EVAL_NEGATIVES`] never-interacted items (any behavior) for it.
pub fn leave_one_out_split(tensor: &InteractionTensor, seed: u64) -> Result<(InteractionTensor, EvalSplit)> {
    if tensor.num_users() == 0 || tensor.num_events() == 0 {
        return Err(Error::Consistency("cannot split an empty tensor".into()));
    }
    let target = tensor.target();
    let num_items = tensor.num_items();
    let mut rng = Rng::new(seed);
    let mut train = tensor.clone();
    let mut held_out = vec![None; tensor.num_users()];
    let mut negatives = vec![Vec::new(); tensor.num_users()];

    for u in 0..tensor.num_users() {
        let sequence = tensor.target_sequence(u);
        if sequence.len() < MIN_TARGET_EVENTS {
            continue;
        }
        let interacted = tensor.interacted_any(u);
        let allowed: Vec<usize> = (0..num_items)
            .filter(|j| interacted.binary_search(j).is_err())
            .collect();
        if allowed.len() < EVAL_NEGATIVES {
            log::warn!(
                "user {} has only {} non-interacted items; excluded from evaluation",
                tensor.user_ids[u],
                allowed.len()
            );
            continue;
        }
        let item = *sequence.last().expect("nonempty sequence");
        let mut sampled: Vec<usize> = index::sample(&mut rng, allowed.len(), EVAL_NEGATIVES)
            .into_iter()
            .map(|k| allowed[k])
            .collect();
        sampled.sort_unstable();

        let list = &mut train.events[u][target];
        let pos = list.binary_search(&item).expect("held-out item is a target event");
        list.remove(pos);
        train.target_order[u].pop();
        held_out[u] = Some(item);
        negatives[u] = sampled;
    }
    Ok((
        train,
        EvalSplit {
            held_out,
            negatives,
            seed,
        },
    ))
}

/// Restricts the tensor to the behavior indices in `keep`. The target must
/// be kept; it is remapped to its position among the kept behaviors.
pub fn behavior_subset(tensor: &InteractionTensor, keep: &[usize]) -> Result<InteractionTensor> {
    let keep: BTreeSet<usize> = keep.iter().copied().collect();
    if let Some(&bad) = keep.iter().find(|&&b| b >= tensor.num_behaviors()) {
        return Err(Error::InvalidAblation(format!("behavior index {bad} out of range")));
    }
    let target = tensor.target();
    if !keep.contains(&target) {
        return Err(Error::InvalidAblation(format!(
            "behavior subset must keep the target behavior {:?}",
            tensor.schema.names()[target]
        )));
    }
    let kept: Vec<usize> = keep.into_iter().collect();
    let names = kept.iter().map(|&b| tensor.schema.names()[b].clone()).collect();
    let new_target = kept.iter().position(|&b| b == target).expect("target kept");
    let schema = BehaviorSchema::new(names, new_target)?;
    let events = tensor
        .events
        .iter()
        .map(|per_user| kept.iter().map(|&b| per_user[b].clone()).collect())
        .collect();
    InteractionTensor::assemble(
        schema,
        events,
        tensor.target_order.clone(),
        tensor.user_ids.clone(),
        tensor.item_ids.clone(),
    )
}

/// Resolves behavior labels to indices under `schema`.
pub fn behavior_indices<S: AsRef<str>>(schema: &BehaviorSchema, labels: &[S]) -> Result<Vec<usize>> {
    labels
        .iter()
        .map(|l| {
            schema
                .index_of(l.as_ref())
                .ok_or_else(|| Error::InvalidAblation(format!("unknown behavior {:?}", l.as_ref())))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn schema() -> BehaviorSchema {
        BehaviorSchema::from_labels(&["view", "buy"], "buy").unwrap()
    }

    fn parse(text: &str) -> Result<InteractionTensor> {
        read_interactions(Cursor::new(text), &schema())
    }

    #[test]
    fn schema_validation() {
        assert!(BehaviorSchema::new(vec![], 0).is_err());
        assert!(BehaviorSchema::new(vec!["a".into(), "a".into()], 0).is_err());
        assert!(BehaviorSchema::new(vec!["a".into(), "".into()], 0).is_err());
        assert!(BehaviorSchema::new(vec!["a".into()], 1).is_err());
        assert!(BehaviorSchema::from_labels(&["a", "b"], "c").is_err());
        let s = BehaviorSchema::from_labels(&["view", "cart", "buy"], "buy").unwrap();
        assert_eq!(s.target(), 2);
    }

    #[test]
    fn counts_three_events() {
        let t = parse("uA\ti1\tview\nuA\ti2\tbuy\nuB\ti1\tbuy\n").unwrap();
        assert_eq!((t.num_users(), t.num_items(), t.num_behaviors()), (2, 2, 2));
        assert_eq!(t.num_events(), 3);
        assert_eq!(t.items(0, 0), &[0]);
        assert_eq!(t.target_items(1), &[0]);
    }

    #[test]
    fn duplicates_collapse() {
        let a = parse("uA\ti1\tview\nuA\ti2\tbuy\nuB\ti1\tbuy\n").unwrap();
        let b = parse("uA\ti1\tview\nuA\ti1\tview\nuA\ti2\tbuy\nuB\ti1\tbuy\n").unwrap();
        assert_eq!(a, b);
        assert_eq!(b.num_events(), 3);
    }

    #[test]
    fn unknown_label_names_line() {
        let err = parse("uA\ti2\tbuy\nuA\ti1\tgrok\n").unwrap_err();
        match err {
            Error::UnknownBehavior { line, label } => {
                assert_eq!(line, 2);
                assert_eq!(label, "grok");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let err = parse("uA\ti1\tview\nuA i2 buy\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        assert!(matches!(parse("uA\t\tbuy\n"), Err(Error::Parse { line: 1, .. })));
    }

    fn many_items_file(target_events: &[(&str, &[&str])]) -> String {
        // 120 catalogue items viewed by a filler user so J is large enough.
        let mut s = String::new();
        for j in 0..120 {
            s.push_str(&format!("filler\tx{j}\tview\n"));
        }
        for (user, items) in target_events {
            for it in items.iter() {
                s.push_str(&format!("{user}\t{it}\tbuy\n"));
            }
        }
        s
    }

    #[test]
    fn single_target_user_is_not_evaluated() {
        let t = parse(&many_items_file(&[("u1", &["x1"])])).unwrap();
        let (train, split) = leave_one_out_split(&t, 7).unwrap();
        let u = t.user_index("u1").unwrap();
        assert_eq!(split.held_out[u], None);
        assert!(split.negatives[u].is_empty());
        assert_eq!(train.target_items(u).len(), 1);
    }

    #[test]
    fn last_in_file_target_is_held_out() {
        let t = parse(&many_items_file(&[("u1", &["x5", "x2", "x9"])])).unwrap();
        let (train, split) = leave_one_out_split(&t, 7).unwrap();
        let u = t.user_index("u1").unwrap();
        let x9 = t.item_index("x9").unwrap();
        assert_eq!(split.held_out[u], Some(x9));
        assert_eq!(train.target_items(u).len(), 2);
        assert!(!train.contains(u, x9, 1));
        assert_eq!(split.negatives[u].len(), EVAL_NEGATIVES);
    }

    #[test]
    fn repeated_target_uses_last_occurrence() {
        let t = parse(&many_items_file(&[("u1", &["x5", "x2", "x5"])])).unwrap();
        let (_, split) = leave_one_out_split(&t, 1).unwrap();
        let u = t.user_index("u1").unwrap();
        assert_eq!(split.held_out[u], t.item_index("x5"));
    }

    #[test]
    fn split_is_seed_deterministic() {
        let t = parse(&many_items_file(&[("u1", &["x1", "x2"]), ("u2", &["x3", "x4", "x5"])])).unwrap();
        let (ta, a) = leave_one_out_split(&t, 7).unwrap();
        let (tb, b) = leave_one_out_split(&t, 7).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        assert_eq!(ta, tb);
        let (_, c) = leave_one_out_split(&t, 8).unwrap();
        assert_eq!(a.held_out, c.held_out);
    }

    #[test]
    fn user_without_enough_negatives_is_excluded() {
        // Catalogue of 100 items; the user touches 2 of them, leaving 98 < 99.
        let mut s = String::new();
        for j in 0..100 {
            s.push_str(&format!("filler\tx{j}\tview\n"));
        }
        s.push_str("u1\tx1\tbuy\nu1\tx2\tbuy\n");
        let t = parse(&s).unwrap();
        let (train, split) = leave_one_out_split(&t, 3).unwrap();
        let u = t.user_index("u1").unwrap();
        assert_eq!(split.held_out[u], None);
        assert_eq!(train.target_items(u).len(), 2);
    }

    #[test]
    fn subset_examples() {
        let t = parse("uA\ti1\tview\nuA\ti2\tbuy\nuB\ti1\tbuy\n").unwrap();
        assert_eq!(behavior_subset(&t, &[0, 1]).unwrap(), t);
        let only = behavior_subset(&t, &[1]).unwrap();
        assert_eq!(only.num_events(), 2);
        assert_eq!(only.num_behaviors(), 1);
        assert_eq!(only.target(), 0);
        assert!(matches!(behavior_subset(&t, &[0]), Err(Error::InvalidAblation(_))));
        assert!(matches!(behavior_subset(&t, &[1, 5]), Err(Error::InvalidAblation(_))));
    }

    #[test]
    fn empty_tensor_cannot_be_split() {
        let t = parse("").unwrap();
        assert!(leave_one_out_split(&t, 0).is_err());
    }
}
