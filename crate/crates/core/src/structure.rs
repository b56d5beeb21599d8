//! Deduplicated landscape tree: host/application, nested packages, classes
//! and their operations.
//!
//! Children are kept in name order so traversal, layout and serialization
//! do not depend on the order structural records arrived in. Nodes are
//! only ever added.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize, Serializer};

use crate::wire::OperationIdentity;

/// Globally unique class identifier: `host:app:package.path.Class`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassId(String);

impl ClassId {
    pub fn new(app: &AppKey, package_path: &[String], class_name: &str) -> Self {
        let mut qualified = package_path.join(".");
        if !qualified.is_empty() {
            qualified.push('.');
        }
        qualified.push_str(class_name);
        ClassId(format!("{}:{}:{}", app.hostname, app.app_name, qualified))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Unqualified class name (text after the last dot).
    pub fn class_name(&self) -> &str {
        let qualified = self.0.rsplit(':').next().unwrap_or(&self.0);
        qualified.rsplit('.').next().unwrap_or(qualified)
    }
}

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ClassId {
    fn from(s: &str) -> Self {
        ClassId(s.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AppKey {
    pub hostname: String,
    pub app_name: String,
}

impl AppKey {
    pub fn new(hostname: impl Into<String>, app_name: impl Into<String>) -> Self {
        AppKey {
            hostname: hostname.into(),
            app_name: app_name.into(),
        }
    }
}

impl fmt::Display for AppKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.hostname, self.app_name)
    }
}

fn values_only<S, K, V>(map: &BTreeMap<K, V>, serializer: S) -> Result<S::Ok, S::Error>
where
    S: Serializer,
    V: Serialize,
{
    serializer.collect_seq(map.values())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ClassNode {
    pub id: ClassId,
    pub name: String,
    pub operations: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct PackageNode {
    /// `host:app:dotted.path`
    pub id: String,
    pub name: String,
    #[serde(serialize_with = "values_only")]
    pub packages: BTreeMap<String, PackageNode>,
    #[serde(serialize_with = "values_only")]
    pub classes: BTreeMap<String, ClassNode>,
}

impl PackageNode {
    fn count(&self) -> (usize, usize) {
        self.packages
            .values()
            .map(PackageNode::count)
            .fold((1, self.classes.len()), |(p, c), (dp, dc)| (p + dp, c + dc))
    }
}

/// One monitored application's city.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct StructureTree {
    pub hostname: String,
    pub app_name: String,
    #[serde(serialize_with = "values_only")]
    pub packages: BTreeMap<String, PackageNode>,
    /// Classes declared outside any package.
    #[serde(serialize_with = "values_only")]
    pub classes: BTreeMap<String, ClassNode>,
}

impl StructureTree {
    pub fn new(key: &AppKey) -> Self {
        StructureTree {
            hostname: key.hostname.clone(),
            app_name: key.app_name.clone(),
            packages: BTreeMap::new(),
            classes: BTreeMap::new(),
        }
    }

    pub fn key(&self) -> AppKey {
        AppKey::new(&self.hostname, &self.app_name)
    }

    /// Adds the operation and any missing ancestors. Re-inserting is a no-op.
    pub fn insert_structural(&mut self, id: &OperationIdentity) -> ClassId {
        let key = self.key();
        let class_id = ClassId::new(&key, &id.package_path, &id.class_name);
        let mut classes = &mut self.classes;
        let mut packages = &mut self.packages;
        let mut path = String::new();
        for segment in &id.package_path {
            if !path.is_empty() {
                path.push('.');
            }
            path.push_str(segment);
            let node = packages
                .entry(segment.clone())
                .or_insert_with(|| PackageNode {
                    id: format!("{key}:{path}"),
                    name: segment.clone(),
                    packages: BTreeMap::new(),
                    classes: BTreeMap::new(),
                });
            classes = &mut node.classes;
            packages = &mut node.packages;
        }
        classes
            .entry(id.class_name.clone())
            .or_insert_with(|| ClassNode {
                id: class_id.clone(),
                name: id.class_name.clone(),
                operations: BTreeSet::new(),
            })
            .operations
            .insert(id.operation_name.clone());
        class_id
    }

    pub fn class_count(&self) -> usize {
        self.classes.len() + self.packages.values().map(|p| p.count().1).sum::<usize>()
    }

    pub fn package_count(&self) -> usize {
        self.packages.values().map(|p| p.count().0).sum()
    }

    /// All class ids in depth-first name order.
    pub fn class_ids(&self) -> Vec<ClassId> {
        fn walk(pkg: &PackageNode, out: &mut Vec<ClassId>) {
            for p in pkg.packages.values() {
                walk(p, out);
            }
            out.extend(pkg.classes.values().map(|c| c.id.clone()));
        }
        let mut out = Vec::new();
        for p in self.packages.values() {
            walk(p, &mut out);
        }
        out.extend(self.classes.values().map(|c| c.id.clone()));
        out
    }
}

/// All monitored applications, keyed by (hostname, app name).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Landscape {
    apps: BTreeMap<AppKey, StructureTree>,
    class_index: BTreeMap<ClassId, AppKey>,
}

impl Landscape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert_structural(&mut self, id: &OperationIdentity, hostname: &str, app_name: &str) -> ClassId {
        let key = AppKey::new(hostname, app_name);
        let tree = self
            .apps
            .entry(key.clone())
            .or_insert_with(|| StructureTree::new(&key));
        let class_id = tree.insert_structural(id);
        self.class_index.entry(class_id.clone()).or_insert(key);
        class_id
    }

    pub fn app(&self, key: &AppKey) -> Option<&StructureTree> {
        self.apps.get(key)
    }

    pub fn apps(&self) -> impl Iterator<Item = &StructureTree> {
        self.apps.values()
    }

    pub fn app_of(&self, class: &ClassId) -> Option<&AppKey> {
        self.class_index.get(class)
    }

    pub fn contains_class(&self, class: &ClassId) -> bool {
        self.class_index.contains_key(class)
    }

    pub fn class_count(&self) -> usize {
        self.class_index.len()
    }

    pub fn package_count(&self) -> usize {
        self.apps.values().map(StructureTree::package_count).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.apps.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wire::{parse_fqn, ConstructorNames};
    use proptest::prelude::*;

    fn op(fqn: &str) -> OperationIdentity {
        parse_fqn(fqn, &ConstructorNames::default()).unwrap()
    }

    #[test]
    fn empty_counts() {
        let landscape = Landscape::new();
        assert_eq!(landscape.class_count(), 0);
        assert_eq!(landscape.package_count(), 0);
    }

    #[test]
    fn insert_builds_ancestors() {
        let mut landscape = Landscape::new();
        let id = landscape.insert_structural(&op("a.B.c"), "h", "app");
        assert_eq!(id.as_str(), "h:app:a.B");
        assert_eq!(id.class_name(), "B");
        let tree = landscape.app(&AppKey::new("h", "app")).unwrap();
        let class = &tree.packages["a"].classes["B"];
        assert_eq!(class.operations.iter().collect::<Vec<_>>(), ["c"]);
        assert_eq!(tree.packages["a"].id, "h:app:a");
    }

    #[test]
    fn reinsert_is_idempotent() {
        let mut landscape = Landscape::new();
        landscape.insert_structural(&op("a.B.c"), "h", "app");
        let before = landscape.clone();
        landscape.insert_structural(&op("a.B.c"), "h", "app");
        assert_eq!(before, landscape);
    }

    #[test]
    fn operations_merge_into_one_class() {
        let mut landscape = Landscape::new();
        landscape.insert_structural(&op("a.B.c"), "h", "app");
        landscape.insert_structural(&op("a.B.d"), "h", "app");
        let tree = landscape.app(&AppKey::new("h", "app")).unwrap();
        assert_eq!(tree.class_count(), 1);
        assert_eq!(tree.packages["a"].classes["B"].operations.len(), 2);
    }

    #[test]
    fn counts_nested_packages() {
        let mut landscape = Landscape::new();
        landscape.insert_structural(&op("a.B.c"), "h", "app");
        landscape.insert_structural(&op("a.b2.C.d"), "h", "app");
        assert_eq!(landscape.class_count(), 2);
        assert_eq!(landscape.package_count(), 2);
        let tree = landscape.app(&AppKey::new("h", "app")).unwrap();
        assert_eq!((tree.class_count(), tree.package_count()), (2, 2));
    }

    #[test]
    fn repeated_insert_counts_once() {
        let mut landscape = Landscape::new();
        for _ in 0..100 {
            landscape.insert_structural(&op("x.Y.z"), "h", "app");
        }
        assert_eq!(landscape.class_count(), 1);
    }

    #[test]
    fn default_package_classes() {
        let mut landscape = Landscape::new();
        let id = landscape.insert_structural(&op("A.b"), "h", "app");
        assert_eq!(id.as_str(), "h:app:A");
        let tree = landscape.app(&AppKey::new("h", "app")).unwrap();
        assert_eq!(tree.class_ids(), vec![id]);
        assert_eq!(tree.package_count(), 0);
    }

    #[test]
    fn apps_are_separate() {
        let mut landscape = Landscape::new();
        let a = landscape.insert_structural(&op("p.C.m"), "h1", "app");
        let b = landscape.insert_structural(&op("p.C.m"), "h2", "app");
        assert_ne!(a, b);
        assert_eq!(landscape.apps().count(), 2);
        assert_eq!(landscape.app_of(&b), Some(&AppKey::new("h2", "app")));
    }

    fn fqn_strategy() -> impl Strategy<Value = String> {
        (
            proptest::collection::vec("[a-d]", 0..4),
            "[A-E]",
            "[m-p]",
        )
            .prop_map(|(pkg, class, op)| {
                let mut parts = pkg;
                parts.push(class);
                parts.push(op);
                parts.join(".")
            })
    }

    proptest! {
        #[test]
        fn insertion_order_does_not_matter(
            fqns in proptest::collection::vec(fqn_strategy(), 1..40),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut forward = Landscape::new();
            for f in &fqns {
                forward.insert_structural(&op(f), "h", "app");
            }
            let mut shuffled = fqns.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let mut other = Landscape::new();
            for f in &shuffled {
                other.insert_structural(&op(f), "h", "app");
            }
            prop_assert_eq!(&forward, &other);
            let key = AppKey::new("h", "app");
            prop_assert_eq!(
                serde_json::to_string(forward.app(&key).unwrap()).unwrap(),
                serde_json::to_string(other.app(&key).unwrap()).unwrap()
            );

            let expected: BTreeSet<String> = fqns
                .iter()
                .map(|f| {
                    let id = op(f);
                    ClassId::new(&key, &id.package_path, &id.class_name).to_string()
                })
                .collect();
            let actual: BTreeSet<String> = forward
                .app(&key)
                .unwrap()
                .class_ids()
                .into_iter()
                .map(|c| c.to_string())
                .collect();
            prop_assert_eq!(actual, expected);
        }
    }
}
