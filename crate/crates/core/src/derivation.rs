//! Derivation trees, root conditions and bags of rules.
//!
//! Trees travel as nested JSON arrays: an internal node is
//! `["rule_label", child, ...]` and a leaf is `{"token": "...", "le": "..."}`.
//! The root condition is carried beside the tree as a label such as
//! `root_strict`, never inside it.

use std::collections::BTreeMap;
use std::fmt;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TreeError {
    #[error("malformed tree encoding at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("malformed tree at {path}: {message}")]
    Structure { path: String, message: String },
    #[error("unknown root label `{label}` (known: {})", known.join(", "))]
    UnknownRoot { label: String, known: Vec<String> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Formality {
    Strict,
    Informal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Completeness {
    Full,
    Fragment,
}

/// Whether punctuation/capitalization was relaxed, and whether the parse
/// covers a full sentence or only a fragment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RootCondition {
    pub formality: Formality,
    pub completeness: Completeness,
}

impl RootCondition {
    pub const STRICT_FULL: Self = Self::new(Formality::Strict, Completeness::Full);
    pub const STRICT_FRAGMENT: Self = Self::new(Formality::Strict, Completeness::Fragment);
    pub const INFORMAL_FULL: Self = Self::new(Formality::Informal, Completeness::Full);
    pub const INFORMAL_FRAGMENT: Self = Self::new(Formality::Informal, Completeness::Fragment);

    /// Column order used by every root-condition table.
    pub const ALL: [Self; 4] = [
        Self::STRICT_FULL,
        Self::STRICT_FRAGMENT,
        Self::INFORMAL_FULL,
        Self::INFORMAL_FRAGMENT,
    ];

    pub const fn new(formality: Formality, completeness: Completeness) -> Self {
        Self {
            formality,
            completeness,
        }
    }

    pub fn column(self) -> usize {
        Self::ALL.iter().position(|c| *c == self).unwrap()
    }
}

impl fmt::Display for RootCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let formality = match self.formality {
            Formality::Strict => "strict",
            Formality::Informal => "informal",
        };
        let completeness = match self.completeness {
            Completeness::Full => "full",
            Completeness::Fragment => "frag",
        };
        write!(f, "{formality}_{completeness}")
    }
}

/// Mapping between root labels and root conditions.
#[derive(Debug, Clone, PartialEq)]
pub struct RootMap {
    entries: Vec<(String, RootCondition)>,
}

impl Default for RootMap {
    fn default() -> Self {
        Self::new([
            ("root_strict", RootCondition::STRICT_FULL),
            ("root_frag", RootCondition::STRICT_FRAGMENT),
            ("root_informal", RootCondition::INFORMAL_FULL),
            ("root_inffrag", RootCondition::INFORMAL_FRAGMENT),
        ])
    }
}

impl RootMap {
    pub fn new<S: Into<String>>(entries: impl IntoIterator<Item = (S, RootCondition)>) -> Self {
        Self {
            entries: entries.into_iter().map(|(l, c)| (l.into(), c)).collect(),
        }
    }

    pub fn condition(&self, label: &str) -> Result<RootCondition, TreeError> {
        self.entries
            .iter()
            .find(|(l, _)| l == label)
            .map(|(_, c)| *c)
            .ok_or_else(|| TreeError::UnknownRoot {
                label: label.to_string(),
                known: self.labels().map(str::to_string).collect(),
            })
    }

    /// First label mapped to `condition`.
    pub fn label(&self, condition: RootCondition) -> Option<&str> {
        self.entries
            .iter()
            .find(|(_, c)| *c == condition)
            .map(|(l, _)| l.as_str())
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(l, _)| l.as_str())
    }
}

/// Maps a root label through the default [`RootMap`].
pub fn root_condition(label: &str) -> Result<RootCondition, TreeError> {
    RootMap::default().condition(label)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Node {
    Rule { label: String, children: Vec<Node> },
    Leaf { token: String, le: String },
}

impl Node {
    pub fn rule(label: impl Into<String>, children: Vec<Node>) -> Self {
        Node::Rule {
            label: label.into(),
            children,
        }
    }

    pub fn leaf(token: impl Into<String>, le: impl Into<String>) -> Self {
        Node::Leaf {
            token: token.into(),
            le: le.into(),
        }
    }

    pub fn from_value(value: &Value) -> Result<Self, TreeError> {
        node_from_value(value, &mut String::from("$"))
    }

    pub fn to_value(&self) -> Value {
        match self {
            Node::Rule { label, children } => {
                let mut items = Vec::with_capacity(children.len() + 1);
                items.push(Value::String(label.clone()));
                items.extend(children.iter().map(Node::to_value));
                Value::Array(items)
            }
            Node::Leaf { token, le } => {
                let mut map = serde_json::Map::new();
                map.insert("token".into(), Value::String(token.clone()));
                map.insert("le".into(), Value::String(le.clone()));
                Value::Object(map)
            }
        }
    }

    /// Canonical compact encoding: no whitespace, leaf keys in `token`, `le` order.
    pub fn to_canonical(&self) -> String {
        let mut out = String::new();
        self.write_canonical(&mut out);
        out
    }

    fn write_canonical(&self, out: &mut String) {
        match self {
            Node::Rule { label, children } => {
                out.push('[');
                out.push_str(&json_string(label));
                for child in children {
                    out.push(',');
                    child.write_canonical(out);
                }
                out.push(']');
            }
            Node::Leaf { token, le } => {
                out.push_str("{\"token\":");
                out.push_str(&json_string(token));
                out.push_str(",\"le\":");
                out.push_str(&json_string(le));
                out.push('}');
            }
        }
    }

    /// Leaves in left-to-right order.
    pub fn leaves(&self) -> Vec<(&str, &str)> {
        let mut out = Vec::new();
        self.visit(&mut |n| {
            if let Node::Leaf { token, le } = n {
                out.push((token.as_str(), le.as_str()));
            }
        });
        out
    }

    pub fn internal_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |node| {
            if matches!(node, Node::Rule { .. }) {
                n += 1;
            }
        });
        n
    }

    /// Pre-order traversal.
    pub fn visit<'a>(&'a self, f: &mut impl FnMut(&'a Node)) {
        f(self);
        if let Node::Rule { children, .. } = self {
            for c in children {
                c.visit(f);
            }
        }
    }
}

fn json_string(s: &str) -> String {
    serde_json::to_string(s).expect("string serialization is infallible")
}

fn node_from_value(value: &Value, path: &mut String) -> Result<Node, TreeError> {
    let structure = |path: &str, message: &str| TreeError::Structure {
        path: path.to_string(),
        message: message.to_string(),
    };
    match value {
        Value::Array(items) => {
            let label = match items.first() {
                Some(Value::String(s)) => s.clone(),
                Some(_) => return Err(structure(path, "rule label must be a string")),
                None => return Err(structure(path, "empty rule node")),
            };
            if items.len() < 2 {
                return Err(structure(path, "rule node has no children"));
            }
            let mut children = Vec::with_capacity(items.len() - 1);
            for (i, item) in items.iter().enumerate().skip(1) {
                let len = path.len();
                path.push_str(&format!("[{i}]"));
                children.push(node_from_value(item, path)?);
                path.truncate(len);
            }
            Ok(Node::Rule { label, children })
        }
        Value::Object(map) => {
            let field = |key: &str| match map.get(key) {
                Some(Value::String(s)) => Ok(s.clone()),
                Some(_) => Err(structure(path, &format!("leaf `{key}` must be a string"))),
                None => Err(structure(path, &format!("leaf is missing `{key}`"))),
            };
            let token = field("token")?;
            let le = field("le")?;
            if let Some(extra) = map.keys().find(|k| *k != "token" && *k != "le") {
                return Err(structure(path, &format!("unexpected leaf key `{extra}`")));
            }
            Ok(Node::Leaf { token, le })
        }
        _ => Err(structure(path, "expected an array (rule) or object (leaf)")),
    }
}

/// Parses a tree from its JSON text encoding.
pub fn parse_tree(text: &str) -> Result<Node, TreeError> {
    let value: Value = serde_json::from_str(text).map_err(|e| TreeError::Syntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    Node::from_value(&value)
}

impl Serialize for Node {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_value().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Node {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let value = Value::deserialize(deserializer)?;
        Node::from_value(&value).map_err(D::Error::custom)
    }
}

/// A best derivation chosen by a parser backend.
#[derive(Debug, Clone, PartialEq)]
pub struct Derivation {
    pub root: String,
    pub condition: RootCondition,
    pub tree: Node,
}

impl Derivation {
    pub fn new(root: impl Into<String>, tree: Node, roots: &RootMap) -> Result<Self, TreeError> {
        let root = root.into();
        let condition = roots.condition(&root)?;
        Ok(Self { root, condition, tree })
    }

    /// Parses an encoded tree. If the outermost label is itself a root label
    /// it is taken as the root wrapper and stripped; otherwise `root` must name it.
    pub fn parse(text: &str, root: Option<&str>, roots: &RootMap) -> Result<Self, TreeError> {
        let tree = parse_tree(text)?;
        match (tree, root) {
            (Node::Rule { label, mut children }, _) if roots.condition(&label).is_ok() && children.len() == 1 => {
                let inner = children.pop().unwrap();
                Derivation::new(label, inner, roots)
            }
            (tree, Some(root)) => Derivation::new(root, tree, roots),
            (_, None) => Err(TreeError::Structure {
                path: "$".into(),
                message: "no root label given and tree has no root wrapper".into(),
            }),
        }
    }

    pub fn tokens(&self) -> Vec<&str> {
        self.tree.leaves().into_iter().map(|(t, _)| t).collect()
    }

    pub fn lexentries(&self) -> Vec<&str> {
        self.tree.leaves().into_iter().map(|(_, le)| le).collect()
    }

    /// The tree wrapped in its root label, in canonical encoding.
    pub fn to_canonical_wrapped(&self) -> String {
        format!("[{},{}]", json_string(&self.root), self.tree.to_canonical())
    }
}

/// Inflectional and punctuation-attachment rules, by ERG naming convention.
pub fn is_lexical_rule(label: &str) -> bool {
    ["_plr", "_ilr", "_dlr", "_olr"]
        .iter()
        .any(|suffix| label.ends_with(suffix))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BagOptions {
    /// Count the root label as a rule.
    pub include_root: bool,
    /// Count lexical rules (see [`is_lexical_rule`]).
    pub include_lexical: bool,
}

/// Multiset of rule labels.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RuleBag(BTreeMap<String, u64>);

impl RuleBag {
    pub fn get(&self, label: &str) -> u64 {
        self.0.get(label).copied().unwrap_or(0)
    }

    pub fn contains(&self, label: &str) -> bool {
        self.0.contains_key(label)
    }

    pub fn total(&self) -> u64 {
        self.0.values().sum()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, u64)> {
        self.0.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn add(&mut self, label: &str, n: u64) {
        if n > 0 {
            *self.0.entry(label.to_string()).or_insert(0) += n;
        }
    }

    pub fn into_map(self) -> BTreeMap<String, u64> {
        self.0
    }
}

impl FromIterator<(String, u64)> for RuleBag {
    fn from_iter<I: IntoIterator<Item = (String, u64)>>(iter: I) -> Self {
        let mut bag = RuleBag::default();
        for (k, v) in iter {
            bag.add(&k, v);
        }
        bag
    }
}

pub fn bag_of_rules(d: &Derivation, opts: &BagOptions) -> RuleBag {
    let mut bag = RuleBag::default();
    if opts.include_root {
        bag.add(&d.root, 1);
    }
    d.tree.visit(&mut |node| {
        if let Node::Rule { label, .. } = node {
            if opts.include_lexical || !is_lexical_rule(label) {
                bag.add(label, 1);
            }
        }
    });
    bag
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const FIG1_NMT: &str = r#"["np_frg", ["sp-hd_n", {"token":"a","le":"det"}, ["aj-hdn_norm", {"token":"generic_adj","le":"adj"}, {"token":"situation","le":"noun"}]]]"#;

    fn fig1() -> Derivation {
        Derivation::parse(FIG1_NMT, Some("root_frag"), &RootMap::default()).unwrap()
    }

    #[test]
    fn parses_nmt_example_tree() {
        let d = fig1();
        assert_eq!(d.condition, RootCondition::STRICT_FRAGMENT);
        assert_eq!(d.tokens(), ["a", "generic_adj", "situation"]);
        assert_eq!(d.lexentries(), ["det", "adj", "noun"]);
        assert_eq!(d.tree.internal_count(), 3);
        assert_eq!(
            d.tree.to_canonical(),
            r#"["np_frg",["sp-hd_n",{"token":"a","le":"det"},["aj-hdn_norm",{"token":"generic_adj","le":"adj"},{"token":"situation","le":"noun"}]]]"#
        );
    }

    #[test]
    fn root_wrapper_is_stripped() {
        let wrapped = format!("[\"root_frag\", {FIG1_NMT}]");
        let d = Derivation::parse(&wrapped, None, &RootMap::default()).unwrap();
        assert_eq!(d, fig1());
        assert_eq!(
            parse_tree(&d.to_canonical_wrapped()).unwrap(),
            parse_tree(&wrapped).unwrap()
        );
    }

    #[test]
    fn single_rule_tree() {
        let d = Derivation::parse(
            r#"["hdn_bnp-qnt", {"token":"It","le":"pron"}]"#,
            Some("root_strict"),
            &RootMap::default(),
        )
        .unwrap();
        assert_eq!(bag_of_rules(&d, &BagOptions::default()).total(), 1);
    }

    #[test]
    fn malformed_input_reports_position() {
        match parse_tree(r#"["np_frg", ["sp-hd_n", {"token":"a","le":"det"}]"#) {
            Err(TreeError::Syntax { line, column, .. }) => {
                assert_eq!(line, 1);
                assert!(column > 0);
            }
            other => panic!("expected syntax error, got {other:?}"),
        }
        match parse_tree(r#"["x", ["y"]]"#) {
            Err(TreeError::Structure { path, .. }) => assert_eq!(path, "$[1]"),
            other => panic!("expected structure error, got {other:?}"),
        }
        assert!(parse_tree(r#"["x", {"token":"a"}]"#).is_err());
        assert!(parse_tree(r#"[]"#).is_err());
        assert!(parse_tree(r#"[3, {"token":"a","le":"b"}]"#).is_err());
    }

    #[test]
    fn root_conditions() {
        assert_eq!(root_condition("root_strict").unwrap(), RootCondition::STRICT_FULL);
        assert_eq!(root_condition("root_frag").unwrap(), RootCondition::STRICT_FRAGMENT);
        assert_eq!(root_condition("root_informal").unwrap(), RootCondition::INFORMAL_FULL);
        assert_eq!(
            root_condition("root_inffrag").unwrap(),
            RootCondition::INFORMAL_FRAGMENT
        );
        let err = root_condition("root_xyz").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("root_xyz") && msg.contains("root_strict"), "{msg}");
    }

    #[test]
    fn custom_root_map() {
        let map = RootMap::new([("TOP", RootCondition::STRICT_FULL)]);
        assert_eq!(map.condition("TOP").unwrap(), RootCondition::STRICT_FULL);
        assert!(map.condition("root_strict").is_err());
        assert_eq!(map.label(RootCondition::STRICT_FULL), Some("TOP"));
    }

    #[test]
    fn bag_counts_internal_nodes() {
        let bag = bag_of_rules(&fig1(), &BagOptions::default());
        let expected: Vec<(&str, u64)> = vec![("aj-hdn_norm", 1), ("np_frg", 1), ("sp-hd_n", 1)];
        assert_eq!(bag.iter().collect::<Vec<_>>(), expected);

        let with_root = bag_of_rules(
            &fig1(),
            &BagOptions {
                include_root: true,
                ..Default::default()
            },
        );
        assert_eq!(with_root.get("root_frag"), 1);
        assert_eq!(with_root.total(), 4);
    }

    #[test]
    fn bag_is_a_multiset() {
        let tree = Node::rule(
            "hd-cmp_u",
            vec![
                Node::leaf("saw", "verb"),
                Node::rule(
                    "sp-hd_n",
                    vec![
                        Node::leaf("the", "det"),
                        Node::rule("sp-hd_n", vec![Node::leaf("a", "det"), Node::leaf("cat", "noun")]),
                    ],
                ),
            ],
        );
        let d = Derivation::new("root_strict", tree, &RootMap::default()).unwrap();
        assert_eq!(bag_of_rules(&d, &BagOptions::default()).get("sp-hd_n"), 2);
    }

    #[test]
    fn lexical_rules_excluded_by_default() {
        let tree = Node::rule(
            "w_period_plr",
            vec![
                Node::rule("hdn_bnp-qnt", vec![Node::leaf("it", "pron")]),
                Node::leaf(".", "punct"),
            ],
        );
        let d = Derivation::new("root_informal", tree, &RootMap::default()).unwrap();
        assert_eq!(bag_of_rules(&d, &BagOptions::default()).total(), 1);
        let all = BagOptions {
            include_lexical: true,
            ..Default::default()
        };
        assert_eq!(bag_of_rules(&d, &all).total(), 2);
        assert!(is_lexical_rule("third_sg_fin_v_ilr"));
        assert!(!is_lexical_rule("sb-hd_mc"));
    }

    fn arb_node() -> impl Strategy<Value = Node> {
        let leaf = ("[a-z\"\\\\é ]{0,6}", "[a-z_]{1,5}").prop_map(|(t, le)| Node::leaf(t, le));
        leaf.prop_recursive(4, 32, 3, |inner| {
            ("[a-z_-]{1,8}", prop::collection::vec(inner, 1..4))
                .prop_map(|(label, children)| Node::rule(label, children))
        })
    }

    proptest! {
        #[test]
        fn canonical_round_trip(node in arb_node()) {
            let text = node.to_canonical();
            let back = parse_tree(&text).unwrap();
            prop_assert_eq!(&back, &node);
            prop_assert_eq!(back.to_canonical(), text);
        }

        #[test]
        fn bag_total_matches_internal_nodes(node in arb_node()) {
            let d = Derivation::new("root_strict", node.clone(), &RootMap::default()).unwrap();
            let opts = BagOptions { include_root: false, include_lexical: true };
            prop_assert_eq!(bag_of_rules(&d, &opts).total() as usize, node.internal_count());
        }
    }
}
