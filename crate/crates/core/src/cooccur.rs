//! Sentence-level noun co-occurrence networks.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use chrono::FixedOffset;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregate::SentimentRecord;
use crate::error::{Error, Result};
use crate::sentiment::SentimentLabel;
use crate::time::YearMonth;
use crate::tokenize::{Pos, Tokenizer};

const DELIMITERS: &[char] = &['。', '！', '？', '．', '!', '?', '\n', '\r'];

/// Splits on sentence-final punctuation and newlines; empty pieces are dropped.
pub fn split_sentences(text: &str) -> Vec<&str> {
    text.split(DELIMITERS)
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphMetadata {
    /// Human-readable description of the comment subset.
    pub filter: String,
    pub node_min_freq: u64,
    pub sentences: u64,
}

/// Nodes count the sentences containing a term; edges count the sentences
/// containing both terms, keyed with the smaller term first.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CooccurrenceGraph {
    pub nodes: BTreeMap<String, u64>,
    pub edges: BTreeMap<(String, String), u64>,
    pub metadata: GraphMetadata,
    /// Optional display names used by the exporters.
    pub display: BTreeMap<String, String>,
}

fn canonical<'a>(a: &'a str, b: &'a str) -> (&'a str, &'a str) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

impl CooccurrenceGraph {
    /// Counts distinct terms per sentence; `sentences` holds term lists.
    pub fn from_sentences<S: AsRef<str> + Sync>(sentences: &[Vec<S>]) -> Self {
        let (nodes, edges) = sentences
            .par_iter()
            .fold(
                || (BTreeMap::<String, u64>::new(), BTreeMap::<(String, String), u64>::new()),
                |(mut nodes, mut edges), terms| {
                    let set: BTreeSet<&str> = terms.iter().map(AsRef::as_ref).collect();
                    let set: Vec<&str> = set.into_iter().collect();
                    for (i, a) in set.iter().enumerate() {
                        *nodes.entry((*a).to_owned()).or_insert(0) += 1;
                        for b in &set[i + 1..] {
                            *edges.entry(((*a).to_owned(), (*b).to_owned())).or_insert(0) += 1;
                        }
                    }
                    (nodes, edges)
                },
            )
            .reduce(
                || (BTreeMap::new(), BTreeMap::new()),
                |(mut na, mut ea), (nb, eb)| {
                    for (k, v) in nb {
                        *na.entry(k).or_insert(0) += v;
                    }
                    for (k, v) in eb {
                        *ea.entry(k).or_insert(0) += v;
                    }
                    (na, ea)
                },
            );
        CooccurrenceGraph {
            nodes,
            edges,
            metadata: GraphMetadata {
                filter: String::new(),
                node_min_freq: 1,
                sentences: sentences.len() as u64,
            },
            display: BTreeMap::new(),
        }
    }

    /// Removes nodes below `min_freq` together with their edges.
    pub fn threshold(&self, min_freq: u64) -> Result<Self> {
        if min_freq == 0 {
            return Err(Error::Config("node_min_freq must be at least 1".into()));
        }
        let nodes: BTreeMap<String, u64> = self
            .nodes
            .iter()
            .filter(|(_, f)| **f >= min_freq)
            .map(|(t, f)| (t.clone(), *f))
            .collect();
        let edges = self
            .edges
            .iter()
            .filter(|((a, b), _)| nodes.contains_key(a) && nodes.contains_key(b))
            .map(|(k, w)| (k.clone(), *w))
            .collect();
        Ok(CooccurrenceGraph {
            nodes,
            edges,
            metadata: GraphMetadata {
                node_min_freq: min_freq.max(self.metadata.node_min_freq),
                ..self.metadata.clone()
            },
            display: self.display.clone(),
        })
    }

    /// Co-sentence count of `a` and `b` in either order.
    pub fn weight(&self, a: &str, b: &str) -> u64 {
        let (x, y) = canonical(a, b);
        self.edges
            .get(&(x.to_owned(), y.to_owned()))
            .copied()
            .unwrap_or(0)
    }

    pub fn node_freq(&self, term: &str) -> u64 {
        self.nodes.get(term).copied().unwrap_or(0)
    }

    fn display_name<'a>(&'a self, term: &'a str) -> &'a str {
        self.display.get(term).map(String::as_str).unwrap_or(term)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphOptions {
    pub node_min_freq: u64,
    pub keep_pos: BTreeSet<Pos>,
}

impl GraphOptions {
    pub fn new(node_min_freq: u64) -> Self {
        GraphOptions {
            node_min_freq,
            keep_pos: BTreeSet::from([Pos::Noun]),
        }
    }
}

/// Splits each comment into sentences, tokenizes them and keeps terms whose
/// part of speech is in `keep_pos`; the threshold is applied after counting.
pub fn build_graph<T: Tokenizer + ?Sized, S: AsRef<str> + Sync>(
    comments: &[S],
    tokenizer: &T,
    opts: &GraphOptions,
) -> Result<CooccurrenceGraph> {
    if opts.node_min_freq == 0 {
        return Err(Error::Config("node_min_freq must be at least 1".into()));
    }
    let per_comment = comments
        .par_iter()
        .map(|c| {
            split_sentences(c.as_ref())
                .into_iter()
                .map(|s| {
                    Ok(tokenizer
                        .tokenize(s)?
                        .into_iter()
                        .filter(|t| opts.keep_pos.contains(&t.pos) && !t.normalized.is_empty())
                        .map(|t| t.normalized)
                        .collect::<Vec<String>>())
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let sentences: Vec<Vec<String>> = per_comment.into_iter().flatten().collect();
    CooccurrenceGraph::from_sentences(&sentences).threshold(opts.node_min_freq)
}

/// Reads `term<TAB>display name` lines.
pub fn load_display_names(path: impl AsRef<Path>) -> Result<BTreeMap<String, String>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (term, name) = line
            .split_once('\t')
            .ok_or_else(|| Error::Data(format!("{}:{}: expected term<TAB>name", path.display(), n + 1)))?;
        out.insert(term.trim().to_owned(), name.trim().to_owned());
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphFormat {
    GraphMl,
    Dot,
    Json,
}

impl GraphFormat {
    pub fn extension(self) -> &'static str {
        match self {
            GraphFormat::GraphMl => "graphml",
            GraphFormat::Dot => "dot",
            GraphFormat::Json => "json",
        }
    }
}

impl FromStr for GraphFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "graphml" => Ok(GraphFormat::GraphMl),
            "dot" => Ok(GraphFormat::Dot),
            "json" => Ok(GraphFormat::Json),
            _ => Err(Error::Config(format!("unsupported graph format {s:?}"))),
        }
    }
}

fn xml_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

fn dot_quote(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

pub fn to_graphml(g: &CooccurrenceGraph) -> String {
    let ids: BTreeMap<&str, usize> = g.nodes.keys().enumerate().map(|(i, t)| (t.as_str(), i)).collect();
    let mut s = String::new();
    s.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    s.push_str(
        "<graphml xmlns=\"http://graphml.graphdrawing.org/xmlns\" \
         xmlns:xsi=\"http://www.w3.org/2001/XMLSchema-instance\" \
         xsi:schemaLocation=\"http://graphml.graphdrawing.org/xmlns \
         http://graphml.graphdrawing.org/xmlns/1.0/graphml.xsd\">\n",
    );
    s.push_str("  <key id=\"d0\" for=\"node\" attr.name=\"term\" attr.type=\"string\"/>\n");
    s.push_str("  <key id=\"d1\" for=\"node\" attr.name=\"label\" attr.type=\"string\"/>\n");
    s.push_str("  <key id=\"d2\" for=\"node\" attr.name=\"freq\" attr.type=\"long\"/>\n");
    s.push_str("  <key id=\"d3\" for=\"edge\" attr.name=\"weight\" attr.type=\"long\"/>\n");
    s.push_str("  <key id=\"d4\" for=\"graph\" attr.name=\"filter\" attr.type=\"string\"/>\n");
    s.push_str("  <key id=\"d5\" for=\"graph\" attr.name=\"node_min_freq\" attr.type=\"long\"/>\n");
    s.push_str("  <key id=\"d6\" for=\"graph\" attr.name=\"sentences\" attr.type=\"long\"/>\n");
    s.push_str("  <graph id=\"G\" edgedefault=\"undirected\">\n");
    let _ = writeln!(s, "    <data key=\"d4\">{}</data>", xml_escape(&g.metadata.filter));
    let _ = writeln!(s, "    <data key=\"d5\">{}</data>", g.metadata.node_min_freq);
    let _ = writeln!(s, "    <data key=\"d6\">{}</data>", g.metadata.sentences);
    for (term, freq) in &g.nodes {
        let _ = writeln!(
            s,
            "    <node id=\"n{}\"><data key=\"d0\">{}</data><data key=\"d1\">{}</data><data key=\"d2\">{}</data></node>",
            ids[term.as_str()],
            xml_escape(term),
            xml_escape(g.display_name(term)),
            freq
        );
    }
    for (i, ((a, b), w)) in g.edges.iter().enumerate() {
        let _ = writeln!(
            s,
            "    <edge id=\"e{i}\" source=\"n{}\" target=\"n{}\"><data key=\"d3\">{w}</data></edge>",
            ids[a.as_str()],
            ids[b.as_str()]
        );
    }
    s.push_str("  </graph>\n</graphml>\n");
    s
}

pub fn to_dot(g: &CooccurrenceGraph) -> String {
    let mut s = String::from("graph cooccurrence {\n");
    for (term, freq) in &g.nodes {
        let _ = writeln!(s, "  {} [label={}, freq={freq}];", dot_quote(term), dot_quote(g.display_name(term)));
    }
    for ((a, b), w) in &g.edges {
        let _ = writeln!(s, "  {} -- {} [weight={w}, penwidth={w}];", dot_quote(a), dot_quote(b));
    }
    s.push_str("}\n");
    s
}

#[derive(Serialize, Deserialize)]
struct JsonNode {
    term: String,
    freq: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct JsonEdge {
    source: String,
    target: String,
    weight: u64,
}

#[derive(Serialize, Deserialize)]
struct JsonGraph {
    metadata: GraphMetadata,
    nodes: Vec<JsonNode>,
    edges: Vec<JsonEdge>,
}

pub fn to_json(g: &CooccurrenceGraph) -> String {
    let doc = JsonGraph {
        metadata: g.metadata.clone(),
        nodes: g
            .nodes
            .iter()
            .map(|(t, f)| JsonNode {
                term: t.clone(),
                freq: *f,
                label: g.display.get(t).cloned(),
            })
            .collect(),
        edges: g
            .edges
            .iter()
            .map(|((a, b), w)| JsonEdge {
                source: a.clone(),
                target: b.clone(),
                weight: *w,
            })
            .collect(),
    };
    let mut s = serde_json::to_string_pretty(&doc).expect("graph serializes");
    s.push('\n');
    s
}

/// Parses the JSON export, rejecting self-loops and edges to unknown nodes.
pub fn from_json(text: &str) -> Result<CooccurrenceGraph> {
    let doc: JsonGraph = serde_json::from_str(text).map_err(|e| Error::Data(format!("graph JSON: {e}")))?;
    let mut g = CooccurrenceGraph {
        metadata: doc.metadata,
        ..Default::default()
    };
    for n in doc.nodes {
        if let Some(l) = n.label {
            g.display.insert(n.term.clone(), l);
        }
        g.nodes.insert(n.term, n.freq);
    }
    for e in doc.edges {
        if e.source == e.target {
            return Err(Error::Data(format!("self-loop on {:?}", e.source)));
        }
        if !g.nodes.contains_key(&e.source) || !g.nodes.contains_key(&e.target) {
            return Err(Error::Data(format!("edge {:?}-{:?} references unknown node", e.source, e.target)));
        }
        let (a, b) = canonical(&e.source, &e.target);
        g.edges.insert((a.to_owned(), b.to_owned()), e.weight);
    }
    Ok(g)
}

pub fn export_graph(g: &CooccurrenceGraph, format: GraphFormat) -> String {
    match format {
        GraphFormat::GraphMl => to_graphml(g),
        GraphFormat::Dot => to_dot(g),
        GraphFormat::Json => to_json(g),
    }
}

pub fn write_graph(path: impl AsRef<Path>, g: &CooccurrenceGraph, format: GraphFormat) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, export_graph(g, format)).map_err(|e| Error::io(path, e))
}

/// Selection of comments for one network; `None` fields do not filter.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SliceSpec {
    pub label: Option<SentimentLabel>,
    pub from: Option<YearMonth>,
    pub to: Option<YearMonth>,
    pub topic: Option<usize>,
}

impl SliceSpec {
    pub fn describe(&self) -> String {
        let opt = |x: Option<String>| x.unwrap_or_else(|| "*".into());
        format!(
            "label={} months={}..{} topic={}",
            opt(self.label.map(|l| l.to_string())),
            opt(self.from.map(|m| m.to_string())),
            opt(self.to.map(|m| m.to_string())),
            opt(self.topic.map(|t| t.to_string())),
        )
    }
}

/// Records matching the label, inclusive month window and main topic.
pub fn sentiment_slice<'a>(
    records: &'a [SentimentRecord],
    spec: &SliceSpec,
    offset: &FixedOffset,
) -> Vec<&'a SentimentRecord> {
    records
        .iter()
        .filter(|r| {
            let month = YearMonth::of(&r.published_at, offset);
            spec.label.is_none_or(|l| r.label == l)
                && spec.from.is_none_or(|m| month >= m)
                && spec.to.is_none_or(|m| month <= m)
                && spec.topic.is_none_or(|k| r.main_topic == Some(k))
        })
        .collect()
}
