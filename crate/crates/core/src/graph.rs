//! Graph construction: entity graph, meta-paths, Levi graph, adjacency.
//!
//! Two views are built from each triple set. The *entity graph* keeps
//! entities as nodes and relations as labeled directed edges; *meta-paths*
//! are extracted from it by walking shortest paths from source nodes
//! (zero in-degree) to sink nodes (zero out-degree). The *Levi graph*
//! promotes every relation occurrence to its own node with edges pointing
//! to the subject and object, and splits multi-token entities/relations
//! into a root node plus one node per extra token.

use std::collections::{HashMap, VecDeque};
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::triple::Triple;

/// A directed, relation-labeled edge between entity nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct EntityEdge {
    pub src: usize,
    pub dst: usize,
    pub relation: Vec<String>,
}

/// Entities as nodes, one labeled edge per input triple.
///
/// Nodes are stored in first-occurrence order (subject before object,
/// triples in input order); edges keep the input triple order, so edge
/// index `i` corresponds to triple `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct EntityGraph {
    pub nodes: Vec<Vec<String>>,
    pub edges: Vec<EntityEdge>,
    out_edges: Vec<Vec<usize>>,
}

/// Builds the entity graph for a triple set.
pub fn build_entity_graph(triples: &[Triple]) -> Result<EntityGraph> {
    if triples.is_empty() {
        return Err(Error::Graph("entity graph needs at least one triple".into()));
    }
    let mut nodes: Vec<Vec<String>> = Vec::new();
    let mut by_tokens: HashMap<Vec<String>, usize> = HashMap::new();
    let mut intern = |tokens: &Vec<String>, nodes: &mut Vec<Vec<String>>| -> usize {
        if let Some(&i) = by_tokens.get(tokens) {
            return i;
        }
        nodes.push(tokens.clone());
        by_tokens.insert(tokens.clone(), nodes.len() - 1);
        nodes.len() - 1
    };
    let mut edges = Vec::with_capacity(triples.len());
    for t in triples {
        let src = intern(&t.subject, &mut nodes);
        let dst = intern(&t.object, &mut nodes);
        edges.push(EntityEdge {
            src,
            dst,
            relation: t.relation.clone(),
        });
    }
    let mut out_edges = vec![Vec::new(); nodes.len()];
    for (i, e) in edges.iter().enumerate() {
        out_edges[e.src].push(i);
    }
    Ok(EntityGraph {
        nodes,
        edges,
        out_edges,
    })
}

impl EntityGraph {
    /// Source set: zero in-degree nodes in creation order. If the graph is
    /// cyclic enough to have none, falls back to the nodes maximizing
    /// (out-degree − in-degree), ties kept in creation order.
    pub fn source_nodes(&self) -> Vec<usize> {
        let (in_deg, out_deg) = self.degrees();
        let zero: Vec<usize> = (0..self.nodes.len()).filter(|&i| in_deg[i] == 0).collect();
        if !zero.is_empty() {
            return zero;
        }
        let score = |i: usize| out_deg[i] as i64 - in_deg[i] as i64;
        let best = (0..self.nodes.len()).map(score).max().unwrap_or(0);
        (0..self.nodes.len()).filter(|&i| score(i) == best).collect()
    }

    /// Sink set: zero out-degree nodes in creation order, with the symmetric
    /// cyclic fallback of maximal (in-degree − out-degree).
    pub fn sink_nodes(&self) -> Vec<usize> {
        let (in_deg, out_deg) = self.degrees();
        let zero: Vec<usize> = (0..self.nodes.len()).filter(|&i| out_deg[i] == 0).collect();
        if !zero.is_empty() {
            return zero;
        }
        let score = |i: usize| in_deg[i] as i64 - out_deg[i] as i64;
        let best = (0..self.nodes.len()).map(score).max().unwrap_or(0);
        (0..self.nodes.len()).filter(|&i| score(i) == best).collect()
    }

    fn degrees(&self) -> (Vec<usize>, Vec<usize>) {
        let mut in_deg = vec![0; self.nodes.len()];
        let mut out_deg = vec![0; self.nodes.len()];
        for e in &self.edges {
            out_deg[e.src] += 1;
            in_deg[e.dst] += 1;
        }
        (in_deg, out_deg)
    }

    /// Shortest path from `start` to `goal` as edge indices. Breadth-first
    /// expansion visits each node's out-edges in insertion order, and the
    /// first shortest path found wins, so ties resolve deterministically.
    fn shortest_path(&self, start: usize, goal: usize) -> Option<Vec<usize>> {
        let mut parent_edge: Vec<Option<usize>> = vec![None; self.nodes.len()];
        let mut visited = vec![false; self.nodes.len()];
        visited[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            for &e in &self.out_edges[u] {
                let v = self.edges[e].dst;
                if !visited[v] {
                    visited[v] = true;
                    parent_edge[v] = Some(e);
                    queue.push_back(v);
                }
            }
        }
        if !visited[goal] || start == goal {
            return if start == goal { Some(Vec::new()) } else { None };
        }
        let mut path = Vec::new();
        let mut cur = goal;
        while let Some(e) = parent_edge[cur] {
            path.push(e);
            cur = self.edges[e].src;
        }
        path.reverse();
        Some(path)
    }

    /// One `src -[label]-> dst` line per edge, in insertion order.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for e in &self.edges {
            let _ = writeln!(
                out,
                "{} -[{}]-> {}",
                self.nodes[e.src].join(" "),
                e.relation.join(" "),
                self.nodes[e.dst].join(" ")
            );
        }
        out
    }
}

/// The extracted meta-paths, plus a flattened token view for the encoder.
///
/// `boundaries[k]` is the offset of path `k` in `tokens`;
/// `tokens.len()` is the total length.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaPathSequence {
    pub paths: Vec<Vec<String>>,
    pub tokens: Vec<String>,
    pub boundaries: Vec<usize>,
}

impl MetaPathSequence {
    fn from_paths(paths: Vec<Vec<String>>) -> MetaPathSequence {
        let mut tokens = Vec::new();
        let mut boundaries = Vec::with_capacity(paths.len());
        for p in &paths {
            boundaries.push(tokens.len());
            tokens.extend(p.iter().cloned());
        }
        MetaPathSequence {
            paths,
            tokens,
            boundaries,
        }
    }

    /// Token ranges of the individual paths within `tokens`.
    pub fn path_ranges(&self) -> Vec<std::ops::Range<usize>> {
        self.boundaries
            .iter()
            .enumerate()
            .map(|(k, &start)| {
                let end = self
                    .boundaries
                    .get(k + 1)
                    .copied()
                    .unwrap_or(self.tokens.len());
                start..end
            })
            .collect()
    }
}

/// Extracts meta-paths from an entity graph.
///
/// For every (source, sink) pair — source and sink sets as defined by
/// [`EntityGraph::source_nodes`]/[`EntityGraph::sink_nodes`] — the shortest
/// path is kept, with entity and relation tokens interleaved. Pairs with no
/// path (and degenerate equal pairs) are skipped. Any triple not covered by
/// a selected path is appended as its own ⟨subject, relation, object⟩ path,
/// in input order, so the union of paths always covers the input.
pub fn compute_meta_paths(graph: &EntityGraph) -> MetaPathSequence {
    let sources = graph.source_nodes();
    let sinks = graph.sink_nodes();
    let mut covered = vec![false; graph.edges.len()];
    let mut paths: Vec<Vec<String>> = Vec::new();
    for &vi in &sources {
        for &vj in &sinks {
            if vi == vj {
                continue;
            }
            let Some(edge_path) = graph.shortest_path(vi, vj) else {
                continue;
            };
            if edge_path.is_empty() {
                continue;
            }
            let mut tokens = graph.nodes[vi].clone();
            for &e in &edge_path {
                covered[e] = true;
                tokens.extend(graph.edges[e].relation.iter().cloned());
                tokens.extend(graph.nodes[graph.edges[e].dst].iter().cloned());
            }
            paths.push(tokens);
        }
    }
    for (i, e) in graph.edges.iter().enumerate() {
        if !covered[i] {
            let mut tokens = graph.nodes[e.src].clone();
            tokens.extend(e.relation.iter().cloned());
            tokens.extend(graph.nodes[e.dst].iter().cloned());
            paths.push(tokens);
        }
    }
    MetaPathSequence::from_paths(paths)
}

/// What a Levi-graph node stands for (useful for debugging and tests).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LeviNodeKind {
    EntityRoot,
    EntityToken,
    RelationRoot,
    RelationToken,
}

/// Relation-as-node view of a triple set.
///
/// Each relation occurrence becomes a fresh node with edges
/// relation → subject-root and relation → object-root. Multi-token
/// entities and relations contribute a root node (their first token) plus
/// one node per extra token, attached by root → token edges. Shared
/// entities reuse their nodes; relations get one node per occurrence even
/// when the label repeats.
#[derive(Debug, Clone, PartialEq)]
pub struct LeviGraph {
    pub node_tokens: Vec<String>,
    pub node_kinds: Vec<LeviNodeKind>,
    pub edges: Vec<(usize, usize)>,
}

/// Builds the Levi graph for a triple set.
pub fn build_levi_graph(triples: &[Triple]) -> Result<LeviGraph> {
    if triples.is_empty() {
        return Err(Error::Graph("levi graph needs at least one triple".into()));
    }
    let mut g = LeviGraph {
        node_tokens: Vec::new(),
        node_kinds: Vec::new(),
        edges: Vec::new(),
    };
    let mut entity_root: HashMap<Vec<String>, usize> = HashMap::new();
    let add_node = |g: &mut LeviGraph, token: &str, kind: LeviNodeKind| -> usize {
        g.node_tokens.push(token.to_string());
        g.node_kinds.push(kind);
        g.node_tokens.len() - 1
    };
    let ensure_entity = |g: &mut LeviGraph,
                             entity_root: &mut HashMap<Vec<String>, usize>,
                             field: &Vec<String>|
     -> usize {
        if let Some(&root) = entity_root.get(field) {
            return root;
        }
        let root = {
            g.node_tokens.push(field[0].clone());
            g.node_kinds.push(LeviNodeKind::EntityRoot);
            g.node_tokens.len() - 1
        };
        for extra in &field[1..] {
            g.node_tokens.push(extra.clone());
            g.node_kinds.push(LeviNodeKind::EntityToken);
            let t = g.node_tokens.len() - 1;
            g.edges.push((root, t));
        }
        entity_root.insert(field.clone(), root);
        root
    };
    for t in triples {
        let s_root = ensure_entity(&mut g, &mut entity_root, &t.subject);
        let r_root = add_node(&mut g, &t.relation[0], LeviNodeKind::RelationRoot);
        for extra in &t.relation[1..] {
            let tok = add_node(&mut g, extra, LeviNodeKind::RelationToken);
            g.edges.push((r_root, tok));
        }
        let o_root = ensure_entity(&mut g, &mut entity_root, &t.object);
        g.edges.push((r_root, s_root));
        g.edges.push((r_root, o_root));
    }
    Ok(g)
}

impl LeviGraph {
    /// Number of nodes.
    pub fn len(&self) -> usize {
        self.node_tokens.len()
    }

    /// True when the graph has no nodes (never for a built graph).
    pub fn is_empty(&self) -> bool {
        self.node_tokens.is_empty()
    }

    /// Row-major binary adjacency over outgoing edges:
    /// `out[i][j] = 1` iff edge i → j exists.
    pub fn out_adjacency(&self) -> Vec<f64> {
        let n = self.len();
        let mut adj = vec![0.0; n * n];
        for &(src, dst) in &self.edges {
            adj[src * n + dst] = 1.0;
        }
        adj
    }

    /// Row-major binary adjacency over incoming edges — the transpose of
    /// [`LeviGraph::out_adjacency`].
    pub fn in_adjacency(&self) -> Vec<f64> {
        let n = self.len();
        let mut adj = vec![0.0; n * n];
        for &(src, dst) in &self.edges {
            adj[dst * n + src] = 1.0;
        }
        adj
    }

    /// One `src -[]-> dst` line per edge, in insertion order. Levi edges are
    /// unlabeled, so the label slot is left empty.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for &(src, dst) in &self.edges {
            let _ = writeln!(
                out,
                "{} -[]-> {}",
                self.node_tokens[src], self.node_tokens[dst]
            );
        }
        out
    }
}

/// Symmetrically normalizes a square binary adjacency matrix with added
/// self-loops: with `Â = A + I` and `D̂` the diagonal of row sums of `Â`,
/// returns `D̂^(-1/2) · Â · D̂^(-1/2)` in row-major order.
pub fn normalize_adjacency(adj: &[f64], n: usize) -> Result<Vec<f64>> {
    if adj.len() != n * n {
        return Err(Error::Shape(format!(
            "adjacency must be {n}x{n}, got {} entries",
            adj.len()
        )));
    }
    if adj.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::Shape("adjacency entries must be 0 or 1".into()));
    }
    let mut hat = adj.to_vec();
    for i in 0..n {
        hat[i * n + i] += 1.0;
    }
    let inv_sqrt_deg: Vec<f64> = (0..n)
        .map(|i| {
            let deg: f64 = hat[i * n..(i + 1) * n].iter().sum();
            1.0 / deg.sqrt()
        })
        .collect();
    let mut normalized = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            normalized[i * n + j] = hat[i * n + j] * inv_sqrt_deg[i] * inv_sqrt_deg[j];
        }
    }
    Ok(normalized)
}


#[cfg(test)]
mod property_tests {
    use super::*;
    use crate::triple::Triple;
    use proptest::prelude::*;

    fn arbitrary_triples() -> impl Strategy<Value = Vec<Triple>> {
        // Small token alphabet so entities collide and graphs get shape.
        let entity = prop_oneof![
            Just("a"), Just("b"), Just("c"), Just("d"), Just("e f")
        ];
        let relation = prop_oneof![Just("r1"), Just("r2"), Just("relName")];
        proptest::collection::vec((entity, relation, prop_oneof![
            Just("a"), Just("b"), Just("c"), Just("d"), Just("e f")
        ]), 1..8)
            .prop_map(|raw| {
                let mut triples: Vec<Triple> = Vec::new();
                for (s, r, o) in raw {
                    let t = Triple::from_raw(s, r, o).unwrap();
                    if !triples.contains(&t) {
                        triples.push(t);
                    }
                }
                triples
            })
            .prop_filter("at least one triple", |t| !t.is_empty())
    }

    proptest! {
        #[test]
        fn meta_paths_cover_every_triple(triples in arbitrary_triples()) {
            let g = build_entity_graph(&triples).unwrap();
            let seq = compute_meta_paths(&g);
            for t in &triples {
                let mut hop = t.subject.clone();
                hop.extend(t.relation.iter().cloned());
                hop.extend(t.object.iter().cloned());
                let covered = seq.paths.iter().any(|p| {
                    p.windows(hop.len()).any(|w| w == hop.as_slice())
                });
                prop_assert!(covered, "triple {:?} not covered by any path", t);
            }
        }

        #[test]
        fn meta_path_boundaries_are_consistent(triples in arbitrary_triples()) {
            let g = build_entity_graph(&triples).unwrap();
            let seq = compute_meta_paths(&g);
            prop_assert_eq!(seq.boundaries.len(), seq.paths.len());
            let mut offset = 0;
            for (k, p) in seq.paths.iter().enumerate() {
                prop_assert!(p.len() >= 3);
                prop_assert_eq!(seq.boundaries[k], offset);
                prop_assert_eq!(&seq.tokens[offset..offset + p.len()], p.as_slice());
                offset += p.len();
            }
            prop_assert_eq!(offset, seq.tokens.len());
        }

        #[test]
        fn source_and_sink_sets_never_empty(triples in arbitrary_triples()) {
            let g = build_entity_graph(&triples).unwrap();
            prop_assert!(!g.source_nodes().is_empty());
            prop_assert!(!g.sink_nodes().is_empty());
        }

        #[test]
        fn levi_adjacency_transpose_invariant(triples in arbitrary_triples()) {
            let g = build_levi_graph(&triples).unwrap();
            let n = g.len();
            let out = g.out_adjacency();
            let inc = g.in_adjacency();
            for i in 0..n {
                for j in 0..n {
                    prop_assert_eq!(out[i * n + j], inc[j * n + i]);
                }
            }
        }

        #[test]
        fn normalized_adjacency_rows_bounded(triples in arbitrary_triples()) {
            let g = build_levi_graph(&triples).unwrap();
            let n = g.len();
            let norm = normalize_adjacency(&g.out_adjacency(), n).unwrap();
            for &v in &norm {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            // Diagonal strictly positive thanks to self-loops.
            for i in 0..n {
                prop_assert!(norm[i * n + i] > 0.0);
            }
        }
    }
}
