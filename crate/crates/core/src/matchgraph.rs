//! Image match graph and identity propagation.
//!
//! Nodes are catalog images, edges are accepted pair decisions. A query image
//! receives the identity of the reference images reachable from it, provided
//! exactly one identity is reachable.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::catalog::Catalog;
use crate::error::{Error, Result};
use crate::geomverify::PairDecision;
use crate::splitgen::Split;

/// Disjoint-set forest with path compression and union by size.
#[derive(Debug, Clone)]
pub struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        let mut root = x;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        while self.parent[x] != root {
            let next = self.parent[x];
            self.parent[x] = root;
            x = next;
        }
        root
    }

    /// Returns false when `a` and `b` were already connected.
    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
        true
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchGraph {
    nodes: Vec<String>,
    index: HashMap<String, usize>,
    edges: BTreeSet<(usize, usize)>,
    /// Component id per node; ids are numbered by each component's first node.
    component: Vec<usize>,
    n_components: usize,
}

impl MatchGraph {
    /// Graph over `nodes` (deduplicated and sorted) with undirected `edges`.
    pub fn from_edges<S: AsRef<str>>(nodes: impl IntoIterator<Item = S>, edges: &[(S, S)]) -> Result<Self> {
        let nodes: Vec<String> = nodes
            .into_iter()
            .map(|s| s.as_ref().to_string())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let index: HashMap<String, usize> = nodes.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        let lookup = |s: &S| {
            index
                .get(s.as_ref())
                .copied()
                .ok_or_else(|| Error::UnknownImage(s.as_ref().to_string()))
        };
        let mut edge_set = BTreeSet::new();
        for (a, b) in edges {
            let (i, j) = (lookup(a)?, lookup(b)?);
            if i != j {
                edge_set.insert((i.min(j), i.max(j)));
            }
        }
        let mut uf = UnionFind::new(nodes.len());
        for &(i, j) in &edge_set {
            uf.union(i, j);
        }
        let mut label: HashMap<usize, usize> = HashMap::new();
        let component: Vec<usize> = (0..nodes.len())
            .map(|i| {
                let root = uf.find(i);
                let next = label.len();
                *label.entry(root).or_insert(next)
            })
            .collect();
        Ok(MatchGraph {
            n_components: label.len(),
            nodes,
            index,
            edges: edge_set,
            component,
        })
    }

    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> impl Iterator<Item = (&str, &str)> {
        self.edges.iter().map(|&(i, j)| (self.nodes[i].as_str(), self.nodes[j].as_str()))
    }

    pub fn n_components(&self) -> usize {
        self.n_components
    }

    pub fn component_of(&self, image_id: &str) -> Option<usize> {
        self.index.get(image_id).map(|&i| self.component[i])
    }

    /// Members of every component, indexed by component id.
    pub fn components(&self) -> Vec<Vec<&str>> {
        let mut out = vec![Vec::new(); self.n_components];
        for (i, &c) in self.component.iter().enumerate() {
            out[c].push(self.nodes[i].as_str());
        }
        out
    }

    fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for &(i, j) in &self.edges {
            adj[i].push(j);
            adj[j].push(i);
        }
        adj
    }

    pub fn write_edge_list<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for (a, b) in self.edges() {
            writeln!(out, "{a} {b}")?;
        }
        Ok(())
    }

    pub fn write_components<W: Write>(&self, split: &Split, catalog: &Catalog, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["component_id", "size", "n_reference", "n_query", "identities"])?;
        for (cid, members) in self.components().into_iter().enumerate() {
            let n_ref = members.iter().filter(|m| split.reference.contains(**m)).count();
            let n_query = members.iter().filter(|m| split.query.contains(**m)).count();
            let ids: BTreeSet<&str> = members
                .iter()
                .filter(|m| split.reference.contains(**m))
                .filter_map(|m| catalog.individual_of(m))
                .collect();
            w.write_record([
                cid.to_string(),
                members.len().to_string(),
                n_ref.to_string(),
                n_query.to_string(),
                ids.into_iter().collect::<Vec<_>>().join(";"),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<components>", e))?;
        Ok(())
    }
}

/// One node per catalog image, one edge per accepted decision.
pub fn build_match_graph(decisions: &[PairDecision], catalog: &Catalog) -> Result<MatchGraph> {
    let edges: Vec<(&str, &str)> = decisions
        .iter()
        .filter(|d| d.decision.accepted)
        .map(|d| (d.image_a.as_str(), d.image_b.as_str()))
        .collect();
    for d in decisions {
        for id in [&d.image_a, &d.image_b] {
            if !catalog.contains(id) {
                return Err(Error::UnknownImage(id.clone()));
            }
        }
    }
    MatchGraph::from_edges(catalog.records().iter().map(|r| r.image_id.as_str()), &edges)
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Prediction {
    Identity(String),
    NoPrediction,
}

impl Prediction {
    pub fn identity(&self) -> Option<&str> {
        match self {
            Prediction::Identity(s) => Some(s),
            Prediction::NoPrediction => None,
        }
    }
}

/// Component whose reference images carry two or more identities.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Conflict {
    pub component_id: usize,
    pub identities: BTreeSet<String>,
    /// Query images left without prediction because of the conflict.
    pub query_images: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PredictionSet {
    pub predictions: BTreeMap<String, Prediction>,
    pub conflicts: Vec<Conflict>,
}

impl PredictionSet {
    pub fn n_predicted(&self) -> usize {
        self.predictions.values().filter(|p| p.identity().is_some()).count()
    }

    pub fn get(&self, image_id: &str) -> Option<&Prediction> {
        self.predictions.get(image_id)
    }

    pub fn write<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["image_id", "prediction"])?;
        for (id, p) in &self.predictions {
            w.write_record([id.as_str(), p.identity().unwrap_or("")])?;
        }
        w.flush().map_err(|e| Error::io("<predictions>", e))?;
        Ok(())
    }

    pub fn read<R: std::io::Read>(input: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let mut predictions = BTreeMap::new();
        for row in rdr.records() {
            let row = row?;
            let id = row.get(0).unwrap_or("").to_string();
            let p = match row.get(1).unwrap_or("") {
                "" => Prediction::NoPrediction,
                s => Prediction::Identity(s.to_string()),
            };
            predictions.insert(id, p);
        }
        Ok(PredictionSet {
            predictions,
            conflicts: Vec::new(),
        })
    }
}

/// Predicts identities for the split's query images.
///
/// With `max_hops = None` every image in the query image's connected component
/// is reachable; otherwise only images within that many edges.
pub fn propagate_identities(
    graph: &MatchGraph,
    split: &Split,
    catalog: &Catalog,
    max_hops: Option<usize>,
) -> PredictionSet {
    let ref_identity = |node: usize| -> Option<&str> {
        let id = &graph.nodes[node];
        if split.reference.contains(id) {
            catalog.individual_of(id)
        } else {
            None
        }
    };

    let mut out = PredictionSet::default();
    let mut conflicts: BTreeMap<usize, Conflict> = BTreeMap::new();

    let mut component_ids: Vec<BTreeSet<&str>> = vec![BTreeSet::new(); graph.n_components];
    for node in 0..graph.nodes.len() {
        if let Some(ind) = ref_identity(node) {
            component_ids[graph.component[node]].insert(ind);
        }
    }
    for (cid, ids) in component_ids.iter().enumerate() {
        if ids.len() >= 2 {
            conflicts.insert(
                cid,
                Conflict {
                    component_id: cid,
                    identities: ids.iter().map(|s| s.to_string()).collect(),
                    query_images: Vec::new(),
                },
            );
        }
    }

    let adj = max_hops.map(|_| graph.adjacency());
    for qid in &split.query {
        let Some(&node) = graph.index.get(qid) else {
            out.predictions.insert(qid.clone(), Prediction::NoPrediction);
            continue;
        };
        let reachable: BTreeSet<&str> = match (&adj, max_hops) {
            (Some(adj), Some(h)) => {
                let mut seen = BTreeSet::from([node]);
                let mut frontier = VecDeque::from([(node, 0usize)]);
                let mut ids = BTreeSet::new();
                while let Some((n, depth)) = frontier.pop_front() {
                    if let Some(ind) = ref_identity(n) {
                        ids.insert(ind);
                    }
                    if depth == h {
                        continue;
                    }
                    for &m in &adj[n] {
                        if seen.insert(m) {
                            frontier.push_back((m, depth + 1));
                        }
                    }
                }
                ids
            }
            _ => component_ids[graph.component[node]].clone(),
        };
        let prediction = match reachable.len() {
            1 => Prediction::Identity(reachable.into_iter().next().unwrap().to_string()),
            0 => Prediction::NoPrediction,
            _ => {
                let cid = graph.component[node];
                conflicts
                    .entry(cid)
                    .or_insert_with(|| Conflict {
                        component_id: cid,
                        identities: component_ids[cid].iter().map(|s| s.to_string()).collect(),
                        query_images: Vec::new(),
                    })
                    .query_images
                    .push(qid.clone());
                Prediction::NoPrediction
            }
        };
        out.predictions.insert(qid.clone(), prediction);
    }
    out.conflicts = conflicts.into_values().collect();
    out
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::catalog::tests::rec;
    use crate::splitgen::SplitPolicy;

    /// Two identities: blue (4 query images linked to a blue reference image) and
    /// orange (2 linked query images, 4 isolated ones), 10 reference images.
    pub(crate) fn toy_graph() -> (Catalog, Split, MatchGraph) {
        let mut records = Vec::new();
        let mut reference = BTreeSet::new();
        let mut query = BTreeSet::new();
        for i in 0..5 {
            records.push(rec(&format!("rb{i}"), "blue", "2015-01-01"));
            records.push(rec(&format!("ro{i}"), "orange", "2015-01-01"));
            reference.insert(format!("rb{i}"));
            reference.insert(format!("ro{i}"));
        }
        for i in 0..4 {
            records.push(rec(&format!("qb{i}"), "blue", "2016-01-01"));
            query.insert(format!("qb{i}"));
        }
        for i in 0..6 {
            records.push(rec(&format!("qo{i}"), "orange", "2016-01-01"));
            query.insert(format!("qo{i}"));
        }
        let catalog = Catalog::from_records(records).unwrap();
        let edges = [
            ("rb0", "qb0"),
            ("qb0", "qb1"),
            ("rb1", "qb2"),
            ("qb2", "qb3"),
            ("rb0", "rb1"),
            ("ro0", "qo0"),
            ("qo0", "qo1"),
            ("qo2", "qo3"),
            ("ro1", "ro2"),
        ];
        let graph =
            MatchGraph::from_edges(catalog.records().iter().map(|r| r.image_id.as_str()), &edges).unwrap();
        let split = Split {
            name: "toy".into(),
            policy: SplitPolicy::TimeProportion { proportion: 0.5 },
            reference,
            query,
            excluded: BTreeSet::new(),
        };
        (catalog, split, graph)
    }

    #[test]
    fn union_find_merges() {
        let mut uf = UnionFind::new(5);
        assert!(uf.union(0, 1));
        assert!(uf.union(3, 4));
        assert!(!uf.union(1, 0));
        assert!(uf.union(1, 4));
        assert_eq!(uf.find(0), uf.find(3));
        assert_ne!(uf.find(2), uf.find(0));
    }

    #[test]
    fn no_edges_means_singletons() {
        let g = MatchGraph::from_edges(["a", "b", "c"], &[]).unwrap();
        assert_eq!(g.n_components(), 3);
    }

    #[test]
    fn transitivity() {
        let g = MatchGraph::from_edges(["a", "b", "c", "d"], &[("a", "b"), ("b", "c")]).unwrap();
        assert_eq!(g.component_of("a"), g.component_of("c"));
        assert_ne!(g.component_of("a"), g.component_of("d"));
        assert!(MatchGraph::from_edges(["a"], &[("a", "zz")]).is_err());
    }

    #[test]
    fn pose_chain_is_one_component() {
        let poses = ["left", "top-left", "top", "front", "top-right", "right"];
        let edges: Vec<_> = poses.windows(2).map(|w| (w[0], w[1])).collect();
        let g = MatchGraph::from_edges(poses, &edges).unwrap();
        assert_eq!(g.n_components(), 1);
        assert_eq!(g.components()[0].len(), 6);
    }

    #[test]
    fn toy_graph_predictions() {
        let (catalog, split, graph) = toy_graph();
        let p = propagate_identities(&graph, &split, &catalog, None);
        let count = |who: &str| p.predictions.values().filter(|x| x.identity() == Some(who)).count();
        assert_eq!((count("blue"), count("orange")), (4, 2));
        assert_eq!(p.predictions.len() - p.n_predicted(), 4);
        assert!(p.conflicts.is_empty());

        // one hop reaches only direct neighbours of reference images
        let p1 = propagate_identities(&graph, &split, &catalog, Some(1));
        assert_eq!(p1.n_predicted(), 3);
        let p2 = propagate_identities(&graph, &split, &catalog, Some(2));
        assert_eq!(p2.n_predicted(), 6);
    }

    #[test]
    fn conflicting_component_gives_no_prediction() {
        let catalog = Catalog::from_records(vec![
            rec("x", "X", "2015-01-01"),
            rec("y", "Y", "2015-01-01"),
            rec("q", "X", "2016-01-01"),
        ])
        .unwrap();
        let g = MatchGraph::from_edges(["x", "y", "q"], &[("x", "q"), ("q", "y")]).unwrap();
        let split = Split {
            name: "s".into(),
            policy: SplitPolicy::TimeProportion { proportion: 0.5 },
            reference: ["x", "y"].map(String::from).into(),
            query: ["q".to_string()].into(),
            excluded: BTreeSet::new(),
        };
        let p = propagate_identities(&g, &split, &catalog, None);
        assert_eq!(p.get("q"), Some(&Prediction::NoPrediction));
        assert_eq!(p.conflicts.len(), 1);
        assert_eq!(p.conflicts[0].identities, ["X", "Y"].map(String::from).into());
        assert_eq!(p.conflicts[0].query_images, vec!["q".to_string()]);
    }

    #[test]
    fn exports() {
        let (catalog, split, graph) = toy_graph();
        let mut edges = Vec::new();
        graph.write_edge_list(&mut edges).unwrap();
        assert_eq!(String::from_utf8(edges).unwrap().lines().count(), 9);
        let mut comps = Vec::new();
        graph.write_components(&split, &catalog, &mut comps).unwrap();
        let text = String::from_utf8(comps).unwrap();
        assert!(text.starts_with("component_id,size,n_reference,n_query,identities\n"));
        assert_eq!(text.lines().count(), 1 + graph.n_components());
    }

    #[test]
    fn prediction_file_round_trip() {
        let (catalog, split, graph) = toy_graph();
        let p = propagate_identities(&graph, &split, &catalog, None);
        let mut buf = Vec::new();
        p.write(&mut buf).unwrap();
        let back = PredictionSet::read(&buf[..]).unwrap();
        assert_eq!(back.predictions, p.predictions);
    }
}
