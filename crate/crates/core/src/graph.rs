//! Attributed graphs: loading, connected components, adjacency
//! normalization, evaluation splits and feature corruption.

use std::collections::{HashSet, VecDeque};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GicError, Result};
use crate::kernels::{format_f64, DenseMatrix, SparseMatrixCsr};

/// Symmetric binary adjacency in CSR form, without self-loops.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Adjacency {
    offsets: Vec<usize>,
    indices: Vec<usize>,
}

impl Adjacency {
    /// Builds the adjacency of an undirected graph from an arbitrary edge
    /// list. Direction, duplicates and self-loops in the input are ignored.
    pub fn from_edges(num_nodes: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut lists: Vec<Vec<usize>> = vec![Vec::new(); num_nodes];
        for &(a, b) in edges {
            if a >= num_nodes || b >= num_nodes {
                return Err(GicError::Data(format!(
                    "edge ({a}, {b}) references a node outside 0..{num_nodes}"
                )));
            }
            if a != b {
                lists[a].push(b);
                lists[b].push(a);
            }
        }
        let mut offsets = Vec::with_capacity(num_nodes + 1);
        let mut indices = Vec::new();
        offsets.push(0);
        for l in &mut lists {
            l.sort_unstable();
            l.dedup();
            indices.extend_from_slice(l);
            offsets.push(indices.len());
        }
        Ok(Self { offsets, indices })
    }

    pub fn num_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    /// Number of undirected edges.
    pub fn num_edges(&self) -> usize {
        self.indices.len() / 2
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.indices[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.offsets[i + 1] - self.offsets[i]
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.neighbors(i).binary_search(&j).is_ok()
    }

    /// Undirected edges as `(i, j)` with `i < j`, in CSR order.
    pub fn edge_list(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.num_edges());
        for i in 0..self.num_nodes() {
            for &j in self.neighbors(i) {
                if i < j {
                    out.push((i, j));
                }
            }
        }
        out
    }

    /// Checks the structural invariants: sorted, in range, loop-free and
    /// symmetric.
    pub fn validate(&self) -> Result<()> {
        let n = self.num_nodes();
        for i in 0..n {
            let nb = self.neighbors(i);
            if nb.windows(2).any(|w| w[0] >= w[1]) {
                return Err(GicError::Data(format!("row {i} is not strictly increasing")));
            }
            for &j in nb {
                if j >= n {
                    return Err(GicError::Data(format!("row {i} references node {j} >= {n}")));
                }
                if j == i {
                    return Err(GicError::Data(format!("self-loop stored at node {i}")));
                }
                if !self.has_edge(j, i) {
                    return Err(GicError::Data(format!("edge ({i}, {j}) has no reverse")));
                }
            }
        }
        Ok(())
    }
}

/// The input graph `G = (A, X)` with optional node labels.
#[derive(Debug, Clone)]
pub struct AttributedGraph {
    adjacency: Arc<Adjacency>,
    features: DenseMatrix,
    labels: Option<Vec<usize>>,
    num_classes: usize,
}

impl AttributedGraph {
    pub fn new(
        adjacency: Adjacency,
        features: DenseMatrix,
        labels: Option<Vec<usize>>,
        num_classes: usize,
    ) -> Result<Self> {
        Self::with_shared_adjacency(Arc::new(adjacency), features, labels, num_classes)
    }

    pub fn with_shared_adjacency(
        adjacency: Arc<Adjacency>,
        features: DenseMatrix,
        labels: Option<Vec<usize>>,
        num_classes: usize,
    ) -> Result<Self> {
        let n = adjacency.num_nodes();
        if features.rows() != n {
            return Err(GicError::Data(format!(
                "feature matrix has {} rows for {n} nodes",
                features.rows()
            )));
        }
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(GicError::Data(format!("{} labels for {n} nodes", l.len())));
            }
            if let Some(&bad) = l.iter().find(|&&c| c >= num_classes) {
                return Err(GicError::Data(format!(
                    "label {bad} outside 0..{num_classes}"
                )));
            }
        }
        Ok(Self {
            adjacency,
            features,
            num_classes: if labels.is_some() { num_classes } else { 0 },
            labels,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.adjacency.num_nodes()
    }

    pub fn num_features(&self) -> usize {
        self.features.cols()
    }

    pub fn num_edges(&self) -> usize {
        self.adjacency.num_edges()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn adjacency(&self) -> &Adjacency {
        &self.adjacency
    }

    pub fn shared_adjacency(&self) -> &Arc<Adjacency> {
        &self.adjacency
    }

    pub fn features(&self) -> &DenseMatrix {
        &self.features
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    /// Labels, or a data error for unlabeled graphs.
    pub fn require_labels(&self) -> Result<&[usize]> {
        self.labels()
            .ok_or_else(|| GicError::Data("graph has no labels".into()))
    }

    /// Same nodes and features, different edges.
    pub fn with_adjacency(&self, adjacency: Adjacency) -> Result<Self> {
        Self::new(
            adjacency,
            self.features.clone(),
            self.labels.clone(),
            self.num_classes,
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Meta {
    num_nodes: usize,
    num_features: usize,
    #[serde(default)]
    num_classes: usize,
}

fn open_lines(path: &Path) -> Result<impl Iterator<Item = (usize, Result<String>)> + '_> {
    let file = std::fs::File::open(path).map_err(|e| GicError::io(path, e))?;
    Ok(BufReader::new(file)
        .lines()
        .enumerate()
        .map(move |(i, l)| (i + 1, l.map_err(|e| GicError::io(path, e))))
        .filter(|(_, l)| !matches!(l, Ok(s) if s.trim().is_empty())))
}

fn parse_index(path: &Path, line: usize, field: &str, bound: usize, what: &str) -> Result<usize> {
    let v: usize = field
        .trim()
        .parse()
        .map_err(|_| GicError::parse(path, line, format!("{what} {field:?} is not a non-negative integer")))?;
    if v >= bound {
        return Err(GicError::parse(
            path,
            line,
            format!("{what} {v} out of range 0..{bound}"),
        ));
    }
    Ok(v)
}

/// Loads a dataset directory (`meta.json`, `edges.csv`, `features.csv`,
/// optional `labels.csv`).
pub fn load_graph(dir: &Path) -> Result<AttributedGraph> {
    if !dir.is_dir() {
        return Err(GicError::io(
            dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "dataset directory not found"),
        ));
    }
    let meta_path = dir.join("meta.json");
    let meta_text = std::fs::read_to_string(&meta_path).map_err(|e| GicError::io(&meta_path, e))?;
    let meta: Meta = serde_json::from_str(&meta_text)
        .map_err(|e| GicError::parse(&meta_path, e.line(), e.to_string()))?;
    let n = meta.num_nodes;

    let edges_path = dir.join("edges.csv");
    let mut edges = Vec::new();
    for (line, text) in open_lines(&edges_path)? {
        let text = text?;
        let mut parts = text.split(',');
        let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(GicError::parse(&edges_path, line, "expected \"src,dst\""));
        };
        edges.push((
            parse_index(&edges_path, line, a, n, "node id")?,
            parse_index(&edges_path, line, b, n, "node id")?,
        ));
    }

    let features_path = dir.join("features.csv");
    let mut data = Vec::with_capacity(n * meta.num_features);
    let mut rows = 0;
    for (line, text) in open_lines(&features_path)? {
        let text = text?;
        if rows == n {
            return Err(GicError::parse(
                &features_path,
                line,
                format!("more than {n} feature rows"),
            ));
        }
        let before = data.len();
        for field in text.split(',') {
            let v: f64 = field.trim().parse().map_err(|_| {
                GicError::parse(&features_path, line, format!("non-numeric feature {field:?}"))
            })?;
            if !v.is_finite() {
                return Err(GicError::parse(&features_path, line, "non-finite feature"));
            }
            data.push(v);
        }
        if data.len() - before != meta.num_features {
            return Err(GicError::parse(
                &features_path,
                line,
                format!(
                    "expected {} features, found {}",
                    meta.num_features,
                    data.len() - before
                ),
            ));
        }
        rows += 1;
    }
    if rows != n {
        return Err(GicError::parse(
            &features_path,
            rows,
            format!("expected {n} feature rows, found {rows}"),
        ));
    }
    let features = DenseMatrix::from_vec(n, meta.num_features, data)?;

    let labels_path = dir.join("labels.csv");
    let labels = if labels_path.exists() {
        let mut labels = Vec::with_capacity(n);
        for (line, text) in open_lines(&labels_path)? {
            let text = text?;
            if labels.len() == n {
                return Err(GicError::parse(&labels_path, line, format!("more than {n} labels")));
            }
            labels.push(parse_index(&labels_path, line, &text, meta.num_classes, "label")?);
        }
        if labels.len() != n {
            return Err(GicError::parse(
                &labels_path,
                labels.len(),
                format!("expected {n} labels, found {}", labels.len()),
            ));
        }
        Some(labels)
    } else {
        None
    };

    AttributedGraph::new(Adjacency::from_edges(n, &edges)?, features, labels, meta.num_classes)
}

/// Writes `g` in the dataset directory format read by [`load_graph`].
pub fn save_graph(g: &AttributedGraph, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| GicError::io(dir, e))?;
    let meta = Meta {
        num_nodes: g.num_nodes(),
        num_features: g.num_features(),
        num_classes: g.num_classes(),
    };
    let meta_path = dir.join("meta.json");
    std::fs::write(&meta_path, serde_json::to_string(&meta).expect("meta serializes"))
        .map_err(|e| GicError::io(&meta_path, e))?;

    let write_lines = |name: &str, lines: &mut dyn Iterator<Item = String>| -> Result<()> {
        let path = dir.join(name);
        let file = std::fs::File::create(&path).map_err(|e| GicError::io(&path, e))?;
        let mut w = std::io::BufWriter::new(file);
        for l in lines {
            writeln!(w, "{l}").map_err(|e| GicError::io(&path, e))?;
        }
        w.flush().map_err(|e| GicError::io(&path, e))
    };
    write_lines(
        "edges.csv",
        &mut g.adjacency.edge_list().into_iter().map(|(a, b)| format!("{a},{b}")),
    )?;
    write_lines(
        "features.csv",
        &mut g.features.row_iter().map(|r| {
            r.iter().map(|&x| format_f64(x)).collect::<Vec<_>>().join(",")
        }),
    )?;
    if let Some(l) = &g.labels {
        write_lines("labels.csv", &mut l.iter().map(|c| c.to_string()))?;
    }
    Ok(())
}

/// Connected components, each as an ascending node list, ordered by their
/// smallest node id.
pub fn connected_components(adj: &Adjacency) -> Vec<Vec<usize>> {
    let n = adj.num_nodes();
    let mut seen = vec![false; n];
    let mut comps = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..n {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let mut comp = Vec::new();
        while let Some(u) = queue.pop_front() {
            comp.push(u);
            for &v in adj.neighbors(u) {
                if !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        comp.sort_unstable();
        comps.push(comp);
    }
    comps
}

/// Induced subgraph on `nodes` (ascending), renumbered `0..nodes.len()`.
pub fn induced_subgraph(g: &AttributedGraph, nodes: &[usize]) -> Result<AttributedGraph> {
    let mut new_id = vec![usize::MAX; g.num_nodes()];
    for (new, &old) in nodes.iter().enumerate() {
        new_id[old] = new;
    }
    let mut offsets = vec![0];
    let mut indices = Vec::new();
    for &old in nodes {
        for &nb in g.adjacency.neighbors(old) {
            if new_id[nb] != usize::MAX {
                indices.push(new_id[nb]);
            }
        }
        // Renumbering is monotone on an ascending node list, so rows stay sorted.
        offsets.push(indices.len());
    }
    let adjacency = Adjacency { offsets, indices };
    let labels = g.labels.as_ref().map(|l| nodes.iter().map(|&i| l[i]).collect());
    AttributedGraph::new(adjacency, g.features.select_rows(nodes), labels, g.num_classes)
}

/// Largest connected component with nodes renumbered `0..N'` in their
/// original order. Returns the graph and the new-to-old id map. Ties go to
/// the component containing the smallest node id.
pub fn extract_lcc(g: &AttributedGraph) -> Result<(AttributedGraph, Vec<usize>)> {
    let comps = connected_components(&g.adjacency);
    let mut best: &[usize] = &[];
    for c in &comps {
        if c.len() > best.len() {
            best = c;
        }
    }
    let best = best.to_vec();
    Ok((induced_subgraph(g, &best)?, best))
}

/// `D̂^{-1/2} (A + I) D̂^{-1/2}` with `d̂` the self-looped degree.
pub fn normalize_adjacency(g: &AttributedGraph) -> SparseMatrixCsr {
    normalize(&g.adjacency)
}

pub fn normalize(adj: &Adjacency) -> SparseMatrixCsr {
    let n = adj.num_nodes();
    let deg: Vec<u64> = (0..n).map(|i| adj.degree(i) as u64 + 1).collect();
    let weight = |i: usize, j: usize| 1.0 / ((deg[i] * deg[j]) as f64).sqrt();
    let mut offsets = Vec::with_capacity(n + 1);
    let mut indices = Vec::with_capacity(adj.indices.len() + n);
    let mut values = Vec::with_capacity(adj.indices.len() + n);
    offsets.push(0);
    for i in 0..n {
        let mut diag_done = false;
        for &j in adj.neighbors(i) {
            if !diag_done && j > i {
                indices.push(i);
                values.push(weight(i, i));
                diag_done = true;
            }
            indices.push(j);
            values.push(weight(i, j));
        }
        if !diag_done {
            indices.push(i);
            values.push(weight(i, i));
        }
        offsets.push(indices.len());
    }
    SparseMatrixCsr::new(n, n, offsets, indices, values).expect("normalized adjacency is valid CSR")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitMode {
    /// 20 (train) and 30 (validation) nodes drawn from every class.
    Balanced,
    /// 20·C and 30·C nodes drawn uniformly regardless of class.
    Imbalanced,
}

pub const TRAIN_PER_CLASS: usize = 20;
pub const VAL_PER_CLASS: usize = 30;

/// Train/validation/test partition of the node set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassificationSplit {
    pub mode: SplitMode,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn sample_classification_split<R: Rng + ?Sized>(
    g: &AttributedGraph,
    mode: SplitMode,
    rng: &mut R,
) -> Result<ClassificationSplit> {
    let labels = g.require_labels()?;
    let c = g.num_classes();
    let n = g.num_nodes();
    let (mut train, mut val) = (Vec::new(), Vec::new());
    match mode {
        SplitMode::Balanced => {
            let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); c];
            for (i, &l) in labels.iter().enumerate() {
                by_class[l].push(i);
            }
            for (class, members) in by_class.iter_mut().enumerate() {
                if members.len() < TRAIN_PER_CLASS + VAL_PER_CLASS {
                    return Err(GicError::Data(format!(
                        "class {class} has {} nodes; a balanced split needs {}",
                        members.len(),
                        TRAIN_PER_CLASS + VAL_PER_CLASS
                    )));
                }
                members.shuffle(rng);
                train.extend_from_slice(&members[..TRAIN_PER_CLASS]);
                val.extend_from_slice(&members[TRAIN_PER_CLASS..TRAIN_PER_CLASS + VAL_PER_CLASS]);
            }
        }
        SplitMode::Imbalanced => {
            let need = (TRAIN_PER_CLASS + VAL_PER_CLASS) * c;
            if need > n {
                return Err(GicError::Data(format!(
                    "graph has {n} nodes; the split needs {need}"
                )));
            }
            let mut all: Vec<usize> = (0..n).collect();
            all.shuffle(rng);
            train.extend_from_slice(&all[..TRAIN_PER_CLASS * c]);
            val.extend_from_slice(&all[TRAIN_PER_CLASS * c..need]);
        }
    }
    let mut used = vec![false; n];
    train.iter().chain(&val).for_each(|&i| used[i] = true);
    let test = (0..n).filter(|&i| !used[i]).collect();
    Ok(ClassificationSplit {
        mode,
        train,
        val,
        test,
    })
}

/// Held-out edges and sampled non-edges for link prediction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinkSplit {
    #[serde(skip)]
    train_graph: Option<AttributedGraph>,
    pub train_edges: Vec<(usize, usize)>,
    pub val_pos: Vec<(usize, usize)>,
    pub val_neg: Vec<(usize, usize)>,
    pub test_pos: Vec<(usize, usize)>,
    pub test_neg: Vec<(usize, usize)>,
}

impl LinkSplit {
    /// The input graph with the validation and test positives removed.
    pub fn train_graph(&self) -> &AttributedGraph {
        self.train_graph
            .as_ref()
            .expect("train graph is attached; call `attach` after deserializing")
    }

    /// Rebuilds the training graph from `original` after deserialization.
    pub fn attach(&mut self, original: &AttributedGraph) -> Result<()> {
        let adj = Adjacency::from_edges(original.num_nodes(), &self.train_edges)?;
        self.train_graph = Some(original.with_adjacency(adj)?);
        Ok(())
    }
}

pub const TEST_EDGE_FRACTION: f64 = 0.10;
pub const VAL_EDGE_FRACTION: f64 = 0.05;
pub const MIN_LINK_EDGES: usize = 20;
const NEGATIVE_ATTEMPTS_PER_POSITIVE: usize = 1000;

fn ordered(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Holds out 10% (test) and 5% (validation) of the undirected edges, both
/// rounded down, and pairs each set with as many sampled non-edges.
pub fn make_link_split<R: Rng + ?Sized>(g: &AttributedGraph, rng: &mut R) -> Result<LinkSplit> {
    let n = g.num_nodes();
    let mut edges = g.adjacency.edge_list();
    let m = edges.len();
    let n_test = (m as f64 * TEST_EDGE_FRACTION).floor() as usize;
    let n_val = (m as f64 * VAL_EDGE_FRACTION).floor() as usize;
    let n_neg = n_test + n_val;
    let capacity = n * n.saturating_sub(1) / 2 - m;
    if capacity == 0 || capacity < n_neg {
        return Err(GicError::Data(format!(
            "graph is too dense: {capacity} non-edges available, {n_neg} needed"
        )));
    }
    if m < MIN_LINK_EDGES {
        return Err(GicError::Data(format!(
            "link split needs at least {MIN_LINK_EDGES} edges, graph has {m}"
        )));
    }
    edges.shuffle(rng);
    let test_pos = edges[..n_test].to_vec();
    let val_pos = edges[n_test..n_test + n_val].to_vec();
    let train_edges = edges[n_test + n_val..].to_vec();

    let mut taken: HashSet<(usize, usize)> = HashSet::with_capacity(n_neg);
    let mut negatives = Vec::with_capacity(n_neg);
    let max_attempts = NEGATIVE_ATTEMPTS_PER_POSITIVE * n_neg;
    let mut attempts = 0;
    while negatives.len() < n_neg {
        if attempts == max_attempts {
            return Err(GicError::Data(format!(
                "found only {} of {n_neg} negative pairs after {max_attempts} draws",
                negatives.len()
            )));
        }
        attempts += 1;
        let a = rng.gen_range(0..n);
        let b = rng.gen_range(0..n);
        if a == b || g.adjacency.has_edge(a, b) {
            continue;
        }
        let pair = ordered(a, b);
        if taken.insert(pair) {
            negatives.push(pair);
        }
    }
    let val_neg = negatives.split_off(n_test);
    let test_neg = negatives;

    let train_graph = g.with_adjacency(Adjacency::from_edges(n, &train_edges)?)?;
    Ok(LinkSplit {
        train_graph: Some(train_graph),
        train_edges,
        val_pos,
        val_neg,
        test_pos,
        test_neg,
    })
}

/// Uniformly random permutation of `0..n`.
pub fn random_permutation<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}

/// The fake input: features row-shuffled, adjacency shared with `g`.
pub fn corrupt<R: Rng + ?Sized>(g: &AttributedGraph, rng: &mut R) -> AttributedGraph {
    let perm = random_permutation(g.num_nodes(), rng);
    corrupt_with(g, &perm)
}

/// Corruption with an explicit permutation: row `i` of the fake features is
/// row `perm[i]` of the real ones.
pub fn corrupt_with(g: &AttributedGraph, perm: &[usize]) -> AttributedGraph {
    AttributedGraph {
        adjacency: Arc::clone(&g.adjacency),
        features: g.features.permute_rows(perm),
        labels: g.labels.clone(),
        num_classes: g.num_classes,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    fn graph(n: usize, edges: &[(usize, usize)]) -> AttributedGraph {
        let feats = DenseMatrix::from_vec(n, 2, (0..2 * n).map(|x| x as f64).collect()).unwrap();
        AttributedGraph::new(Adjacency::from_edges(n, edges).unwrap(), feats, None, 0).unwrap()
    }

    #[test]
    fn edges_are_symmetrized_and_deduplicated() {
        let a = Adjacency::from_edges(3, &[(0, 1), (1, 0), (0, 1), (2, 2), (2, 1)]).unwrap();
        assert_eq!(a.offsets(), &[0, 1, 3, 4]);
        assert_eq!(a.indices(), &[1, 0, 2, 1]);
        assert_eq!(a.num_edges(), 2);
        a.validate().unwrap();
        assert!(Adjacency::from_edges(2, &[(0, 2)]).is_err());
    }

    #[test]
    fn lcc_of_connected_graph_is_identity() {
        let g = graph(3, &[(0, 1), (1, 2), (0, 2)]);
        let (lcc, map) = extract_lcc(&g).unwrap();
        assert_eq!(map, vec![0, 1, 2]);
        assert_eq!(lcc.adjacency(), g.adjacency());
        assert_eq!(lcc.features(), g.features());
    }

    #[test]
    fn lcc_tie_breaks_on_smallest_node_id() {
        // Isolated node 0, triangles {1,2,3} and {4,5,6}.
        let g = graph(7, &[(4, 5), (5, 6), (4, 6), (1, 2), (2, 3), (1, 3)]);
        let (lcc, map) = extract_lcc(&g).unwrap();
        assert_eq!(map, vec![1, 2, 3]);
        assert_eq!(lcc.num_edges(), 3);
        assert_eq!(lcc.features().row(0), g.features().row(1));
    }

    #[test]
    fn lcc_of_empty_graph_is_empty() {
        let g = graph(0, &[]);
        let (lcc, map) = extract_lcc(&g).unwrap();
        assert_eq!(lcc.num_nodes(), 0);
        assert!(map.is_empty());
    }

    #[test]
    fn normalization_small_cases() {
        let one = normalize_adjacency(&graph(1, &[]));
        assert_eq!(one.to_dense().as_slice(), &[1.0]);
        let two = normalize_adjacency(&graph(2, &[(0, 1)]));
        assert_eq!(two.to_dense().as_slice(), &[0.5; 4]);
    }

    #[test]
    fn normalization_matches_dense_oracle() {
        let g = graph(6, &[(0, 1), (0, 3), (1, 2), (2, 5), (3, 4), (1, 5), (0, 5)]);
        let n = 6;
        let mut a_hat = vec![vec![0.0; n]; n];
        for (i, row) in a_hat.iter_mut().enumerate() {
            row[i] = 1.0;
            for &j in g.adjacency().neighbors(i) {
                row[j] = 1.0;
            }
        }
        let d: Vec<f64> = a_hat.iter().map(|r| r.iter().sum()).collect();
        let got = normalize_adjacency(&g).to_dense();
        for i in 0..n {
            for j in 0..n {
                let want = d[i].powf(-0.5) * a_hat[i][j] * d[j].powf(-0.5);
                assert!((got.get(i, j) - want).abs() < 1e-15);
                assert_eq!(got.get(i, j), got.get(j, i));
            }
        }
    }

    fn labeled(counts: &[usize]) -> AttributedGraph {
        let labels: Vec<usize> = counts
            .iter()
            .enumerate()
            .flat_map(|(c, &k)| std::iter::repeat_n(c, k))
            .collect();
        let n = labels.len();
        AttributedGraph::new(
            Adjacency::from_edges(n, &[]).unwrap(),
            DenseMatrix::zeros(n, 1),
            Some(labels),
            counts.len(),
        )
        .unwrap()
    }

    #[test]
    fn balanced_split_on_single_class() {
        let g = labeled(&[60]);
        let s = sample_classification_split(&g, SplitMode::Balanced, &mut stream(1, Stream::Split))
            .unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (20, 30, 10));
    }

    #[test]
    fn balanced_split_counts_per_class() {
        let g = labeled(&[55, 80, 120]);
        let s = sample_classification_split(&g, SplitMode::Balanced, &mut stream(2, Stream::Split))
            .unwrap();
        let labels = g.labels().unwrap();
        for c in 0..3 {
            assert_eq!(s.train.iter().filter(|&&i| labels[i] == c).count(), 20);
            assert_eq!(s.val.iter().filter(|&&i| labels[i] == c).count(), 30);
        }
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..255).collect::<Vec<_>>());
    }

    #[test]
    fn balanced_split_rejects_small_class() {
        let g = labeled(&[60, 49]);
        let err = sample_classification_split(&g, SplitMode::Balanced, &mut stream(3, Stream::Split));
        assert!(matches!(err, Err(GicError::Data(_))));
    }

    #[test]
    fn link_split_arithmetic() {
        // A 100-edge graph on 40 nodes: a ring plus chords.
        let mut edges: Vec<(usize, usize)> = (0..40).map(|i| (i, (i + 1) % 40)).collect();
        edges.extend((0..40).map(|i| (i, (i + 2) % 40)));
        edges.extend((0..20).map(|i| (i, (i + 7) % 40)));
        let g = graph(40, &edges);
        assert_eq!(g.num_edges(), 100);
        let s = make_link_split(&g, &mut stream(4, Stream::Split)).unwrap();
        assert_eq!(s.test_pos.len(), 10);
        assert_eq!(s.val_pos.len(), 5);
        assert_eq!(s.train_graph().num_edges(), 85);
        assert_eq!(s.test_neg.len(), 10);
        assert_eq!(s.val_neg.len(), 5);
        s.train_graph().adjacency().validate().unwrap();
    }

    #[test]
    fn link_split_rejects_complete_graph() {
        let edges: Vec<(usize, usize)> = (0..5)
            .flat_map(|i| (i + 1..5).map(move |j| (i, j)))
            .collect();
        let g = graph(5, &edges);
        assert!(matches!(
            make_link_split(&g, &mut stream(5, Stream::Split)),
            Err(GicError::Data(_))
        ));
    }

    #[test]
    fn corruption_permutes_rows_and_shares_adjacency() {
        let g = graph(5, &[(0, 1), (2, 3)]);
        let mut rng = stream(6, Stream::Corruption);
        let fake = corrupt(&g, &mut rng);
        assert!(Arc::ptr_eq(g.shared_adjacency(), fake.shared_adjacency()));
        let mut a: Vec<Vec<u64>> = g.features().row_iter().map(|r| r.iter().map(|x| x.to_bits()).collect()).collect();
        let mut b: Vec<Vec<u64>> = fake.features().row_iter().map(|r| r.iter().map(|x| x.to_bits()).collect()).collect();
        a.sort();
        b.sort();
        assert_eq!(a, b);

        let single = graph(1, &[]);
        assert_eq!(corrupt(&single, &mut rng).features(), single.features());
    }

    #[test]
    fn corruption_is_deterministic_per_seed() {
        let p1 = random_permutation(5, &mut stream(11, Stream::Corruption));
        let p2 = random_permutation(5, &mut stream(11, Stream::Corruption));
        assert_eq!(p1, p2);
        // Frozen ChaCha8 draw for seed 11 on the corruption stream.
        assert_eq!(p1, FROZEN_PERM_SEED_11);
    }

    const FROZEN_PERM_SEED_11: [usize; 5] = [4, 3, 0, 1, 2];
}
