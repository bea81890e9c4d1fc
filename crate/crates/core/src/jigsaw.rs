//! Girvan-Newman partitioning of the learned graph and the subgraph shuffles
//! used as a self-supervised classification target.

use std::collections::VecDeque;
use std::fmt;

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::numerics::RngStream;

/// Assignment of every node to one of `eta` subgraphs. Subgraph ids are
/// ordered by the smallest node index they contain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub assignment: Vec<usize>,
    pub eta: usize,
}

impl Partition {
    pub fn nodes(&self) -> usize {
        self.assignment.len()
    }

    /// Members of subgraph `id`, in increasing order.
    pub fn members(&self, id: usize) -> Vec<usize> {
        (0..self.nodes())
            .filter(|&n| self.assignment[n] == id)
            .collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.eta];
        for &a in &self.assignment {
            sizes[a] += 1;
        }
        sizes
    }

    fn from_groups(mut groups: Vec<Vec<usize>>, k: usize) -> Self {
        groups.iter_mut().for_each(|g| g.sort_unstable());
        groups.sort_by_key(|g| g[0]);
        let mut assignment = vec![0; k];
        for (id, g) in groups.iter().enumerate() {
            for &n in g {
                assignment[n] = id;
            }
        }
        Partition {
            assignment,
            eta: groups.len(),
        }
    }
}

fn symmetric_lists(edges: ArrayView2<'_, u8>) -> Vec<Vec<usize>> {
    let k = edges.nrows();
    (0..k)
        .map(|i| {
            (0..k)
                .filter(|&j| j != i && (edges[[i, j]] != 0 || edges[[j, i]] != 0))
                .collect()
        })
        .collect()
}

fn components(adj: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let k = adj.len();
    let mut seen = vec![false; k];
    let mut out = Vec::new();
    for s in 0..k {
        if seen[s] {
            continue;
        }
        seen[s] = true;
        let mut group = vec![s];
        let mut queue = VecDeque::from([s]);
        while let Some(u) = queue.pop_front() {
            for &w in &adj[u] {
                if !seen[w] {
                    seen[w] = true;
                    group.push(w);
                    queue.push_back(w);
                }
            }
        }
        out.push(group);
    }
    out
}

/// Shortest-path edge betweenness of an unweighted undirected graph, summed
/// over ordered source/target pairs. Indexed `[[min, max]]`.
pub fn edge_betweenness(adj: &[Vec<usize>]) -> Array2<f64> {
    let k = adj.len();
    let mut bet = Array2::zeros((k, k));
    for s in 0..k {
        let mut order = Vec::with_capacity(k);
        let mut preds: Vec<Vec<usize>> = vec![Vec::new(); k];
        let mut sigma = vec![0.0f64; k];
        let mut dist = vec![usize::MAX; k];
        sigma[s] = 1.0;
        dist[s] = 0;
        let mut queue = VecDeque::from([s]);
        while let Some(u) = queue.pop_front() {
            order.push(u);
            for &w in &adj[u] {
                if dist[w] == usize::MAX {
                    dist[w] = dist[u] + 1;
                    queue.push_back(w);
                }
                if dist[w] == dist[u] + 1 {
                    sigma[w] += sigma[u];
                    preds[w].push(u);
                }
            }
        }
        let mut delta = vec![0.0f64; k];
        for &w in order.iter().rev() {
            for &u in &preds[w] {
                let c = sigma[u] / sigma[w] * (1.0 + delta[w]);
                bet[[u.min(w), u.max(w)]] += c;
                delta[u] += c;
            }
        }
    }
    bet
}

/// Relative slack under which two betweenness values count as tied.
const BETWEENNESS_TIE: f64 = 1e-9;

/// Splits the symmetrized graph into exactly `eta` connected groups by
/// repeatedly deleting the edge of highest betweenness (ties: smallest
/// `(k, n)`). When the graph already has more than `eta` components, the two
/// smallest components (ties: lower first node) are merged until `eta` remain.
pub fn extract_subgraphs(edges: ArrayView2<'_, u8>, eta: usize) -> Result<Partition> {
    let k = edges.nrows();
    if eta < 2 || eta > k {
        return Err(Error::Config(format!("subgraph count {eta} outside [2, {k}]")));
    }
    let mut adj = symmetric_lists(edges);
    let mut groups = components(&adj);
    while groups.len() < eta {
        let bet = edge_betweenness(&adj);
        let top = bet.iter().fold(0.0f64, |m, &v| m.max(v));
        let (a, b) = (0..k)
            .flat_map(|i| (i + 1..k).map(move |j| (i, j)))
            .find(|&(i, j)| adj[i].contains(&j) && bet[[i, j]] >= top * (1.0 - BETWEENNESS_TIE))
            .expect("a graph with fewer than K components has an edge");
        adj[a].retain(|&x| x != b);
        adj[b].retain(|&x| x != a);
        groups = components(&adj);
    }
    while groups.len() > eta {
        groups.iter_mut().for_each(|g| g.sort_unstable());
        groups.sort_by_key(|g| (g.len(), g[0]));
        let first = groups.remove(0);
        groups[0].extend(first);
    }
    Ok(Partition::from_groups(groups, k))
}

/// Number of symmetrized edges from `node` to other members of its own
/// subgraph.
pub fn node_density(partition: &Partition, edges: ArrayView2<'_, u8>, node: usize) -> usize {
    let own = partition.assignment[node];
    (0..partition.nodes())
        .filter(|&n| {
            n != node
                && partition.assignment[n] == own
                && (edges[[node, n]] != 0 || edges[[n, node]] != 0)
        })
        .count()
}

/// Node relabeling: node `u` moves to position `map[u]`, so a permuted
/// matrix satisfies `out[[map[u], map[v]]] = a[[u, v]]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Permutation {
    pub map: Vec<usize>,
}

impl Permutation {
    pub fn identity(n: usize) -> Self {
        Permutation {
            map: (0..n).collect(),
        }
    }

    /// Validates that `map` is a bijection on `0..map.len()`.
    pub fn new(map: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; map.len()];
        for &m in &map {
            if m >= map.len() || std::mem::replace(&mut seen[m], true) {
                return Err(Error::contract(format!("{map:?} is not a permutation")));
            }
        }
        Ok(Permutation { map })
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn is_identity(&self) -> bool {
        self.map.iter().enumerate().all(|(i, &m)| i == m)
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.len()];
        for (u, &m) in self.map.iter().enumerate() {
            inv[m] = u;
        }
        Permutation { map: inv }
    }

    /// `P A P^T`.
    pub fn apply<T: Clone>(&self, a: ArrayView2<'_, T>) -> Array2<T> {
        let inv = self.inverse();
        Array2::from_shape_fn(a.raw_dim(), |(i, j)| a[[inv.map[i], inv.map[j]]].clone())
    }

    /// Row-wise relabeling: `out[map[u]] = rows[u]`.
    pub fn apply_rows<T: Clone>(&self, rows: ArrayView2<'_, T>) -> Array2<T> {
        let inv = self.inverse();
        Array2::from_shape_fn(rows.raw_dim(), |(i, j)| rows[[inv.map[i], j]].clone())
    }

    /// Dense permutation matrix with `P[[map[u], u]] = 1`.
    pub fn matrix(&self) -> Array2<f64> {
        let mut p = Array2::zeros((self.len(), self.len()));
        for (u, &m) in self.map.iter().enumerate() {
            p[[m, u]] = 1.0;
        }
        p
    }

    /// Non-trivial cycles, each starting at its smallest node.
    pub fn cycles(&self) -> Vec<Vec<usize>> {
        let mut seen = vec![false; self.len()];
        let mut out = Vec::new();
        for s in 0..self.len() {
            if seen[s] || self.map[s] == s {
                continue;
            }
            let mut cycle = Vec::new();
            let mut u = s;
            while !seen[u] {
                seen[u] = true;
                cycle.push(u);
                u = self.map[u];
            }
            out.push(cycle);
        }
        out
    }
}

impl fmt::Display for Permutation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let cycles = self.cycles();
        if cycles.is_empty() {
            return f.write_str("()");
        }
        for c in cycles {
            let parts: Vec<String> = c.iter().map(|n| n.to_string()).collect();
            write!(f, "({})", parts.join(" "))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PuzzleKind {
    /// Swap density-ranked nodes between two subgraphs.
    #[default]
    Inter,
    /// Shuffle nodes inside one subgraph.
    Intra,
}

impl PuzzleKind {
    pub fn name(self) -> &'static str {
        match self {
            PuzzleKind::Inter => "inter",
            PuzzleKind::Intra => "intra",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "inter" => Some(PuzzleKind::Inter),
            "intra" => Some(PuzzleKind::Intra),
            _ => None,
        }
    }
}

/// Number of puzzle classes: unordered subgraph pairs for inter moves, one
/// per subgraph for intra moves.
pub fn class_count(kind: PuzzleKind, eta: usize) -> usize {
    match kind {
        PuzzleKind::Inter => eta * eta.saturating_sub(1) / 2,
        PuzzleKind::Intra => eta,
    }
}

/// Lexicographic index of the pair `(i, j)`, `i < j < eta`.
pub fn pair_class(i: usize, j: usize, eta: usize) -> usize {
    assert!(i < j && j < eta, "pair ({i}, {j}) invalid for {eta} subgraphs");
    i * (2 * eta - i - 1) / 2 + (j - i - 1)
}

/// Inverse of [`pair_class`].
pub fn class_pair(class: usize, eta: usize) -> (usize, usize) {
    let mut rest = class;
    for i in 0..eta {
        let row = eta - i - 1;
        if rest < row {
            return (i, i + 1 + rest);
        }
        rest -= row;
    }
    panic!("class {class} out of range for {eta} subgraphs");
}

#[derive(Debug, Clone, PartialEq)]
pub struct PuzzleMove {
    pub kind: PuzzleKind,
    /// Two subgraph ids `i < j` for inter moves, one id for intra moves.
    pub subgraphs: Vec<usize>,
    /// Members of each chosen subgraph in the order they were paired
    /// (density descending for inter moves).
    pub ranks: Vec<Vec<usize>>,
    pub perm: Permutation,
    pub class: usize,
    pub classes: usize,
}

impl PuzzleMove {
    /// No-op move used when the puzzle is disabled.
    pub fn identity(k: usize) -> Self {
        PuzzleMove {
            kind: PuzzleKind::Inter,
            subgraphs: Vec::new(),
            ranks: Vec::new(),
            perm: Permutation::identity(k),
            class: 0,
            classes: 0,
        }
    }

    pub fn one_hot(&self) -> Vec<f64> {
        (0..self.classes)
            .map(|c| if c == self.class { 1.0 } else { 0.0 })
            .collect()
    }
}

fn density_order(partition: &Partition, edges: ArrayView2<'_, u8>, id: usize) -> Vec<usize> {
    let mut members = partition.members(id);
    // Stable sort keeps lower indices first among equal densities.
    members.sort_by_key(|&n| std::cmp::Reverse(node_density(partition, edges, n)));
    members
}

/// Picks a uniformly random subgraph pair and swaps their members rank by
/// rank in order of decreasing density; unmatched members stay put.
pub fn shuffle_inter(
    edges: ArrayView2<'_, u8>,
    partition: &Partition,
    rng: &mut RngStream,
) -> Result<(Array2<u8>, PuzzleMove)> {
    let eta = partition.eta;
    if eta < 2 {
        return Err(Error::DegeneratePartition(
            "inter shuffle needs at least two subgraphs".into(),
        ));
    }
    let classes = class_count(PuzzleKind::Inter, eta);
    let class = rng.below(classes);
    let (i, j) = class_pair(class, eta);
    let ri = density_order(partition, edges, i);
    let rj = density_order(partition, edges, j);
    let mut map: Vec<usize> = (0..partition.nodes()).collect();
    for (&a, &b) in ri.iter().zip(&rj) {
        map.swap(a, b);
    }
    let perm = Permutation::new(map)?;
    let permuted = perm.apply(edges);
    Ok((
        permuted,
        PuzzleMove {
            kind: PuzzleKind::Inter,
            subgraphs: vec![i, j],
            ranks: vec![ri, rj],
            perm,
            class,
            classes,
        },
    ))
}

/// Picks a uniformly random subgraph with at least two members and applies
/// a uniformly random non-identity shuffle of its members.
pub fn shuffle_intra(
    edges: ArrayView2<'_, u8>,
    partition: &Partition,
    rng: &mut RngStream,
) -> Result<(Array2<u8>, PuzzleMove)> {
    let sizes = partition.sizes();
    let eligible: Vec<usize> = (0..partition.eta).filter(|&i| sizes[i] >= 2).collect();
    if eligible.is_empty() {
        return Err(Error::DegeneratePartition(
            "every subgraph is a single node; no intra shuffle exists".into(),
        ));
    }
    let id = eligible[rng.below(eligible.len())];
    let members = partition.members(id);
    let mut targets = members.clone();
    while targets == members {
        rng.shuffle(&mut targets);
    }
    let mut map: Vec<usize> = (0..partition.nodes()).collect();
    for (&from, &to) in members.iter().zip(&targets) {
        map[from] = to;
    }
    let perm = Permutation::new(map)?;
    let permuted = perm.apply(edges);
    Ok((
        permuted,
        PuzzleMove {
            kind: PuzzleKind::Intra,
            subgraphs: vec![id],
            ranks: vec![members],
            perm,
            class: id,
            classes: partition.eta,
        },
    ))
}

/// Dispatches on `kind`.
pub fn shuffle(
    kind: PuzzleKind,
    edges: ArrayView2<'_, u8>,
    partition: &Partition,
    rng: &mut RngStream,
) -> Result<(Array2<u8>, PuzzleMove)> {
    match kind {
        PuzzleKind::Inter => shuffle_inter(edges, partition, rng),
        PuzzleKind::Intra => shuffle_intra(edges, partition, rng),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn graph(k: usize, pairs: &[(usize, usize)]) -> Array2<u8> {
        let mut a = Array2::zeros((k, k));
        for &(i, j) in pairs {
            a[[i, j]] = 1;
        }
        a
    }

    fn cycle(k: usize) -> Array2<u8> {
        graph(k, &(0..k).map(|i| (i, (i + 1) % k)).collect::<Vec<_>>())
    }

    #[test]
    fn eta_equal_k_isolates_nodes() {
        let p = extract_subgraphs(cycle(5).view(), 5).unwrap();
        assert_eq!(p.assignment, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn six_cycle_splits_into_paths() {
        let p = extract_subgraphs(cycle(6).view(), 2).unwrap();
        // All edges tie; (0,1) goes first, then the opposite edge (3,4) has
        // the unique highest betweenness on the remaining path.
        assert_eq!(p.members(0), vec![0, 4, 5]);
        assert_eq!(p.members(1), vec![1, 2, 3]);
    }

    #[test]
    fn eta_out_of_range() {
        assert!(matches!(extract_subgraphs(cycle(4).view(), 1), Err(Error::Config(_))));
        assert!(matches!(extract_subgraphs(cycle(4).view(), 5), Err(Error::Config(_))));
    }

    #[test]
    fn excess_components_are_merged() {
        let a = graph(5, &[(0, 1)]);
        let p = extract_subgraphs(a.view(), 2).unwrap();
        assert_eq!(p.eta, 2);
        // {2} absorbs into {3}; then {4}, now the smallest, joins {0, 1}.
        assert_eq!(p.members(0), vec![0, 1, 4]);
        assert_eq!(p.members(1), vec![2, 3]);
    }

    #[test]
    fn densities() {
        let a = graph(7, &[(0, 1), (1, 2), (2, 0), (3, 4), (3, 5), (6, 3), (2, 3)]);
        let p = Partition {
            assignment: vec![0, 0, 0, 1, 1, 1, 1],
            eta: 2,
        };
        assert_eq!(node_density(&p, a.view(), 0), 2);
        assert_eq!(node_density(&p, a.view(), 2), 2);
        assert_eq!(node_density(&p, a.view(), 3), 3);
        assert_eq!(node_density(&p, a.view(), 6), 1);
        let single = Partition {
            assignment: vec![0, 0, 0, 1, 1, 1, 2],
            eta: 3,
        };
        assert_eq!(node_density(&single, a.view(), 6), 0);
    }

    #[test]
    fn pair_classes_are_lexicographic() {
        assert_eq!(pair_class(0, 1, 4), 0);
        assert_eq!(pair_class(2, 3, 4), 5);
        assert_eq!(class_count(PuzzleKind::Inter, 4), 6);
        assert_eq!(class_count(PuzzleKind::Inter, 2), 1);
        assert_eq!(class_count(PuzzleKind::Intra, 5), 5);
        for eta in 2..8 {
            let mut c = 0;
            for i in 0..eta {
                for j in i + 1..eta {
                    assert_eq!(pair_class(i, j, eta), c);
                    assert_eq!(class_pair(c, eta), (i, j));
                    c += 1;
                }
            }
        }
    }

    #[test]
    fn inter_swaps_densest_first() {
        let a = graph(7, &[(0, 1), (1, 2), (2, 0), (3, 4), (3, 5), (6, 3), (2, 3)]);
        let p = Partition {
            assignment: vec![0, 0, 0, 1, 1, 1, 1],
            eta: 2,
        };
        let (_, mv) = shuffle_inter(a.view(), &p, &mut RngStream::new(0)).unwrap();
        assert_eq!(mv.ranks, vec![vec![0, 1, 2], vec![3, 4, 5, 6]]);
        assert_eq!(mv.perm.map, vec![3, 4, 5, 0, 1, 2, 6]);
        assert_eq!(mv.class, 0);
    }

    #[test]
    fn intra_needs_a_non_singleton() {
        let p = Partition {
            assignment: vec![0, 1, 2],
            eta: 3,
        };
        let a = cycle(3);
        assert!(matches!(
            shuffle_intra(a.view(), &p, &mut RngStream::new(0)),
            Err(Error::DegeneratePartition(_))
        ));
        let p = Partition {
            assignment: vec![0, 1, 1],
            eta: 2,
        };
        let (out, mv) = shuffle_intra(a.view(), &p, &mut RngStream::new(0)).unwrap();
        assert_eq!(mv.perm.map, vec![0, 2, 1]);
        assert_eq!(mv.class, 1);
        assert_eq!(mv.perm.apply(out.view()), a);
    }

    #[test]
    fn permutation_display_and_matrix() {
        let p = Permutation::new(vec![1, 2, 0, 3]).unwrap();
        assert_eq!(p.to_string(), "(0 1 2)");
        let a = Array2::from_shape_fn((4, 4), |(i, j)| (i * 4 + j) as f64);
        let m = p.matrix();
        assert_eq!(p.apply(a.view()), m.dot(&a).dot(&m.t()));
        assert!(Permutation::new(vec![0, 0]).is_err());
    }
}
