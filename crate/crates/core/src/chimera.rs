//! Chimera graphs, random ±J instances, gauges and the instance text format.
//!
//! Vertex numbering is row-major over unit cells, then half, then intra-half
//! index: cell `(i, j)` of an `r × c` grid with half-size `k` owns vertices
//! `((i*c + j)*2 + u)*k + m` for half `u ∈ {0, 1}` and `m ∈ 0..k`. Half 0
//! couples vertically (to the same `m` in cells `(i±1, j)`), half 1 couples
//! horizontally (to cells `(i, j±1)`); the two halves of a cell form a
//! complete bipartite K_{k,k}. This numbering is part of the file format, so
//! instance files are portable.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::sync::Arc;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::util::fmt_roundtrip;

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("graph dimensions must be positive (got r={0}, c={1}, k={2})")]
    BadDimensions(u32, u32, u32),
    #[error("dead vertex {0} outside ideal vertex range 0..{1}")]
    DeadOutOfRange(u32, u32),
}

#[derive(Debug, Error, PartialEq)]
pub enum InstanceError {
    #[error("configuration has {got} spins, instance has {want} active vertices")]
    DimensionMismatch { got: usize, want: usize },
    #[error("gauge has {got} entries, instance has {want} active vertices")]
    GaugeMismatch { got: usize, want: usize },
}

/// Structured parse failure for the instance text format.
#[derive(Debug, Error, PartialEq)]
#[error("line {line}: {msg}")]
pub struct ParseError {
    pub line: usize,
    pub msg: String,
}

impl ParseError {
    fn new(line: usize, msg: impl Into<String>) -> Self {
        ParseError { line, msg: msg.into() }
    }
}

/// A Chimera-family graph: an `r × c` grid of K_{k,k} unit cells with
/// inter-cell couplers, possibly with dead (removed) vertices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChimeraGraph {
    pub rows: u32,
    pub cols: u32,
    pub half: u32,
    pub dead: BTreeSet<u32>,
    /// Undirected edges `(u, v)` with `u < v`, sorted, never touching a dead
    /// vertex.
    pub edges: Vec<(u32, u32)>,
    /// Active (non-dead) vertex ids, ascending.
    active: Vec<u32>,
    /// Ideal-id → active index.
    active_index: Vec<Option<u32>>,
    /// CSR adjacency over active indices: `(neighbor_active_idx, edge_idx)`.
    adj_offsets: Vec<u32>,
    adj: Vec<(u32, u32)>,
    /// Bipartition class (0/1) per active vertex.
    parity: Vec<u8>,
}

impl ChimeraGraph {
    pub fn ideal_vertex_count(&self) -> usize {
        (2 * self.half * self.rows * self.cols) as usize
    }

    /// Number of active (non-dead) vertices.
    pub fn n(&self) -> usize {
        self.active.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn active_vertices(&self) -> &[u32] {
        &self.active
    }

    /// Active index of an ideal vertex id, or `None` if dead/out of range.
    pub fn active_index(&self, v: u32) -> Option<u32> {
        self.active_index.get(v as usize).copied().flatten()
    }

    /// Neighbors of the active vertex `i` as `(active_idx, edge_idx)` pairs.
    pub fn neighbors(&self, i: u32) -> &[(u32, u32)] {
        let a = self.adj_offsets[i as usize] as usize;
        let b = self.adj_offsets[i as usize + 1] as usize;
        &self.adj[a..b]
    }

    pub fn degree(&self, i: u32) -> u32 {
        self.adj_offsets[i as usize + 1] - self.adj_offsets[i as usize]
    }

    /// Bipartition class of active vertex `i`. No edge connects two vertices
    /// of the same class, which is what makes alternating-partition sweeps
    /// valid.
    pub fn parity(&self, i: u32) -> u8 {
        self.parity[i as usize]
    }

    /// Active indices of one bipartition class, ascending.
    pub fn half_sites(&self, class: u8) -> Vec<u32> {
        (0..self.n() as u32).filter(|&i| self.parity(i) == class).collect()
    }

    /// Decomposes an ideal vertex id into `(row, col, half, intra)`.
    pub fn decode(&self, v: u32) -> (u32, u32, u32, u32) {
        let m = v % self.half;
        let rest = v / self.half;
        let u = rest % 2;
        let cell = rest / 2;
        (cell / self.cols, cell % self.cols, u, m)
    }

    /// Ideal vertex id for `(row, col, half, intra)`.
    pub fn encode(&self, i: u32, j: u32, u: u32, m: u32) -> u32 {
        ((i * self.cols + j) * 2 + u) * self.half + m
    }
}

/// Builds a Chimera graph, removing `dead` vertices and their incident edges.
///
/// Deterministic for fixed inputs: edges come out sorted with `u < v`.
pub fn build_chimera(
    r: u32,
    c: u32,
    k: u32,
    dead: &BTreeSet<u32>,
) -> Result<ChimeraGraph, GraphError> {
    if r < 1 || c < 1 || k < 1 {
        return Err(GraphError::BadDimensions(r, c, k));
    }
    let ideal = 2 * k * r * c;
    for &d in dead {
        if d >= ideal {
            return Err(GraphError::DeadOutOfRange(d, ideal));
        }
    }
    let enc = |i: u32, j: u32, u: u32, m: u32| ((i * c + j) * 2 + u) * k + m;
    let alive = |v: u32| !dead.contains(&v);
    let mut edges = Vec::new();
    let mut push = |a: u32, b: u32| {
        if alive(a) && alive(b) {
            edges.push((a.min(b), a.max(b)));
        }
    };
    for i in 0..r {
        for j in 0..c {
            // Intra-cell K_{k,k}.
            for m0 in 0..k {
                for m1 in 0..k {
                    push(enc(i, j, 0, m0), enc(i, j, 1, m1));
                }
            }
            // Vertical couplers (half 0) to the cell below.
            if i + 1 < r {
                for m in 0..k {
                    push(enc(i, j, 0, m), enc(i + 1, j, 0, m));
                }
            }
            // Horizontal couplers (half 1) to the cell to the right.
            if j + 1 < c {
                for m in 0..k {
                    push(enc(i, j, 1, m), enc(i, j + 1, 1, m));
                }
            }
        }
    }
    edges.sort_unstable();
    edges.dedup();

    let active: Vec<u32> = (0..ideal).filter(|v| alive(*v)).collect();
    let mut active_index = vec![None; ideal as usize];
    for (idx, &v) in active.iter().enumerate() {
        active_index[v as usize] = Some(idx as u32);
    }
    // Class = (half + cell row + cell col) mod 2; each half-cell is
    // monochromatic, and every edge type flips exactly one of the three
    // summands.
    let parity: Vec<u8> = active
        .iter()
        .map(|&v| {
            let m = v / k;
            let u = m % 2;
            let cell = m / 2;
            let (i, j) = (cell / c, cell % c);
            ((u + i + j) % 2) as u8
        })
        .collect();

    let n = active.len();
    let mut degrees = vec![0u32; n];
    for &(a, b) in &edges {
        degrees[active_index[a as usize].unwrap() as usize] += 1;
        degrees[active_index[b as usize].unwrap() as usize] += 1;
    }
    let mut adj_offsets = vec![0u32; n + 1];
    for i in 0..n {
        adj_offsets[i + 1] = adj_offsets[i] + degrees[i];
    }
    let mut adj = vec![(0u32, 0u32); edges.len() * 2];
    let mut cursor: Vec<u32> = adj_offsets[..n].to_vec();
    for (e, &(a, b)) in edges.iter().enumerate() {
        let ia = active_index[a as usize].unwrap();
        let ib = active_index[b as usize].unwrap();
        adj[cursor[ia as usize] as usize] = (ib, e as u32);
        cursor[ia as usize] += 1;
        adj[cursor[ib as usize] as usize] = (ia, e as u32);
        cursor[ib as usize] += 1;
    }

    Ok(ChimeraGraph {
        rows: r,
        cols: c,
        half: k,
        dead: dead.clone(),
        edges,
        active,
        active_index,
        adj_offsets,
        adj,
        parity,
    })
}

/// Spin assignment over the active vertices of a graph, each entry ±1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpinConfig {
    pub spins: Vec<i8>,
}

impl SpinConfig {
    pub fn n(&self) -> usize {
        self.spins.len()
    }

    pub fn flipped(&self) -> SpinConfig {
        SpinConfig { spins: self.spins.iter().map(|s| -s).collect() }
    }

    /// Bit-packed form: bit = 1 means spin −1, 64 sites per word.
    pub fn to_words(&self) -> Vec<u64> {
        let mut words = vec![0u64; self.spins.len().div_ceil(64)];
        for (i, &s) in self.spins.iter().enumerate() {
            if s < 0 {
                words[i / 64] |= 1 << (i % 64);
            }
        }
        words
    }

    pub fn from_words(words: &[u64], n: usize) -> SpinConfig {
        let spins = (0..n)
            .map(|i| if words[i / 64] >> (i % 64) & 1 == 1 { -1 } else { 1 })
            .collect();
        SpinConfig { spins }
    }
}

/// Per-vertex ±1 signs defining a gauge transformation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Gauge {
    pub signs: Vec<i8>,
}

impl Gauge {
    pub fn identity(n: usize) -> Gauge {
        Gauge { signs: vec![1; n] }
    }

    /// Uniformly random signs from the given seed (ChaCha8 keyed stream).
    pub fn random(n: usize, seed: u64) -> Gauge {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let signs = (0..n).map(|_| if rng.next_u64() & 1 == 0 { 1 } else { -1 }).collect();
        Gauge { signs }
    }
}

/// A Chimera graph together with couplings and fields: the optimization
/// problem `H = Σ J_ij s_i s_j + Σ h_i s_i`.
#[derive(Debug, Clone)]
pub struct Instance {
    pub graph: Arc<ChimeraGraph>,
    /// One coupling per edge, in `graph.edges` order.
    pub couplings: Vec<f64>,
    /// One field per active vertex.
    pub fields: Vec<f64>,
    pub id: String,
    pub seed: u64,
}

impl PartialEq for Instance {
    fn eq(&self, other: &Self) -> bool {
        *self.graph == *other.graph
            && self.couplings == other.couplings
            && self.fields == other.fields
            && self.id == other.id
            && self.seed == other.seed
    }
}

impl Instance {
    pub fn n(&self) -> usize {
        self.graph.n()
    }

    /// True when every coupling is ±1 and every field zero — the
    /// paper-standard family the packed engine accepts.
    pub fn is_pm1(&self) -> bool {
        self.couplings.iter().all(|&j| j == 1.0 || j == -1.0)
            && self.fields.iter().all(|&h| h == 0.0)
    }

    /// Derived default identifier for a generated instance.
    pub fn derived_id(graph: &ChimeraGraph, seed: u64) -> String {
        let base = format!("c{}x{}k{}-{seed:016x}", graph.rows, graph.cols, graph.half);
        if graph.dead.is_empty() {
            base
        } else {
            use sha2::{Digest, Sha256};
            let mut h = Sha256::new();
            for &d in &graph.dead {
                h.update(d.to_le_bytes());
            }
            let digest = h.finalize();
            format!("{base}-d{:02x}{:02x}{:02x}{:02x}", digest[0], digest[1], digest[2], digest[3])
        }
    }
}

/// Draws J_ij = ±1 equiprobably per active edge from a seeded generator;
/// all fields zero. Bitwise-reproducible for fixed `(graph, seed)`.
pub fn generate_instance(graph: Arc<ChimeraGraph>, seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let couplings = (0..graph.n_edges())
        .map(|_| if rng.next_u64() & 1 == 0 { 1.0 } else { -1.0 })
        .collect();
    let fields = vec![0.0; graph.n()];
    let id = Instance::derived_id(&graph, seed);
    Instance { graph, couplings, fields, id, seed }
}

/// Evaluates `Σ J_ij s_i s_j + Σ h_i s_i` exactly (integer couplings incur
/// no floating-point accumulation error at these sizes).
pub fn energy(instance: &Instance, config: &SpinConfig) -> Result<f64, InstanceError> {
    if config.n() != instance.n() {
        return Err(InstanceError::DimensionMismatch { got: config.n(), want: instance.n() });
    }
    let g = &instance.graph;
    let mut e = 0.0;
    for (idx, &(a, b)) in g.edges.iter().enumerate() {
        let ia = g.active_index(a).unwrap() as usize;
        let ib = g.active_index(b).unwrap() as usize;
        e += instance.couplings[idx]
            * f64::from(config.spins[ia])
            * f64::from(config.spins[ib]);
    }
    for (i, &h) in instance.fields.iter().enumerate() {
        if h != 0.0 {
            e += h * f64::from(config.spins[i]);
        }
    }
    Ok(e)
}

/// Gauge-transforms an instance: `J'_ij = η_i η_j J_ij`, `h'_i = η_i h_i`.
/// Involutive; preserves energies together with [`apply_gauge_config`].
pub fn apply_gauge(instance: &Instance, gauge: &Gauge) -> Result<Instance, InstanceError> {
    if gauge.signs.len() != instance.n() {
        return Err(InstanceError::GaugeMismatch { got: gauge.signs.len(), want: instance.n() });
    }
    let g = &instance.graph;
    let couplings = g
        .edges
        .iter()
        .zip(&instance.couplings)
        .map(|(&(a, b), &j)| {
            let ia = g.active_index(a).unwrap() as usize;
            let ib = g.active_index(b).unwrap() as usize;
            f64::from(gauge.signs[ia]) * f64::from(gauge.signs[ib]) * j
        })
        .collect();
    let fields = instance
        .fields
        .iter()
        .zip(&gauge.signs)
        .map(|(&h, &s)| f64::from(s) * h)
        .collect();
    Ok(Instance {
        graph: Arc::clone(&instance.graph),
        couplings,
        fields,
        id: instance.id.clone(),
        seed: instance.seed,
    })
}

/// Gauge-transforms a configuration: `s'_i = η_i s_i`.
pub fn apply_gauge_config(config: &SpinConfig, gauge: &Gauge) -> Result<SpinConfig, InstanceError> {
    if gauge.signs.len() != config.n() {
        return Err(InstanceError::GaugeMismatch { got: gauge.signs.len(), want: config.n() });
    }
    Ok(SpinConfig {
        spins: config.spins.iter().zip(&gauge.signs).map(|(&s, &e)| s * e).collect(),
    })
}

/// Serializes an instance (and optionally a witness configuration) to the
/// canonical text format:
///
/// ```text
/// chimera r c k
/// dead v1 v2 ...        (omitted when empty)
/// seed <u64>
/// id <string>
/// J i j value           (one line per active edge, i < j, sorted)
/// h i value             (only non-zero fields)
/// config +-+...         (optional; one sign per active vertex)
/// ```
pub fn serialize_instance(instance: &Instance, config: Option<&SpinConfig>) -> String {
    let g = &instance.graph;
    let mut out = String::new();
    writeln!(out, "chimera {} {} {}", g.rows, g.cols, g.half).unwrap();
    if !g.dead.is_empty() {
        out.push_str("dead");
        for d in &g.dead {
            write!(out, " {d}").unwrap();
        }
        out.push('\n');
    }
    writeln!(out, "seed {}", instance.seed).unwrap();
    writeln!(out, "id {}", instance.id).unwrap();
    for (idx, &(a, b)) in g.edges.iter().enumerate() {
        writeln!(out, "J {a} {b} {}", fmt_roundtrip(instance.couplings[idx])).unwrap();
    }
    for (i, &h) in instance.fields.iter().enumerate() {
        if h != 0.0 {
            writeln!(out, "h {} {}", g.active_vertices()[i], fmt_roundtrip(h)).unwrap();
        }
    }
    if let Some(cfg) = config {
        out.push_str("config ");
        for &s in &cfg.spins {
            out.push(if s > 0 { '+' } else { '-' });
        }
        out.push('\n');
    }
    out
}

/// Parses the text format back into an instance. Round-trip with
/// [`serialize_instance`] is the identity.
pub fn parse_instance(text: &str) -> Result<(Instance, Option<SpinConfig>), ParseError> {
    let mut lines = text.lines().enumerate().peekable();

    let (ln, first) = loop {
        match lines.next() {
            Some((i, l)) if l.trim().is_empty() => {
                // Only blank leading lines are tolerated.
                let _ = i;
            }
            Some((i, l)) => break (i + 1, l),
            None => return Err(ParseError::new(1, "missing header")),
        }
    };
    let mut toks = first.split_whitespace();
    if toks.next() != Some("chimera") {
        return Err(ParseError::new(ln, "missing header: expected `chimera r c k`"));
    }
    let mut dims = [0u32; 3];
    for d in &mut dims {
        *d = toks
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| ParseError::new(ln, "malformed header: expected `chimera r c k`"))?;
    }
    let (r, c, k) = (dims[0], dims[1], dims[2]);

    let mut dead = BTreeSet::new();
    let mut seed: Option<u64> = None;
    let mut id: Option<String> = None;
    let mut coupling_lines: Vec<(usize, u32, u32, f64)> = Vec::new();
    let mut field_lines: Vec<(usize, u32, f64)> = Vec::new();
    let mut config_line: Option<(usize, String)> = None;

    for (i, raw) in lines {
        let ln = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let mut toks = line.split_whitespace();
        match toks.next().unwrap() {
            "dead" => {
                for t in toks {
                    let v: u32 = t
                        .parse()
                        .map_err(|_| ParseError::new(ln, format!("bad dead vertex `{t}`")))?;
                    dead.insert(v);
                }
            }
            "seed" => {
                let t = toks.next().ok_or_else(|| ParseError::new(ln, "seed line missing value"))?;
                seed = Some(
                    t.parse().map_err(|_| ParseError::new(ln, format!("bad seed `{t}`")))?,
                );
            }
            "id" => {
                id = Some(
                    toks.next()
                        .ok_or_else(|| ParseError::new(ln, "id line missing value"))?
                        .to_string(),
                );
            }
            "J" => {
                let mut parse_u32 = |what: &str| -> Result<u32, ParseError> {
                    toks.next()
                        .ok_or_else(|| ParseError::new(ln, format!("J line missing {what}")))?
                        .parse()
                        .map_err(|_| ParseError::new(ln, format!("J line: bad {what}")))
                };
                let a = parse_u32("vertex")?;
                let b = parse_u32("vertex")?;
                let v: f64 = toks
                    .next()
                    .ok_or_else(|| ParseError::new(ln, "J line missing value"))?
                    .parse()
                    .map_err(|_| ParseError::new(ln, "J line: bad value"))?;
                coupling_lines.push((ln, a, b, v));
            }
            "h" => {
                let a: u32 = toks
                    .next()
                    .ok_or_else(|| ParseError::new(ln, "h line missing vertex"))?
                    .parse()
                    .map_err(|_| ParseError::new(ln, "h line: bad vertex"))?;
                let v: f64 = toks
                    .next()
                    .ok_or_else(|| ParseError::new(ln, "h line missing value"))?
                    .parse()
                    .map_err(|_| ParseError::new(ln, "h line: bad value"))?;
                field_lines.push((ln, a, v));
            }
            "config" => {
                let s = toks
                    .next()
                    .ok_or_else(|| ParseError::new(ln, "config line missing spins"))?;
                config_line = Some((ln, s.to_string()));
            }
            other => {
                return Err(ParseError::new(ln, format!("unknown directive `{other}`")));
            }
        }
    }

    let graph = build_chimera(r, c, k, &dead)
        .map_err(|e| ParseError::new(ln, format!("invalid graph: {e}")))?;
    let seed = seed.ok_or_else(|| ParseError::new(ln, "missing `seed` line"))?;
    let id = id.unwrap_or_else(|| Instance::derived_id(&graph, seed));

    let mut couplings = vec![f64::NAN; graph.n_edges()];
    for (ln, a, b, v) in coupling_lines {
        for &vert in &[a, b] {
            if graph.dead.contains(&vert) {
                return Err(ParseError::new(ln, format!("coupling references dead vertex {vert}")));
            }
        }
        let key = (a.min(b), a.max(b));
        let idx = graph
            .edges
            .binary_search(&key)
            .map_err(|_| ParseError::new(ln, format!("no edge ({a}, {b}) in this graph")))?;
        if !couplings[idx].is_nan() {
            return Err(ParseError::new(ln, format!("duplicate coupling for edge ({a}, {b})")));
        }
        couplings[idx] = v;
    }
    for (idx, j) in couplings.iter().enumerate() {
        if j.is_nan() {
            let (a, b) = graph.edges[idx];
            return Err(ParseError::new(ln, format!("missing coupling for edge ({a}, {b})")));
        }
    }

    let mut fields = vec![0.0; graph.n()];
    for (lnf, a, v) in field_lines {
        let idx = graph
            .active_index(a)
            .ok_or_else(|| ParseError::new(lnf, format!("field references dead or unknown vertex {a}")))?;
        fields[idx as usize] = v;
    }

    let config = match config_line {
        None => None,
        Some((lnc, s)) => {
            if s.chars().count() != graph.n() {
                return Err(ParseError::new(
                    lnc,
                    format!("config has {} spins, graph has {}", s.chars().count(), graph.n()),
                ));
            }
            let mut spins = Vec::with_capacity(graph.n());
            for ch in s.chars() {
                match ch {
                    '+' => spins.push(1),
                    '-' => spins.push(-1),
                    _ => return Err(ParseError::new(lnc, format!("bad config character `{ch}`"))),
                }
            }
            Some(SpinConfig { spins })
        }
    };

    Ok((Instance { graph: Arc::new(graph), couplings, fields, id, seed }, config))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn ideal(r: u32, c: u32, k: u32) -> ChimeraGraph {
        build_chimera(r, c, k, &BTreeSet::new()).unwrap()
    }

    fn edge_count_formula(r: u64, c: u64, k: u64) -> u64 {
        k * k * r * c + k * r * (c - 1) + k * c * (r - 1)
    }

    #[test]
    fn single_cell_counts() {
        let g = ideal(1, 1, 4);
        assert_eq!(g.n(), 8);
        assert_eq!(g.n_edges(), 16);
    }

    #[test]
    fn c2_counts() {
        let g = ideal(2, 2, 4);
        assert_eq!(g.n(), 32);
        assert_eq!(g.n_edges(), 80);
    }

    #[test]
    fn c8_counts() {
        let g = ideal(8, 8, 4);
        assert_eq!(g.n(), 512);
        assert_eq!(g.n_edges(), 1472);
    }

    #[test]
    fn internal_degree_is_k_plus_2() {
        let g = ideal(4, 4, 4);
        for &v in g.active_vertices() {
            let (i, j, _, _) = g.decode(v);
            if i > 0 && i < 3 && j > 0 && j < 3 {
                assert_eq!(g.degree(g.active_index(v).unwrap()), 6, "vertex {v}");
            }
        }
    }

    #[test]
    fn bipartition_is_proper() {
        for (r, c, k) in [(1, 1, 4), (2, 3, 4), (3, 2, 2), (8, 8, 4)] {
            let g = ideal(r, c, k);
            for &(a, b) in &g.edges {
                let pa = g.parity(g.active_index(a).unwrap());
                let pb = g.parity(g.active_index(b).unwrap());
                assert_ne!(pa, pb, "edge ({a},{b}) in C{r}x{c}k{k}");
            }
        }
    }

    #[test]
    fn dead_vertices_removed_with_edges() {
        let mut dead = BTreeSet::new();
        dead.insert(0);
        dead.insert(5);
        let g = build_chimera(2, 2, 4, &dead).unwrap();
        assert_eq!(g.n(), 30);
        for &(a, b) in &g.edges {
            assert!(a != 0 && a != 5 && b != 0 && b != 5);
        }
        assert_eq!(g.active_index(0), None);
    }

    #[test]
    fn dead_out_of_range_rejected() {
        let mut dead = BTreeSet::new();
        dead.insert(1000);
        assert_eq!(
            build_chimera(2, 2, 4, &dead),
            Err(GraphError::DeadOutOfRange(1000, 32))
        );
    }

    #[test]
    fn instance_generation_is_deterministic() {
        let g = Arc::new(ideal(2, 2, 4));
        let a = generate_instance(Arc::clone(&g), 42);
        let b = generate_instance(Arc::clone(&g), 42);
        assert_eq!(a, b);
        let c = generate_instance(g, 43);
        assert_ne!(a.couplings, c.couplings);
    }

    #[test]
    fn coupling_sign_balance() {
        // Fraction of +1 couplings over many instances within 3σ binomial.
        let g = Arc::new(ideal(8, 8, 4));
        let n_inst = 200;
        let mut plus = 0u64;
        let mut total = 0u64;
        for seed in 0..n_inst {
            let inst = generate_instance(Arc::clone(&g), seed);
            plus += inst.couplings.iter().filter(|&&j| j > 0.0).count() as u64;
            total += inst.couplings.len() as u64;
        }
        let p = plus as f64 / total as f64;
        let sigma = 0.5 / (total as f64).sqrt();
        assert!((p - 0.5).abs() < 3.0 * sigma, "p = {p}, 3σ = {}", 3.0 * sigma);
    }

    #[test]
    fn two_spin_energy() {
        let g = Arc::new(ideal(1, 1, 1));
        let mut inst = generate_instance(g, 0);
        inst.couplings = vec![1.0];
        let cfg = SpinConfig { spins: vec![1, -1] };
        assert_eq!(energy(&inst, &cfg).unwrap(), -1.0);
    }

    #[test]
    fn k44_all_antiferro_energy() {
        let g = Arc::new(ideal(1, 1, 4));
        let mut inst = generate_instance(g, 0);
        inst.couplings = vec![-1.0; 16];
        let cfg = SpinConfig { spins: vec![1; 8] };
        assert_eq!(energy(&inst, &cfg).unwrap(), -16.0);
    }

    #[test]
    fn energy_matches_bruteforce_resum() {
        // Independent re-summation straight off the edge list.
        let g = Arc::new(ideal(2, 2, 4));
        let inst = generate_instance(Arc::clone(&g), 7);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..20 {
            let cfg = SpinConfig {
                spins: (0..g.n()).map(|_| if rng.gen::<bool>() { 1 } else { -1 }).collect(),
            };
            let mut e = 0.0;
            for (idx, &(a, b)) in g.edges.iter().enumerate() {
                let ia = g.active_index(a).unwrap() as usize;
                let ib = g.active_index(b).unwrap() as usize;
                e += inst.couplings[idx] * (cfg.spins[ia] as f64) * (cfg.spins[ib] as f64);
            }
            assert_eq!(energy(&inst, &cfg).unwrap(), e);
        }
    }

    #[test]
    fn gauge_identity_and_global_flip() {
        let g = Arc::new(ideal(2, 2, 4));
        let inst = generate_instance(g, 11);
        let id_gauge = Gauge::identity(inst.n());
        assert_eq!(apply_gauge(&inst, &id_gauge).unwrap(), inst);
        let flip = Gauge { signs: vec![-1; inst.n()] };
        assert_eq!(apply_gauge(&inst, &flip).unwrap(), inst); // h = 0
    }

    #[test]
    fn gauge_is_involutive_and_energy_invariant() {
        let g = Arc::new(ideal(2, 2, 4));
        let inst = generate_instance(Arc::clone(&g), 3);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for trial in 0..50 {
            let gauge = Gauge::random(inst.n(), trial);
            let cfg = SpinConfig {
                spins: (0..g.n()).map(|_| if rng.gen::<bool>() { 1 } else { -1 }).collect(),
            };
            let gi = apply_gauge(&inst, &gauge).unwrap();
            let gc = apply_gauge_config(&cfg, &gauge).unwrap();
            assert_eq!(energy(&gi, &gc).unwrap(), energy(&inst, &cfg).unwrap());
            assert_eq!(apply_gauge(&gi, &gauge).unwrap(), inst);
            assert_eq!(apply_gauge_config(&gc, &gauge).unwrap(), cfg);
        }
    }

    #[test]
    fn global_flip_symmetry_h_zero() {
        let g = Arc::new(ideal(2, 2, 4));
        let inst = generate_instance(Arc::clone(&g), 13);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let cfg = SpinConfig {
                spins: (0..g.n()).map(|_| if rng.gen::<bool>() { 1 } else { -1 }).collect(),
            };
            assert_eq!(
                energy(&inst, &cfg).unwrap(),
                energy(&inst, &cfg.flipped()).unwrap()
            );
        }
    }

    #[test]
    fn parse_errors() {
        assert_eq!(parse_instance("").unwrap_err().msg, "missing header");
        let err = parse_instance("chimera 1 1\n").unwrap_err();
        assert!(err.msg.contains("malformed header"), "{err}");
        // Coupling referencing a dead vertex names the vertex.
        let text = "chimera 1 1 4\ndead 0\nseed 1\nJ 0 4 1\n";
        let err = parse_instance(text).unwrap_err();
        assert!(err.msg.contains("dead vertex 0"), "{err}");
    }

    #[test]
    fn roundtrip_with_config() {
        let g = Arc::new(ideal(2, 1, 3));
        let inst = generate_instance(Arc::clone(&g), 21);
        let cfg = SpinConfig { spins: (0..g.n()).map(|i| if i % 3 == 0 { -1 } else { 1 }).collect() };
        let text = serialize_instance(&inst, Some(&cfg));
        let (back, cfg2) = parse_instance(&text).unwrap();
        assert_eq!(back, inst);
        assert_eq!(cfg2.unwrap(), cfg);
    }

    #[test]
    fn empty_edge_graph_instance() {
        // A 1x1 cell with one half dead has no edges at all.
        let dead: BTreeSet<u32> = (0..4).collect();
        let g = Arc::new(build_chimera(1, 1, 4, &dead).unwrap());
        assert_eq!(g.n_edges(), 0);
        let inst = generate_instance(Arc::clone(&g), 1);
        assert!(inst.couplings.is_empty());
        let text = serialize_instance(&inst, None);
        let (back, _) = parse_instance(&text).unwrap();
        assert_eq!(back, inst);
    }

    #[test]
    fn energies_share_parity_class() {
        // For J = ±1, h = 0 all achievable energies differ by even integers.
        let g = Arc::new(ideal(1, 2, 2));
        let inst = generate_instance(Arc::clone(&g), 5);
        let n = g.n();
        let mut energies = Vec::new();
        for mask in 0..(1u32 << n) {
            let cfg = SpinConfig {
                spins: (0..n).map(|i| if mask >> i & 1 == 1 { -1 } else { 1 }).collect(),
            };
            energies.push(energy(&inst, &cfg).unwrap() as i64);
        }
        let parity = energies[0].rem_euclid(2);
        assert!(energies.iter().all(|e| e.rem_euclid(2) == parity));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn counts_match_formulas(r in 1u32..=8, c in 1u32..=8, k in 1u32..=8) {
            let g = ideal(r, c, k);
            prop_assert_eq!(g.n() as u64, 2 * (k as u64) * (r as u64) * (c as u64));
            prop_assert_eq!(
                g.n_edges() as u64,
                edge_count_formula(r as u64, c as u64, k as u64)
            );
        }

        #[test]
        fn serialization_roundtrip(seed in 0u64..1000, r in 1u32..=3, c in 1u32..=3) {
            let g = Arc::new(ideal(r, c, 4));
            let inst = generate_instance(g, seed);
            let (back, cfg) = parse_instance(&serialize_instance(&inst, None)).unwrap();
            prop_assert_eq!(back, inst);
            prop_assert!(cfg.is_none());
        }

        #[test]
        fn energy_bound(seed in 0u64..200) {
            let g = Arc::new(ideal(2, 2, 4));
            let inst = generate_instance(Arc::clone(&g), seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
            let cfg = SpinConfig {
                spins: (0..g.n()).map(|_| if rng.gen::<bool>() { 1 } else { -1 }).collect(),
            };
            let e = energy(&inst, &cfg).unwrap();
            prop_assert!(e.abs() <= g.n_edges() as f64);
        }
    }
}
