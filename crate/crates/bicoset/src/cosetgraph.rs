//! The bipartite coset graph: left vertices G/H1, right vertices G/H2, one
//! edge per group element g joining gH1 to gH2.
//!
//! Trivial intersection makes the graph simple: g and g' span the same edge
//! only if g'^-1 g lies in H1 ∩ H2. So there are exactly |G| edges and both
//! sides are d-regular. The group acts on the graph by left translation,
//! vertex-transitively on each side, which is what lets girth be computed
//! from a single base vertex.

use std::collections::HashMap;
use std::io::Write;

use crate::error::{Error, Result};
use crate::field::FieldCtx;
use crate::group::{self, GroupIndex, ProjMat};
use crate::subgroups::{CyclicSubgroup, PairCertificate};

/// Vertex index within one side of the bipartition.
pub type CosetId = u32;

/// Canonical label of the left coset gH: the lexicographically least
/// canonical form among {g h : h in H}.
pub fn coset_key(ctx: &FieldCtx, g: ProjMat, h: &CyclicSubgroup) -> ProjMat {
    h.elements
        .iter()
        .map(|&m| group::mul(ctx, g, m))
        .min()
        .expect("subgroup is non-empty")
}

#[derive(Debug, Clone)]
pub struct BipartiteCosetGraph {
    pub p: u64,
    pub d: u64,
    pub x: u64,
    pub n_left: usize,
    pub n_right: usize,
    // CSR adjacency, rows sorted ascending: left -> right and right -> left.
    row_ptr: Vec<u32>,
    col: Vec<u32>,
    rrow_ptr: Vec<u32>,
    rcol: Vec<u32>,
    /// Coset labels; left_keys[0] is the coset of the identity.
    pub left_keys: Vec<ProjMat>,
    pub right_keys: Vec<ProjMat>,
}

/// What a girth computation reports. `girth` is None for forests, which
/// cannot happen for coset graphs with d >= 2 (|E| = |G| > |V|).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GirthReport {
    pub girth: Option<u32>,
    pub connected: bool,
}

fn csr_from_edges(n_rows: usize, degree_hint: usize, edges: &[(u32, u32)]) -> (Vec<u32>, Vec<u32>) {
    let mut deg = vec![0u32; n_rows];
    for &(i, _) in edges {
        deg[i as usize] += 1;
    }
    let mut row_ptr = vec![0u32; n_rows + 1];
    for i in 0..n_rows {
        row_ptr[i + 1] = row_ptr[i] + deg[i];
    }
    let mut col = vec![0u32; edges.len()];
    let mut fill = row_ptr.clone();
    for &(i, j) in edges {
        col[fill[i as usize] as usize] = j;
        fill[i as usize] += 1;
    }
    for i in 0..n_rows {
        col[row_ptr[i] as usize..row_ptr[i + 1] as usize].sort_unstable();
    }
    let _ = degree_hint;
    (row_ptr, col)
}

/// Builds the graph by full enumeration of PSL_2(F_p). `group_cap` bounds the
/// group order; construction refuses larger groups with a resource error.
pub fn build_graph(
    ctx: &FieldCtx,
    cert: &PairCertificate,
    group_cap: u64,
) -> Result<BipartiteCosetGraph> {
    let index = group::enumerate_group(ctx, group_cap)?;
    let n = index.order();
    let per_side = n / cert.d as usize;

    let mut left_ids: HashMap<ProjMat, u32> = HashMap::with_capacity(per_side);
    let mut right_ids: HashMap<ProjMat, u32> = HashMap::with_capacity(per_side);
    let mut left_keys: Vec<ProjMat> = Vec::with_capacity(per_side);
    let mut right_keys: Vec<ProjMat> = Vec::with_capacity(per_side);
    // The identity's cosets take index 0 on both sides.
    let k0 = coset_key(ctx, group::identity(), &cert.h1);
    left_ids.insert(k0, 0);
    left_keys.push(k0);
    let k0r = coset_key(ctx, group::identity(), &cert.h2);
    right_ids.insert(k0r, 0);
    right_keys.push(k0r);

    let mut edges: Vec<(u32, u32)> = Vec::with_capacity(n);
    for &g in index.elements() {
        let kl = coset_key(ctx, g, &cert.h1);
        let li = *left_ids.entry(kl).or_insert_with(|| {
            left_keys.push(kl);
            left_keys.len() as u32 - 1
        });
        let kr = coset_key(ctx, g, &cert.h2);
        let ri = *right_ids.entry(kr).or_insert_with(|| {
            right_keys.push(kr);
            right_keys.len() as u32 - 1
        });
        edges.push((li, ri));
    }
    debug_assert_eq!(left_keys.len(), per_side);
    debug_assert_eq!(right_keys.len(), per_side);

    let (row_ptr, col) = csr_from_edges(per_side, cert.d as usize, &edges);
    let redges: Vec<(u32, u32)> = edges.iter().map(|&(i, j)| (j, i)).collect();
    let (rrow_ptr, rcol) = csr_from_edges(per_side, cert.d as usize, &redges);

    let g = BipartiteCosetGraph {
        p: cert.p,
        d: cert.d,
        x: cert.x,
        n_left: per_side,
        n_right: per_side,
        row_ptr,
        col,
        rrow_ptr,
        rcol,
        left_keys,
        right_keys,
    };
    // Simplicity and d-regularity follow from trivial intersection; cheap to
    // confirm outright.
    for i in 0..g.n_left {
        let row = g.neighbors_left(i as u32);
        assert_eq!(row.len() as u64, cert.d, "left vertex {i} degree");
        assert!(row.windows(2).all(|w| w[0] < w[1]), "duplicate edge at left {i}");
    }
    for j in 0..g.n_right {
        assert_eq!(g.neighbors_right(j as u32).len() as u64, cert.d);
    }
    Ok(g)
}

impl BipartiteCosetGraph {
    /// Fixture constructor for arbitrary bipartite graphs (tests, operator
    /// checks). Duplicate edges are collapsed; p/d/x are zeroed markers.
    pub fn from_adjacency(n_left: usize, n_right: usize, edges: &[(u32, u32)]) -> Self {
        let mut e: Vec<(u32, u32)> = edges.to_vec();
        e.sort_unstable();
        e.dedup();
        let (row_ptr, col) = csr_from_edges(n_left, 0, &e);
        let re: Vec<(u32, u32)> = e.iter().map(|&(i, j)| (j, i)).collect();
        let (rrow_ptr, rcol) = csr_from_edges(n_right, 0, &re);
        BipartiteCosetGraph {
            p: 0,
            d: 0,
            x: 0,
            n_left,
            n_right,
            row_ptr,
            col,
            rrow_ptr,
            rcol,
            left_keys: Vec::new(),
            right_keys: Vec::new(),
        }
    }

    pub fn n_edges(&self) -> usize {
        self.col.len()
    }

    pub fn neighbors_left(&self, i: CosetId) -> &[u32] {
        &self.col[self.row_ptr[i as usize] as usize..self.row_ptr[i as usize + 1] as usize]
    }

    pub fn neighbors_right(&self, j: CosetId) -> &[u32] {
        &self.rcol[self.rrow_ptr[j as usize] as usize..self.rrow_ptr[j as usize + 1] as usize]
    }

    /// Unified-vertex neighbors: left i is vertex i, right j is n_left + j.
    fn unified_neighbors(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        let (row, offset) = if v < self.n_left {
            (self.neighbors_left(v as u32), self.n_left)
        } else {
            (self.neighbors_right((v - self.n_left) as u32), 0)
        };
        row.iter().map(move |&w| w as usize + offset)
    }

    /// Shortest cycle through the BFS tree of `start`, plus how many vertices
    /// the BFS reached. The returned length is always >= the true girth; it
    /// equals the girth whenever `start` lies on some shortest cycle.
    fn bfs_girth_from(&self, start: usize) -> (Option<u32>, usize) {
        let n = self.n_left + self.n_right;
        const UNSEEN: u32 = u32::MAX;
        let mut dist = vec![UNSEEN; n];
        let mut parent = vec![UNSEEN; n];
        dist[start] = 0;
        let mut frontier = vec![start];
        let mut best: Option<u32> = None;
        let mut level = 0u32;
        let mut reached = 1usize;
        while !frontier.is_empty() {
            let mut next = Vec::new();
            for &u in &frontier {
                for v in self.unified_neighbors(u) {
                    if dist[v] == UNSEEN {
                        dist[v] = level + 1;
                        parent[v] = u as u32;
                        reached += 1;
                        next.push(v);
                    } else if parent[u] != v as u32 {
                        // Non-tree edge: the closed walk through the root has
                        // length dist[u] + dist[v] + 1 and contains a cycle.
                        let cand = dist[u] + dist[v] + 1;
                        if best.is_none_or(|b| cand < b) {
                            best = Some(cand);
                        }
                    }
                }
            }
            level += 1;
            // Expanding level L only yields candidates >= 2L, so once
            // 2 * level >= best no shorter cycle can appear.
            if best.is_some_and(|b| b <= 2 * level) {
                break;
            }
            frontier = next;
        }
        (best, reached)
    }

    /// Vertices reachable from the base vertex by a plain full BFS. The
    /// girth BFS stops early and cannot be reused for this count.
    fn reachable_from_base(&self) -> usize {
        let n = self.n_left + self.n_right;
        let mut seen = vec![false; n];
        seen[0] = true;
        let mut stack = vec![0usize];
        let mut reached = 1usize;
        while let Some(u) = stack.pop() {
            for v in self.unified_neighbors(u) {
                if !seen[v] {
                    seen[v] = true;
                    reached += 1;
                    stack.push(v);
                }
            }
        }
        reached
    }

    /// Girth via a single BFS from the base vertex (the identity cosets).
    /// Exact for coset graphs: left translation is vertex-transitive, so some
    /// shortest cycle passes through the base vertex. `connected` reports
    /// whether the base component is everything; components are pairwise
    /// isomorphic under translation, so the girth is global either way.
    pub fn girth(&self) -> GirthReport {
        let (girth, _) = self.bfs_girth_from(0);
        GirthReport {
            girth,
            connected: self.reachable_from_base() == self.n_left + self.n_right,
        }
    }

    /// Brute-force girth: BFS from every vertex, minimum over all sources.
    /// Exact on any simple bipartite graph; the cross-check oracle for
    /// `girth`.
    pub fn girth_exhaustive(&self) -> Option<u32> {
        let mut best: Option<u32> = None;
        for v in 0..self.n_left + self.n_right {
            let (b, _) = self.bfs_girth_from(v);
            if let Some(b) = b {
                if best.is_none_or(|cur| b < cur) {
                    best = Some(b);
                }
            }
        }
        best
    }

    /// Writes `# bipartite p=.. d=.. x=.. left=.. right=..` followed by one
    /// `L<i> R<j>` line per edge.
    pub fn export_edge_list<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "# bipartite p={} d={} x={} left={} right={}",
            self.p, self.d, self.x, self.n_left, self.n_right
        )?;
        for i in 0..self.n_left {
            for &j in self.neighbors_left(i as u32) {
                writeln!(w, "L{i} R{j}")?;
            }
        }
        Ok(())
    }
}

/// The girth bound certified by a loop-free depth L: any cycle must use a
/// product of more than L elements of S0, giving length >= 2L + 2.
pub fn girth_lower_bound_algebraic(product_free_depth: u32) -> u32 {
    2 * product_free_depth + 2
}

/// Builds the left-translation permutation of vertex ids induced by g
/// (vertex kH -> (g k)H). A graph automorphism for every g; used by tests.
pub fn translation_map(
    ctx: &FieldCtx,
    graph: &BipartiteCosetGraph,
    cert: &PairCertificate,
    g: ProjMat,
) -> Result<(Vec<u32>, Vec<u32>)> {
    let lookup = |keys: &[ProjMat], h: &CyclicSubgroup| -> Result<Vec<u32>> {
        let ids: HashMap<ProjMat, u32> = keys
            .iter()
            .enumerate()
            .map(|(i, &k)| (k, i as u32))
            .collect();
        keys.iter()
            .map(|&k| {
                let moved = coset_key(ctx, group::mul(ctx, g, k), h);
                ids.get(&moved)
                    .copied()
                    .ok_or_else(|| Error::Math("translation left the vertex set".into()))
            })
            .collect()
    };
    Ok((
        lookup(&graph.left_keys, &cert.h1)?,
        lookup(&graph.right_keys, &cert.h2)?,
    ))
}

/// Convenience: the GroupIndex a graph was built from is often needed again
/// (spectral, walks); rebuilding keeps call sites honest about the cap.
pub fn group_index_for(ctx: &FieldCtx, cap: u64) -> Result<GroupIndex> {
    group::enumerate_group(ctx, cap)
}
