//! Hypercubic lattices (1 to 3 dimensions, per-axis periodicity) and patch
//! covers over them.
//!
//! Two covers are provided: one patch per nearest-neighbor bond, and one patch
//! per site. Patch graphs carry precomputed shortest paths between every patch
//! pair (breadth-first, ties broken toward the lowest patch index) plus, for
//! single-site covers, a site-covering path used for density-matrix readout.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LatticeError {
    #[error("lattice must have between 1 and 3 dimensions, got {0}")]
    BadDimensionCount(usize),
    #[error("lattice extent must be positive")]
    ZeroExtent,
    #[error("bond cover needs every extent >= 2, got extent {extent} in dimension {dim}")]
    DegenerateExtent { dim: usize, extent: usize },
    #[error("periodic extent 2 in dimension {dim} would produce duplicate bonds")]
    PeriodicExtentTwo { dim: usize },
    #[error("path style {style:?} is undefined for a {ndims}-dimensional lattice")]
    UnsupportedPath { style: PathStyle, ndims: usize },
    #[error("periodic flag count {flags} does not match dimension count {dims}")]
    PeriodicFlagMismatch { flags: usize, dims: usize },
    #[error("invalid patch-graph data: {0}")]
    BadGraphData(String),
}

/// A hypercubic lattice with row-major site indexing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LatticeSpec {
    dims: Vec<usize>,
    periodic: Vec<bool>,
}

impl LatticeSpec {
    pub fn new(dims: Vec<usize>, periodic: Vec<bool>) -> Result<Self, LatticeError> {
        if dims.is_empty() || dims.len() > 3 {
            return Err(LatticeError::BadDimensionCount(dims.len()));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(LatticeError::ZeroExtent);
        }
        if periodic.len() != dims.len() {
            return Err(LatticeError::PeriodicFlagMismatch { flags: periodic.len(), dims: dims.len() });
        }
        Ok(LatticeSpec { dims, periodic })
    }

    /// Same periodicity on every axis.
    pub fn uniform(dims: Vec<usize>, periodic: bool) -> Result<Self, LatticeError> {
        let flags = vec![periodic; dims.len()];
        Self::new(dims, flags)
    }

    pub fn ndims(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn periodic(&self) -> &[bool] {
        &self.periodic
    }

    pub fn num_sites(&self) -> usize {
        self.dims.iter().product()
    }

    /// Row-major coordinate -> index.
    pub fn site_index(&self, coords: &[usize]) -> usize {
        debug_assert_eq!(coords.len(), self.dims.len());
        let mut idx = 0;
        for (d, &c) in coords.iter().enumerate() {
            debug_assert!(c < self.dims[d]);
            idx = idx * self.dims[d] + c;
        }
        idx
    }

    pub fn site_coords(&self, index: usize) -> Vec<usize> {
        let mut rem = index;
        let mut coords = vec![0; self.dims.len()];
        for d in (0..self.dims.len()).rev() {
            coords[d] = rem % self.dims[d];
            rem /= self.dims[d];
        }
        coords
    }

    /// Nearest neighbors of a site, deduplicated and sorted.
    pub fn neighbors(&self, site: usize) -> Vec<usize> {
        let coords = self.site_coords(site);
        let mut out = BTreeSet::new();
        for d in 0..self.dims.len() {
            let extent = self.dims[d];
            for step in [-1i64, 1i64] {
                let c = coords[d] as i64 + step;
                let wrapped = if self.periodic[d] {
                    (c.rem_euclid(extent as i64)) as usize
                } else if c < 0 || c >= extent as i64 {
                    continue;
                } else {
                    c as usize
                };
                if wrapped == coords[d] {
                    continue;
                }
                let mut nc = coords.clone();
                nc[d] = wrapped;
                out.insert(self.site_index(&nc));
            }
        }
        out.into_iter().collect()
    }

    /// All nearest-neighbor bonds as (min, max) site pairs, sorted.
    pub fn bonds(&self) -> Vec<(usize, usize)> {
        let mut set = BTreeSet::new();
        for site in 0..self.num_sites() {
            let coords = self.site_coords(site);
            for d in 0..self.dims.len() {
                let extent = self.dims[d];
                let c = coords[d] + 1;
                let wrapped = if c < extent {
                    c
                } else if self.periodic[d] {
                    0
                } else {
                    continue;
                };
                if wrapped == coords[d] {
                    continue;
                }
                let mut nc = coords.clone();
                nc[d] = wrapped;
                let other = self.site_index(&nc);
                set.insert((site.min(other), site.max(other)));
            }
        }
        set.into_iter().collect()
    }
}

/// Covering-path flavor for single-site patch graphs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathStyle {
    /// Boustrophedon sweep; consecutive sites are always lattice neighbors.
    Snake,
    /// Column-major raster; jumps between columns are bridged at evaluation.
    Comb,
    /// Anti-diagonal sweep; only defined for 2 or more dimensions.
    Diagonal,
}

/// Patches of sites covering the lattice, their overlap adjacency, and
/// deterministic paths between every pair of patches.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchGraph {
    n_sites: usize,
    ndims: usize,
    patches: Vec<Vec<usize>>,
    edges: BTreeSet<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
    paths: Vec<Vec<Vec<usize>>>,
    covering_path: Option<Vec<usize>>,
}

impl PatchGraph {
    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn ndims(&self) -> usize {
        self.ndims
    }

    pub fn n_patches(&self) -> usize {
        self.patches.len()
    }

    pub fn patches(&self) -> &[Vec<usize>] {
        &self.patches
    }

    pub fn patch(&self, i: usize) -> &[usize] {
        &self.patches[i]
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn are_adjacent(&self, i: usize, j: usize) -> bool {
        let key = (i.min(j), i.max(j));
        i != j && self.edges.contains(&key)
    }

    /// Adjacent patches of `i`, ascending.
    pub fn patch_neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    /// Shortest patch path from `i` to `j` inclusive; `path(i, i) == [i]`.
    /// Empty slice when the patches are disconnected.
    pub fn path(&self, i: usize, j: usize) -> &[usize] {
        &self.paths[i][j]
    }

    pub fn covering_path(&self) -> Option<&[usize]> {
        self.covering_path.as_deref()
    }

    /// Patches that contain the given site, ascending.
    pub fn patches_containing(&self, site: usize) -> Vec<usize> {
        (0..self.patches.len())
            .filter(|&p| self.patches[p].contains(&site))
            .collect()
    }

    /// All (i, j, k) with i < j < k and all three pairwise edges present.
    pub fn triangles(&self) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::new();
        for &(i, j) in &self.edges {
            for &k in &self.neighbors[j] {
                if k > j && self.are_adjacent(i, k) {
                    out.push((i, j, k));
                }
            }
        }
        out
    }

    /// Rebuilds a graph from stored parts, recomputing adjacency lists and
    /// breadth-first paths; the inverse of serializing patches, edges and the
    /// covering path.
    pub fn from_parts(
        n_sites: usize,
        ndims: usize,
        patches: Vec<Vec<usize>>,
        edge_list: Vec<(usize, usize)>,
        covering_path: Option<Vec<usize>>,
    ) -> Result<Self, LatticeError> {
        if !(1..=3).contains(&ndims) {
            return Err(LatticeError::BadDimensionCount(ndims));
        }
        let n = patches.len();
        if n == 0 {
            return Err(LatticeError::BadGraphData("no patches".into()));
        }
        for (p, sites) in patches.iter().enumerate() {
            if sites.is_empty() {
                return Err(LatticeError::BadGraphData(format!("patch {p} is empty")));
            }
            if let Some(&bad) = sites.iter().find(|&&s| s >= n_sites) {
                return Err(LatticeError::BadGraphData(format!(
                    "patch {p} references site {bad} beyond {n_sites} sites"
                )));
            }
        }
        let mut edges = BTreeSet::new();
        for (i, j) in edge_list {
            if i >= j || j >= n {
                return Err(LatticeError::BadGraphData(format!(
                    "edge ({i}, {j}) is not an ordered pair of patch indices below {n}"
                )));
            }
            edges.insert((i, j));
        }
        if let Some(path) = &covering_path {
            if let Some(&bad) = path.iter().find(|&&p| p >= n) {
                return Err(LatticeError::BadGraphData(format!(
                    "covering path references patch {bad} beyond {n} patches"
                )));
            }
        }
        let mut neighbors = vec![Vec::new(); n];
        for &(i, j) in &edges {
            neighbors[i].push(j);
            neighbors[j].push(i);
        }
        for list in &mut neighbors {
            list.sort_unstable();
        }
        let paths = all_pairs_paths(n, &neighbors);
        Ok(PatchGraph { n_sites, ndims, patches, edges, neighbors, paths, covering_path })
    }

    fn finish(
        n_sites: usize,
        ndims: usize,
        patches: Vec<Vec<usize>>,
        covering_path: Option<Vec<usize>>,
    ) -> Self {
        let n = patches.len();
        let mut edges = BTreeSet::new();
        // Overlap adjacency through a site -> patches table to stay near-linear.
        let mut by_site: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (p, sites) in patches.iter().enumerate() {
            for &s in sites {
                by_site.entry(s).or_default().push(p);
            }
        }
        for list in by_site.values() {
            for a in 0..list.len() {
                for b in a + 1..list.len() {
                    edges.insert((list[a].min(list[b]), list[a].max(list[b])));
                }
            }
        }
        let mut neighbors = vec![Vec::new(); n];
        for &(i, j) in &edges {
            neighbors[i].push(j);
            neighbors[j].push(i);
        }
        for list in &mut neighbors {
            list.sort_unstable();
        }
        let paths = all_pairs_paths(n, &neighbors);
        PatchGraph { n_sites, ndims, patches, edges, neighbors, paths, covering_path }
    }
}

/// Breadth-first shortest paths from every source; neighbor expansion in
/// ascending order makes the parent choice (and therefore every path)
/// deterministic.
fn all_pairs_paths(n: usize, neighbors: &[Vec<usize>]) -> Vec<Vec<Vec<usize>>> {
    let mut all = Vec::with_capacity(n);
    for src in 0..n {
        let mut parent = vec![usize::MAX; n];
        let mut seen = vec![false; n];
        seen[src] = true;
        let mut queue = VecDeque::new();
        queue.push_back(src);
        while let Some(u) = queue.pop_front() {
            for &v in &neighbors[u] {
                if !seen[v] {
                    seen[v] = true;
                    parent[v] = u;
                    queue.push_back(v);
                }
            }
        }
        let mut rows = Vec::with_capacity(n);
        for dst in 0..n {
            if !seen[dst] {
                rows.push(Vec::new());
                continue;
            }
            let mut path = vec![dst];
            let mut cur = dst;
            while cur != src {
                cur = parent[cur];
                path.push(cur);
            }
            path.reverse();
            rows.push(path);
        }
        all.push(rows);
    }
    all
}

/// One patch per nearest-neighbor bond; patches adjacent iff they share a site.
pub fn build_nn_patch_graph(lattice: &LatticeSpec) -> Result<PatchGraph, LatticeError> {
    for (d, &extent) in lattice.dims().iter().enumerate() {
        if extent < 2 {
            return Err(LatticeError::DegenerateExtent { dim: d, extent });
        }
        if extent == 2 && lattice.periodic()[d] {
            return Err(LatticeError::PeriodicExtentTwo { dim: d });
        }
    }
    let patches: Vec<Vec<usize>> = lattice.bonds().into_iter().map(|(a, b)| vec![a, b]).collect();
    Ok(PatchGraph::finish(lattice.num_sites(), lattice.ndims(), patches, None))
}

/// One patch per site, with a covering path of the requested style.
pub fn build_single_site_patch_graph(
    lattice: &LatticeSpec,
    style: PathStyle,
) -> Result<PatchGraph, LatticeError> {
    let n = lattice.num_sites();
    let path = covering_path(lattice, style)?;
    let mut patches = Vec::with_capacity(n);
    let mut by_site: Vec<Vec<usize>> = Vec::with_capacity(n);
    for site in 0..n {
        patches.push(vec![site]);
        by_site.push(lattice.neighbors(site));
    }
    // Single-site patches never overlap, so adjacency comes from the lattice
    // itself rather than shared sites.
    let mut edges = BTreeSet::new();
    for site in 0..n {
        for &other in &by_site[site] {
            edges.insert((site.min(other), site.max(other)));
        }
    }
    let mut neighbors = vec![Vec::new(); n];
    for &(i, j) in &edges {
        neighbors[i].push(j);
        neighbors[j].push(i);
    }
    for list in &mut neighbors {
        list.sort_unstable();
    }
    let paths = all_pairs_paths(n, &neighbors);
    Ok(PatchGraph {
        n_sites: n,
        ndims: lattice.ndims(),
        patches,
        edges,
        neighbors,
        paths,
        covering_path: Some(path),
    })
}

fn covering_path(lattice: &LatticeSpec, style: PathStyle) -> Result<Vec<usize>, LatticeError> {
    let ndims = lattice.ndims();
    match style {
        PathStyle::Snake => Ok(snake_path(lattice)),
        PathStyle::Comb => {
            // Column-major raster: last coordinate varies slowest.
            let mut sites: Vec<usize> = (0..lattice.num_sites()).collect();
            sites.sort_by_key(|&s| {
                let mut c = lattice.site_coords(s);
                c.reverse();
                c
            });
            Ok(sites)
        }
        PathStyle::Diagonal => {
            if ndims < 2 {
                return Err(LatticeError::UnsupportedPath { style, ndims });
            }
            let mut sites: Vec<usize> = (0..lattice.num_sites()).collect();
            sites.sort_by_key(|&s| {
                let c = lattice.site_coords(s);
                (c.iter().sum::<usize>(), c)
            });
            Ok(sites)
        }
    }
}

/// Boustrophedon order: every consecutive pair differs by one step in one
/// coordinate, so the whole path walks lattice bonds (open-boundary bonds
/// suffice).
fn snake_path(lattice: &LatticeSpec) -> Vec<usize> {
    let dims = lattice.dims();
    let mut order: Vec<Vec<usize>> = vec![vec![]];
    for (d, &extent) in dims.iter().enumerate() {
        let mut next = Vec::with_capacity(order.len() * extent);
        // The freshly added coordinate varies fastest; the sweep direction of
        // everything built so far alternates with it.
        let _ = d;
        for (i, prefix) in order.iter().enumerate() {
            let forward = i % 2 == 0;
            let range: Vec<usize> = if forward {
                (0..extent).collect()
            } else {
                (0..extent).rev().collect()
            };
            for c in range {
                let mut full = prefix.clone();
                full.push(c);
                next.push(full);
            }
        }
        order = next;
    }
    order.into_iter().map(|coords| lattice.site_index(&coords)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn chain(n: usize, periodic: bool) -> LatticeSpec {
        LatticeSpec::uniform(vec![n], periodic).unwrap()
    }

    #[test]
    fn row_major_indexing_round_trips() {
        let lat = LatticeSpec::uniform(vec![3, 4, 2], false).unwrap();
        for idx in 0..lat.num_sites() {
            assert_eq!(lat.site_index(&lat.site_coords(idx)), idx);
        }
        assert_eq!(lat.site_index(&[1, 2, 0]), 12);
    }

    #[test]
    fn periodic_chain_of_22_has_22_bond_patches() {
        let g = build_nn_patch_graph(&chain(22, true)).unwrap();
        assert_eq!(g.n_patches(), 22);
        assert!(g.patches().iter().all(|p| p.len() == 2));
    }

    #[test]
    fn open_two_site_chain_is_one_patch_no_edges() {
        let g = build_nn_patch_graph(&chain(2, false)).unwrap();
        assert_eq!(g.n_patches(), 1);
        assert_eq!(g.patch(0), &[0, 1]);
        assert_eq!(g.n_edges(), 0);
    }

    #[test]
    fn periodic_4x4_has_32_bond_patches() {
        let lat = LatticeSpec::uniform(vec![4, 4], true).unwrap();
        let g = build_nn_patch_graph(&lat).unwrap();
        assert_eq!(g.n_patches(), 32);
    }

    #[test]
    fn degenerate_and_duplicate_bond_lattices_are_rejected() {
        assert_eq!(
            build_nn_patch_graph(&chain(1, false)).unwrap_err(),
            LatticeError::DegenerateExtent { dim: 0, extent: 1 }
        );
        assert_eq!(
            build_nn_patch_graph(&chain(2, true)).unwrap_err(),
            LatticeError::PeriodicExtentTwo { dim: 0 }
        );
    }

    #[test]
    fn open_chain_single_site_path_is_identity_order() {
        let g = build_single_site_patch_graph(&chain(4, false), PathStyle::Snake).unwrap();
        assert_eq!(g.covering_path().unwrap(), &[0, 1, 2, 3]);
    }

    #[test]
    fn snake_on_3x3_visits_each_site_once_via_bonds() {
        let lat = LatticeSpec::uniform(vec![3, 3], false).unwrap();
        let g = build_single_site_patch_graph(&lat, PathStyle::Snake).unwrap();
        let path = g.covering_path().unwrap();
        assert_eq!(path.len(), 9);
        let mut seen: Vec<usize> = path.to_vec();
        seen.sort_unstable();
        assert_eq!(seen, (0..9).collect::<Vec<_>>());
        for w in path.windows(2) {
            assert!(lat.neighbors(w[0]).contains(&w[1]), "snake step {:?} not a bond", w);
        }
    }

    #[test]
    fn comb_differs_from_snake_but_covers() {
        let lat = LatticeSpec::uniform(vec![3, 3], false).unwrap();
        let snake = build_single_site_patch_graph(&lat, PathStyle::Snake).unwrap();
        let comb = build_single_site_patch_graph(&lat, PathStyle::Comb).unwrap();
        let mut a = comb.covering_path().unwrap().to_vec();
        a.sort_unstable();
        assert_eq!(a, (0..9).collect::<Vec<_>>());
        assert_ne!(snake.covering_path(), comb.covering_path());
    }

    #[test]
    fn diagonal_rejected_in_1d() {
        let err = build_single_site_patch_graph(&chain(4, false), PathStyle::Diagonal).unwrap_err();
        assert_eq!(err, LatticeError::UnsupportedPath { style: PathStyle::Diagonal, ndims: 1 });
    }

    #[test]
    fn diagonal_on_2x3_orders_by_antidiagonal() {
        let lat = LatticeSpec::uniform(vec![2, 3], false).unwrap();
        let g = build_single_site_patch_graph(&lat, PathStyle::Diagonal).unwrap();
        // coords by rows: 0=(0,0) 1=(0,1) 2=(0,2) 3=(1,0) 4=(1,1) 5=(1,2)
        assert_eq!(g.covering_path().unwrap(), &[0, 1, 3, 2, 4, 5]);
    }

    #[test]
    fn bond_graph_paths_walk_edges_and_start_end_correctly() {
        let g = build_nn_patch_graph(&chain(8, true)).unwrap();
        for i in 0..g.n_patches() {
            assert_eq!(g.path(i, i), &[i]);
            for j in 0..g.n_patches() {
                let p = g.path(i, j);
                assert_eq!(p.first(), Some(&i));
                assert_eq!(p.last(), Some(&j));
                for w in p.windows(2) {
                    assert!(g.are_adjacent(w[0], w[1]));
                }
            }
        }
    }

    #[test]
    fn triangles_exist_on_2d_bond_graph() {
        let lat = LatticeSpec::uniform(vec![3, 3], true).unwrap();
        let g = build_nn_patch_graph(&lat).unwrap();
        let tris = g.triangles();
        assert!(!tris.is_empty());
        for (i, j, k) in tris {
            assert!(g.are_adjacent(i, j) && g.are_adjacent(j, k) && g.are_adjacent(i, k));
        }
        let g1 = build_nn_patch_graph(&chain(10, true)).unwrap();
        assert!(g1.triangles().is_empty());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn every_site_is_covered_and_paths_valid(
            d0 in 2usize..5,
            d1 in 2usize..4,
            periodic in proptest::bool::ANY,
        ) {
            let lat = LatticeSpec::uniform(vec![d0, d1], periodic).unwrap();
            if periodic && (d0 == 2 || d1 == 2) {
                prop_assert!(build_nn_patch_graph(&lat).is_err());
                return Ok(());
            }
            let g = build_nn_patch_graph(&lat).unwrap();
            let mut covered = vec![false; lat.num_sites()];
            for p in g.patches() {
                for &s in p {
                    covered[s] = true;
                }
            }
            prop_assert!(covered.iter().all(|&c| c));
            for (i, j) in g.edges() {
                let pi = g.patch(i);
                let pj = g.patch(j);
                prop_assert!(pi.iter().any(|s| pj.contains(s)));
            }
        }

        #[test]
        fn construction_is_deterministic(d0 in 2usize..6, periodic in proptest::bool::ANY) {
            let lat = LatticeSpec::uniform(vec![d0, 3], periodic).unwrap();
            if periodic && d0 == 2 {
                return Ok(());
            }
            let a = build_nn_patch_graph(&lat).unwrap();
            let b = build_nn_patch_graph(&lat).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
