//! Uniform grid discretization of a disk minus a crack set.
//!
//! Nodes are cell centers at `center + ((i+1/2)h, (j+1/2)h)`, so a crack
//! running along a grid line still separates neighboring rows cleanly.
//! Edges connect 4-neighbors whose joining segment does not cross the
//! crack; severed edges encode the two-sided zero-Neumann condition.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::geometry::{scene_eps, CrackSet, Disk, Point2};

pub type NodeId = usize;

/// Axis-aligned neighbor slots: +x, +y, -x, -y.
pub const DIRS: [(i64, i64); 4] = [(1, 0), (0, 1), (-1, 0), (0, -1)];

/// Grid graph on a disk with crack-severed edges.
#[derive(Debug)]
pub struct CrackedGrid {
    pub domain: Disk,
    pub h: f64,
    positions: Vec<Point2>,
    lattice: Vec<(i64, i64)>,
    /// neighbor\[n\]\[d\] = node across direction `DIRS[d]`, if the edge survives
    neighbors: Vec<[Option<NodeId>; 4]>,
    /// distance from each node to the crack (`+inf` for an empty crack)
    clearance: Vec<f64>,
    component: Vec<u32>,
    n_components: usize,
    /// nodes with a lattice neighbor whose cell center leaves the disk
    boundary: Vec<bool>,
    /// dense (i, j) -> node lookup over [-half, half)^2
    index: Vec<usize>,
    half: i64,
}

impl CrackedGrid {
    /// Builds the grid. `h` must satisfy `0 < h <= radius/4`; nodes within
    /// the scene tolerance of `K` are dropped rather than assigned a side.
    pub fn build(domain: Disk, crack: &CrackSet, h: f64) -> Result<Arc<CrackedGrid>> {
        if !(h > 0.0) || h > domain.radius / 4.0 {
            return Err(Error::Config(format!(
                "grid spacing h = {h} too coarse for radius {} (need h <= radius/4)",
                domain.radius
            )));
        }
        let eps = scene_eps(2.0 * domain.radius);
        let n = (domain.radius / h).ceil() as i64 + 1;

        let cell_center = |i: i64, j: i64| {
            Point2::new(
                domain.center.x + (i as f64 + 0.5) * h,
                domain.center.y + (j as f64 + 0.5) * h,
            )
        };

        let mut positions = Vec::new();
        let mut lattice = Vec::new();
        let mut clearance = Vec::new();
        let side = (2 * n) as usize;
        let mut index = vec![usize::MAX; side * side];
        let slot = |i: i64, j: i64| ((i + n) as usize) * side + ((j + n) as usize);

        for i in -n..n {
            for j in -n..n {
                let c = cell_center(i, j);
                if c.dist(domain.center) >= domain.radius {
                    continue;
                }
                let d = crack.dist_or_inf(c);
                if d <= eps {
                    continue; // ambiguous side attribution
                }
                index[slot(i, j)] = positions.len();
                positions.push(c);
                lattice.push((i, j));
                clearance.push(d);
            }
        }
        if positions.is_empty() {
            return Err(Error::Config("grid has no nodes".to_string()));
        }

        let lookup = |i: i64, j: i64| -> Option<NodeId> {
            if i < -n || i >= n || j < -n || j >= n {
                return None;
            }
            let v = index[slot(i, j)];
            (v != usize::MAX).then_some(v)
        };

        let mut neighbors = vec![[None; 4]; positions.len()];
        let mut boundary = vec![false; positions.len()];
        for (id, &(i, j)) in lattice.iter().enumerate() {
            for (d, &(di, dj)) in DIRS.iter().enumerate() {
                let (ni, nj) = (i + di, j + dj);
                match lookup(ni, nj) {
                    Some(other) => {
                        if !crack.segment_crosses(positions[id], positions[other]) {
                            neighbors[id][d] = Some(other);
                        }
                    }
                    None => {
                        // neighbor cell center outside the disk marks a boundary node
                        if cell_center(ni, nj).dist(domain.center) >= domain.radius {
                            boundary[id] = true;
                        }
                    }
                }
            }
        }

        // connected components by BFS
        let mut component = vec![u32::MAX; positions.len()];
        let mut n_components = 0usize;
        let mut queue = std::collections::VecDeque::new();
        for start in 0..positions.len() {
            if component[start] != u32::MAX {
                continue;
            }
            let label = n_components as u32;
            n_components += 1;
            component[start] = label;
            queue.push_back(start);
            while let Some(v) = queue.pop_front() {
                for nb in neighbors[v].iter().flatten() {
                    if component[*nb] == u32::MAX {
                        component[*nb] = label;
                        queue.push_back(*nb);
                    }
                }
            }
        }

        Ok(Arc::new(CrackedGrid {
            domain,
            h,
            positions,
            lattice,
            neighbors,
            clearance,
            component,
            n_components,
            boundary,
            index,
            half: n,
        }))
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    #[inline]
    pub fn pos(&self, n: NodeId) -> Point2 {
        self.positions[n]
    }

    #[inline]
    pub fn lattice_coords(&self, n: NodeId) -> (i64, i64) {
        self.lattice[n]
    }

    #[inline]
    pub fn neighbors(&self, n: NodeId) -> &[Option<NodeId>; 4] {
        &self.neighbors[n]
    }

    #[inline]
    pub fn clearance(&self, n: NodeId) -> f64 {
        self.clearance[n]
    }

    #[inline]
    pub fn component(&self, n: NodeId) -> u32 {
        self.component[n]
    }

    pub fn n_components(&self) -> usize {
        self.n_components
    }

    #[inline]
    pub fn is_boundary(&self, n: NodeId) -> bool {
        self.boundary[n]
    }

    pub fn boundary_nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.len()).filter(|&n| self.boundary[n])
    }

    /// Undirected edges, each reported once as (a, b) with a < b.
    pub fn edges(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        (0..self.len()).flat_map(move |a| {
            self.neighbors[a][..2]
                .iter()
                .flatten()
                .map(move |&b| (a, b))
        })
    }

    /// Node at lattice coordinates (i, j), if present.
    pub fn node_at(&self, i: i64, j: i64) -> Option<NodeId> {
        let n = self.half;
        if i < -n || i >= n || j < -n || j >= n {
            return None;
        }
        let side = (2 * n) as usize;
        let v = self.index[((i + n) as usize) * side + ((j + n) as usize)];
        (v != usize::MAX).then_some(v)
    }

    /// All nodes with cell center inside `window`, via a lattice box scan.
    /// May be empty.
    pub fn disk_nodes(&self, window: Disk) -> Vec<NodeId> {
        let lo_i = ((window.center.x - window.radius - self.domain.center.x) / self.h - 0.5).floor()
            as i64;
        let hi_i = ((window.center.x + window.radius - self.domain.center.x) / self.h - 0.5).ceil()
            as i64;
        let lo_j = ((window.center.y - window.radius - self.domain.center.y) / self.h - 0.5).floor()
            as i64;
        let hi_j = ((window.center.y + window.radius - self.domain.center.y) / self.h - 0.5).ceil()
            as i64;
        let mut out = Vec::new();
        for i in lo_i..=hi_i {
            for j in lo_j..=hi_j {
                if let Some(n) = self.node_at(i, j) {
                    if self.positions[n].dist(window.center) < window.radius {
                        out.push(n);
                    }
                }
            }
        }
        out
    }

    /// Node nearest to `q`. Ties at the minimum distance are all returned
    /// (lexicographic lattice order), so a symmetric query point can be
    /// resolved by averaging.
    pub fn nearest_nodes(&self, q: Point2) -> Vec<NodeId> {
        let mut best = f64::INFINITY;
        for n in 0..self.len() {
            best = best.min(self.positions[n].dist(q));
        }
        let tol = 1e-9 * self.h;
        (0..self.len())
            .filter(|&n| self.positions[n].dist(q) <= best + tol)
            .collect()
    }
}

/// Real values on the nodes of a [`CrackedGrid`].
#[derive(Debug, Clone)]
pub struct ScalarField {
    pub grid: Arc<CrackedGrid>,
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: Arc<CrackedGrid>, values: Vec<f64>) -> Self {
        assert_eq!(grid.len(), values.len(), "one value per node");
        debug_assert!(values.iter().all(|v| v.is_finite()));
        ScalarField { grid, values }
    }

    /// Samples an analytic function at every node.
    pub fn from_fn(grid: Arc<CrackedGrid>, f: impl Fn(Point2) -> f64) -> Self {
        let values = (0..grid.len()).map(|n| f(grid.pos(n))).collect();
        ScalarField::new(grid, values)
    }

    #[inline]
    pub fn value(&self, n: NodeId) -> f64 {
        self.values[n]
    }

    /// Squared-gradient density at a node: per axis, the one-sided squared
    /// differences `(du/h)^2` averaged over the directions present.
    pub fn gradient_sq_density(&self, n: NodeId) -> f64 {
        let grid = &self.grid;
        let h = grid.h;
        let mut density = 0.0;
        for axis in 0..2 {
            let mut sum = 0.0;
            let mut k = 0u32;
            for d in [axis, axis + 2] {
                if let Some(nb) = grid.neighbors(n)[d] {
                    let du = (self.values[nb] - self.values[n]) / h;
                    sum += du * du;
                    k += 1;
                }
            }
            if k > 0 {
                density += sum / k as f64;
            }
        }
        density
    }

    /// Discrete Dirichlet integral over the nodes inside `window`:
    /// node density times the cell area `h^2`.
    pub fn dirichlet_energy_in_disk(&self, window: Disk) -> f64 {
        let h2 = self.grid.h * self.grid.h;
        self.grid
            .disk_nodes(window)
            .into_iter()
            .map(|n| self.gradient_sq_density(n) * h2)
            .sum()
    }

    /// Global edge energy `sum over edges of (u_a - u_b)^2`; the quantity
    /// the harmonic solve minimizes.
    pub fn edge_energy(&self) -> f64 {
        self.grid
            .edges()
            .map(|(a, b)| {
                let d = self.values[a] - self.values[b];
                d * d
            })
            .sum()
    }

    /// Mean of the field over the nodes inside `window`, if any.
    pub fn disk_mean(&self, window: Disk) -> Option<f64> {
        let nodes = self.grid.disk_nodes(window);
        if nodes.is_empty() {
            return None;
        }
        Some(nodes.iter().map(|&n| self.values[n]).sum::<f64>() / nodes.len() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Polyline;

    fn unit_disk() -> Disk {
        Disk::new(Point2::new(0.0, 0.0), 1.0)
    }

    fn seg(ax: f64, ay: f64, bx: f64, by: f64) -> Polyline {
        Polyline::segment(Point2::new(ax, ay), Point2::new(bx, by)).unwrap()
    }

    #[test]
    fn empty_crack_connected_full_adjacency() {
        let g = CrackedGrid::build(unit_disk(), &CrackSet::empty(), 0.1).unwrap();
        assert_eq!(g.n_components(), 1);
        // interior nodes have all 4 neighbors
        let interior = (0..g.len()).find(|&n| g.pos(n).norm() < 0.3).unwrap();
        assert!(g.neighbors(interior).iter().all(|nb| nb.is_some()));
    }

    #[test]
    fn diameter_crack_two_components() {
        let k = CrackSet::new(vec![seg(-1.0, 0.0, 1.0, 0.0)]).unwrap();
        let g = CrackedGrid::build(unit_disk(), &k, 0.1).unwrap();
        assert_eq!(g.n_components(), 2);
    }

    #[test]
    fn slit_disk_is_connected() {
        let k = CrackSet::new(vec![seg(-1.0, 0.0, 0.0, 0.0)]).unwrap();
        let g = CrackedGrid::build(unit_disk(), &k, 0.1).unwrap();
        assert_eq!(g.n_components(), 1);
    }

    #[test]
    fn component_counts_stable_under_refinement() {
        for (k, expect) in [
            (CrackSet::empty(), 1usize),
            (CrackSet::new(vec![seg(-1.0, 0.0, 1.0, 0.0)]).unwrap(), 2),
            (CrackSet::new(vec![seg(-1.0, 0.0, 0.0, 0.0)]).unwrap(), 1),
        ] {
            for h in [0.1, 0.05] {
                let g = CrackedGrid::build(unit_disk(), &k, h).unwrap();
                assert_eq!(g.n_components(), expect, "h = {h}");
            }
        }
    }

    #[test]
    fn too_coarse_rejected() {
        assert!(CrackedGrid::build(unit_disk(), &CrackSet::empty(), 0.3).is_err());
    }

    #[test]
    fn coarse_spec_examples_build() {
        // h = 0.25 on the unit disk: the three component-count cases
        let g = CrackedGrid::build(unit_disk(), &CrackSet::empty(), 0.25).unwrap();
        assert_eq!(g.n_components(), 1);
        let k = CrackSet::new(vec![seg(-1.0, 0.0, 1.0, 0.0)]).unwrap();
        assert_eq!(
            CrackedGrid::build(unit_disk(), &k, 0.25).unwrap().n_components(),
            2
        );
        let k = CrackSet::new(vec![seg(-1.0, 0.0, 0.0, 0.0)]).unwrap();
        assert_eq!(
            CrackedGrid::build(unit_disk(), &k, 0.25).unwrap().n_components(),
            1
        );
    }

    #[test]
    fn node_count_near_disk_area() {
        let h = 1.0 / 32.0;
        let g = CrackedGrid::build(unit_disk(), &CrackSet::empty(), h).unwrap();
        let expected = std::f64::consts::PI / (h * h);
        let got = g.len() as f64;
        assert!(
            (got - expected).abs() / expected < 0.10,
            "count {got} vs {expected}"
        );
    }

    #[test]
    fn no_edge_crosses_crack() {
        let k = CrackSet::new(vec![seg(-1.0, 0.0, 0.0, 0.0)]).unwrap();
        let g = CrackedGrid::build(unit_disk(), &k, 1.0 / 16.0).unwrap();
        for (a, b) in g.edges() {
            assert!(!k.segment_crosses(g.pos(a), g.pos(b)));
        }
    }

    #[test]
    fn mirror_symmetry_of_adjacency() {
        // K symmetric under y -> -y: adjacency must be invariant
        let k = CrackSet::new(vec![seg(-1.0, 0.0, 0.0, 0.0)]).unwrap();
        let g = CrackedGrid::build(unit_disk(), &k, 1.0 / 16.0).unwrap();
        let mut by_coord = std::collections::HashMap::new();
        for n in 0..g.len() {
            by_coord.insert(g.lattice_coords(n), n);
        }
        let mirror = |(i, j): (i64, i64)| (i, -j - 1);
        for n in 0..g.len() {
            let m = by_coord[&mirror(g.lattice_coords(n))];
            // +x neighbor present iff +x neighbor of mirror present
            let nx = g.neighbors(n)[0].is_some();
            let mx = g.neighbors(m)[0].is_some();
            assert_eq!(nx, mx);
            // +y neighbor of n mirrors to -y neighbor of m
            let ny = g.neighbors(n)[1].is_some();
            let my = g.neighbors(m)[3].is_some();
            assert_eq!(ny, my);
        }
    }

    #[test]
    fn disk_nodes_windows() {
        let g = CrackedGrid::build(unit_disk(), &CrackSet::empty(), 0.1).unwrap();
        assert_eq!(g.disk_nodes(unit_disk()).len(), g.len());
        // tiny off-lattice window may be empty
        let tiny = Disk::new(Point2::new(0.001, 0.0), 0.01);
        assert!(g.disk_nodes(tiny).len() <= 1);
    }

    #[test]
    fn disk_nodes_count_in_range() {
        // expected ~pi*(0.5/0.25)^2 = 12.57, enumerated by hand: 12
        let g = CrackedGrid::build(unit_disk(), &CrackSet::empty(), 0.25).unwrap();
        let count = g.disk_nodes(Disk::new(Point2::new(0.0, 0.0), 0.5)).len();
        assert!((9..=16).contains(&count), "count {count}");
    }
}
