//! Carrot-John machinery: carrot membership, John-curve verification,
//! escaping-curve search, Besicovitch ball selection, the V/U/W
//! decomposition of a crack-tip neighborhood, and Boman chains.
//!
//! The constants appearing in the continuum statements (J, C3, J', N, M)
//! are existential; everything here *measures* the achieved values and
//! attaches them to the output as certificates instead of assuming them.

use std::collections::{HashMap, VecDeque};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::geometry::{first_circle_exit, CrackSet, Disk, Point2, Polyline};
use crate::grid::{CrackedGrid, NodeId};

/// Carrot `car(core, J)`: the union of balls `B(y, l(core[x,y])/J)` over
/// core points `y` past the vertex `x` (the first vertex).
#[derive(Debug, Clone)]
pub struct Carrot {
    pub core: Polyline,
    pub j: f64,
}

impl Carrot {
    pub fn new(core: Polyline, j: f64) -> Self {
        assert!(j >= 1.0, "carrot constant must satisfy J >= 1");
        Carrot { core, j }
    }

    /// Membership test, solved in closed form per segment.
    ///
    /// `q` is inside iff some arc-length `s > 0` satisfies
    /// `|q - core(s)| < s/J`, i.e. the quadratic
    /// `g(t) = |q - p0 - t d|^2 - ((s0 + t)/J)^2` dips below zero on the
    /// segment's parameter range.
    pub fn contains(&self, q: Point2) -> bool {
        let j2 = self.j * self.j;
        let verts = self.core.vertices();
        let cum = self.core.cumulative();
        for i in 0..verts.len() - 1 {
            let p0 = verts[i];
            let p1 = verts[i + 1];
            let len = cum[i + 1] - cum[i];
            let s0 = cum[i];
            let dx = (p1.x - p0.x) / len;
            let dy = (p1.y - p0.y) / len;
            let wx = q.x - p0.x;
            let wy = q.y - p0.y;
            let a = wx * dx + wy * dy;
            // g(t) = c2 t^2 - 2 b1 t + c0
            let c2 = 1.0 - 1.0 / j2;
            let b1 = a + s0 / j2;
            let c0 = wx * wx + wy * wy - s0 * s0 / j2;
            let g = |t: f64| c2 * t * t - 2.0 * b1 * t + c0;
            let mut best = g(0.0).min(g(len));
            if c2 > 0.0 {
                let t_star = b1 / c2;
                if t_star > 0.0 && t_star < len {
                    best = best.min(g(t_star));
                }
            }
            // strictness excludes the vertex itself (s = 0 gives g >= 0)
            if best < 0.0 {
                return true;
            }
        }
        false
    }

    /// A point guaranteed to lie inside the carrot: the ball at arc-length
    /// `s` offset by `rho < 1` of its radius in direction `phi`.
    pub fn point_inside(&self, s: f64, rho: f64, phi: f64) -> Point2 {
        assert!(s > 0.0 && rho < 1.0);
        let y = self.core.arc_point(s).expect("arc-length in range");
        let rad = rho * s / self.j;
        Point2::new(y.x + rad * phi.cos(), y.y + rad * phi.sin())
    }
}

/// Obstacle set for John verification: the crack, the outer domain
/// boundary, or both.
#[derive(Debug, Clone, Copy, Default)]
pub struct JohnObstacles<'a> {
    pub crack: Option<&'a CrackSet>,
    pub outer: Option<Disk>,
}

impl JohnObstacles<'_> {
    pub fn dist(&self, q: Point2) -> f64 {
        let mut d = f64::INFINITY;
        if let Some(k) = self.crack {
            d = d.min(k.dist_or_inf(q));
        }
        if let Some(o) = self.outer {
            d = d.min(o.radius - q.dist(o.center));
        }
        d
    }
}

/// Result of sampling a core against the John condition
/// `l(core[x,y]) <= J dist(y, obstacles)`.
#[derive(Debug, Clone, Copy)]
pub struct JohnCheck {
    pub ok: bool,
    pub worst_ratio: f64,
    /// sample realizing the worst ratio (arc-length, point)
    pub witness: Option<(f64, Point2)>,
}

/// Samples `core` at arc-steps of at most `step` (vertices always
/// included) and reports the worst length/clearance ratio. A core with
/// fewer than two distinct points passes vacuously.
pub fn verify_john_curve(
    core: &[Point2],
    obstacles: &JohnObstacles,
    j: f64,
    step: f64,
) -> JohnCheck {
    let mut verts: Vec<Point2> = Vec::with_capacity(core.len());
    for &p in core {
        if verts.last().map_or(true, |l: &Point2| l.dist(p) > 0.0) {
            verts.push(p);
        }
    }
    if verts.len() < 2 {
        return JohnCheck {
            ok: true,
            worst_ratio: 0.0,
            witness: None,
        };
    }
    let poly = Polyline::new(verts).expect("deduped vertices");
    let mut worst = 0.0f64;
    let mut witness = None;
    for (s, y) in poly.sample(step) {
        let d = obstacles.dist(y);
        if d <= 0.0 {
            return JohnCheck {
                ok: false,
                worst_ratio: f64::INFINITY,
                witness: Some((s, y)),
            };
        }
        let ratio = s / d;
        if ratio > worst {
            worst = ratio;
            witness = Some((s, y));
        }
    }
    JohnCheck {
        ok: worst <= j,
        worst_ratio: worst,
        witness,
    }
}

/// An escaping curve together with its measured John constant.
#[derive(Debug, Clone)]
pub struct EscapeResult {
    pub curve: Polyline,
    pub achieved_j: f64,
}

/// Escaping-curve search on a cracked grid.
pub struct EscapeContext<'a> {
    pub grid: &'a CrackedGrid,
    pub crack: &'a CrackSet,
}

/// Preference for which escape node ends the curve: among the reachable
/// nodes outside the ball, pick the one whose polar angle around `anchor`
/// is closest to the start's own angle, restricted to exits at clearance
/// `>= floor` when any qualify. Spreads exits angularly so the exit balls
/// chain together around each free sector.
#[derive(Debug, Clone, Copy)]
pub struct ExitPreference {
    pub anchor: Point2,
    pub floor: f64,
}

impl EscapeContext<'_> {
    /// Finds a deterministic curve from `x` that leaves `B_radius(x)`,
    /// staying as clear of the crack as the grid allows: binary search on
    /// a clearance level, BFS restricted to nodes at that clearance with
    /// ties broken toward higher clearance, then chord shortcutting capped
    /// by the unsmoothed John ratio. The achieved `J` is measured, never
    /// assumed.
    pub fn find(&self, x: Point2, radius: f64) -> Result<EscapeResult> {
        self.find_with(x, radius, None)
    }

    pub fn find_with(
        &self,
        x: Point2,
        radius: f64,
        prefer: Option<ExitPreference>,
    ) -> Result<EscapeResult> {
        let grid = self.grid;
        let h = grid.h;

        if self.crack.is_empty() {
            // no obstacle: a straight ray suffices
            let end = Point2::new(x.x + radius, x.y);
            let curve = Polyline::segment(x, end)?;
            let obstacles = JohnObstacles {
                crack: None,
                outer: Some(grid.domain),
            };
            let check = verify_john_curve(curve.vertices(), &obstacles, f64::INFINITY, h / 2.0);
            return Ok(EscapeResult {
                curve,
                achieved_j: check.worst_ratio.max(1.0),
            });
        }

        let start = self.nearest_node(x)?;
        let path = self.widest_escape_path(start, x, radius, prefer)?;
        let points: Vec<Point2> = path.iter().map(|&n| grid.pos(n)).collect();

        let obstacles = JohnObstacles {
            crack: Some(self.crack),
            outer: None,
        };
        let raw = verify_john_curve(&points, &obstacles, f64::INFINITY, h / 2.0);
        if !raw.worst_ratio.is_finite() {
            return Err(Error::Analysis(format!(
                "escape path from ({:.4}, {:.4}) touches the crack",
                x.x, x.y
            )));
        }
        let cap = raw.worst_ratio.max(1.0);
        let smooth = self.shortcut(&points, cap);
        let curve = Polyline::new(smooth)?;
        let check = verify_john_curve(curve.vertices(), &obstacles, cap, h / 2.0);
        Ok(EscapeResult {
            curve,
            achieved_j: check.worst_ratio,
        })
    }

    fn nearest_node(&self, x: Point2) -> Result<NodeId> {
        let grid = self.grid;
        let h = grid.h;
        let gi = ((x.x - grid.domain.center.x) / h - 0.5).round() as i64;
        let gj = ((x.y - grid.domain.center.y) / h - 0.5).round() as i64;
        let mut best: Option<(f64, NodeId)> = None;
        for di in -1..=1 {
            for dj in -1..=1 {
                if let Some(n) = grid.node_at(gi + di, gj + dj) {
                    let d = grid.pos(n).dist(x);
                    let better = best.map_or(true, |(bd, bn)| {
                        d < bd - 1e-12 * h || (d <= bd + 1e-12 * h && n < bn)
                    });
                    if better {
                        best = Some((d, n));
                    }
                }
            }
        }
        match best {
            Some((d, n)) if d <= h => Ok(n),
            _ => Err(Error::Domain(format!(
                "point ({:.4}, {:.4}) is not grid-resolvable",
                x.x, x.y
            ))),
        }
    }

    /// BFS over the lattice box around `x`; returns the node path from
    /// `start` to a node at distance >= `radius` from `x`, run at the
    /// highest feasible clearance level.
    fn widest_escape_path(
        &self,
        start: NodeId,
        x: Point2,
        radius: f64,
        prefer: Option<ExitPreference>,
    ) -> Result<Vec<NodeId>> {
        let grid = self.grid;
        let h = grid.h;
        let start_clear = grid.clearance(start);

        // region nodes with dense box indexing
        let reach = radius + 2.0 * h;
        let (ci, cj) = grid.lattice_coords(start);
        let span = (reach / h).ceil() as i64 + 1;
        let side = (2 * span + 1) as usize;
        let local_of = |n: NodeId| {
            let (i, j) = grid.lattice_coords(n);
            ((i - (ci - span)) as usize) * side + (j - (cj - span)) as usize
        };
        let mut region = Vec::new();
        let mut local = vec![u32::MAX; side * side];
        for i in (ci - span)..=(ci + span) {
            for j in (cj - span)..=(cj + span) {
                if let Some(n) = grid.node_at(i, j) {
                    if grid.pos(n).dist(x) <= reach {
                        local[local_of(n)] = region.len() as u32;
                        region.push(n);
                    }
                }
            }
        }

        // candidate clearance levels, capped at the start's own clearance
        let mut levels: Vec<f64> = region
            .iter()
            .map(|&n| grid.clearance(n))
            .filter(|&c| c <= start_clear)
            .collect();
        levels.sort_by(|a, b| a.partial_cmp(b).unwrap());
        levels.dedup();
        if levels.len() > 24 {
            let m = levels.len();
            levels = (0..24).map(|k| levels[k * (m - 1) / 23]).collect();
            levels.dedup();
        }

        let escaped = |n: NodeId| grid.pos(n).dist(x) >= radius;
        let mut seen = vec![false; region.len()];
        let mut parents = vec![u32::MAX; region.len()];
        // BFS at a clearance level; escape nodes are endpoints, not expanded.
        // `exhaustive` collects every reachable escape node.
        let bfs = |level: f64,
                   exhaustive: bool,
                   seen: &mut Vec<bool>,
                   parents: &mut Vec<u32>|
         -> Vec<NodeId> {
            seen.iter_mut().for_each(|s| *s = false);
            parents.iter_mut().for_each(|p| *p = u32::MAX);
            let mut found = Vec::new();
            let s_local = local[local_of(start)] as usize;
            seen[s_local] = true;
            let mut queue = VecDeque::new();
            queue.push_back(start);
            if escaped(start) {
                return vec![start];
            }
            while let Some(v) = queue.pop_front() {
                // prefer gaining clearance: expand high-clearance neighbors first
                let mut nbs: [Option<NodeId>; 4] = *grid.neighbors(v);
                nbs.sort_by(|a, b| match (a, b) {
                    (Some(a), Some(b)) => grid
                        .clearance(*b)
                        .partial_cmp(&grid.clearance(*a))
                        .unwrap()
                        .then(a.cmp(b)),
                    (Some(_), None) => std::cmp::Ordering::Less,
                    (None, Some(_)) => std::cmp::Ordering::Greater,
                    (None, None) => std::cmp::Ordering::Equal,
                });
                for nb in nbs.iter().flatten().copied() {
                    if grid.clearance(nb) < level {
                        continue;
                    }
                    let l = local[local_of(nb)];
                    if l == u32::MAX || seen[l as usize] {
                        continue;
                    }
                    seen[l as usize] = true;
                    parents[l as usize] = local[local_of(v)];
                    if escaped(nb) {
                        found.push(nb);
                        if !exhaustive {
                            return found;
                        }
                    } else {
                        queue.push_back(nb);
                    }
                }
            }
            found
        };

        // binary search the highest feasible clearance level
        if levels.is_empty() || bfs(levels[0], false, &mut seen, &mut parents).is_empty() {
            return Err(Error::Enclosure { point: x });
        }
        let (mut lo, mut hi) = (0usize, levels.len());
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if bfs(levels[mid], false, &mut seen, &mut parents).is_empty() {
                hi = mid;
            } else {
                lo = mid;
            }
        }

        let found = bfs(levels[lo], prefer.is_some(), &mut seen, &mut parents);
        let end = match prefer {
            None => found[0],
            Some(pref) => {
                let angle_to = |n: NodeId| {
                    let p = grid.pos(n);
                    (p.y - pref.anchor.y).atan2(p.x - pref.anchor.x)
                };
                let target = (x.y - pref.anchor.y).atan2(x.x - pref.anchor.x);
                let circ = |a: f64| {
                    let d = (a - target).rem_euclid(2.0 * std::f64::consts::PI);
                    d.min(2.0 * std::f64::consts::PI - d)
                };
                let candidates: Vec<NodeId> = {
                    let ok: Vec<NodeId> = found
                        .iter()
                        .copied()
                        .filter(|&n| grid.clearance(n) >= pref.floor)
                        .collect();
                    if ok.is_empty() {
                        found.clone()
                    } else {
                        ok
                    }
                };
                candidates
                    .into_iter()
                    .min_by(|&a, &b| {
                        circ(angle_to(a))
                            .partial_cmp(&circ(angle_to(b)))
                            .unwrap()
                            .then(a.cmp(&b))
                    })
                    .expect("nonempty escape set")
            }
        };

        let mut path = vec![end];
        let mut cur = local[local_of(end)] as usize;
        let s_local = local[local_of(start)] as usize;
        while cur != s_local {
            cur = parents[cur] as usize;
            path.push(region[cur]);
        }
        path.reverse();
        Ok(path)
    }

    /// Greedy chord shortcutting: replace node runs by straight chords as
    /// long as every chord sample keeps the running John ratio within
    /// `cap`. Prefix lengths only shrink, so suffix ratios never worsen.
    fn shortcut(&self, points: &[Point2], cap: f64) -> Vec<Point2> {
        let step = self.grid.h / 2.0;
        let mut out: Vec<Point2> = vec![points[0]];
        let mut prefix = 0.0f64;
        let mut i = 0usize;
        while i + 1 < points.len() {
            let mut take = i + 1;
            for j in ((i + 2)..points.len()).rev() {
                if self.chord_ok(prefix, points[i], points[j], cap, step) {
                    take = j;
                    break;
                }
            }
            prefix += points[i].dist(points[take]);
            out.push(points[take]);
            i = take;
        }
        out
    }

    fn chord_ok(&self, prefix: f64, a: Point2, b: Point2, cap: f64, step: f64) -> bool {
        let len = a.dist(b);
        let n = (len / step).ceil().max(1.0) as usize;
        for k in 0..=n {
            let p = a.lerp(b, k as f64 / n as f64);
            let d = self.crack.dist_or_inf(p);
            if d <= 0.0 || (prefix + len * k as f64 / n as f64) / d > cap {
                return false;
            }
        }
        true
    }
}

/// Outcome of the greedy Besicovitch-style selection.
#[derive(Debug, Clone)]
pub struct BesicovitchSelection {
    /// indices into the input ball list, in selection order
    pub selected: Vec<usize>,
    /// max number of selected closed balls covering any sample point
    pub multiplicity: usize,
}

/// Greedy selection by decreasing radius, skipping balls whose center is
/// already covered by a selected closed ball. The selected family covers
/// every input center; pointwise multiplicity is measured on a sample grid
/// over the selected balls.
pub fn besicovitch_select(balls: &[Disk]) -> BesicovitchSelection {
    let mut order: Vec<usize> = (0..balls.len()).collect();
    order.sort_by(|&a, &b| {
        balls[b]
            .radius
            .partial_cmp(&balls[a].radius)
            .unwrap()
            .then(balls[a].center.x.partial_cmp(&balls[b].center.x).unwrap())
            .then(balls[a].center.y.partial_cmp(&balls[b].center.y).unwrap())
            .then(a.cmp(&b))
    });
    let mut selected: Vec<usize> = Vec::new();
    for idx in order {
        let covered = selected
            .iter()
            .any(|&s| balls[s].center.dist(balls[idx].center) <= balls[s].radius);
        if !covered {
            selected.push(idx);
        }
    }

    let multiplicity = if selected.is_empty() {
        0
    } else {
        let (mut lo_x, mut lo_y) = (f64::INFINITY, f64::INFINITY);
        let (mut hi_x, mut hi_y) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        let mut min_r = f64::INFINITY;
        for &s in &selected {
            let b = balls[s];
            lo_x = lo_x.min(b.center.x - b.radius);
            lo_y = lo_y.min(b.center.y - b.radius);
            hi_x = hi_x.max(b.center.x + b.radius);
            hi_y = hi_y.max(b.center.y + b.radius);
            min_r = min_r.min(b.radius);
        }
        let step = min_r / 2.0;
        let nx = (((hi_x - lo_x) / step).ceil() as usize + 1).min(400).max(1);
        let ny = (((hi_y - lo_y) / step).ceil() as usize + 1).min(400).max(1);
        let count_at = |p: Point2| {
            selected
                .iter()
                .filter(|&&s| p.dist(balls[s].center) <= balls[s].radius)
                .count()
        };
        let mut max_count = 0usize;
        for ix in 0..=nx {
            for iy in 0..=ny {
                let p = Point2::new(
                    lo_x + (hi_x - lo_x) * ix as f64 / nx as f64,
                    lo_y + (hi_y - lo_y) * iy as f64 / ny as f64,
                );
                max_count = max_count.max(count_at(p));
            }
        }
        for &s in &selected {
            max_count = max_count.max(count_at(balls[s].center));
        }
        max_count
    };

    BesicovitchSelection {
        selected,
        multiplicity,
    }
}

/// Whether every input center lies in some selected closed ball.
pub fn selection_covers_centers(balls: &[Disk], selection: &BesicovitchSelection) -> bool {
    balls.iter().all(|b| {
        selection
            .selected
            .iter()
            .any(|&s| b.center.dist(balls[s].center) <= balls[s].radius)
    })
}

/// Boman chain: overlapping balls descending from a base ball toward the
/// carrot vertex, with witness balls inside consecutive intersections.
#[derive(Debug, Clone)]
pub struct BomanChain {
    /// base ball first, then balls shrinking toward the vertex
    pub balls: Vec<Disk>,
    /// witnesses R_i for consecutive pairs (len = balls.len() - 1)
    pub witnesses: Vec<Disk>,
    /// computed constant under which all four chain conditions hold
    pub m: f64,
}

/// Spacing ratio for the chain anchors: close enough to 1 that consecutive
/// balls of radius `l_i/(2J)` overlap by at least half the smaller radius,
/// but never finer than the dyadic 1/2.
pub fn boman_ratio(j: f64) -> f64 {
    (0.5f64).max((8.0 * j - 1.0) / (8.0 * j + 4.0))
}

/// Builds the Boman chain of a carrot core: balls `B(core(l_i), l_i/(2J))`
/// at anchors `l_i = l * rho(J)^i` truncated once the ball radius falls
/// below the grid resolution `h`, preceded by the base ball (by default
/// `B(end, l/(4J))`).
pub fn carrot_to_boman(core: &Polyline, j: f64, base: Option<Disk>, h: f64) -> Result<BomanChain> {
    assert!(j >= 1.0 && h > 0.0);
    let total = core.length();
    let base_ball = base.unwrap_or(Disk::new(core.last(), total / (4.0 * j)));
    if total < h {
        return Ok(BomanChain {
            balls: vec![base_ball],
            witnesses: vec![],
            m: 1.0,
        });
    }

    let rho = boman_ratio(j);
    let mut balls = vec![base_ball];
    let mut s = total;
    while s / (2.0 * j) >= h {
        balls.push(Disk::new(core.arc_point(s)?, s / (2.0 * j)));
        s *= rho;
    }
    if balls.len() == 1 {
        // every ladder ball is below resolution
        return Ok(BomanChain {
            balls,
            witnesses: vec![],
            m: 1.0,
        });
    }

    let mut witnesses = Vec::with_capacity(balls.len() - 1);
    let mut m: f64 = 1.0;
    for w in balls.windows(2) {
        let (a, b) = (w[0], w[1]);
        let d = a.center.dist(b.center);
        let witness = if d + a.radius.min(b.radius) <= a.radius.max(b.radius) {
            // one ball inside the other: the smaller ball is the witness
            if a.radius <= b.radius {
                a
            } else {
                b
            }
        } else {
            let depth = a.radius + b.radius - d;
            if depth <= 0.0 {
                return Err(Error::Analysis(format!(
                    "chain balls at distance {d:.6} with radii {:.6}/{:.6} do not overlap",
                    a.radius, b.radius
                )));
            }
            let half = depth / 2.0;
            let t = (a.radius - half) / d;
            Disk::new(a.center.lerp(b.center, t), half)
        };
        witnesses.push(witness);
        // diameter comparability
        m = m.max(a.radius / b.radius).max(b.radius / a.radius);
        // concentric dilation of the witness must swallow both balls
        for ball in [a, b] {
            m = m.max((witness.center.dist(ball.center) + ball.radius) / witness.radius);
        }
    }

    // sampled multiplicity along the core (balls are centered on it)
    let mut max_count = 0usize;
    for (_, p) in core.sample((h / 2.0).min(total / 8.0)) {
        let c = balls
            .iter()
            .filter(|b| p.dist(b.center) <= b.radius)
            .count();
        max_count = max_count.max(c);
    }
    m = m.max(max_count as f64);

    Ok(BomanChain {
        balls,
        witnesses,
        m,
    })
}

impl BomanChain {
    pub fn last_ball(&self) -> Disk {
        *self.balls.last().unwrap()
    }

    /// Re-checks the four chain conditions under the constant `m`.
    pub fn check(&self, m: f64) -> bool {
        for (i, w) in self.balls.windows(2).enumerate() {
            let (a, b) = (w[0], w[1]);
            if a.radius > m * b.radius || b.radius > m * a.radius {
                return false;
            }
            let r = self.witnesses[i];
            for ball in [a, b] {
                // witness inside both balls, dilation swallows both
                if r.center.dist(ball.center) + r.radius > ball.radius + 1e-12 {
                    return false;
                }
                if r.center.dist(ball.center) + ball.radius > m * r.radius + 1e-12 {
                    return false;
                }
            }
        }
        true
    }
}

/// Parameters for [`decompose`].
#[derive(Debug, Clone, Copy)]
pub struct DecomposeParams {
    /// how many per-group chains to build when measuring the Boman constant
    pub chain_sample: usize,
}

impl Default for DecomposeParams {
    fn default() -> Self {
        DecomposeParams { chain_sample: 8 }
    }
}

/// One John-domain group `W_{j,r}` of the decomposition.
#[derive(Debug, Clone)]
pub struct Group {
    /// base point `w_j = y_r` on the exit circle
    pub base: Point2,
    /// indices into `Decomposition::balls` forming the connected component
    pub ball_indices: Vec<usize>,
    /// nodes of `V_{j,r}` assigned to this group
    pub nodes: Vec<NodeId>,
}

/// Measured certificate constants of a decomposition run.
#[derive(Debug, Clone, Copy)]
pub struct Certificates {
    /// max John ratio over the truncated escaping curves
    pub j_escape: f64,
    /// max core length over r
    pub c3: f64,
    /// carrot constant of the emitted cores: c3 * j_escape
    pub j_prime: f64,
    /// worst John ratio over all emitted cores (must be <= j_prime)
    pub worst_core_ratio: f64,
    pub n_groups: usize,
    /// sampled multiplicity of the Besicovitch selection
    pub multiplicity: usize,
    /// max |z| over core samples; containment demands <= 2 * c3 * r
    pub max_core_norm: f64,
    /// min l(gamma[x, x_r]); the exit bound demands >= 2r
    pub min_exit_length: f64,
    /// max Boman constant over the sampled chains
    pub chain_m: f64,
}

/// The `W_{j,r}` cover of `B_r \ K` realized through per-node chain cores.
#[derive(Debug)]
pub struct Decomposition {
    pub r: f64,
    /// Besicovitch-selected exit balls
    pub balls: Vec<Disk>,
    pub groups: Vec<Group>,
    /// chain generator: node -> core curve beta_x (x to the group base)
    pub cores: HashMap<NodeId, Polyline>,
    pub exit_points: HashMap<NodeId, Point2>,
    pub certificates: Certificates,
    /// nodes of B_r \ K for which no escaping curve exists
    pub uncovered: Vec<NodeId>,
}

impl Decomposition {
    /// Group index a node was assigned to.
    pub fn group_of(&self, node: NodeId) -> Option<usize> {
        self.groups.iter().position(|g| g.nodes.contains(&node))
    }
}

/// Runs the full decomposition pipeline around the crack tip at the
/// origin: per-node escaping curves, exit balls on the `3r` circle,
/// greedy Besicovitch selection, connected grouping, and chain cores
/// `beta_x` with measured certificates.
pub fn decompose(
    crack: &CrackSet,
    r: f64,
    grid: &Arc<CrackedGrid>,
    params: DecomposeParams,
) -> Result<Decomposition> {
    if crack.is_empty() {
        return Err(Error::Domain("decomposition needs a crack set".to_string()));
    }
    let origin = Point2::new(0.0, 0.0);
    let eps = crack.eps_with(&[origin]);
    if crack.dist_to_crack(origin)? > eps {
        return Err(Error::Domain(
            "decomposition expects the crack tip at the origin".to_string(),
        ));
    }
    let needed = 5.0 * r + 2.0 * grid.h;
    if grid.domain.center.dist(origin) + needed > grid.domain.radius {
        return Err(Error::Config(format!(
            "decomposition radius r = {r} too large for the domain"
        )));
    }

    let ctx = EscapeContext { grid, crack };
    let exit_circle = Disk::new(origin, 3.0 * r);
    let nodes_in = grid.disk_nodes(Disk::new(origin, r));

    let mut uncovered = Vec::new();
    let mut gamma_cut: HashMap<NodeId, Polyline> = HashMap::new();
    let mut exit_points: HashMap<NodeId, Point2> = HashMap::new();
    let mut exit_balls: Vec<(NodeId, Disk)> = Vec::new();
    let mut j_escape = 0.0f64;
    let mut min_exit_length = f64::INFINITY;

    let obstacles = JohnObstacles {
        crack: Some(crack),
        outer: None,
    };

    let prefer = ExitPreference {
        anchor: origin,
        floor: r,
    };
    for &x in &nodes_in {
        let pos = grid.pos(x);
        // leaving B_{3r + |x| + h}(x) guarantees a crossing of the 3r circle
        let escape = match ctx.find_with(pos, 3.0 * r + pos.norm() + grid.h, Some(prefer)) {
            Ok(e) => e,
            Err(Error::Enclosure { .. }) => {
                uncovered.push(x);
                continue;
            }
            Err(e) => return Err(e),
        };
        let (arc, exit) = first_circle_exit(&escape.curve, exit_circle).ok_or_else(|| {
            Error::Analysis(format!(
                "escape curve from node {x} never crosses the exit circle"
            ))
        })?;
        let cut = escape.curve.truncate_at(arc)?;
        let check = verify_john_curve(cut.vertices(), &obstacles, f64::INFINITY, grid.h / 2.0);
        j_escape = j_escape.max(check.worst_ratio);
        min_exit_length = min_exit_length.min(cut.length());
        let dist = crack.dist_to_crack(exit)?;
        exit_balls.push((x, Disk::new(exit, dist / 2.0)));
        exit_points.insert(x, exit);
        gamma_cut.insert(x, cut);
    }

    // Besicovitch selection over the exit balls
    let input: Vec<Disk> = exit_balls.iter().map(|&(_, b)| b).collect();
    let selection = besicovitch_select(&input);
    let balls: Vec<Disk> = selection.selected.iter().map(|&i| input[i]).collect();

    // connected components of the selected-ball intersection graph
    let mut ball_group = vec![usize::MAX; balls.len()];
    let mut n_groups = 0usize;
    for start in 0..balls.len() {
        if ball_group[start] != usize::MAX {
            continue;
        }
        let g = n_groups;
        n_groups += 1;
        let mut stack = vec![start];
        ball_group[start] = g;
        while let Some(v) = stack.pop() {
            for w in 0..balls.len() {
                if ball_group[w] == usize::MAX
                    && balls[v].center.dist(balls[w].center) <= balls[v].radius + balls[w].radius
                {
                    ball_group[w] = g;
                    stack.push(w);
                }
            }
        }
    }

    let containing_ball = |p: Point2| -> Option<usize> {
        (0..balls.len()).find(|&b| p.dist(balls[b].center) <= balls[b].radius)
    };

    // assign nodes to groups through their exit points
    let mut group_nodes: Vec<Vec<NodeId>> = vec![Vec::new(); n_groups];
    for &(x, _) in &exit_balls {
        let exit = exit_points[&x];
        let b = containing_ball(exit).ok_or_else(|| {
            Error::Analysis(format!("exit point of node {x} escaped the selection cover"))
        })?;
        group_nodes[ball_group[b]].push(x);
    }

    // base point per group: exit of the smallest assigned node
    let mut groups = Vec::with_capacity(n_groups);
    for g in 0..n_groups {
        let mut nodes = group_nodes[g].clone();
        nodes.sort_unstable();
        if nodes.is_empty() {
            continue;
        }
        let base = exit_points[&nodes[0]];
        let ball_indices = (0..balls.len()).filter(|&b| ball_group[b] == g).collect();
        groups.push(Group {
            base,
            ball_indices,
            nodes,
        });
    }
    let n_groups = groups.len();

    // chain cores beta_x: escape prefix + ball-center path to the base
    let mut cores: HashMap<NodeId, Polyline> = HashMap::new();
    let mut c3 = 0.0f64;
    let mut max_core_norm = 0.0f64;
    for group in &groups {
        let base = group.base;
        let d1 = containing_ball(base).expect("base exit is covered");
        for &x in &group.nodes {
            let cut = &gamma_cut[&x];
            let exit = exit_points[&x];
            let mut pts: Vec<Point2> = cut.vertices().to_vec();
            if exit.dist(base) > 0.0 {
                let d2 = containing_ball(exit).expect("exit is covered");
                for b in ball_path(&balls, &group.ball_indices, d2, d1) {
                    pts.push(balls[b].center);
                }
                pts.push(base);
            }
            let mut dedup: Vec<Point2> = Vec::with_capacity(pts.len());
            for p in pts {
                if dedup.last().map_or(true, |l: &Point2| l.dist(p) > 1e-15) {
                    dedup.push(p);
                }
            }
            let beta = Polyline::new(dedup)?;
            c3 = c3.max(beta.length() / r);
            for (_, p) in beta.sample(grid.h / 2.0) {
                max_core_norm = max_core_norm.max(p.norm());
            }
            cores.insert(x, beta);
        }
    }
    let j_prime = c3 * j_escape;

    // certify every core at J'
    let mut worst_core_ratio = 0.0f64;
    for beta in cores.values() {
        let check = verify_john_curve(beta.vertices(), &obstacles, j_prime, grid.h / 2.0);
        worst_core_ratio = worst_core_ratio.max(check.worst_ratio);
        if !check.ok {
            return Err(Error::Analysis(format!(
                "core fails the John check at J' = {j_prime:.3} (ratio {:.3})",
                check.worst_ratio
            )));
        }
    }

    // Boman constant over a per-group sample of chains sharing the base ball
    let mut chain_m = 0.0f64;
    for group in &groups {
        let d1 = containing_ball(group.base).expect("base covered");
        for &x in group.nodes.iter().take(params.chain_sample) {
            let beta = &cores[&x];
            let shared = Disk::new(group.base, balls[d1].radius.min(beta.length() / 4.0));
            let chain = carrot_to_boman(beta, j_prime.max(1.0), Some(shared), grid.h)?;
            chain_m = chain_m.max(chain.m);
        }
    }

    Ok(Decomposition {
        r,
        balls,
        groups,
        cores,
        exit_points,
        certificates: Certificates {
            j_escape,
            c3,
            j_prime,
            worst_core_ratio,
            n_groups,
            multiplicity: selection.multiplicity,
            max_core_norm,
            min_exit_length,
            chain_m,
        },
        uncovered,
    })
}

/// Shortest path between two balls in the intersection graph restricted to
/// `members`; returns the ball indices from `from` to `to` inclusive.
fn ball_path(balls: &[Disk], members: &[usize], from: usize, to: usize) -> Vec<usize> {
    if from == to {
        return vec![from];
    }
    let mut parent: HashMap<usize, usize> = HashMap::new();
    let mut queue = VecDeque::new();
    queue.push_back(from);
    parent.insert(from, from);
    while let Some(v) = queue.pop_front() {
        if v == to {
            break;
        }
        for &w in members {
            if !parent.contains_key(&w)
                && balls[v].center.dist(balls[w].center) <= balls[v].radius + balls[w].radius
            {
                parent.insert(w, v);
                queue.push_back(w);
            }
        }
    }
    let mut path = vec![to];
    let mut cur = to;
    while cur != from {
        cur = parent[&cur];
        path.push(cur);
    }
    path.reverse();
    path
}


#[cfg(test)]
mod decompose_tests {
    use super::*;
    use crate::geometry::Polyline;
    use crate::grid::CrackedGrid;

    fn p(x: f64, y: f64) -> Point2 {
        Point2::new(x, y)
    }

    fn spider() -> CrackSet {
        let arm = |deg: f64| {
            let t = deg.to_radians();
            Polyline::segment(p(0.0, 0.0), p(t.cos(), t.sin())).unwrap()
        };
        CrackSet::new(vec![arm(90.0), arm(210.0), arm(330.0)]).unwrap()
    }

    #[test]
    fn decompose_group_counts_and_certificates() {
        let domain = Disk::new(p(0.0, 0.0), 1.0);
        let cases: Vec<(CrackSet, usize)> = vec![
            (
                CrackSet::new(vec![Polyline::segment(p(-1.0, 0.0), p(0.0, 0.0)).unwrap()]).unwrap(),
                1,
            ),
            (spider(), 3),
            (
                CrackSet::new(vec![Polyline::segment(p(-1.0, 0.0), p(1.0, 0.0)).unwrap()]).unwrap(),
                2,
            ),
        ];
        let r = 0.1;
        for (k, expect_groups) in &cases {
            let grid = CrackedGrid::build(domain, k, 1.0 / 64.0).unwrap();
            let dec = decompose(k, r, &grid, DecomposeParams::default()).unwrap();
            let c = dec.certificates;
            assert_eq!(c.n_groups, *expect_groups);
            assert!(dec.uncovered.is_empty());
            // every node of B_r \ K is assigned to some group
            let total: usize = dec.groups.iter().map(|g| g.nodes.len()).sum();
            assert_eq!(total, grid.disk_nodes(Disk::new(p(0.0, 0.0), r)).len());
            // certificates
            assert!(c.worst_core_ratio <= c.j_prime);
            assert!(c.min_exit_length >= 2.0 * r);
            assert!(c.max_core_norm <= 2.0 * c.c3 * r);
            assert!(c.multiplicity <= 20);
            // base points sit on the exit circle
            for g in &dec.groups {
                assert!((g.base.norm() - 3.0 * r).abs() < 1e-9);
            }
            // cores end at their group base and avoid the crack
            for g in &dec.groups {
                for &n in &g.nodes {
                    let beta = &dec.cores[&n];
                    assert!(beta.last().dist(g.base) < 1e-12);
                    assert!(beta.first().dist(grid.pos(n)) < 1e-12);
                }
            }
        }
    }

    #[test]
    fn decompose_requires_tip_at_origin() {
        let domain = Disk::new(p(0.0, 0.0), 1.0);
        let k = CrackSet::new(vec![Polyline::segment(p(0.3, 0.0), p(0.9, 0.0)).unwrap()]).unwrap();
        let grid = CrackedGrid::build(domain, &k, 1.0 / 32.0).unwrap();
        assert!(decompose(&k, 0.05, &grid, DecomposeParams::default()).is_err());
    }

    #[test]
    fn enclosure_is_detected() {
        // square loop around the origin encloses the start point
        let domain = Disk::new(p(0.0, 0.0), 1.0);
        let sq = Polyline::new(vec![
            p(-0.3, -0.3),
            p(0.3, -0.3),
            p(0.3, 0.3),
            p(-0.3, 0.3),
            p(-0.3, -0.3),
        ])
        .unwrap();
        let k = CrackSet::new(vec![sq]).unwrap();
        let grid = CrackedGrid::build(domain, &k, 1.0 / 32.0).unwrap();
        let ctx = EscapeContext {
            grid: &grid,
            crack: &k,
        };
        let res = ctx.find(p(0.015625, 0.015625), 0.5);
        assert!(matches!(res, Err(Error::Enclosure { .. })));
    }

    #[test]
    fn escape_with_empty_crack_is_a_ray() {
        let domain = Disk::new(p(0.0, 0.0), 1.0);
        let k = CrackSet::empty();
        let grid = CrackedGrid::build(domain, &k, 1.0 / 32.0).unwrap();
        let ctx = EscapeContext {
            grid: &grid,
            crack: &k,
        };
        let res = ctx.find(p(0.1, 0.2), 0.3).unwrap();
        assert_eq!(res.curve.vertices().len(), 2);
        assert!((res.curve.length() - 0.3).abs() < 1e-12);
        assert!(res.achieved_j <= 1.0 + 1e-12);
    }

    #[test]
    fn escape_rounds_the_tip() {
        // from below the slit, the curve must stay off the crack and exit
        let domain = Disk::new(p(0.0, 0.0), 1.0);
        let k = CrackSet::new(vec![Polyline::segment(p(-1.0, 0.0), p(0.0, 0.0)).unwrap()]).unwrap();
        let grid = CrackedGrid::build(domain, &k, 1.0 / 64.0).unwrap();
        let ctx = EscapeContext {
            grid: &grid,
            crack: &k,
        };
        let start = p(-0.5 + 0.0078125, 0.1 - 0.0078125);
        let res = ctx.find(start, 0.3).unwrap();
        assert!(res.achieved_j.is_finite());
        let obstacles = JohnObstacles {
            crack: Some(&k),
            outer: None,
        };
        let check = verify_john_curve(res.curve.vertices(), &obstacles, res.achieved_j, grid.h / 2.0);
        assert!(check.ok);
    }
}
