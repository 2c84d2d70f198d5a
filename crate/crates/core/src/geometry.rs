//! Gridded reference set, axis-parallel tessellation and the cubic-mesh DAG.

use std::collections::HashMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = [f64; 2];

/// Locations closer than this (relative to the domain size) to a grid point
/// are treated as coinciding with it.
const COINCIDENCE_TOL: f64 = 1e-10;

pub fn distance(a: &Point, b: &Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Rectangular spatial domain in two dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    bounds: [[f64; 2]; 2],
}

impl Domain {
    pub fn new(bounds: [[f64; 2]; 2]) -> Result<Self> {
        for (axis, [lo, hi]) in bounds.iter().enumerate() {
            if !lo.is_finite() || !hi.is_finite() {
                return Err(Error::invalid(format!("axis {axis}: non-finite bounds")));
            }
            if lo >= hi {
                return Err(Error::invalid(format!(
                    "axis {axis}: lower bound {lo} is not below upper bound {hi}"
                )));
            }
        }
        Ok(Self { bounds })
    }

    pub fn unit_square() -> Self {
        Self {
            bounds: [[0.0, 1.0], [0.0, 1.0]],
        }
    }

    pub fn lower(&self, axis: usize) -> f64 {
        self.bounds[axis][0]
    }

    pub fn upper(&self, axis: usize) -> f64 {
        self.bounds[axis][1]
    }

    pub fn width(&self, axis: usize) -> f64 {
        self.upper(axis) - self.lower(axis)
    }

    pub fn contains(&self, p: &Point) -> bool {
        (0..2).all(|a| p[a] >= self.lower(a) && p[a] <= self.upper(a))
    }

    pub fn diameter(&self) -> f64 {
        (self.width(0).powi(2) + self.width(1).powi(2)).sqrt()
    }
}

/// Regular grid of reference locations, ordered row-major (the last axis
/// varies fastest).
#[derive(Debug, Clone)]
pub struct ReferenceGrid {
    domain: Domain,
    counts: [usize; 2],
    axes: [Vec<f64>; 2],
    points: Vec<Point>,
}

/// Grid `lo + (hi - lo) * j / N_k` for `j = 1..=N_k` on each axis.
pub fn build_reference_grid(domain: &Domain, counts: [usize; 2]) -> Result<ReferenceGrid> {
    for (axis, &n) in counts.iter().enumerate() {
        if n < 2 {
            return Err(Error::invalid(format!(
                "axis {axis}: grid needs at least 2 lines, got {n}"
            )));
        }
    }
    let axes: [Vec<f64>; 2] = std::array::from_fn(|a| {
        let (lo, w, n) = (domain.lower(a), domain.width(a), counts[a] as f64);
        (1..=counts[a]).map(|j| lo + w * (j as f64) / n).collect()
    });
    let mut points = Vec::with_capacity(counts[0] * counts[1]);
    for &x in &axes[0] {
        for &y in &axes[1] {
            points.push([x, y]);
        }
    }
    Ok(ReferenceGrid {
        domain: *domain,
        counts,
        axes,
        points,
    })
}

impl ReferenceGrid {
    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn counts(&self) -> [usize; 2] {
        self.counts
    }

    pub fn axis(&self, a: usize) -> &[f64] {
        &self.axes[a]
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> Point {
        self.points[i]
    }

    pub fn grid_index(&self, i: usize) -> [usize; 2] {
        [i / self.counts[1], i % self.counts[1]]
    }

    pub fn flat_index(&self, g: [usize; 2]) -> usize {
        g[0] * self.counts[1] + g[1]
    }

    /// Index of the grid point coinciding with `p`, if any.
    pub fn coincident_point(&self, p: &Point) -> Option<usize> {
        let mut g = [0usize; 2];
        for a in 0..2 {
            let n = self.counts[a] as f64;
            let j = ((p[a] - self.domain.lower(a)) / self.domain.width(a) * n).round();
            if j < 1.0 || j > n {
                return None;
            }
            g[a] = j as usize - 1;
        }
        let idx = self.flat_index(g);
        let tol = COINCIDENCE_TOL * self.domain.diameter();
        (distance(&self.points[idx], p) <= tol).then_some(idx)
    }
}

/// Axis-parallel partition of the domain into `M_0 x M_1` cells.
///
/// Cells are half-open `[low, high)` on each axis except the last one,
/// which also contains the upper domain boundary.
#[derive(Debug, Clone)]
pub struct Tessellation {
    domain: Domain,
    splits: [usize; 2],
    cuts: [Vec<f64>; 2],
    ref_members: Vec<Vec<usize>>,
    obs_members: Vec<Vec<usize>>,
    obs_cell: Vec<usize>,
    obs_reference: Vec<Option<usize>>,
}

/// Tessellation whose cuts split the grid coordinates into equal-count groups.
pub fn tessellate(
    grid: &ReferenceGrid,
    observed: &[Point],
    splits: [usize; 2],
) -> Result<Tessellation> {
    let mut cuts: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    for a in 0..2 {
        let (n, m) = (grid.counts[a], splits[a]);
        if m == 0 || m > n {
            return Err(Error::invalid(format!(
                "axis {a}: {m} intervals requested for {n} grid lines"
            )));
        }
        let coords = &grid.axes[a];
        let (base, extra) = (n / m, n % m);
        let mut end = 0;
        for g in 0..m - 1 {
            end += base + usize::from(g < extra);
            cuts[a].push(0.5 * (coords[end - 1] + coords[end]));
        }
    }
    Tessellation::with_cuts(grid, observed, cuts)
}

impl Tessellation {
    /// Tessellation from explicit interior cut positions (sorted, strictly
    /// inside the domain). Cells may end up without reference points.
    pub fn with_cuts(grid: &ReferenceGrid, observed: &[Point], cuts: [Vec<f64>; 2]) -> Result<Self> {
        let domain = *grid.domain();
        for (a, c) in cuts.iter().enumerate() {
            if c.windows(2).any(|w| w[0] >= w[1])
                || c.iter().any(|&x| x <= domain.lower(a) || x >= domain.upper(a))
            {
                return Err(Error::invalid(format!("axis {a}: cuts must be increasing and interior")));
            }
        }
        let splits = [cuts[0].len() + 1, cuts[1].len() + 1];
        let mut tess = Tessellation {
            domain,
            splits,
            cuts,
            ref_members: vec![Vec::new(); splits[0] * splits[1]],
            obs_members: vec![Vec::new(); splits[0] * splits[1]],
            obs_cell: Vec::with_capacity(observed.len()),
            obs_reference: Vec::with_capacity(observed.len()),
        };
        for (i, p) in grid.points().iter().enumerate() {
            let c = tess.flat_cell(tess.cell_of(p)?);
            tess.ref_members[c].push(i);
        }
        for (i, p) in observed.iter().enumerate() {
            let c = tess.flat_cell(tess.cell_of(p)?);
            tess.obs_members[c].push(i);
            tess.obs_cell.push(c);
            tess.obs_reference.push(grid.coincident_point(p));
        }
        Ok(tess)
    }

    pub fn splits(&self) -> [usize; 2] {
        self.splits
    }

    pub fn n_cells(&self) -> usize {
        self.splits[0] * self.splits[1]
    }

    pub fn cuts(&self, axis: usize) -> &[f64] {
        &self.cuts[axis]
    }

    pub fn flat_cell(&self, c: [usize; 2]) -> usize {
        c[0] * self.splits[1] + c[1]
    }

    pub fn cell_index(&self, flat: usize) -> [usize; 2] {
        [flat / self.splits[1], flat % self.splits[1]]
    }

    /// Multi-index of the cell containing `p`.
    pub fn cell_of(&self, p: &Point) -> Result<[usize; 2]> {
        if !p[0].is_finite() || !p[1].is_finite() || !self.domain.contains(p) {
            return Err(Error::OutOfDomain { x: p[0], y: p[1] });
        }
        Ok(std::array::from_fn(|a| {
            self.cuts[a].partition_point(|&c| c <= p[a])
        }))
    }

    /// Reference points (grid indices) in each cell, row-major.
    pub fn reference_members(&self, cell: usize) -> &[usize] {
        &self.ref_members[cell]
    }

    /// Observed locations in each cell.
    pub fn observed_members(&self, cell: usize) -> &[usize] {
        &self.obs_members[cell]
    }

    pub fn observed_cell(&self, obs: usize) -> usize {
        self.obs_cell[obs]
    }

    /// Grid point that observation `obs` sits on, if any.
    pub fn observed_reference(&self, obs: usize) -> Option<usize> {
        self.obs_reference[obs]
    }

    pub fn n_observed(&self) -> usize {
        self.obs_cell.len()
    }
}

/// A reference node: the grid points of one nonempty cell.
#[derive(Debug, Clone)]
pub struct RefNode {
    pub cell: [usize; 2],
    /// Grid indices of the node's own reference points.
    pub points: Vec<usize>,
    /// Parent reference nodes: axis-0 predecessor first, then axis 1.
    pub parents: Vec<usize>,
    /// Concatenated grid indices of all parent points, in parent order.
    pub parent_points: Vec<usize>,
    /// Column range of each parent inside `parent_points`.
    pub slots: Vec<Range<usize>>,
    /// Child reference nodes with the slot this node occupies in each child.
    pub children: Vec<(usize, usize)>,
}

/// Non-reference node collecting the observed locations of one cell.
#[derive(Debug, Clone)]
pub struct ObsNode {
    pub cell: [usize; 2],
    /// The reference node of the same cell, its only parent.
    pub parent: usize,
    pub observations: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct MeshDag {
    pub ref_nodes: Vec<RefNode>,
    pub obs_nodes: Vec<ObsNode>,
    cell_to_ref: Vec<Option<usize>>,
    obs_to_node: Vec<usize>,
}

/// Cubic-mesh DAG: each reference node's parents are the nearest nonempty
/// cells preceding it along each axis.
pub fn build_dag(tess: &Tessellation) -> Result<MeshDag> {
    let n_cells = tess.n_cells();
    let mut cell_to_ref = vec![None; n_cells];
    let mut ref_nodes: Vec<RefNode> = Vec::new();
    for cell in 0..n_cells {
        let members = tess.reference_members(cell);
        if members.is_empty() {
            continue;
        }
        cell_to_ref[cell] = Some(ref_nodes.len());
        ref_nodes.push(RefNode {
            cell: tess.cell_index(cell),
            points: members.to_vec(),
            parents: Vec::new(),
            parent_points: Vec::new(),
            slots: Vec::new(),
            children: Vec::new(),
        });
    }
    if ref_nodes.is_empty() {
        return Err(Error::invalid("empty reference set"));
    }
    for id in 0..ref_nodes.len() {
        let cell = ref_nodes[id].cell;
        for axis in 0..2 {
            let mut c = cell;
            while c[axis] > 0 {
                c[axis] -= 1;
                if let Some(p) = cell_to_ref[tess.flat_cell(c)] {
                    let start = ref_nodes[id].parent_points.len();
                    let pts = ref_nodes[p].points.clone();
                    let node = &mut ref_nodes[id];
                    node.parents.push(p);
                    node.parent_points.extend_from_slice(&pts);
                    node.slots.push(start..start + pts.len());
                    break;
                }
            }
        }
    }
    for id in 0..ref_nodes.len() {
        for slot in 0..ref_nodes[id].parents.len() {
            let p = ref_nodes[id].parents[slot];
            ref_nodes[p].children.push((id, slot));
        }
    }

    let mut obs_nodes = Vec::new();
    let mut obs_to_node = vec![usize::MAX; tess.n_observed()];
    for cell in 0..n_cells {
        let obs = tess.observed_members(cell);
        if obs.is_empty() {
            continue;
        }
        let parent = cell_to_ref[cell].ok_or_else(|| {
            Error::invalid(format!(
                "cell {:?} holds observations but no reference points",
                tess.cell_index(cell)
            ))
        })?;
        for &o in obs {
            obs_to_node[o] = obs_nodes.len();
        }
        obs_nodes.push(ObsNode {
            cell: tess.cell_index(cell),
            parent,
            observations: obs.to_vec(),
        });
    }
    Ok(MeshDag {
        ref_nodes,
        obs_nodes,
        cell_to_ref,
        obs_to_node,
    })
}

impl MeshDag {
    pub fn n_ref(&self) -> usize {
        self.ref_nodes.len()
    }

    pub fn ref_node_of_cell(&self, cell: usize) -> Option<usize> {
        self.cell_to_ref[cell]
    }

    pub fn obs_node_of(&self, obs: usize) -> usize {
        self.obs_to_node[obs]
    }

    pub fn n_reference_edges(&self) -> usize {
        self.ref_nodes.iter().map(|n| n.parents.len()).sum()
    }

    /// Kahn ordering of the reference nodes; `None` if a cycle exists.
    pub fn topological_order(&self) -> Option<Vec<usize>> {
        let mut indeg: Vec<usize> = self.ref_nodes.iter().map(|n| n.parents.len()).collect();
        let mut queue: Vec<usize> = (0..self.n_ref()).filter(|&i| indeg[i] == 0).collect();
        let mut order = Vec::with_capacity(self.n_ref());
        while let Some(v) = queue.pop() {
            order.push(v);
            for &(c, _) in &self.ref_nodes[v].children {
                indeg[c] -= 1;
                if indeg[c] == 0 {
                    queue.push(c);
                }
            }
        }
        (order.len() == self.n_ref()).then_some(order)
    }

    /// Neighbours of each reference node in the moral graph.
    pub fn moral_neighbors(&self) -> Vec<Vec<usize>> {
        let mut nb = vec![Vec::new(); self.n_ref()];
        for (id, node) in self.ref_nodes.iter().enumerate() {
            for &p in &node.parents {
                nb[id].push(p);
                nb[p].push(id);
            }
            for (a, &p) in node.parents.iter().enumerate() {
                for &o in &node.parents[a + 1..] {
                    nb[p].push(o);
                    nb[o].push(p);
                }
            }
        }
        for v in &mut nb {
            v.sort_unstable();
            v.dedup();
        }
        nb
    }
}

/// Coloring of the reference nodes such that same-color nodes can be
/// updated concurrently.
#[derive(Debug, Clone)]
pub struct Coloring {
    pub colors: Vec<usize>,
    pub groups: Vec<Vec<usize>>,
}

impl Coloring {
    pub fn n_colors(&self) -> usize {
        self.groups.len()
    }
}

/// Greedy coloring of the moral graph in node order.
pub fn color_dag(dag: &MeshDag) -> Coloring {
    let nb = dag.moral_neighbors();
    let mut colors = vec![usize::MAX; dag.n_ref()];
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for v in 0..dag.n_ref() {
        let mut used: Vec<usize> = nb[v]
            .iter()
            .map(|&u| colors[u])
            .filter(|&c| c != usize::MAX)
            .collect();
        used.sort_unstable();
        used.dedup();
        let c = used
            .iter()
            .enumerate()
            .find(|(i, &c)| *i != c)
            .map(|(i, _)| i)
            .unwrap_or(used.len());
        colors[v] = c;
        if c == groups.len() {
            groups.push(Vec::new());
        }
        groups[c].push(v);
    }
    Coloring { colors, groups }
}

/// Equivalence classes of reference nodes with translated copies of the same
/// own-point and parent-point layout.
#[derive(Debug, Clone)]
pub struct Prototypes {
    pub class_of: Vec<usize>,
    /// One representative node per class.
    pub representatives: Vec<usize>,
}

impl Prototypes {
    pub fn n_classes(&self) -> usize {
        self.representatives.len()
    }
}

pub fn find_prototypes(dag: &MeshDag, grid: &ReferenceGrid) -> Prototypes {
    // Grid spacing is uniform per axis, so integer index offsets identify
    // congruent layouts exactly.
    let mut keys: HashMap<Vec<i64>, usize> = HashMap::new();
    let mut class_of = Vec::with_capacity(dag.n_ref());
    let mut representatives = Vec::new();
    for (id, node) in dag.ref_nodes.iter().enumerate() {
        let anchor = grid.grid_index(node.points[0]);
        let offset = |p: usize| {
            let g = grid.grid_index(p);
            [g[0] as i64 - anchor[0] as i64, g[1] as i64 - anchor[1] as i64]
        };
        let mut key = Vec::with_capacity(2 * (node.points.len() + node.parent_points.len()) + 4);
        key.push(node.points.len() as i64);
        key.extend(node.points.iter().flat_map(|&p| offset(p)));
        for slot in &node.slots {
            key.push(slot.len() as i64);
            key.extend(node.parent_points[slot.clone()].iter().flat_map(|&p| offset(p)));
        }
        let next = representatives.len();
        let class = *keys.entry(key).or_insert(next);
        if class == next {
            representatives.push(id);
        }
        class_of.push(class);
    }
    Prototypes {
        class_of,
        representatives,
    }
}

/// Everything the samplers need to know about the spatial layout.
#[derive(Debug, Clone)]
pub struct Mesh {
    pub grid: ReferenceGrid,
    pub tess: Tessellation,
    pub dag: MeshDag,
    pub coloring: Coloring,
    pub prototypes: Prototypes,
}

impl Mesh {
    pub fn build(
        domain: &Domain,
        counts: [usize; 2],
        splits: [usize; 2],
        observed: &[Point],
    ) -> Result<Self> {
        let grid = build_reference_grid(domain, counts)?;
        Self::from_grid(grid, splits, observed)
    }

    pub fn from_grid(grid: ReferenceGrid, splits: [usize; 2], observed: &[Point]) -> Result<Self> {
        let tess = tessellate(&grid, observed, splits)?;
        Self::from_tessellation(grid, tess)
    }

    pub fn from_tessellation(grid: ReferenceGrid, tess: Tessellation) -> Result<Self> {
        let dag = build_dag(&tess)?;
        let coloring = color_dag(&dag);
        let prototypes = find_prototypes(&dag, &grid);
        Ok(Self {
            grid,
            tess,
            dag,
            coloring,
            prototypes,
        })
    }

    /// Reference node whose cell contains `p`.
    pub fn ref_node_at(&self, p: &Point) -> Result<usize> {
        let cell = self.tess.flat_cell(self.tess.cell_of(p)?);
        self.dag.ref_node_of_cell(cell).ok_or_else(|| {
            Error::invalid(format!("no reference points in the cell containing {p:?}"))
        })
    }

    pub fn points_of(&self, idx: &[usize]) -> Vec<Point> {
        idx.iter().map(|&i| self.grid.point(i)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_grid(n0: usize, n1: usize) -> ReferenceGrid {
        build_reference_grid(&Domain::unit_square(), [n0, n1]).unwrap()
    }

    fn mesh(n: usize, m: usize) -> Mesh {
        Mesh::build(&Domain::unit_square(), [n, n], [m, m], &[]).unwrap()
    }

    #[test]
    fn two_by_two_grid_points() {
        let g = unit_grid(2, 2);
        assert_eq!(
            g.points(),
            &[[0.5, 0.5], [0.5, 1.0], [1.0, 0.5], [1.0, 1.0]]
        );
    }

    #[test]
    fn hundred_by_hundred_grid() {
        assert_eq!(unit_grid(100, 100).len(), 10_000);
    }

    #[test]
    fn three_by_two_is_row_major() {
        let g = unit_grid(3, 2);
        let mut expected = Vec::new();
        for a in [1.0 / 3.0, 2.0 / 3.0, 1.0] {
            for b in [0.5, 1.0] {
                expected.push([a, b]);
            }
        }
        assert_eq!(g.len(), 6);
        for (p, e) in g.points().iter().zip(&expected) {
            assert!((p[0] - e[0]).abs() < 1e-15 && (p[1] - e[1]).abs() < 1e-15);
        }
    }

    #[test]
    fn grid_rejects_bad_input() {
        assert!(build_reference_grid(&Domain::unit_square(), [1, 4]).is_err());
        assert!(Domain::new([[0.0, f64::NAN], [0.0, 1.0]]).is_err());
        assert!(Domain::new([[1.0, 1.0], [0.0, 1.0]]).is_err());
    }

    #[test]
    fn rescaled_domain() {
        let d = Domain::new([[-2.0, 2.0], [10.0, 12.0]]).unwrap();
        let g = build_reference_grid(&d, [4, 2]).unwrap();
        assert_eq!(g.axis(0), &[-1.0, 0.0, 1.0, 2.0]);
        assert_eq!(g.axis(1), &[11.0, 12.0]);
    }

    #[test]
    fn equal_count_cells() {
        let g = unit_grid(4, 4);
        let t = tessellate(&g, &[], [2, 2]).unwrap();
        assert_eq!(t.n_cells(), 4);
        for c in 0..4 {
            assert_eq!(t.reference_members(c).len(), 4);
        }
    }

    #[test]
    fn center_goes_to_exactly_one_cell() {
        let g = unit_grid(4, 4);
        let t = tessellate(&g, &[[0.5, 0.5]], [2, 2]).unwrap();
        let total: usize = (0..4).map(|c| t.observed_members(c).len()).sum();
        assert_eq!(total, 1);
    }

    #[test]
    fn domain_edges_belong_to_cells() {
        let g = unit_grid(4, 4);
        let t = tessellate(&g, &[[0.0, 0.0], [1.0, 1.0], [0.0, 1.0]], [2, 2]).unwrap();
        assert_eq!(t.cell_of(&[1.0, 1.0]).unwrap(), [1, 1]);
        assert_eq!(t.cell_of(&[0.0, 0.0]).unwrap(), [0, 0]);
        assert!(matches!(
            t.cell_of(&[1.0001, 0.5]),
            Err(Error::OutOfDomain { .. })
        ));
        assert!(tessellate(&g, &[[-0.1, 0.5]], [2, 2]).is_err());
    }

    #[test]
    fn random_observations_are_conserved() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let obs: Vec<Point> = (0..100).map(|_| [rng.random(), rng.random()]).collect();
        let g = unit_grid(10, 10);
        let t = tessellate(&g, &obs, [5, 5]).unwrap();
        let mut all: Vec<usize> = (0..t.n_cells())
            .flat_map(|c| t.observed_members(c).to_vec())
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        let mut refs: Vec<usize> = (0..t.n_cells())
            .flat_map(|c| t.reference_members(c).to_vec())
            .collect();
        refs.sort_unstable();
        assert_eq!(refs, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn coincident_observations_are_detected() {
        let g = unit_grid(4, 4);
        let t = tessellate(&g, &[[0.5, 0.75], [0.51, 0.75]], [2, 2]).unwrap();
        assert_eq!(t.observed_reference(0), Some(g.flat_index([1, 2])));
        assert_eq!(t.observed_reference(1), None);
    }

    #[test]
    fn single_cell_is_a_root() {
        let m = mesh(3, 1);
        assert_eq!(m.dag.n_ref(), 1);
        assert!(m.dag.ref_nodes[0].parents.is_empty());
        assert_eq!(m.coloring.n_colors(), 1);
        assert_eq!(m.prototypes.n_classes(), 1);
    }

    #[test]
    fn two_by_two_parent_structure() {
        let m = mesh(4, 2);
        let dag = &m.dag;
        let by_cell = |c: [usize; 2]| dag.ref_node_of_cell(m.tess.flat_cell(c)).unwrap();
        assert_eq!(dag.ref_nodes[by_cell([0, 0])].parents.len(), 0);
        assert_eq!(dag.ref_nodes[by_cell([1, 0])].parents, vec![by_cell([0, 0])]);
        assert_eq!(dag.ref_nodes[by_cell([0, 1])].parents, vec![by_cell([0, 0])]);
        assert_eq!(
            dag.ref_nodes[by_cell([1, 1])].parents,
            vec![by_cell([0, 1]), by_cell([1, 0])]
        );
        assert_eq!(dag.n_reference_edges(), 4);
    }

    #[test]
    fn parent_and_child_counts_are_bounded() {
        let m = mesh(9, 3);
        for n in &m.dag.ref_nodes {
            assert!(n.parents.len() <= 2);
            assert!(n.children.len() <= 2);
        }
        assert!(m.dag.topological_order().is_some());
    }

    #[test]
    fn children_transpose_parents() {
        let m = mesh(12, 4);
        for (id, n) in m.dag.ref_nodes.iter().enumerate() {
            for (slot, &p) in n.parents.iter().enumerate() {
                assert!(m.dag.ref_nodes[p].children.contains(&(id, slot)));
            }
            for &(c, slot) in &n.children {
                assert_eq!(m.dag.ref_nodes[c].parents[slot], id);
            }
        }
    }

    #[test]
    fn topological_order_respects_edges() {
        let m = mesh(10, 5);
        let order = m.dag.topological_order().unwrap();
        let mut pos = vec![0; order.len()];
        for (i, &v) in order.iter().enumerate() {
            pos[v] = i;
        }
        for (id, n) in m.dag.ref_nodes.iter().enumerate() {
            for &p in &n.parents {
                assert!(pos[p] < pos[id]);
            }
        }
    }

    fn assert_valid_coloring(m: &Mesh) {
        let dag = &m.dag;
        for u in 0..dag.n_ref() {
            for v in (u + 1)..dag.n_ref() {
                if m.coloring.colors[u] != m.coloring.colors[v] {
                    continue;
                }
                let nu = &dag.ref_nodes[u];
                let nv = &dag.ref_nodes[v];
                assert!(!nu.parents.contains(&v) && !nv.parents.contains(&u));
                for &(cu, _) in &nu.children {
                    assert!(nv.children.iter().all(|&(cv, _)| cv != cu));
                }
            }
        }
    }

    #[test]
    fn coloring_is_valid_and_bounded() {
        let m2 = mesh(4, 2);
        assert!(m2.coloring.n_colors() <= 4);
        assert_valid_coloring(&m2);
        let m4 = mesh(8, 4);
        let m10 = mesh(20, 10);
        assert_valid_coloring(&m4);
        assert_valid_coloring(&m10);
        assert_eq!(m4.coloring.n_colors(), m10.coloring.n_colors());
    }

    #[test]
    fn interior_nodes_share_a_prototype() {
        let m = mesh(16, 4);
        let dag = &m.dag;
        let interior: Vec<usize> = (0..dag.n_ref())
            .filter(|&i| dag.ref_nodes[i].parents.len() == 2)
            .collect();
        assert_eq!(interior.len(), 9);
        let c = m.prototypes.class_of[interior[0]];
        assert!(interior.iter().all(|&i| m.prototypes.class_of[i] == c));
        // root, first row, first column, interior
        assert_eq!(m.prototypes.n_classes(), 4);
    }

    #[test]
    fn uneven_cells_split_prototypes() {
        let m = Mesh::build(&Domain::unit_square(), [7, 7], [3, 3], &[]).unwrap();
        assert!(m.prototypes.n_classes() > 4);
    }

    #[test]
    fn empty_cells_are_skipped() {
        let g = unit_grid(4, 4);
        // the middle column of cells, (0.55, 0.7), holds no grid line
        let t = Tessellation::with_cuts(&g, &[], [vec![0.55, 0.7], vec![0.6]]).unwrap();
        let dag = build_dag(&t).unwrap();
        assert_eq!(dag.n_ref(), 4);
        let last = dag.ref_node_of_cell(t.flat_cell([2, 0])).unwrap();
        let first = dag.ref_node_of_cell(t.flat_cell([0, 0])).unwrap();
        assert_eq!(dag.ref_nodes[last].parents, vec![first]);
        assert!(dag.topological_order().is_some());
    }

    #[test]
    fn observations_in_empty_cells_are_rejected() {
        let g = unit_grid(4, 4);
        let t = Tessellation::with_cuts(&g, &[[0.6, 0.2]], [vec![0.55, 0.7], vec![0.6]]).unwrap();
        assert!(build_dag(&t).is_err());
    }
}
