//! Dyadic cubes over a point cloud, trees of cubes, and the flagged-count
//! stopping decomposition.
//!
//! Cubes are the nonempty intersections of the cloud with half-open ambient
//! grid cells of side 2^{-j}. The lattice keeps its own copy of the cube
//! centers so it can outlive borrows of the cloud; geometric queries that need
//! the points take the cloud as an argument.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grassmann::dist;
use crate::pointset::{Ball, RegularCloud};

pub type CubeId = usize;

#[derive(Debug, Error)]
pub enum LatticeError {
    #[error("empty cloud")]
    Empty,
    #[error("level range {j_min}..={j_max} is empty")]
    BadLevels { j_min: i32, j_max: i32 },
    #[error("finest side 2^-{j_max} is below the cloud resolution {resolution}")]
    TooFine { j_max: i32, resolution: f64 },
    #[error("origin has dimension {got}, cloud has {expected}")]
    Origin { expected: usize, got: usize },
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone)]
pub struct Cube {
    pub level: i32,
    pub cell: Vec<i64>,
    pub members: Vec<usize>,
    /// Index of the member point nearest the cell center.
    pub center_point: usize,
    pub center: Vec<f64>,
    pub weight: f64,
    pub parent: Option<CubeId>,
    pub children: Vec<CubeId>,
}

impl Cube {
    pub fn side(&self) -> f64 {
        2f64.powi(-self.level)
    }
}

#[derive(Debug, Clone)]
pub struct CubeLattice {
    dim: usize,
    n: usize,
    j_min: i32,
    j_max: i32,
    origin: Vec<f64>,
    ball_constant: f64,
    cubes: Vec<Cube>,
    levels: Vec<Vec<CubeId>>,
    finest: Vec<CubeId>,
}

/// Cubes for levels `j_min..=j_max` on the grid anchored at the origin.
pub fn build_lattice(cloud: &RegularCloud, j_min: i32, j_max: i32) -> Result<CubeLattice, LatticeError> {
    build_lattice_with_origin(cloud, j_min, j_max, &vec![0.0; cloud.dim()])
}

/// Cubes on the grid whose cell corners sit at `origin + 2^{-j}·Z^d`.
pub fn build_lattice_with_origin(cloud: &RegularCloud, j_min: i32, j_max: i32, origin: &[f64]) -> Result<CubeLattice, LatticeError> {
    if cloud.is_empty() {
        return Err(LatticeError::Empty);
    }
    if j_min > j_max {
        return Err(LatticeError::BadLevels { j_min, j_max });
    }
    if 2f64.powi(-j_max) < cloud.resolution() * (1.0 - 1e-12) {
        return Err(LatticeError::TooFine { j_max, resolution: cloud.resolution() });
    }
    let d = cloud.dim();
    if origin.len() != d {
        return Err(LatticeError::Origin { expected: d, got: origin.len() });
    }
    let ball_constant = 3.0 * (d as f64).sqrt();
    let mut cubes: Vec<Cube> = Vec::new();
    let mut levels: Vec<Vec<CubeId>> = Vec::new();
    let mut prev_lookup: BTreeMap<Vec<i64>, CubeId> = BTreeMap::new();
    let mut finest = vec![0; cloud.len()];
    for j in j_min..=j_max {
        let scale = 2f64.powi(j);
        let mut cells: BTreeMap<Vec<i64>, Vec<usize>> = BTreeMap::new();
        for i in 0..cloud.len() {
            let key: Vec<i64> = cloud.point(i).iter().zip(origin).map(|(x, o)| ((x - o) * scale).floor() as i64).collect();
            cells.entry(key).or_default().push(i);
        }
        let mut ids = Vec::with_capacity(cells.len());
        let mut lookup = BTreeMap::new();
        for (cell, members) in cells {
            let side = 1.0 / scale;
            let mid: Vec<f64> = cell.iter().zip(origin).map(|(&c, o)| o + (c as f64 + 0.5) * side).collect();
            let center_point = *members
                .iter()
                .min_by(|&&a, &&b| dist(cloud.point(a), &mid).total_cmp(&dist(cloud.point(b), &mid)).then(a.cmp(&b)))
                .expect("nonempty cell");
            let weight = members.iter().map(|&i| cloud.weight(i)).sum();
            let parent = if j == j_min {
                None
            } else {
                let up: Vec<i64> = cell.iter().map(|c| c.div_euclid(2)).collect();
                Some(prev_lookup[&up])
            };
            let id = cubes.len();
            if let Some(p) = parent {
                cubes[p].children.push(id);
            }
            if j == j_max {
                for &i in &members {
                    finest[i] = id;
                }
            }
            lookup.insert(cell.clone(), id);
            cubes.push(Cube {
                level: j,
                cell,
                members,
                center_point,
                center: cloud.point(center_point).to_vec(),
                weight,
                parent,
                children: Vec::new(),
            });
            ids.push(id);
        }
        levels.push(ids);
        prev_lookup = lookup;
    }
    Ok(CubeLattice { dim: d, n: cloud.n(), j_min, j_max, origin: origin.to_vec(), ball_constant, cubes, levels, finest })
}

impl CubeLattice {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn j_min(&self) -> i32 {
        self.j_min
    }

    pub fn j_max(&self) -> i32 {
        self.j_max
    }

    pub fn origin(&self) -> &[f64] {
        &self.origin
    }

    /// The constant C in B_Q = B(c_Q, C·ℓ(Q)).
    pub fn ball_constant(&self) -> f64 {
        self.ball_constant
    }

    pub fn len(&self) -> usize {
        self.cubes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cubes.is_empty()
    }

    pub fn cube(&self, id: CubeId) -> &Cube {
        &self.cubes[id]
    }

    pub fn cubes(&self) -> &[Cube] {
        &self.cubes
    }

    /// Cube ids at level `j`, in lexicographic cell order.
    pub fn level(&self, j: i32) -> &[CubeId] {
        if j < self.j_min || j > self.j_max {
            return &[];
        }
        &self.levels[(j - self.j_min) as usize]
    }

    pub fn tops(&self) -> &[CubeId] {
        self.level(self.j_min)
    }

    /// The unique top cube when the cloud fits in one top-level cell.
    pub fn root(&self) -> Option<CubeId> {
        match self.tops() {
            [only] => Some(*only),
            _ => None,
        }
    }

    pub fn ball(&self, id: CubeId) -> Ball {
        let q = &self.cubes[id];
        Ball::new(q.center.clone(), self.ball_constant * q.side())
    }

    pub fn ball_radius(&self, id: CubeId) -> f64 {
        self.ball_constant * self.cubes[id].side()
    }

    /// Finest-level cube holding point `p`.
    pub fn finest_cube_of(&self, p: usize) -> CubeId {
        self.finest[p]
    }

    /// Cube at level `j` holding point `p`.
    pub fn cube_of_point(&self, p: usize, j: i32) -> Option<CubeId> {
        let mut q = self.finest[p];
        while self.cubes[q].level > j {
            q = self.cubes[q].parent?;
        }
        (self.cubes[q].level == j).then_some(q)
    }

    /// Whether `inner ⊂ outer` in the lattice order.
    pub fn is_descendant(&self, inner: CubeId, outer: CubeId) -> bool {
        let target = self.cubes[outer].level;
        let mut q = inner;
        while self.cubes[q].level > target {
            match self.cubes[q].parent {
                Some(p) => q = p,
                None => return false,
            }
        }
        q == outer
    }

    /// D(Q0): `top` and every cube below it, breadth first.
    pub fn descendants(&self, top: CubeId) -> Vec<CubeId> {
        let mut out = vec![top];
        let mut i = 0;
        while i < out.len() {
            out.extend_from_slice(&self.cubes[out[i]].children);
            i += 1;
        }
        out
    }

    /// D(Q0) restricted to levels ≤ `max_level`.
    pub fn descendants_to(&self, top: CubeId, max_level: i32) -> Vec<CubeId> {
        self.descendants(top).into_iter().filter(|&q| self.cubes[q].level <= max_level).collect()
    }

    /// Cubes from the finest cube holding `p` up to and including `top`;
    /// `None` when `p ∉ top`.
    pub fn chain(&self, p: usize, top: CubeId) -> Option<Vec<CubeId>> {
        let mut out = vec![self.finest[p]];
        let target = self.cubes[top].level;
        while self.cubes[*out.last().unwrap()].level > target {
            out.push(self.cubes[*out.last().unwrap()].parent?);
        }
        (*out.last().unwrap() == top).then_some(out)
    }

    /// Write one JSON object per cube: `{id, level, cell_index, center, weight, parent}`.
    pub fn export_jsonl<W: Write>(&self, mut w: W) -> Result<(), LatticeError> {
        for (id, q) in self.cubes.iter().enumerate() {
            let rec = CubeRecord {
                id,
                level: q.level,
                cell_index: q.cell.clone(),
                center: q.center.clone(),
                weight: q.weight,
                parent: q.parent.map(|p| self.cubes[p].cell.clone()),
            };
            serde_json::to_writer(&mut w, &rec)?;
            writeln!(w)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CubeRecord {
    pub id: usize,
    pub level: i32,
    pub cell_index: Vec<i64>,
    pub center: Vec<f64>,
    pub weight: f64,
    pub parent: Option<Vec<i64>>,
}

/// Quality of the grid cubes against the properties of Christ–David cubes.
#[derive(Debug, Clone, Serialize)]
pub struct DavidReport {
    /// Largest c with B(c_Q, c·ℓ(Q)) ∩ E ⊂ Q for every cube (capped at 1).
    pub inner_ball_constant: f64,
    pub worst_inner_cube: CubeId,
    pub density_min: f64,
    pub density_max: f64,
    /// Cubes whose inner-ball constant is below the requested threshold.
    pub small_inner_ball: Vec<CubeId>,
    /// Cubes whose μ(Q)/ℓ(Q)^n is more than `density_factor` away from the median.
    pub density_outliers: Vec<CubeId>,
}

pub fn diagnose_david_properties(cloud: &RegularCloud, lattice: &CubeLattice, inner_threshold: f64, density_factor: f64) -> DavidReport {
    let mut inner_min = f64::INFINITY;
    let mut worst = 0;
    let mut small = Vec::new();
    let mut densities = Vec::with_capacity(lattice.len());
    for (id, q) in lattice.cubes().iter().enumerate() {
        let side = q.side();
        let mut nearest = side;
        for p in cloud.closed_ball_indices(&q.center, side) {
            if lattice.cube_of_point(p, q.level) != Some(id) {
                nearest = nearest.min(dist(cloud.point(p), &q.center));
            }
        }
        let c = nearest / side;
        if c < inner_min {
            inner_min = c;
            worst = id;
        }
        if c < inner_threshold {
            small.push(id);
        }
        densities.push(q.weight / side.powi(lattice.n() as i32));
    }
    let mut sorted = densities.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    let outliers = densities
        .iter()
        .enumerate()
        .filter(|(_, &r)| r > median * density_factor || r < median / density_factor)
        .map(|(i, _)| i)
        .collect();
    DavidReport {
        inner_ball_constant: inner_min,
        worst_inner_cube: worst,
        density_min: sorted[0],
        density_max: *sorted.last().unwrap(),
        small_inner_ball: small,
        density_outliers: outliers,
    }
}

/// A consistent set of cubes below a top cube. Leaves are its minimal cubes,
/// which includes finest-level cubes the stopping rule never reached.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Tree {
    pub top: CubeId,
    pub cubes: BTreeSet<CubeId>,
    pub leaves: BTreeSet<CubeId>,
}

impl Tree {
    pub fn contains(&self, q: CubeId) -> bool {
        self.cubes.contains(&q)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Forest {
    pub trees: Vec<Tree>,
    /// Σ of μ(Q) over flagged Q ⊂ Q0.
    pub flagged_mass: f64,
    /// Σ μ(Q_j) over the tree tops.
    pub top_mass: f64,
    /// Whether every Q ⊂ Q0 has at most half its mass at count ≥ N.
    pub half_mass_hypothesis: bool,
}

/// Split D(Q0) into trees: a tree's leaves are the maximal cubes whose chain
/// up to the tree's top holds exactly `n` flagged cubes; the children of the
/// leaves start new trees.
pub fn decompose_trees(lattice: &CubeLattice, flag: &dyn Fn(CubeId) -> bool, n: usize, q0: CubeId) -> Forest {
    assert!(n >= 1, "stopping count must be positive");
    let mut trees = Vec::new();
    let mut queue = VecDeque::from([q0]);
    while let Some(top) = queue.pop_front() {
        let mut cubes = BTreeSet::new();
        let mut leaves = BTreeSet::new();
        let mut stack = vec![(top, usize::from(flag(top)))];
        while let Some((q, count)) = stack.pop() {
            cubes.insert(q);
            if lattice.cube(q).children.is_empty() {
                leaves.insert(q);
                continue;
            }
            if count == n {
                leaves.insert(q);
                queue.extend(lattice.cube(q).children.iter().copied());
                continue;
            }
            for &c in &lattice.cube(q).children {
                stack.push((c, count + usize::from(flag(c))));
            }
        }
        trees.push(Tree { top, cubes, leaves });
    }
    let region = lattice.descendants(q0);
    let flagged_mass = region.iter().filter(|&&q| flag(q)).map(|&q| lattice.cube(q).weight).sum();
    let top_mass = trees.iter().map(|t| lattice.cube(t.top).weight).sum();
    let half_mass_hypothesis =
        region.iter().all(|&q| heavy_mass(lattice, q, n, flag) <= 0.5 * lattice.cube(q).weight * (1.0 + 1e-12));
    let forest = Forest { trees, flagged_mass, top_mass, half_mass_hypothesis };
    let m0 = lattice.cube(q0).weight;
    let nf = n as f64;
    assert!(forest.flagged_mass <= nf * forest.top_mass * (1.0 + 1e-9) + 1e-12, "flagged mass exceeds N·Σμ(tops)");
    if forest.half_mass_hypothesis {
        assert!(forest.flagged_mass <= 2.0 * nf * m0 * (1.0 + 1e-9), "Carleson bound 2Nμ(Q0) violated");
    }
    forest
}

fn heavy_mass(lattice: &CubeLattice, q: CubeId, n: usize, flag: &dyn Fn(CubeId) -> bool) -> f64 {
    let mut mass = 0.0;
    let mut stack = vec![(q, usize::from(flag(q)))];
    while let Some((c, count)) = stack.pop() {
        if count >= n {
            mass += lattice.cube(c).weight;
            continue;
        }
        for &ch in &lattice.cube(c).children {
            stack.push((ch, count + usize::from(flag(ch))));
        }
    }
    mass
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum TreeViolation {
    /// A member cube is not below the top.
    OutsideTop { cube: CubeId },
    /// `lower` and `upper` are in the tree, `middle` between them is not.
    Consistency { lower: CubeId, middle: CubeId, upper: CubeId },
    /// Some but not all children of `parent` are in the tree.
    Children { parent: CubeId, inside: CubeId, outside: CubeId },
    /// The declared leaves differ from the cubes without children in the tree.
    Leaves { cube: CubeId },
}

pub fn validate_tree(lattice: &CubeLattice, tree: &Tree) -> Result<(), TreeViolation> {
    if !tree.cubes.contains(&tree.top) {
        return Err(TreeViolation::OutsideTop { cube: tree.top });
    }
    for &q in &tree.cubes {
        if !lattice.is_descendant(q, tree.top) {
            return Err(TreeViolation::OutsideTop { cube: q });
        }
        let mut cur = q;
        while cur != tree.top {
            let p = lattice.cube(cur).parent.expect("descendant has a parent");
            if !tree.cubes.contains(&p) {
                return Err(TreeViolation::Consistency { lower: q, middle: p, upper: tree.top });
            }
            cur = p;
        }
    }
    for &q in &tree.cubes {
        let children = &lattice.cube(q).children;
        let inside: Vec<CubeId> = children.iter().copied().filter(|c| tree.cubes.contains(c)).collect();
        if !inside.is_empty() && inside.len() < children.len() {
            let outside = *children.iter().find(|c| !tree.cubes.contains(c)).unwrap();
            return Err(TreeViolation::Children { parent: q, inside: inside[0], outside });
        }
        let is_leaf = inside.is_empty();
        if is_leaf != tree.leaves.contains(&q) {
            return Err(TreeViolation::Leaves { cube: q });
        }
    }
    if let Some(&q) = tree.leaves.iter().find(|q| !tree.cubes.contains(q)) {
        return Err(TreeViolation::Leaves { cube: q });
    }
    Ok(())
}

/// Number of flagged cubes Q' with x ∈ Q' ⊂ Q; `None` when x ∉ Q.
pub fn big_count(lattice: &CubeLattice, x: usize, q: CubeId, flag: &dyn Fn(CubeId) -> bool) -> Option<usize> {
    lattice.chain(x, q).map(|c| c.into_iter().filter(|&c| flag(c)).count())
}

/// Members of Q whose flagged count below Q is at least `n`, ascending.
pub fn e_q_set(lattice: &CubeLattice, q: CubeId, n: usize, flag: &dyn Fn(CubeId) -> bool) -> Vec<usize> {
    let mut out = Vec::new();
    let mut stack = vec![(q, usize::from(flag(q)))];
    while let Some((c, count)) = stack.pop() {
        if count >= n {
            out.extend_from_slice(&lattice.cube(c).members);
            continue;
        }
        for &ch in &lattice.cube(c).children {
            stack.push((ch, count + usize::from(flag(ch))));
        }
    }
    out.sort_unstable();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pointset::{four_corners, segment};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn seg(j: i32) -> (RegularCloud, CubeLattice) {
        let cloud = segment(&[0.0, 0.0], &[1.0, 0.0], 2f64.powi(-j)).unwrap();
        let lat = build_lattice(&cloud, 0, j).unwrap();
        (cloud, lat)
    }

    #[test]
    fn segment_levels() {
        let (_, lat) = seg(2);
        assert_eq!(lat.level(0).len(), 1);
        assert_eq!(lat.level(1).len(), 2);
        assert_eq!(lat.level(2).len(), 4);
    }

    #[test]
    fn four_corners_level_counts_match_cell_scan() {
        let cloud = four_corners(3).unwrap();
        let lat = build_lattice(&cloud, 0, 6).unwrap();
        for j in 0..=6 {
            // Construction scan: distinct occupied cells of side 2^-j.
            let mut cells: Vec<(i64, i64)> = (0..cloud.len())
                .map(|i| {
                    let p = cloud.point(i);
                    ((p[0] * 2f64.powi(j)).floor() as i64, (p[1] * 2f64.powi(j)).floor() as i64)
                })
                .collect();
            cells.sort_unstable();
            cells.dedup();
            assert_eq!(lat.level(j).len(), cells.len());
            // Generation-g squares are aligned cells at even levels: 4^{⌈j/2⌉} cubes.
            assert_eq!(lat.level(j).len(), 1 << (2 * ((j + 1) / 2)));
        }
    }

    #[test]
    fn partition_and_weights() {
        let cloud = four_corners(4).unwrap();
        let lat = build_lattice(&cloud, 0, 8).unwrap();
        for j in 0..=8 {
            let mut all: Vec<usize> = lat.level(j).iter().flat_map(|&q| lat.cube(q).members.clone()).collect();
            all.sort_unstable();
            assert_eq!(all, (0..cloud.len()).collect::<Vec<_>>());
        }
        for q in lat.cubes() {
            if !q.children.is_empty() {
                let s: f64 = q.children.iter().map(|&c| lat.cube(c).weight).sum();
                assert!((s - q.weight).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn ball_monotonicity() {
        let cloud = four_corners(4).unwrap();
        let lat = build_lattice(&cloud, 0, 8).unwrap();
        for (id, q) in lat.cubes().iter().enumerate() {
            if let Some(p) = q.parent {
                let lhs = dist(&q.center, &lat.cube(p).center) + lat.ball_radius(id);
                assert!(lhs <= lat.ball_radius(p) + 1e-12);
            }
        }
    }

    #[test]
    fn rejects_bad_levels() {
        let cloud = segment(&[0.0, 0.0], &[1.0, 0.0], 0.1).unwrap();
        assert!(matches!(build_lattice(&cloud, 0, 5), Err(LatticeError::TooFine { .. })));
        assert!(matches!(build_lattice(&cloud, 2, 1), Err(LatticeError::BadLevels { .. })));
    }

    #[test]
    fn david_diagnostics() {
        let (cloud, lat) = seg(6);
        let rep = diagnose_david_properties(&cloud, &lat, 0.01, 4.0);
        assert!(rep.inner_ball_constant >= 0.25, "{rep:?}");

        // A point just left of the wall x = 1/2 has a neighbour across it.
        let coords = vec![0.1, 0.5 - 1e-4, 0.5 + 1e-4, 0.9];
        let cloud = RegularCloud::new(1, 1, coords, vec![0.25; 4], 1e-4).unwrap();
        let lat = build_lattice(&cloud, 0, 3).unwrap();
        let rep = diagnose_david_properties(&cloud, &lat, 0.01, 4.0);
        assert!(!rep.small_inner_ball.is_empty());

        let cloud = four_corners(4).unwrap();
        let lat = build_lattice(&cloud, 0, 3).unwrap();
        let rep = diagnose_david_properties(&cloud, &lat, 0.0, 4.0);
        assert!(rep.density_max / rep.density_min <= 4.0);
        assert!(rep.density_outliers.is_empty());
    }

    fn binary(depth: i32) -> CubeLattice {
        seg(depth).1
    }

    #[test]
    fn no_flags_single_tree() {
        let lat = binary(3);
        let f = decompose_trees(&lat, &|_| false, 2, 0);
        assert_eq!(f.trees.len(), 1);
        assert_eq!(f.trees[0].cubes.len(), lat.len());
        assert_eq!(f.trees[0].leaves.iter().copied().collect::<Vec<_>>(), lat.level(3));
    }

    #[test]
    fn single_flag_at_top() {
        let lat = binary(3);
        let top = lat.root().unwrap();
        let f = decompose_trees(&lat, &|q| q == top, 1, top);
        assert_eq!(f.trees[0].cubes.iter().copied().collect::<Vec<_>>(), vec![top]);
        assert_eq!(f.trees[0].leaves.iter().copied().collect::<Vec<_>>(), vec![top]);
        let tops: Vec<CubeId> = f.trees[1..].iter().map(|t| t.top).collect();
        assert_eq!(tops, lat.cube(top).children);
        for t in &f.trees {
            validate_tree(&lat, t).unwrap();
        }
    }

    #[test]
    fn all_flags_binary_depth_three() {
        let lat = binary(3);
        let top = lat.root().unwrap();
        let f = decompose_trees(&lat, &|_| true, 2, top);
        assert!(f.trees[0].leaves.iter().all(|&q| lat.cube(q).level == 1));
        assert_eq!(f.trees[0].leaves.len(), 2);
        // Children of level-1 leaves top trees spanning levels 2..3.
        for t in &f.trees[1..] {
            assert_eq!(lat.cube(t.top).level, 2);
            let depth = t.cubes.iter().map(|&q| lat.cube(q).level).max().unwrap() - lat.cube(t.top).level + 1;
            assert_eq!(depth, 2);
        }
        assert_eq!(f.trees.len(), 5);
    }

    #[test]
    fn tree_violations_are_witnessed() {
        let lat = binary(3);
        let top = lat.root().unwrap();
        let f = decompose_trees(&lat, &|_| false, 1, top);
        let mut t = f.trees[0].clone();
        let middle = lat.level(1)[0];
        t.cubes.remove(&middle);
        match validate_tree(&lat, &t) {
            Err(TreeViolation::Consistency { middle: m, upper, .. }) => {
                assert_eq!(m, middle);
                assert_eq!(upper, top);
            }
            other => panic!("{other:?}"),
        }
        let mut t = Tree { top, cubes: [top, lat.level(1)[0]].into_iter().collect(), leaves: BTreeSet::new() };
        t.leaves.insert(lat.level(1)[0]);
        assert!(matches!(validate_tree(&lat, &t), Err(TreeViolation::Children { .. })));
    }

    #[test]
    fn counts_along_ancestry() {
        let j = 5;
        let lat = binary(j);
        let top = lat.root().unwrap();
        for p in 0..lat.cube(top).members.len() {
            assert_eq!(big_count(&lat, p, top, &|_| true), Some((j + 1) as usize));
            assert_eq!(big_count(&lat, p, top, &|_| false), Some(0));
        }
        assert!(e_q_set(&lat, top, 1, &|_| false).is_empty());
    }

    /// Oracle: count flagged cubes containing x by scanning membership lists.
    fn scan_count(lat: &CubeLattice, x: usize, q: CubeId, flags: &[bool]) -> usize {
        lat.descendants(q).into_iter().filter(|&c| flags[c] && lat.cube(c).members.contains(&x)).count()
    }

    #[test]
    fn random_flags_match_scan() {
        let cloud = four_corners(3).unwrap();
        let lat = build_lattice(&cloud, 0, 6).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let flags: Vec<bool> = (0..lat.len()).map(|_| r.gen_bool(0.3)).collect();
            let flag = |q: CubeId| flags[q];
            for &q in &[lat.root().unwrap(), lat.level(2)[1]] {
                let set = e_q_set(&lat, q, 3, &flag);
                for &x in &lat.cube(q).members {
                    let want = scan_count(&lat, x, q, &flags);
                    assert_eq!(big_count(&lat, x, q, &flag), Some(want));
                    assert_eq!(set.binary_search(&x).is_ok(), want >= 3);
                }
            }
        }
    }

    #[test]
    fn export_lines() {
        let (_, lat) = seg(2);
        let mut buf = Vec::new();
        lat.export_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let recs: Vec<CubeRecord> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(recs.len(), 7);
        assert_eq!(recs[0].parent, None);
        assert_eq!(recs[1].parent, Some(vec![0, 0]));
    }

    proptest! {
        #[test]
        fn decomposition_invariants(seed in 0u64..300, n in 1usize..4, p in 0.05f64..0.9) {
            let cloud = four_corners(3).unwrap();
            let lat = build_lattice(&cloud, 0, 6).unwrap();
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let flags: Vec<bool> = (0..lat.len()).map(|_| r.gen_bool(p)).collect();
            let flag = |q: CubeId| flags[q];
            let top = lat.root().unwrap();
            let f = decompose_trees(&lat, &flag, n, top);
            let mut seen = vec![0usize; lat.len()];
            for t in &f.trees {
                prop_assert!(validate_tree(&lat, t).is_ok());
                for &q in &t.cubes {
                    seen[q] += 1;
                }
                for &x in &lat.cube(t.top).members {
                    let c = t.cubes.iter().filter(|&&q| flags[q] && lat.cube(q).members.contains(&x)).count();
                    prop_assert!(c <= n);
                }
            }
            prop_assert!(seen.iter().all(|&s| s == 1));
        }
    }
}
