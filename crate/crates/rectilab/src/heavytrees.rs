//! Heavy trees: the flagged-count tree decomposition, pruned to tops covered
//! at most K times and then to trees whose tops are a quarter full of high
//! count points.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::beta::{BetaMap, BetaMethod};
use crate::cubes::{decompose_trees, e_q_set, validate_tree, CubeId, CubeLattice, Tree, TreeViolation};

#[derive(Debug, Error)]
pub enum HeavyTreeError {
    #[error("beta values cover {got} cubes, lattice has {expected}")]
    MissingBetas { expected: usize, got: usize },
    #[error("beta value of cube {0} is not finite")]
    BadBeta(CubeId),
    #[error("M and K must be at least 1")]
    Params,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeavyParams {
    pub epsilon: f64,
    /// Flagged cubes per tree along every stopping leaf's ancestry.
    pub per_tree: usize,
    /// Allowed top multiplicity.
    pub tops: usize,
}

impl HeavyParams {
    pub fn total(&self) -> usize {
        self.per_tree * self.tops
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeavyTree {
    pub tree: Tree,
    /// Leaves whose flagged count up to the top is exactly M.
    pub stopping_leaves: BTreeSet<CubeId>,
    pub top_mass: f64,
    /// μ(E_{Q0} ∩ Q(T)).
    pub high_mass: f64,
}

impl HeavyTree {
    pub fn ratio(&self) -> f64 {
        self.high_mass / self.top_mass
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HypothesisStatus {
    /// μ(E_{Q0}) ≥ μ(Q0)/2.
    Holds,
    Fails,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HeavyForest {
    pub params: HeavyParams,
    pub method: Option<BetaMethod>,
    pub q0: CubeId,
    pub status: HypothesisStatus,
    pub high_set: Vec<usize>,
    pub high_set_mass: f64,
    pub q0_mass: f64,
    /// Every tree of the decomposition, before any pruning.
    pub all_trees: Vec<HeavyTree>,
    /// Trees whose top lies in at most K tops.
    pub retained: Vec<HeavyTree>,
    /// Retained trees with μ(E_{Q0} ∩ Q(T)) ≥ μ(Q(T))/4; empty when the hypothesis fails.
    pub heavy: Vec<HeavyTree>,
    /// Σ μ(E_{Q0} ∩ Q(T)) over retained trees.
    pub retained_high_mass: f64,
    /// The same sum over the discarded light trees.
    pub discarded_high_mass: f64,
    pub heavy_top_mass: f64,
}

impl HeavyForest {
    pub fn export_json(&self) -> serde_json::Value {
        serde_json::json!({
            "params": self.params,
            "method": self.method,
            "hypothesis_status": self.status,
            "high_set_mass": self.high_set_mass,
            "q0_mass": self.q0_mass,
            "trees": self.heavy.iter().map(|t| serde_json::json!({
                "top": t.tree.top,
                "leaves": t.stopping_leaves,
                "T1_ratio": t.ratio(),
            })).collect::<Vec<_>>(),
            "ledgers": {
                "retained_high_mass": self.retained_high_mass,
                "retained_bound": self.params.tops as f64 / 2.0 * self.q0_mass,
                "discarded_high_mass": self.discarded_high_mass,
                "discarded_bound": self.params.tops as f64 / 4.0 * self.q0_mass,
                "heavy_top_mass": self.heavy_top_mass,
            },
        })
    }
}

fn flags_from(lattice: &CubeLattice, betas: &BetaMap, epsilon: f64) -> Result<Vec<bool>, HeavyTreeError> {
    if betas.values.len() != lattice.len() {
        return Err(HeavyTreeError::MissingBetas { expected: lattice.len(), got: betas.values.len() });
    }
    (0..lattice.len())
        .map(|q| {
            let b = betas.value(q);
            if b.is_finite() {
                Ok(b >= epsilon)
            } else {
                Err(HeavyTreeError::BadBeta(q))
            }
        })
        .collect()
}

/// Flagged cubes between `q` and `top` inclusive, counted along parents.
fn flagged_between(lattice: &CubeLattice, flags: &[bool], q: CubeId, top: CubeId) -> usize {
    let mut count = 0;
    let mut cur = q;
    loop {
        count += usize::from(flags[cur]);
        if cur == top {
            return count;
        }
        cur = lattice.cube(cur).parent.expect("below the top");
    }
}

fn high_mass_in(lattice: &CubeLattice, top: CubeId, high: &BTreeSet<usize>, weights: &[f64]) -> f64 {
    lattice.cube(top).members.iter().filter(|p| high.contains(p)).map(|&p| weights[p]).sum()
}

pub fn build_heavy_trees(lattice: &CubeLattice, betas: &BetaMap, params: HeavyParams, q0: CubeId, weights: &[f64]) -> Result<HeavyForest, HeavyTreeError> {
    let flags = flags_from(lattice, betas, params.epsilon)?;
    let mut forest = build_heavy_trees_with_flags(lattice, &flags, params, q0, weights)?;
    forest.method = Some(betas.method);
    Ok(forest)
}

/// The construction with flags given directly; `weights` are the cloud's point weights.
pub fn build_heavy_trees_with_flags(lattice: &CubeLattice, flags: &[bool], params: HeavyParams, q0: CubeId, weights: &[f64]) -> Result<HeavyForest, HeavyTreeError> {
    if params.per_tree == 0 || params.tops == 0 {
        return Err(HeavyTreeError::Params);
    }
    let flag = |q: CubeId| flags[q];
    let high_set = e_q_set(lattice, q0, params.total(), &flag);
    let high: BTreeSet<usize> = high_set.iter().copied().collect();
    let high_set_mass: f64 = high_set.iter().map(|&p| weights[p]).sum();
    let q0_mass = lattice.cube(q0).weight;
    let status = if high_set_mass >= 0.5 * q0_mass * (1.0 - 1e-12) { HypothesisStatus::Holds } else { HypothesisStatus::Fails };

    let decomposition = decompose_trees(lattice, &flag, params.per_tree, q0);
    let all_trees: Vec<HeavyTree> = decomposition
        .trees
        .into_iter()
        .map(|tree| {
            let stopping_leaves = tree.leaves.iter().copied().filter(|&l| flagged_between(lattice, flags, l, tree.top) == params.per_tree).collect();
            let top_mass = lattice.cube(tree.top).weight;
            let high_mass = high_mass_in(lattice, tree.top, &high, weights);
            HeavyTree { tree, stopping_leaves, top_mass, high_mass }
        })
        .collect();

    let tops: BTreeSet<CubeId> = all_trees.iter().map(|t| t.tree.top).collect();
    let top_depth = |q: CubeId| {
        let mut count = 0;
        let mut cur = q;
        loop {
            count += usize::from(tops.contains(&cur));
            if cur == q0 {
                return count;
            }
            cur = lattice.cube(cur).parent.expect("below Q0");
        }
    };
    let retained: Vec<HeavyTree> = all_trees.iter().filter(|t| top_depth(t.tree.top) <= params.tops).cloned().collect();
    let retained_high_mass: f64 = retained.iter().map(|t| t.high_mass).sum();
    let k = params.tops as f64;
    let (mut heavy, mut discarded_high_mass) = (Vec::new(), 0.0);
    for t in &retained {
        if t.high_mass >= 0.25 * t.top_mass * (1.0 - 1e-12) {
            heavy.push(t.clone());
        } else {
            discarded_high_mass += t.high_mass;
        }
    }
    if status == HypothesisStatus::Holds {
        assert!(retained_high_mass >= k / 2.0 * q0_mass * (1.0 - 1e-9), "retained high mass below K/2·μ(Q0)");
        assert!(discarded_high_mass <= k / 4.0 * q0_mass * (1.0 + 1e-9), "discarded high mass above K/4·μ(Q0)");
    } else {
        heavy.clear();
    }
    let heavy_top_mass = heavy.iter().map(|t| t.top_mass).sum();
    Ok(HeavyForest {
        params,
        method: None,
        q0,
        status,
        high_set,
        high_set_mass,
        q0_mass,
        all_trees,
        retained,
        heavy,
        retained_high_mass,
        discarded_high_mass,
        heavy_top_mass,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Witness {
    /// μ(E ∩ Q(T))/μ(Q(T)) below 1/4.
    Mass { tree: usize, ratio: f64 },
    /// A high-count point of the top outside every stopping leaf.
    Coverage { tree: usize, point: usize },
    /// A declared stopping leaf whose flagged count is not M.
    Count { tree: usize, leaf: CubeId, count: usize },
    /// Σ μ(Q(T)) below (K/4)μ(Q0).
    TopMass { total: f64, bound: f64 },
    /// A point in more than K tops.
    Multiplicity { point: usize, count: usize },
    Structure { tree: usize, violation: TreeViolation },
    Overlap { a: usize, b: usize, cube: CubeId },
}

#[derive(Debug, Clone, Serialize)]
pub struct PropertyReport {
    pub mass: bool,
    pub coverage: bool,
    pub count: bool,
    pub top_mass: bool,
    pub multiplicity: bool,
    pub structure: bool,
    pub witnesses: Vec<Witness>,
}

impl PropertyReport {
    pub fn all(&self) -> bool {
        self.mass && self.coverage && self.count && self.top_mass && self.multiplicity && self.structure
    }
}

/// Flagged cubes containing each point on its chain up to Q0, from scratch.
fn point_counts(lattice: &CubeLattice, flags: &[bool], q0: CubeId) -> BTreeMap<usize, usize> {
    lattice
        .cube(q0)
        .members
        .iter()
        .map(|&p| (p, lattice.chain(p, q0).expect("member of Q0").into_iter().filter(|&c| flags[c]).count()))
        .collect()
}

/// Re-derives the heavy-tree properties of `forest.heavy` from the lattice and flags.
pub fn verify_properties(forest: &HeavyForest, lattice: &CubeLattice, flags: &[bool], weights: &[f64]) -> PropertyReport {
    let p = forest.params;
    let q0 = forest.q0;
    let counts = point_counts(lattice, flags, q0);
    let high: BTreeSet<usize> = counts.iter().filter(|(_, &c)| c >= p.total()).map(|(&x, _)| x).collect();
    let mut w = Vec::new();
    let per_tree: Vec<Vec<Witness>> = forest
        .heavy
        .par_iter()
        .enumerate()
        .map(|(j, t)| {
            let mut w = Vec::new();
            if let Err(violation) = validate_tree(lattice, &t.tree) {
                w.push(Witness::Structure { tree: j, violation });
            }
            let top = lattice.cube(t.tree.top);
            let hm: f64 = top.members.iter().filter(|x| high.contains(x)).map(|&x| weights[x]).sum();
            if hm < 0.25 * top.weight * (1.0 - 1e-12) {
                w.push(Witness::Mass { tree: j, ratio: hm / top.weight });
            }
            for &x in top.members.iter().filter(|x| high.contains(x)) {
                let chain = lattice.chain(x, t.tree.top).expect("member of top");
                if !chain.iter().any(|c| t.stopping_leaves.contains(c)) {
                    w.push(Witness::Coverage { tree: j, point: x });
                    break;
                }
            }
            for &leaf in &t.stopping_leaves {
                let mut count = 0;
                let mut cur = leaf;
                loop {
                    if t.tree.cubes.contains(&cur) && flags[cur] {
                        count += 1;
                    }
                    if cur == t.tree.top {
                        break;
                    }
                    match lattice.cube(cur).parent {
                        Some(par) => cur = par,
                        None => break,
                    }
                }
                if count != p.per_tree {
                    w.push(Witness::Count { tree: j, leaf, count });
                }
            }
            w
        })
        .collect();
    per_tree.into_iter().for_each(|v| w.extend(v));
    let total: f64 = forest.heavy.iter().map(|t| lattice.cube(t.tree.top).weight).sum();
    let bound = p.tops as f64 / 4.0 * lattice.cube(q0).weight;
    if total < bound * (1.0 - 1e-12) {
        w.push(Witness::TopMass { total, bound });
    }
    let mut cover: BTreeMap<usize, usize> = BTreeMap::new();
    for t in &forest.heavy {
        for &x in &lattice.cube(t.tree.top).members {
            *cover.entry(x).or_insert(0) += 1;
        }
    }
    if let Some((&point, &count)) = cover.iter().find(|(_, &c)| c > p.tops) {
        w.push(Witness::Multiplicity { point, count });
    }
    let mut owner: BTreeMap<CubeId, usize> = BTreeMap::new();
    'outer: for (j, t) in forest.heavy.iter().enumerate() {
        for &q in &t.tree.cubes {
            if let Some(&a) = owner.get(&q) {
                w.push(Witness::Overlap { a, b: j, cube: q });
                break 'outer;
            }
            owner.insert(q, j);
        }
    }
    let has = |f: fn(&Witness) -> bool| w.iter().any(f);
    PropertyReport {
        mass: !has(|x| matches!(x, Witness::Mass { .. })),
        coverage: !has(|x| matches!(x, Witness::Coverage { .. })),
        count: !has(|x| matches!(x, Witness::Count { .. })),
        top_mass: !has(|x| matches!(x, Witness::TopMass { .. })),
        multiplicity: !has(|x| matches!(x, Witness::Multiplicity { .. })),
        structure: !has(|x| matches!(x, Witness::Structure { .. } | Witness::Overlap { .. })),
        witnesses: w,
    }
}

/// For each point of Q0, the number of flagged cubes containing it across
/// the retained trees.
pub fn retained_counts(lattice: &CubeLattice, flags: &[bool], forest: &HeavyForest) -> BTreeMap<usize, usize> {
    let union: BTreeSet<CubeId> = forest.retained.iter().flat_map(|t| t.tree.cubes.iter().copied()).collect();
    lattice
        .cube(forest.q0)
        .members
        .iter()
        .map(|&p| (p, lattice.chain(p, forest.q0).expect("member").into_iter().filter(|c| union.contains(c) && flags[*c]).count()))
        .collect()
}

/// Every high-count point meets exactly N = K·M flagged cubes of the retained trees.
pub fn count_identity(lattice: &CubeLattice, flags: &[bool], forest: &HeavyForest) -> bool {
    let counts = retained_counts(lattice, flags, forest);
    forest.high_set.iter().all(|x| counts[x] == forest.params.total())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::beta::{beta_lattice, BetaKind};
    use crate::cubes::build_lattice;
    use crate::pointset::{four_corners, segment, RegularCloud};

    fn binary_line(depth: i32) -> (RegularCloud, CubeLattice) {
        let m = 1usize << depth;
        let coords: Vec<f64> = (0..m).map(|i| (i as f64 + 0.5) / m as f64).collect();
        let cloud = RegularCloud::new(1, 1, coords, vec![1.0 / m as f64; m], 1.0 / m as f64).unwrap();
        let lat = build_lattice(&cloud, 0, depth).unwrap();
        (cloud, lat)
    }

    fn uniform(per_tree: usize, tops: usize) -> (RegularCloud, CubeLattice, Vec<bool>, HeavyForest) {
        let depth = (per_tree * tops + 2) as i32;
        let (cloud, lat) = binary_line(depth);
        let flags = vec![true; lat.len()];
        let params = HeavyParams { epsilon: 0.0, per_tree, tops };
        let q0 = lat.root().unwrap();
        let forest = build_heavy_trees_with_flags(&lat, &flags, params, q0, cloud.weights()).unwrap();
        (cloud, lat, flags, forest)
    }

    #[test]
    fn uniform_flags_hand_count() {
        for (m, k) in [(2, 2), (3, 2), (2, 3)] {
            let (cloud, lat, flags, forest) = uniform(m, k);
            assert_eq!(forest.status, HypothesisStatus::Holds);
            assert_eq!(forest.high_set.len(), cloud.len());
            // Tops sit at levels 0, M, 2M, ... and K of those levels survive.
            assert_eq!(forest.heavy.len(), (0..k).map(|j| 1usize << (j * m)).sum::<usize>());
            for t in &forest.heavy {
                assert_eq!(lat.cube(t.tree.top).level as usize % m, 0);
                assert!(t.stopping_leaves.iter().all(|&l| lat.cube(l).level - lat.cube(t.tree.top).level == m as i32 - 1));
                assert_eq!(t.ratio(), 1.0);
            }
            assert!((forest.heavy_top_mass - k as f64).abs() < 1e-12);
            assert!(forest.heavy_top_mass >= k as f64 / 4.0);
            let report = verify_properties(&forest, &lat, &flags, cloud.weights());
            assert!(report.all(), "{:?}", report.witnesses);
            assert!(count_identity(&lat, &flags, &forest));
            assert!(forest.retained_high_mass >= k as f64 / 2.0);
            assert_eq!(forest.discarded_high_mass, 0.0);
        }
    }

    #[test]
    fn low_count_points_fall_short() {
        // Unflag a subtree so some points miss the total count.
        let (cloud, lat) = binary_line(7);
        let mut flags = vec![true; lat.len()];
        let q = lat.level(2)[0];
        for d in lat.descendants(q) {
            if lat.cube(d).level > 2 {
                flags[d] = false;
            }
        }
        let params = HeavyParams { epsilon: 0.0, per_tree: 2, tops: 2 };
        let forest = build_heavy_trees_with_flags(&lat, &flags, params, lat.root().unwrap(), cloud.weights()).unwrap();
        let counts = retained_counts(&lat, &flags, &forest);
        let high: BTreeSet<usize> = forest.high_set.iter().copied().collect();
        assert!(high.len() < cloud.len());
        for (x, c) in counts {
            if high.contains(&x) {
                assert_eq!(c, 4);
            } else {
                assert!(c < 4);
            }
        }
    }

    #[test]
    fn flat_segment_fails_hypothesis() {
        let cloud = segment(&[0.0, 0.5], &[1.0, 0.5], 2f64.powi(-8)).unwrap();
        let lat = build_lattice(&cloud, 0, 6).unwrap();
        let betas = beta_lattice(&cloud, &lat, BetaKind::Beta1, BetaMethod::PcaRefined).unwrap();
        let params = HeavyParams { epsilon: 0.5, per_tree: 1, tops: 2 };
        let forest = build_heavy_trees(&lat, &betas, params, lat.root().unwrap(), cloud.weights()).unwrap();
        assert!(forest.high_set.is_empty());
        assert_eq!(forest.status, HypothesisStatus::Fails);
        assert!(forest.heavy.is_empty() && !forest.all_trees.is_empty());
        let flags = vec![false; lat.len()];
        assert!(count_identity(&lat, &flags, &forest));
    }

    #[test]
    fn four_corners_forest_checks() {
        let cloud = four_corners(6).unwrap();
        let lat = build_lattice(&cloud, 0, 6).unwrap();
        let betas = beta_lattice(&cloud, &lat, BetaKind::Beta1, BetaMethod::PcaRefined).unwrap();
        let params = HeavyParams { epsilon: 0.05, per_tree: 2, tops: 2 };
        let q0 = lat.root().unwrap();
        let forest = build_heavy_trees(&lat, &betas, params, q0, cloud.weights()).unwrap();
        let flags: Vec<bool> = (0..lat.len()).map(|q| betas.value(q) >= 0.05).collect();
        if forest.status == HypothesisStatus::Holds {
            let report = verify_properties(&forest, &lat, &flags, cloud.weights());
            assert!(report.all(), "{:?}", report.witnesses);
            assert!(count_identity(&lat, &flags, &forest));
        }
        assert_eq!(forest.method, Some(BetaMethod::PcaRefined));
        let json = forest.export_json();
        assert_eq!(json["hypothesis_status"], serde_json::json!(forest.status));
    }

    #[test]
    fn tampered_leaf_count_is_caught() {
        let (cloud, lat, flags, mut forest) = uniform(2, 2);
        let t = &mut forest.heavy[0];
        let leaf = *t.stopping_leaves.iter().next().unwrap();
        let parent = lat.cube(leaf).parent.unwrap();
        t.stopping_leaves.remove(&leaf);
        t.stopping_leaves.insert(parent);
        let report = verify_properties(&forest, &lat, &flags, cloud.weights());
        assert!(!report.count);
        assert!(report.witnesses.contains(&Witness::Count { tree: 0, leaf: parent, count: 1 }));
    }

    #[test]
    fn extra_top_is_caught() {
        let (cloud, lat, flags, mut forest) = uniform(2, 2);
        let dropped = forest.all_trees.iter().find(|t| !forest.retained.contains(t)).unwrap().clone();
        let point = lat.cube(dropped.tree.top).members[0];
        forest.heavy.push(dropped);
        let report = verify_properties(&forest, &lat, &flags, cloud.weights());
        assert!(!report.multiplicity);
        assert!(report.witnesses.iter().any(|w| matches!(w, Witness::Multiplicity { point: p, count: 3 } if *p == point)));
    }

    #[test]
    fn missing_betas_rejected() {
        let (cloud, lat) = binary_line(4);
        let betas = BetaMap { kind: BetaKind::Beta1, method: BetaMethod::Pca, values: Vec::new() };
        let params = HeavyParams { epsilon: 0.1, per_tree: 1, tops: 1 };
        assert!(matches!(build_heavy_trees(&lat, &betas, params, 0, cloud.weights()), Err(HeavyTreeError::MissingBetas { .. })));
    }

    #[test]
    fn deterministic() {
        let (_, _, _, a) = uniform(2, 2);
        let (_, _, _, b) = uniform(2, 2);
        assert_eq!(a.heavy, b.heavy);
    }
}
