//! Augmentation lineage graph and topology-aware pool-statistic refresh.
//!
//! Augmented queries are correlated with their parents, so reinserting them
//! with raw empirical statistics can destabilize sampling priorities. This
//! module maintains the directed parent-to-children graph, computes levels
//! from the leaves upward (with a bounded-relaxation fallback when cycles
//! appear), and re-estimates statistics bottom-up with two aggregators:
//!
//! * `Child`: unweighted mean over immediate children;
//! * `Path`: subtree-path-count-weighted mean, which is the unique unbiased
//!   combination of child means under a uniform-over-descendants objective
//!   and minimizes variance among such combinations.
//!
//! Each child contribution passes through a difficulty transform that
//! attenuates the influence of children the policy estimated to be harder.

use crate::record::RecordId;
use serde::Serialize;
use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::io::Write;
use thiserror::Error;

/// Lower clamp bound for the relative difficulty factor.
pub const DIFFICULTY_MIN: f64 = 0.75;
/// Upper clamp bound for the relative difficulty factor.
pub const DIFFICULTY_MAX: f64 = 1.33;
/// Guard against division by a vanishing difficulty in the transform.
pub const PHI_EPSILON: f64 = 1e-6;
/// Blend weight on the aggregated signal in the refresh update.
pub const REFRESH_BLEND: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum LineageError {
    #[error("self loop on record {0}")]
    SelfLoop(RecordId),
    #[error("duplicate edge {0} -> {1}")]
    DuplicateEdge(RecordId, RecordId),
    #[error("record {0} has no scored children")]
    NoScoredChildren(RecordId),
    #[error("cycle in subtree under record {0}")]
    CycleInSubtree(RecordId),
    #[error("no leaf value for record {0}")]
    MissingLeafValue(RecordId),
}

/// Clamp a policy-estimated difficulty to the allowed range; a missing or
/// non-finite estimate falls back to 1.0.
pub fn clamp_difficulty(d_raw: Option<f64>) -> f64 {
    match d_raw {
        Some(d) if d.is_finite() => d.clamp(DIFFICULTY_MIN, DIFFICULTY_MAX),
        _ => 1.0,
    }
}

/// Difficulty-adjusted child signal: the child's statistic divided by its
/// difficulty factor, clipped back to [-1, 1]. Harder children (larger `d`)
/// have their influence attenuated in magnitude.
pub fn phi(r_child: f64, d_child: f64) -> f64 {
    (r_child / d_child.max(PHI_EPSILON)).clamp(-1.0, 1.0)
}

/// How child signals are combined into a parent update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AggregationMode {
    /// Unweighted mean over immediate children.
    Child,
    /// Mean weighted by subtree path counts.
    Path,
    /// Path counts pushed through a softmax with the given temperature.
    /// No reference value exists for the temperature; 1.0 is the default.
    PathSoftmax { temperature: f64 },
}

impl AggregationMode {
    pub fn wire_name(&self) -> &'static str {
        match self {
            AggregationMode::Child => "child",
            AggregationMode::Path => "path",
            AggregationMode::PathSoftmax { .. } => "path_softmax",
        }
    }
}

/// One directed augmentation edge with its clamped difficulty metadata.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineageEdge {
    pub child: RecordId,
    pub difficulty: f64,
}

/// Directed parent-to-children augmentation graph.
///
/// `node_index` tracks which ids are known to the current record store;
/// edges may reference ids that never materialized (rejected candidates,
/// evicted records). Those are skipped during propagation and surfaced as a
/// dangling diagnostic.
#[derive(Debug, Clone, Default)]
pub struct LineageGraph {
    children: BTreeMap<RecordId, Vec<LineageEdge>>,
    edge_index: BTreeSet<(RecordId, RecordId)>,
    nodes: BTreeSet<RecordId>,
}

/// Counters from one refresh pass, printable as a single JSON object.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RefreshReport {
    pub updated: usize,
    pub cycle_detected: usize,
    pub dangling: usize,
    pub max_depth: usize,
    pub mode: String,
}

impl RefreshReport {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

struct LevelInfo {
    /// Depth per considered node: leaves 0, parents 1 + max child depth.
    depth: BTreeMap<RecordId, u32>,
    cycle_detected: usize,
    dangling: usize,
}

impl LineageGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Mark `id` as known to the record store. Idempotent.
    pub fn register_node(&mut self, id: RecordId) {
        self.nodes.insert(id);
    }

    pub fn contains_node(&self, id: RecordId) -> bool {
        self.nodes.contains(&id)
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edge_index.len()
    }

    /// Append a parent-to-child edge. The difficulty must already be clamped.
    pub fn add_edge(
        &mut self,
        parent_id: RecordId,
        child_id: RecordId,
        d_child: f64,
    ) -> Result<(), LineageError> {
        if parent_id == child_id {
            return Err(LineageError::SelfLoop(parent_id));
        }
        if !self.edge_index.insert((parent_id, child_id)) {
            return Err(LineageError::DuplicateEdge(parent_id, child_id));
        }
        debug_assert!((DIFFICULTY_MIN..=DIFFICULTY_MAX).contains(&d_child));
        self.children
            .entry(parent_id)
            .or_default()
            .push(LineageEdge {
                child: child_id,
                difficulty: d_child,
            });
        Ok(())
    }

    /// Child edges of `id` in insertion order.
    pub fn children_of(&self, id: RecordId) -> &[LineageEdge] {
        self.children.get(&id).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Edge-list JSONL export: one `{"parent":..,"child":..,"d":..}` per line.
    pub fn export_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for (parent, edges) in &self.children {
            for e in edges {
                writeln!(
                    out,
                    "{{\"parent\":{},\"child\":{},\"d\":{}}}",
                    parent.0, e.child.0, e.difficulty
                )?;
            }
        }
        Ok(())
    }

    fn in_scope(&self, id: RecordId, allowed: Option<&BTreeSet<RecordId>>) -> bool {
        self.nodes.contains(&id) && allowed.is_none_or(|set| set.contains(&id))
    }

    /// Levels from the leaves upward over the registered part of the graph.
    ///
    /// When the reachable subgraph is acyclic the result equals a strict
    /// topological computation. Otherwise the unresolved residue is assigned
    /// depths by a relaxation bounded to one pass per residual node, frozen
    /// at the last value, and every residual node counts toward the
    /// cycle-detected diagnostic.
    fn levels(&self, allowed: Option<&BTreeSet<RecordId>>) -> LevelInfo {
        let mut dangling_ids: BTreeSet<RecordId> = BTreeSet::new();
        let mut considered: BTreeSet<RecordId> = BTreeSet::new();
        // Valid adjacency: both endpoints registered (and in scope). With a
        // scope restriction, walk only the allowed nodes' edge lists so a
        // targeted pass costs closure work, not whole-graph work.
        let mut valid_children: BTreeMap<RecordId, Vec<RecordId>> = BTreeMap::new();
        let mut parents: BTreeMap<RecordId, Vec<RecordId>> = BTreeMap::new();
        let visit = |parent: RecordId,
                     edges: &[LineageEdge],
                     dangling_ids: &mut BTreeSet<RecordId>,
                     considered: &mut BTreeSet<RecordId>,
                     valid_children: &mut BTreeMap<RecordId, Vec<RecordId>>,
                     parents: &mut BTreeMap<RecordId, Vec<RecordId>>| {
            if !self.nodes.contains(&parent) {
                dangling_ids.insert(parent);
                return;
            }
            if !self.in_scope(parent, allowed) {
                return;
            }
            considered.insert(parent);
            for e in edges {
                if !self.nodes.contains(&e.child) {
                    dangling_ids.insert(e.child);
                    continue;
                }
                if !self.in_scope(e.child, allowed) {
                    continue;
                }
                considered.insert(e.child);
                valid_children.entry(parent).or_default().push(e.child);
                parents.entry(e.child).or_default().push(parent);
            }
        };
        match allowed {
            Some(set) => {
                for &parent in set {
                    if let Some(edges) = self.children.get(&parent) {
                        visit(
                            parent,
                            edges,
                            &mut dangling_ids,
                            &mut considered,
                            &mut valid_children,
                            &mut parents,
                        );
                    }
                }
            }
            None => {
                for (&parent, edges) in &self.children {
                    visit(
                        parent,
                        edges,
                        &mut dangling_ids,
                        &mut considered,
                        &mut valid_children,
                        &mut parents,
                    );
                }
            }
        }

        let mut outdeg: BTreeMap<RecordId, usize> = BTreeMap::new();
        for &id in &considered {
            outdeg.insert(id, valid_children.get(&id).map_or(0, Vec::len));
        }
        let mut depth: BTreeMap<RecordId, u32> = BTreeMap::new();
        let mut queue: Vec<RecordId> = considered
            .iter()
            .copied()
            .filter(|id| outdeg[id] == 0)
            .collect();
        let mut head = 0;
        for &leaf in &queue {
            depth.insert(leaf, 0);
        }
        while head < queue.len() {
            let v = queue[head];
            head += 1;
            let dv = depth[&v];
            if let Some(ps) = parents.get(&v) {
                for &p in ps {
                    let dp = depth.entry(p).or_insert(0);
                    *dp = (*dp).max(dv + 1);
                    let deg = outdeg.get_mut(&p).expect("parent accounted");
                    *deg -= 1;
                    if *deg == 0 {
                        queue.push(p);
                    }
                }
            }
        }

        // Residue: nodes on or above a cycle.
        let residual: Vec<RecordId> = considered
            .iter()
            .copied()
            .filter(|id| !depth.contains_key(id))
            .collect();
        let cycle_detected = residual.len();
        for &id in &residual {
            depth.insert(id, 0);
        }
        for _pass in 0..residual.len() {
            let mut changed = false;
            for &u in &residual {
                let mut best = 0;
                for c in valid_children.get(&u).map(Vec::as_slice).unwrap_or(&[]) {
                    best = best.max(depth[c] + 1);
                }
                if best > depth[&u] {
                    depth.insert(u, best);
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }

        LevelInfo {
            depth,
            cycle_detected,
            dangling: dangling_ids.len(),
        }
    }

    /// Depths per node plus the cycle/dangling diagnostics, as a report with
    /// no update count.
    pub fn compute_levels(&self) -> (BTreeMap<RecordId, u32>, RefreshReport) {
        let info = self.levels(None);
        let report = RefreshReport {
            updated: 0,
            cycle_detected: info.cycle_detected,
            dangling: info.dangling,
            max_depth: level_count(&info.depth),
            mode: "levels".to_string(),
        };
        (info.depth, report)
    }

    /// Bottom-up subtree path counts: leaves count 1, internal nodes sum
    /// their children. On a DAG this counts root-to-leaf paths, so shared
    /// descendants contribute once per path.
    pub fn subtree_path_counts(&self) -> BTreeMap<RecordId, u64> {
        let info = self.levels(None);
        self.path_counts_from(&info.depth, None)
    }

    fn path_counts_from(
        &self,
        depth: &BTreeMap<RecordId, u32>,
        allowed: Option<&BTreeSet<RecordId>>,
    ) -> BTreeMap<RecordId, u64> {
        let mut order: Vec<RecordId> = depth.keys().copied().collect();
        order.sort_by_key(|id| (depth[id], *id));
        let mut counts: BTreeMap<RecordId, u64> = BTreeMap::new();
        for &id in depth.keys() {
            counts.insert(id, 1);
        }
        for &u in &order {
            let mut sum = 0u64;
            let mut any = false;
            for e in self.children_of(u) {
                if self.in_scope(e.child, allowed) {
                    any = true;
                    sum = sum.saturating_add(counts.get(&e.child).copied().unwrap_or(1));
                }
            }
            if any {
                counts.insert(u, sum);
            }
        }
        counts
    }

    fn aggregate(
        &self,
        node: RecordId,
        scores: &BTreeMap<RecordId, f64>,
        counts: &BTreeMap<RecordId, u64>,
        mode: AggregationMode,
        allowed: Option<&BTreeSet<RecordId>>,
    ) -> Result<f64, LineageError> {
        let mut contributions: Vec<(f64, f64)> = Vec::new(); // (weight basis, value)
        for e in self.children_of(node) {
            if !self.in_scope(e.child, allowed) {
                continue;
            }
            let Some(&score) = scores.get(&e.child) else {
                continue;
            };
            let weight = match mode {
                AggregationMode::Child => 1.0,
                AggregationMode::Path | AggregationMode::PathSoftmax { .. } => {
                    counts.get(&e.child).copied().unwrap_or(1) as f64
                }
            };
            contributions.push((weight, phi(score, e.difficulty)));
        }
        if contributions.is_empty() {
            return Err(LineageError::NoScoredChildren(node));
        }
        let weights: Vec<f64> = match mode {
            AggregationMode::PathSoftmax { temperature } => {
                let t = temperature.max(1e-9);
                let max = contributions.iter().map(|c| c.0).fold(f64::MIN, f64::max);
                contributions
                    .iter()
                    .map(|c| ((c.0 - max) / t).exp())
                    .collect()
            }
            _ => contributions.iter().map(|c| c.0).collect(),
        };
        let total: f64 = weights.iter().sum();
        Ok(contributions
            .iter()
            .zip(&weights)
            .map(|((_, value), w)| w / total * value)
            .sum())
    }

    /// Unweighted mean of difficulty-adjusted scored-child signals.
    /// Unscored children are excluded from numerator and denominator.
    pub fn child_agg(
        &self,
        node: RecordId,
        scores: &BTreeMap<RecordId, f64>,
    ) -> Result<f64, LineageError> {
        let counts = BTreeMap::new();
        self.aggregate(node, scores, &counts, AggregationMode::Child, None)
    }

    /// Subtree-size-weighted mean of difficulty-adjusted scored-child
    /// signals, with weights renormalized over the scored children.
    pub fn path_agg(
        &self,
        node: RecordId,
        scores: &BTreeMap<RecordId, f64>,
        counts: &BTreeMap<RecordId, u64>,
    ) -> Result<f64, LineageError> {
        self.aggregate(node, scores, counts, AggregationMode::Path, None)
    }

    /// One full refresh pass with the standard blend weight.
    pub fn refresh_pass(
        &self,
        scores: &mut BTreeMap<RecordId, f64>,
        mode: AggregationMode,
    ) -> RefreshReport {
        self.refresh_impl(scores, mode, REFRESH_BLEND, None)
    }

    /// Refresh pass with an explicit blend weight on the aggregate
    /// (1.0 replaces the previous value entirely); used by the unbiasedness
    /// property harness.
    pub fn refresh_pass_with_blend(
        &self,
        scores: &mut BTreeMap<RecordId, f64>,
        mode: AggregationMode,
        blend: f64,
    ) -> RefreshReport {
        self.refresh_impl(scores, mode, blend, None)
    }

    /// Refresh restricted to the descendant closure of `targets`, without
    /// touching the input scores: returns the refreshed closure values.
    ///
    /// Values computed for closure nodes are identical to a full pass,
    /// because a node's refreshed value depends only on its descendants.
    pub fn refresh_targets(
        &self,
        scores: &BTreeMap<RecordId, f64>,
        mode: AggregationMode,
        targets: &BTreeSet<RecordId>,
    ) -> (BTreeMap<RecordId, f64>, RefreshReport) {
        let mut closure: BTreeSet<RecordId> = BTreeSet::new();
        let mut stack: Vec<RecordId> = targets
            .iter()
            .copied()
            .filter(|id| self.nodes.contains(id))
            .collect();
        while let Some(v) = stack.pop() {
            if !closure.insert(v) {
                continue;
            }
            for e in self.children_of(v) {
                if self.nodes.contains(&e.child) && !closure.contains(&e.child) {
                    stack.push(e.child);
                }
            }
        }
        let mut local: BTreeMap<RecordId, f64> = closure
            .iter()
            .filter_map(|id| scores.get(id).map(|&s| (*id, s)))
            .collect();
        let report = self.refresh_impl(&mut local, mode, REFRESH_BLEND, Some(&closure));
        (local, report)
    }

    fn refresh_impl(
        &self,
        scores: &mut BTreeMap<RecordId, f64>,
        mode: AggregationMode,
        blend: f64,
        allowed: Option<&BTreeSet<RecordId>>,
    ) -> RefreshReport {
        let info = self.levels(allowed);
        let counts = self.path_counts_from(&info.depth, allowed);
        let mut order: Vec<RecordId> = info.depth.keys().copied().collect();
        order.sort_by_key(|id| (info.depth[id], *id));

        let mut updated = 0;
        for &u in &order {
            // Leaves-first order means child scores seen here already carry
            // any update made within this pass.
            match self.aggregate(u, scores, &counts, mode, allowed) {
                Err(_) => continue,
                Ok(agg) => {
                    let new = match scores.get(&u) {
                        Some(&prev) => (1.0 - blend) * prev + blend * agg,
                        None => agg,
                    }
                    .clamp(-1.0, 1.0);
                    scores.insert(u, new);
                    updated += 1;
                }
            }
        }
        RefreshReport {
            updated,
            cycle_detected: info.cycle_detected,
            dangling: info.dangling,
            max_depth: level_count(&info.depth),
            mode: mode.wire_name().to_string(),
        }
    }

    /// Brute-force mean of leaf values over every root-to-leaf path under
    /// `node`. Independent oracle for the path-aggregation recursion.
    pub fn leaf_mean_oracle(
        &self,
        node: RecordId,
        leaf_values: &BTreeMap<RecordId, f64>,
    ) -> Result<f64, LineageError> {
        let mut on_path: BTreeSet<RecordId> = BTreeSet::new();
        let mut sum = 0.0;
        let mut paths = 0u64;
        self.walk_paths(node, leaf_values, &mut on_path, &mut sum, &mut paths)?;
        Ok(sum / paths as f64)
    }

    fn walk_paths(
        &self,
        node: RecordId,
        leaf_values: &BTreeMap<RecordId, f64>,
        on_path: &mut BTreeSet<RecordId>,
        sum: &mut f64,
        paths: &mut u64,
    ) -> Result<(), LineageError> {
        if !on_path.insert(node) {
            return Err(LineageError::CycleInSubtree(node));
        }
        let children: Vec<RecordId> = self
            .children_of(node)
            .iter()
            .filter(|e| self.nodes.contains(&e.child))
            .map(|e| e.child)
            .collect();
        if children.is_empty() {
            let v = leaf_values
                .get(&node)
                .ok_or(LineageError::MissingLeafValue(node))?;
            *sum += v;
            *paths += 1;
        } else {
            for c in children {
                self.walk_paths(c, leaf_values, on_path, sum, paths)?;
            }
        }
        on_path.remove(&node);
        Ok(())
    }
}

fn level_count(depth: &BTreeMap<RecordId, u32>) -> usize {
    depth.values().max().map_or(0, |&d| d as usize + 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn id(n: u64) -> RecordId {
        RecordId(n)
    }

    fn graph_with(edges: &[(u64, u64, f64)]) -> LineageGraph {
        let mut g = LineageGraph::new();
        for &(p, c, d) in edges {
            g.register_node(id(p));
            g.register_node(id(c));
            g.add_edge(id(p), id(c), d).unwrap();
        }
        g
    }

    #[test]
    fn clamp_difficulty_range() {
        assert_eq!(clamp_difficulty(Some(2.0)), 1.33);
        assert_eq!(clamp_difficulty(Some(0.1)), 0.75);
        assert_eq!(clamp_difficulty(Some(1.0)), 1.0);
        assert_eq!(clamp_difficulty(None), 1.0);
        assert_eq!(clamp_difficulty(Some(f64::NAN)), 1.0);
    }

    #[test]
    fn phi_examples() {
        assert_eq!(phi(0.5, 1.0), 0.5);
        assert_eq!(phi(1.0, 0.75), 1.0); // 1.0 / 0.75 clips back to 1.0
        assert!((phi(-0.6, 1.2) - (-0.5)).abs() < 1e-15);
    }

    #[test]
    fn add_edge_rejects_self_loops_and_duplicates() {
        let mut g = LineageGraph::new();
        g.register_node(id(1));
        g.register_node(id(2));
        assert_eq!(
            g.add_edge(id(1), id(1), 1.0),
            Err(LineageError::SelfLoop(id(1)))
        );
        g.add_edge(id(1), id(2), 1.1).unwrap();
        assert_eq!(g.edge_count(), 1);
        assert_eq!(
            g.add_edge(id(1), id(2), 1.1),
            Err(LineageError::DuplicateEdge(id(1), id(2)))
        );
    }

    #[test]
    fn levels_on_a_chain() {
        let g = graph_with(&[(1, 2, 1.0), (2, 3, 1.0)]);
        let (depth, report) = g.compute_levels();
        assert_eq!(depth[&id(3)], 0);
        assert_eq!(depth[&id(2)], 1);
        assert_eq!(depth[&id(1)], 2);
        assert_eq!(report.cycle_detected, 0);
        assert_eq!(report.dangling, 0);
        assert_eq!(report.max_depth, 3);
    }

    #[test]
    fn cycle_freezes_and_counts() {
        let g = graph_with(&[(1, 2, 1.0), (2, 1, 1.0)]);
        let (depth, report) = g.compute_levels();
        assert!(report.cycle_detected >= 1);
        assert!(depth.contains_key(&id(1)) && depth.contains_key(&id(2)));
    }

    #[test]
    fn dangling_child_leaves_parent_a_leaf() {
        let mut g = LineageGraph::new();
        g.register_node(id(1));
        g.add_edge(id(1), id(99), 1.0).unwrap(); // 99 never materializes
        let (depth, report) = g.compute_levels();
        assert_eq!(report.dangling, 1);
        assert_eq!(depth.get(&id(1)), Some(&0));
    }

    #[test]
    fn path_counts_star_skew_and_diamond() {
        let star = graph_with(&[(1, 2, 1.0), (1, 3, 1.0), (1, 4, 1.0)]);
        assert_eq!(star.subtree_path_counts()[&id(1)], 3);

        let skew = graph_with(&[
            (1, 2, 1.0),
            (1, 3, 1.0),
            (2, 4, 1.0),
            (2, 5, 1.0),
            (2, 6, 1.0),
            (3, 7, 1.0),
        ]);
        let s = skew.subtree_path_counts();
        assert_eq!(s[&id(2)], 3);
        assert_eq!(s[&id(3)], 1);
        assert_eq!(s[&id(1)], 4);

        let diamond = graph_with(&[(1, 2, 1.0), (1, 3, 1.0), (2, 4, 1.0), (3, 4, 1.0)]);
        assert_eq!(diamond.subtree_path_counts()[&id(1)], 2);
    }

    #[test]
    fn softmax_mode_interpolates_between_the_aggregators() {
        // Skewed subtrees: child 2 carries 3 leaves, child 3 one leaf.
        let g = graph_with(&[(1, 2, 1.0), (1, 3, 1.0), (2, 4, 1.0), (2, 5, 1.0), (2, 6, 1.0)]);
        let base: BTreeMap<_, _> = [(id(2), 1.0), (id(3), 0.0)].into();
        let root_under = |mode| {
            let mut scores = base.clone();
            g.refresh_pass_with_blend(&mut scores, mode, 1.0);
            scores[&id(1)]
        };
        let child = root_under(AggregationMode::Child);
        let path = root_under(AggregationMode::Path);
        // A huge temperature flattens the weights toward the child mean; a
        // tiny one concentrates on the largest subtree.
        let hot = root_under(AggregationMode::PathSoftmax { temperature: 1e9 });
        let cold = root_under(AggregationMode::PathSoftmax { temperature: 1e-9 });
        assert!((hot - child).abs() < 1e-9, "hot {hot} vs child {child}");
        assert!(cold > path, "cold {cold} should exceed path {path}");
        assert!((cold - 1.0).abs() < 1e-9);
    }

    #[test]
    fn child_agg_examples() {
        let g = graph_with(&[(1, 2, 1.0), (1, 3, 1.0)]);
        let scores: BTreeMap<_, _> = [(id(2), 0.2), (id(3), 0.6)].into();
        assert!((g.child_agg(id(1), &scores).unwrap() - 0.4).abs() < 1e-15);

        let one: BTreeMap<_, _> = [(id(2), 0.2)].into();
        assert!((g.child_agg(id(1), &one).unwrap() - 0.2).abs() < 1e-15);

        let none = BTreeMap::new();
        assert_eq!(
            g.child_agg(id(1), &none),
            Err(LineageError::NoScoredChildren(id(1)))
        );
    }

    #[test]
    fn path_agg_weights_by_subtree_size() {
        // Child 2 carries a 3-leaf subtree, child 3 is a single leaf:
        // weights 3/4 and 1/4; with values 1.0 and 0.0 the mean is 0.75.
        let g = graph_with(&[
            (1, 2, 1.0),
            (1, 3, 1.0),
            (2, 4, 1.0),
            (2, 5, 1.0),
            (2, 6, 1.0),
        ]);
        let counts = g.subtree_path_counts();
        let scores: BTreeMap<_, _> = [(id(2), 1.0), (id(3), 0.0)].into();
        assert!((g.path_agg(id(1), &scores, &counts).unwrap() - 0.75).abs() < 1e-15);

        // Equal subtree sizes reduce to the unweighted mean.
        let balanced = graph_with(&[(1, 2, 1.0), (1, 3, 1.0)]);
        let counts = balanced.subtree_path_counts();
        let scores: BTreeMap<_, _> = [(id(2), 0.9), (id(3), -0.3)].into();
        assert_eq!(
            balanced.path_agg(id(1), &scores, &counts).unwrap(),
            balanced.child_agg(id(1), &scores).unwrap()
        );

        // A single scored child gets weight one regardless of counts.
        let scores: BTreeMap<_, _> = [(id(2), 0.37)].into();
        let g2 = graph_with(&[(1, 2, 1.0), (1, 3, 1.0), (2, 4, 1.0), (2, 5, 1.0)]);
        let counts = g2.subtree_path_counts();
        assert!((g2.path_agg(id(1), &scores, &counts).unwrap() - 0.37).abs() < 1e-15);
    }

    #[test]
    fn refresh_blends_with_previous_value() {
        let g = graph_with(&[(1, 2, 1.0)]);
        let mut scores: BTreeMap<_, _> = [(id(1), 0.2), (id(2), 0.6)].into();
        let report = g.refresh_pass(&mut scores, AggregationMode::Child);
        assert!((scores[&id(1)] - 0.4).abs() < 1e-15);
        assert_eq!(report.updated, 1);

        // A matching aggregate is a fixed point.
        let mut scores: BTreeMap<_, _> = [(id(1), 0.6), (id(2), 0.6)].into();
        g.refresh_pass(&mut scores, AggregationMode::Child);
        assert!((scores[&id(1)] - 0.6).abs() < 1e-15);

        // Clip is a no-op on interior results.
        let mut scores: BTreeMap<_, _> = [(id(1), 1.0), (id(2), 1.0)].into();
        g.refresh_pass(&mut scores, AggregationMode::Child);
        assert_eq!(scores[&id(1)], 1.0);
    }

    #[test]
    fn refresh_gives_unscored_parents_the_bare_aggregate() {
        let g = graph_with(&[(1, 2, 1.0)]);
        let mut scores: BTreeMap<_, _> = [(id(2), 0.6)].into();
        g.refresh_pass(&mut scores, AggregationMode::Child);
        assert!((scores[&id(1)] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn refresh_prefers_values_updated_in_the_same_pass() {
        // Chain 1 -> 2 -> 3: node 2 is refreshed from 3 first, then node 1
        // must see node 2's refreshed value, not its stale one.
        let g = graph_with(&[(1, 2, 1.0), (2, 3, 1.0)]);
        let mut scores: BTreeMap<_, _> = [(id(1), 0.0), (id(2), 0.0), (id(3), 1.0)].into();
        g.refresh_pass(&mut scores, AggregationMode::Child);
        assert!((scores[&id(2)] - 0.5).abs() < 1e-15);
        assert!((scores[&id(1)] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn refresh_targets_matches_full_pass_on_closure() {
        let g = graph_with(&[
            (1, 2, 1.1),
            (1, 3, 0.9),
            (2, 4, 1.2),
            (5, 6, 1.0), // disjoint component outside the closure
        ]);
        let base: BTreeMap<_, _> = [
            (id(1), 0.1),
            (id(2), -0.4),
            (id(3), 0.8),
            (id(4), 0.5),
            (id(5), 0.2),
            (id(6), -0.9),
        ]
        .into();
        let mut full = base.clone();
        g.refresh_pass(&mut full, AggregationMode::Path);
        let targets: BTreeSet<_> = [id(1)].into();
        let (targeted, _) = g.refresh_targets(&base, AggregationMode::Path, &targets);
        assert_eq!(targeted[&id(1)], full[&id(1)]);
        assert_eq!(targeted[&id(2)], full[&id(2)]);
        // Outside the closure, the targeted pass computes nothing.
        assert!(!targeted.contains_key(&id(5)));
    }

    #[test]
    fn leaf_mean_oracle_examples() {
        let g = graph_with(&[(1, 2, 1.0), (1, 3, 1.0), (1, 4, 1.0), (1, 5, 1.0)]);
        let leaves: BTreeMap<_, _> =
            [(id(2), 1.0), (id(3), 0.0), (id(4), 0.0), (id(5), 1.0)].into();
        assert!((g.leaf_mean_oracle(id(1), &leaves).unwrap() - 0.5).abs() < 1e-15);

        // Skewed (3,1) with child means (1.0, 0.0) gives 0.75.
        let skew = graph_with(&[
            (1, 2, 1.0),
            (1, 3, 1.0),
            (2, 4, 1.0),
            (2, 5, 1.0),
            (2, 6, 1.0),
        ]);
        let leaves: BTreeMap<_, _> =
            [(id(4), 1.0), (id(5), 1.0), (id(6), 1.0), (id(3), 0.0)].into();
        assert!((skew.leaf_mean_oracle(id(1), &leaves).unwrap() - 0.75).abs() < 1e-15);

        let single = graph_with(&[(1, 2, 1.0)]);
        let leaves: BTreeMap<_, _> = [(id(2), -0.25)].into();
        assert_eq!(single.leaf_mean_oracle(id(1), &leaves).unwrap(), -0.25);

        let cyc = graph_with(&[(1, 2, 1.0), (2, 1, 1.0)]);
        assert!(matches!(
            cyc.leaf_mean_oracle(id(1), &BTreeMap::new()),
            Err(LineageError::CycleInSubtree(_))
        ));
    }

    #[test]
    fn export_emits_one_edge_per_line() {
        let g = graph_with(&[(1, 2, 1.1), (1, 3, 0.9), (2, 4, 1.0)]);
        let mut bytes = Vec::new();
        g.export_jsonl(&mut bytes).unwrap();
        let text = String::from_utf8(bytes).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], "{\"parent\":1,\"child\":2,\"d\":1.1}");
        let v: serde_json::Value = serde_json::from_str(lines[2]).unwrap();
        assert_eq!(v["parent"], 2);
        assert_eq!(v["child"], 4);
    }

    #[test]
    fn report_json_has_pinned_keys() {
        let g = graph_with(&[(1, 2, 1.0)]);
        let mut scores: BTreeMap<_, _> = [(id(2), 0.5)].into();
        let report = g.refresh_pass(&mut scores, AggregationMode::Path);
        let line = report.to_json_line();
        let order = [
            "\"updated\"",
            "\"cycle_detected\"",
            "\"dangling\"",
            "\"max_depth\"",
            "\"mode\"",
        ];
        let mut last = 0;
        for key in order {
            let at = line
                .find(key)
                .unwrap_or_else(|| panic!("missing {key} in {line}"));
            assert!(at >= last, "key {key} out of order in {line}");
            last = at;
        }
        let v: serde_json::Value = serde_json::from_str(&line).unwrap();
        assert_eq!(v["mode"], "path");
        assert_eq!(v.as_object().unwrap().len(), 5);
    }
}
