//! And-inverter graphs for multi-level logic.
//!
//! A layer's per-neuron covers become one shared AIG: structural hashing
//! merges identical cubes across neurons as the graph is built, a
//! single-level extraction pass pulls out conjunction pairs shared between
//! gates, and balancing rebuilds associative AND chains for depth.
//! Consecutive layers can be stitched into one stage graph and re-optimized
//! across the boundary. Depth counts AND nodes only; inverters live on
//! edges and are free.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};

use thiserror::Error;

use crate::bits::{self, PatternSet};
use crate::twolevel::Cover;

/// Patterns per simulation block; bounds scratch memory at
/// `node_count * SIM_BLOCK / 8` bytes regardless of the pattern count.
pub const SIM_BLOCK: usize = 4096;

/// Super-gates wider than this are skipped by pair extraction (they still
/// get balanced); keeps the pair table quadratic only in small gates.
const EXTRACT_LEAF_LIMIT: usize = 32;

/// Global cap on enumerated leaf pairs per extraction round.
const EXTRACT_PAIR_BUDGET: usize = 1 << 20;

#[derive(Debug, Error)]
pub enum MultiLevelError {
    #[error("cover arity {found} does not match layer input count {expected}")]
    ArityMismatch { expected: usize, found: usize },
    #[error("pattern width {found} does not match primary input count {expected}")]
    WidthMismatch { expected: usize, found: usize },
    #[error("stage {stage} expects {expected} inputs but is fed {found}")]
    StageBoundary { stage: usize, expected: usize, found: usize },
    #[error("stage list must partition the layer indices in order")]
    StagePartition,
}

/// Edge literal: node index plus a complement bit in the LSB.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct Lit(u32);

impl Lit {
    pub const FALSE: Lit = Lit(0);
    pub const TRUE: Lit = Lit(1);

    pub fn new(node: usize, complement: bool) -> Lit {
        Lit((node as u32) << 1 | complement as u32)
    }

    pub fn node(self) -> usize {
        (self.0 >> 1) as usize
    }

    pub fn is_complement(self) -> bool {
        self.0 & 1 != 0
    }
}

impl std::ops::Not for Lit {
    type Output = Lit;

    fn not(self) -> Lit {
        Lit(self.0 ^ 1)
    }
}

fn map_lit(map: &[Lit], l: Lit) -> Lit {
    let m = map[l.node()];
    if l.is_complement() { !m } else { m }
}

/// And-inverter graph. Node 0 is constant false, nodes `1..=num_inputs`
/// are primary inputs, and the rest are two-input AND nodes whose fanins
/// point strictly downward (topological by construction). No two AND nodes
/// share the same ordered fanin pair while the graph is built through
/// [`Aig::and`].
#[derive(Clone, Debug)]
pub struct Aig {
    num_inputs: usize,
    nodes: Vec<(Lit, Lit)>,
    outputs: Vec<Lit>,
    strash: HashMap<(Lit, Lit), Lit>,
}

impl Aig {
    pub fn new(num_inputs: usize) -> Aig {
        Aig { num_inputs, nodes: Vec::new(), outputs: Vec::new(), strash: HashMap::new() }
    }

    /// Assemble from raw parts, e.g. a parsed netlist. Fanins must point
    /// strictly downward; duplicate or trivial nodes are allowed here and
    /// cleaned up by [`sweep`].
    pub fn from_parts(num_inputs: usize, nodes: Vec<(Lit, Lit)>, outputs: Vec<Lit>) -> Aig {
        let first = 1 + num_inputs;
        for (i, &(a, b)) in nodes.iter().enumerate() {
            assert!(a.node() < first + i && b.node() < first + i, "fanin must precede node");
        }
        for &l in &outputs {
            assert!(l.node() < first + nodes.len(), "dangling output literal");
        }
        let mut strash = HashMap::new();
        for (i, &(a, b)) in nodes.iter().enumerate() {
            let key = if a <= b { (a, b) } else { (b, a) };
            strash.entry(key).or_insert_with(|| Lit::new(first + i, false));
        }
        Aig { num_inputs, nodes, outputs, strash }
    }

    pub fn num_inputs(&self) -> usize {
        self.num_inputs
    }

    /// Number of AND nodes.
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub(crate) fn total(&self) -> usize {
        1 + self.num_inputs + self.nodes.len()
    }

    pub(crate) fn first_and(&self) -> usize {
        1 + self.num_inputs
    }

    pub(crate) fn is_and(&self, node: usize) -> bool {
        node >= self.first_and()
    }

    pub fn input_lit(&self, i: usize) -> Lit {
        assert!(i < self.num_inputs, "input index out of range");
        Lit::new(1 + i, false)
    }

    pub fn outputs(&self) -> &[Lit] {
        &self.outputs
    }

    pub fn push_output(&mut self, l: Lit) {
        assert!(l.node() < self.total(), "dangling output literal");
        self.outputs.push(l);
    }

    pub fn fanins(&self, node: usize) -> (Lit, Lit) {
        self.nodes[node - self.first_and()]
    }

    /// AND with constant folding, trivial rules and structural hashing.
    pub fn and(&mut self, a: Lit, b: Lit) -> Lit {
        let (a, b) = if a <= b { (a, b) } else { (b, a) };
        if a == Lit::FALSE || a == !b {
            return Lit::FALSE;
        }
        if a == Lit::TRUE || a == b {
            return b;
        }
        if let Some(&l) = self.strash.get(&(a, b)) {
            return l;
        }
        let l = Lit::new(self.total(), false);
        self.nodes.push((a, b));
        self.strash.insert((a, b), l);
        l
    }

    pub fn or(&mut self, a: Lit, b: Lit) -> Lit {
        !self.and(!a, !b)
    }

    /// AND of a list, reduced by adjacent pairs; empty list is constant
    /// true.
    pub fn and_many(&mut self, lits: &[Lit]) -> Lit {
        if lits.is_empty() {
            return Lit::TRUE;
        }
        let mut level = lits.to_vec();
        while level.len() > 1 {
            let mut next = Vec::with_capacity(level.len().div_ceil(2));
            for pair in level.chunks(2) {
                next.push(if pair.len() == 2 { self.and(pair[0], pair[1]) } else { pair[0] });
            }
            level = next;
        }
        level[0]
    }

    /// OR of a list via De Morgan; empty list is constant false.
    pub fn or_many(&mut self, lits: &[Lit]) -> Lit {
        let inv: Vec<Lit> = lits.iter().map(|&l| !l).collect();
        !self.and_many(&inv)
    }

    /// AND level per node id; constant and inputs are level 0.
    pub fn levels(&self) -> Vec<usize> {
        let mut lv = vec![0usize; self.total()];
        for (i, &(a, b)) in self.nodes.iter().enumerate() {
            lv[self.first_and() + i] = 1 + lv[a.node()].max(lv[b.node()]);
        }
        lv
    }

    /// Largest AND level among the outputs.
    pub fn depth(&self) -> usize {
        let lv = self.levels();
        self.outputs.iter().map(|l| lv[l.node()]).max().unwrap_or(0)
    }

    /// Evaluate one pattern; the reference semantics for [`Aig::simulate`].
    pub fn eval_single(&self, inputs: &[bool]) -> Vec<bool> {
        assert_eq!(inputs.len(), self.num_inputs, "input width mismatch");
        let mut val = vec![false; self.total()];
        val[1..=self.num_inputs].copy_from_slice(inputs);
        for (i, &(a, b)) in self.nodes.iter().enumerate() {
            let va = val[a.node()] ^ a.is_complement();
            let vb = val[b.node()] ^ b.is_complement();
            val[self.first_and() + i] = va && vb;
        }
        self.outputs.iter().map(|&l| val[l.node()] ^ l.is_complement()).collect()
    }

    /// Bit-parallel evaluation, 64 patterns per word per node, in blocks of
    /// [`SIM_BLOCK`] patterns. Row j of the result holds every output for
    /// input row j.
    pub fn simulate(&self, patterns: &PatternSet) -> Result<PatternSet, MultiLevelError> {
        if patterns.arity() != self.num_inputs {
            return Err(MultiLevelError::WidthMismatch {
                expected: self.num_inputs,
                found: patterns.arity(),
            });
        }
        let mut out = PatternSet::zeros(self.outputs.len(), patterns.len());
        let mut vals: Vec<u64> = Vec::new();
        for start in (0..patterns.len()).step_by(SIM_BLOCK) {
            let count = SIM_BLOCK.min(patterns.len() - start);
            let bw = count.div_ceil(64);
            vals.clear();
            vals.resize(self.total() * bw, 0);
            for r in 0..count {
                let row = patterns.row(start + r);
                for j in 0..self.num_inputs {
                    if bits::get_bit(row, j) {
                        vals[(1 + j) * bw + r / 64] |= 1 << (r % 64);
                    }
                }
            }
            for (i, &(a, b)) in self.nodes.iter().enumerate() {
                let base = (self.first_and() + i) * bw;
                let fa = if a.is_complement() { u64::MAX } else { 0 };
                let fb = if b.is_complement() { u64::MAX } else { 0 };
                for w in 0..bw {
                    let va = vals[a.node() * bw + w] ^ fa;
                    let vb = vals[b.node() * bw + w] ^ fb;
                    vals[base + w] = va & vb;
                }
            }
            for (k, &l) in self.outputs.iter().enumerate() {
                for r in 0..count {
                    let bit = vals[l.node() * bw + r / 64] >> (r % 64) & 1 == 1;
                    out.set_bit(start + r, k, bit ^ l.is_complement());
                }
            }
        }
        Ok(out)
    }

    /// Nodes reachable from the outputs.
    pub(crate) fn reachable(&self) -> Vec<bool> {
        let mut seen = vec![false; self.total()];
        let mut stack: Vec<usize> = Vec::new();
        for &l in &self.outputs {
            if !seen[l.node()] {
                seen[l.node()] = true;
                stack.push(l.node());
            }
        }
        while let Some(n) = stack.pop() {
            if self.is_and(n) {
                let (a, b) = self.fanins(n);
                for m in [a.node(), b.node()] {
                    if !seen[m] {
                        seen[m] = true;
                        stack.push(m);
                    }
                }
            }
        }
        seen
    }

    /// AND nodes that head a super-gate: referenced at least twice,
    /// referenced under complement, or driving an output. Dead nodes head
    /// nothing.
    fn supergate_roots(&self, seen: &[bool]) -> Vec<bool> {
        let mut refs = vec![0u32; self.total()];
        let mut root = vec![false; self.total()];
        for (i, &(a, b)) in self.nodes.iter().enumerate() {
            if !seen[self.first_and() + i] {
                continue;
            }
            for l in [a, b] {
                refs[l.node()] += 1;
                if l.is_complement() {
                    root[l.node()] = true;
                }
            }
        }
        for &l in &self.outputs {
            root[l.node()] = true;
        }
        for n in self.first_and()..self.total() {
            if refs[n] >= 2 {
                root[n] = true;
            }
            if !seen[n] {
                root[n] = false;
            }
        }
        root
    }

    /// Operand literals of the super-gate rooted at `node`: expansion
    /// recurses through uncomplemented single-use AND fanins and stops at
    /// everything else. Sorted and deduplicated; `None` means the gate
    /// contains some x and its complement and is constant false.
    fn supergate_leaves(&self, node: usize, root: &[bool]) -> Option<Vec<Lit>> {
        let mut leaves = Vec::new();
        let mut stack = vec![node];
        while let Some(n) = stack.pop() {
            let (a, b) = self.fanins(n);
            for l in [a, b] {
                if !l.is_complement() && self.is_and(l.node()) && !root[l.node()] {
                    stack.push(l.node());
                } else {
                    leaves.push(l);
                }
            }
        }
        leaves.sort_unstable();
        leaves.dedup();
        if leaves.windows(2).any(|p| p[0] == !p[1]) {
            return None;
        }
        Some(leaves)
    }
}

/// Structural-hash sweep with constant propagation: rebuilds the reachable
/// cone node by node, dropping dead logic, duplicates and trivial ANDs.
pub fn sweep(aig: &Aig) -> Aig {
    let seen = aig.reachable();
    let mut out = Aig::new(aig.num_inputs);
    let mut map = vec![Lit::FALSE; aig.total()];
    for n in 0..=aig.num_inputs {
        map[n] = Lit::new(n, false);
    }
    for n in aig.first_and()..aig.total() {
        if seen[n] {
            let (a, b) = aig.fanins(n);
            map[n] = out.and(map_lit(&map, a), map_lit(&map, b));
        }
    }
    out.outputs = aig.outputs.iter().map(|&l| map_lit(&map, l)).collect();
    out
}

fn node_level(out: &Aig, lvl: &[usize], l: Lit) -> usize {
    if out.is_and(l.node()) { lvl[l.node() - out.first_and()] } else { 0 }
}

fn sync_levels(out: &Aig, lvl: &mut Vec<usize>) {
    while lvl.len() < out.node_count() {
        let (a, b) = out.nodes[lvl.len()];
        let l = 1 + node_level(out, lvl, a).max(node_level(out, lvl, b));
        lvl.push(l);
    }
}

/// Rebuild every AND super-gate height-balanced by merging the two
/// shallowest operands first. Depth never increases; super-gates rebuild
/// with one node per operand pair and shared nodes stay shared, so neither
/// does the node count.
pub fn balance(aig: &Aig) -> Aig {
    let seen = aig.reachable();
    let root = aig.supergate_roots(&seen);
    let mut out = Aig::new(aig.num_inputs);
    let mut lvl: Vec<usize> = Vec::new();
    let mut map = vec![Lit::FALSE; aig.total()];
    for n in 0..=aig.num_inputs {
        map[n] = Lit::new(n, false);
    }
    for n in aig.first_and()..aig.total() {
        if !root[n] {
            continue;
        }
        let Some(leaves) = aig.supergate_leaves(n, &root) else {
            map[n] = Lit::FALSE;
            continue;
        };
        let mut heap: BinaryHeap<Reverse<(usize, Lit)>> = leaves
            .iter()
            .map(|&l| {
                let m = map_lit(&map, l);
                Reverse((node_level(&out, &lvl, m), m))
            })
            .collect();
        while heap.len() > 1 {
            let Reverse((_, x)) = heap.pop().unwrap();
            let Reverse((_, y)) = heap.pop().unwrap();
            let z = out.and(x, y);
            sync_levels(&out, &mut lvl);
            heap.push(Reverse((node_level(&out, &lvl, z), z)));
        }
        map[n] = heap.pop().map_or(Lit::TRUE, |Reverse((_, l))| l);
    }
    out.outputs = aig.outputs.iter().map(|&l| map_lit(&map, l)).collect();
    out
}

/// One round of single-level extraction: conjunction pairs shared by at
/// least two super-gates are built once and substituted into the operand
/// lists before the gates are rebuilt. Candidate pairs are applied most
/// shared first; an operand joins at most one extracted pair.
fn extract_pairs(aig: &Aig) -> Aig {
    let seen = aig.reachable();
    let root = aig.supergate_roots(&seen);
    let mut gates: Vec<(usize, Option<Vec<Lit>>)> = Vec::new();
    for n in aig.first_and()..aig.total() {
        if root[n] {
            gates.push((n, aig.supergate_leaves(n, &root)));
        }
    }

    let mut shared: HashMap<(Lit, Lit), Vec<u32>> = HashMap::new();
    let mut budget = EXTRACT_PAIR_BUDGET;
    for (gi, (_, leaves)) in gates.iter().enumerate() {
        let Some(leaves) = leaves else { continue };
        let pairs = leaves.len() * (leaves.len() - 1) / 2;
        if leaves.len() > EXTRACT_LEAF_LIMIT || pairs > budget {
            continue;
        }
        budget -= pairs;
        for i in 0..leaves.len() {
            for j in i + 1..leaves.len() {
                shared.entry((leaves[i], leaves[j])).or_default().push(gi as u32);
            }
        }
    }
    let mut cands: Vec<((Lit, Lit), Vec<u32>)> =
        shared.into_iter().filter(|(_, gs)| gs.len() >= 2).collect();
    cands.sort_unstable_by(|a, b| b.1.len().cmp(&a.1.len()).then(a.0.cmp(&b.0)));

    let mut consumed: Vec<Vec<bool>> =
        gates.iter().map(|(_, l)| vec![false; l.as_ref().map_or(0, Vec::len)]).collect();
    let mut adds: Vec<Vec<(Lit, Lit)>> = vec![Vec::new(); gates.len()];
    for (key, gs) in &cands {
        let mut placed: Vec<(usize, usize, usize)> = Vec::new();
        for &gi in gs {
            let gi = gi as usize;
            let leaves = gates[gi].1.as_ref().unwrap();
            let i = leaves.binary_search(&key.0).unwrap();
            let j = leaves.binary_search(&key.1).unwrap();
            if !consumed[gi][i] && !consumed[gi][j] {
                placed.push((gi, i, j));
            }
        }
        if placed.len() < 2 {
            continue;
        }
        for (gi, i, j) in placed {
            consumed[gi][i] = true;
            consumed[gi][j] = true;
            adds[gi].push(*key);
        }
    }

    let mut out = Aig::new(aig.num_inputs);
    let mut map = vec![Lit::FALSE; aig.total()];
    for n in 0..=aig.num_inputs {
        map[n] = Lit::new(n, false);
    }
    let mut pair_lits: HashMap<(Lit, Lit), Lit> = HashMap::new();
    for (gi, (n, leaves)) in gates.iter().enumerate() {
        let Some(leaves) = leaves else {
            map[*n] = Lit::FALSE;
            continue;
        };
        let mut ops: Vec<Lit> = Vec::with_capacity(leaves.len());
        for (i, &l) in leaves.iter().enumerate() {
            if !consumed[gi][i] {
                ops.push(map_lit(&map, l));
            }
        }
        for key in &adds[gi] {
            // First use is at the topologically earliest gate containing
            // the pair, so both members are already mapped.
            let l = match pair_lits.get(key) {
                Some(&l) => l,
                None => {
                    let l = out.and(map_lit(&map, key.0), map_lit(&map, key.1));
                    pair_lits.insert(*key, l);
                    l
                }
            };
            ops.push(l);
        }
        ops.sort_unstable();
        map[*n] = out.and_many(&ops);
    }
    out.outputs = aig.outputs.iter().map(|&l| map_lit(&map, l)).collect();
    out
}

/// Layer cleanup: hash sweep with constant propagation, one round of
/// shared-pair extraction, then balance. Keeps whichever of the extracted
/// and plain rebuilds is smaller, so the result never has more nodes than
/// the input.
pub fn optimize_layer(aig: &Aig) -> Aig {
    let swept = sweep(aig);
    let base = balance(&swept);
    let cand = balance(&extract_pairs(&swept));
    if cand.node_count() <= base.node_count() { cand } else { base }
}

/// Feed the outputs of `first` into the inputs of `second`.
pub fn compose(first: &Aig, second: &Aig) -> Result<Aig, MultiLevelError> {
    if second.num_inputs != first.outputs.len() {
        return Err(MultiLevelError::WidthMismatch {
            expected: first.outputs.len(),
            found: second.num_inputs,
        });
    }
    let mut out = sweep(first);
    let mut map = vec![Lit::FALSE; second.total()];
    for i in 0..second.num_inputs {
        map[1 + i] = out.outputs[i];
    }
    out.outputs.clear();
    for n in second.first_and()..second.total() {
        let (a, b) = second.fanins(n);
        map[n] = out.and(map_lit(&map, a), map_lit(&map, b));
    }
    out.outputs = second.outputs.iter().map(|&l| map_lit(&map, l)).collect();
    Ok(out)
}

/// Build one shared AIG for a layer of per-neuron covers: cube AND trees
/// feed one OR per neuron. Hashing builds each distinct cube once, so
/// cubes shared across neurons cost a single tree.
pub fn cover_to_aig(num_inputs: usize, covers: &[Cover]) -> Result<Aig, MultiLevelError> {
    let mut aig = Aig::new(num_inputs);
    for cover in covers {
        if cover.arity() != num_inputs {
            return Err(MultiLevelError::ArityMismatch {
                expected: num_inputs,
                found: cover.arity(),
            });
        }
        let mut cube_lits = Vec::with_capacity(cover.len());
        for cube in cover.cubes() {
            let lits: Vec<Lit> = cube
                .literals()
                .map(|(j, positive)| {
                    let l = aig.input_lit(j);
                    if positive { l } else { !l }
                })
                .collect();
            cube_lits.push(aig.and_many(&lits));
        }
        let o = aig.or_many(&cube_lits);
        aig.push_output(o);
    }
    Ok(aig)
}

/// One macro-pipeline stage: a contiguous group of layers fused into a
/// single graph.
#[derive(Clone, Debug)]
pub struct Stage {
    pub layers: Vec<usize>,
    pub aig: Aig,
    pub depth: usize,
    pub and_nodes: usize,
}

#[derive(Clone, Debug)]
pub struct StagePlan {
    pub stages: Vec<Stage>,
}

/// Fuse each stage's consecutive layer graphs into one AIG. `stages` must
/// partition `0..layer_aigs.len()` in order; multi-layer stages are
/// re-optimized across the layer boundary, single-layer stages pass
/// through unchanged.
pub fn stitch_network(layer_aigs: &[Aig], stages: &[Vec<usize>]) -> Result<StagePlan, MultiLevelError> {
    let flat: Vec<usize> = stages.iter().flatten().copied().collect();
    if flat != (0..layer_aigs.len()).collect::<Vec<_>>() || stages.iter().any(Vec::is_empty) {
        return Err(MultiLevelError::StagePartition);
    }
    let mut plan = StagePlan { stages: Vec::new() };
    for group in stages {
        let stage_idx = plan.stages.len();
        let mut aig = layer_aigs[group[0]].clone();
        if let Some(prev) = plan.stages.last() {
            let fed = prev.aig.outputs().len();
            if aig.num_inputs() != fed {
                return Err(MultiLevelError::StageBoundary {
                    stage: stage_idx,
                    expected: aig.num_inputs(),
                    found: fed,
                });
            }
        }
        for &li in &group[1..] {
            aig = compose(&aig, &layer_aigs[li]).map_err(|e| match e {
                MultiLevelError::WidthMismatch { expected, found } => {
                    MultiLevelError::StageBoundary { stage: stage_idx, expected: found, found: expected }
                }
                other => other,
            })?;
        }
        if group.len() > 1 {
            aig = optimize_layer(&aig);
        }
        plan.stages.push(Stage {
            layers: group.clone(),
            depth: aig.depth(),
            and_nodes: aig.node_count(),
            aig,
        });
    }
    Ok(plan)
}
