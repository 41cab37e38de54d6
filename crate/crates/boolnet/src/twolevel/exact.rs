//! Exact minimum-cube covers: Quine–McCluskey prime generation followed by
//! branch-and-bound set covering. Exponential in the input size — intended
//! as a reference for small arities, not as a production path.

use super::{Cover, Cube};
use std::collections::BTreeSet;

/// Implicant over at most 64 inputs: `free` marks dropped positions, `value`
/// holds the required levels elsewhere (input j at bit j, matching packed
/// pattern rows).
#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
struct Imp {
    free: u64,
    value: u64,
}

fn arity_mask(arity: usize) -> u64 {
    if arity == 64 {
        u64::MAX
    } else {
        (1u64 << arity) - 1
    }
}

/// Minimum-size cover of the ON set, with don't-cares available for merging
/// but not required to be covered. Minterms are packed rows (input j at
/// bit j). The returned cover has the fewest possible cubes; among equals
/// the witness is the first found in a fixed search order.
pub fn minimize_exact(arity: usize, on: &[u64], dc: &[u64]) -> Cover {
    assert!(arity <= 20, "exact minimization is for small functions");
    let mask_all = arity_mask(arity);
    let mut on: Vec<u64> = on.iter().map(|m| m & mask_all).collect();
    on.sort_unstable();
    on.dedup();
    if on.is_empty() {
        return Cover::new(arity);
    }
    let mut care: BTreeSet<Imp> = on.iter().map(|&m| Imp { free: 0, value: m }).collect();
    care.extend(dc.iter().map(|&m| Imp { free: 0, value: m & mask_all }));

    // Level-by-level merging: two implicants with the same free mask whose
    // values differ in one bit combine; anything never merged is prime.
    let mut primes: Vec<Imp> = Vec::new();
    let mut current = care;
    while !current.is_empty() {
        let mut next: BTreeSet<Imp> = BTreeSet::new();
        let mut merged: BTreeSet<Imp> = BTreeSet::new();
        for &a in &current {
            for bit in 0..arity {
                let b = 1u64 << bit;
                if a.free & b != 0 || a.value & b != 0 {
                    continue;
                }
                let partner = Imp { free: a.free, value: a.value | b };
                if current.contains(&partner) {
                    next.insert(Imp { free: a.free | b, value: a.value });
                    merged.insert(a);
                    merged.insert(partner);
                }
            }
        }
        primes.extend(current.difference(&merged));
        current = next;
    }

    // Coverage bitsets over ON positions; primes covering nothing required
    // (pure don't-care primes) drop out.
    let words = on.len().div_ceil(64);
    let mut cover_sets: Vec<Vec<u64>> = Vec::new();
    let mut kept_primes: Vec<Imp> = Vec::new();
    for p in primes {
        let pmask = mask_all & !p.free;
        let mut set = vec![0u64; words];
        let mut any = false;
        for (i, &m) in on.iter().enumerate() {
            if m & pmask == p.value {
                set[i / 64] |= 1 << (i % 64);
                any = true;
            }
        }
        if any {
            kept_primes.push(p);
            cover_sets.push(set);
        }
    }

    // Candidate primes per ON position, for branching.
    let mut by_pos: Vec<Vec<usize>> = vec![Vec::new(); on.len()];
    for (pi, set) in cover_sets.iter().enumerate() {
        for (i, row) in by_pos.iter_mut().enumerate() {
            if set[i / 64] >> (i % 64) & 1 == 1 {
                row.push(pi);
            }
        }
    }
    let max_cover =
        cover_sets.iter().map(|s| s.iter().map(|w| w.count_ones()).sum::<u32>()).max().unwrap_or(1);

    // Greedy upper bound seeds the branch-and-bound.
    let full: Vec<u64> = {
        let mut v = vec![u64::MAX; words];
        let tail = on.len() % 64;
        if tail != 0 {
            v[words - 1] = (1u64 << tail) - 1;
        }
        v
    };
    let mut best: Vec<usize> = {
        let mut chosen = Vec::new();
        let mut uncovered = full.clone();
        while uncovered.iter().any(|&w| w != 0) {
            let (pi, _) = cover_sets
                .iter()
                .enumerate()
                .map(|(pi, s)| {
                    (pi, s.iter().zip(&uncovered).map(|(a, b)| (a & b).count_ones()).sum::<u32>())
                })
                .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
                .unwrap();
            chosen.push(pi);
            for (u, &s) in uncovered.iter_mut().zip(&cover_sets[pi]) {
                *u &= !s;
            }
        }
        chosen
    };

    struct Search<'a> {
        cover_sets: &'a [Vec<u64>],
        by_pos: &'a [Vec<usize>],
        max_cover: u32,
        best: Vec<usize>,
    }
    impl Search<'_> {
        fn run(&mut self, uncovered: &[u64], chosen: &mut Vec<usize>) {
            let remaining: u32 = uncovered.iter().map(|w| w.count_ones()).sum();
            if remaining == 0 {
                if chosen.len() < self.best.len() {
                    self.best = chosen.clone();
                }
                return;
            }
            let lower = remaining.div_ceil(self.max_cover) as usize;
            if chosen.len() + lower >= self.best.len() {
                return;
            }
            // Branch on the position with the fewest covering primes.
            let mut pos = usize::MAX;
            let mut fewest = usize::MAX;
            for (w, &u) in uncovered.iter().enumerate() {
                let mut u = u;
                while u != 0 {
                    let i = w * 64 + u.trailing_zeros() as usize;
                    u &= u - 1;
                    if self.by_pos[i].len() < fewest {
                        fewest = self.by_pos[i].len();
                        pos = i;
                    }
                }
            }
            for &pi in &self.by_pos[pos] {
                let mut next: Vec<u64> =
                    uncovered.iter().zip(&self.cover_sets[pi]).map(|(u, s)| u & !s).collect();
                chosen.push(pi);
                self.run(&mut next, chosen);
                chosen.pop();
            }
        }
    }
    let mut search = Search { cover_sets: &cover_sets, by_pos: &by_pos, max_cover, best };
    search.run(&full, &mut Vec::new());
    best = search.best;

    let cubes = best
        .iter()
        .map(|&pi| {
            let p = kept_primes[pi];
            let pmask = mask_all & !p.free;
            let lits: Vec<(usize, bool)> =
                (0..arity).filter(|&j| pmask >> j & 1 == 1).map(|j| (j, p.value >> j & 1 == 1)).collect();
            Cube::from_literals(arity, &lits)
        })
        .collect();
    let mut cover = Cover::from_cubes(arity, cubes).expect("arity is uniform");
    cover.normalize();
    cover
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extract::Isf;
    use crate::twolevel::{minimize, verify_cover};

    #[test]
    fn sample_function_has_three_cube_minimum() {
        // ON minterms as packed rows for truth-table indices 1,4,5,7 over
        // (a0,a1,a2): rows 4,1,5,7.
        let cover = minimize_exact(3, &[4, 1, 5, 7], &[]);
        assert_eq!(cover.len(), 3);
        for &m in &[4u64, 1, 5, 7] {
            assert!(cover.eval(&[m]));
        }
        for &m in &[0u64, 2, 6, 3] {
            assert!(!cover.eval(&[m]));
        }
    }

    #[test]
    fn parity_needs_all_minterms() {
        let on: Vec<u64> = (0..8u64).filter(|m| m.count_ones() % 2 == 1).collect();
        let cover = minimize_exact(3, &on, &[]);
        assert_eq!(cover.len(), 4);
    }

    #[test]
    fn dont_cares_enable_universal_cube() {
        let cover = minimize_exact(2, &[0], &[1, 2, 3]);
        assert_eq!(cover.len(), 1);
        assert_eq!(cover.cubes()[0].literal_count(), 0);
    }

    #[test]
    fn empty_on_gives_empty_cover() {
        assert!(minimize_exact(4, &[], &[3]).is_empty());
    }

    #[test]
    fn heuristic_stays_near_exact_on_complete_functions() {
        let mut state = 0x9e3779b97f4a7c15u64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            state
        };
        for arity in 3..=5usize {
            for _ in 0..20 {
                let mut on = Vec::new();
                let mut on_set = crate::bits::PatternSet::new(arity);
                let mut off_set = crate::bits::PatternSet::new(arity);
                for m in 0..1u64 << arity {
                    if next() % 2 == 0 {
                        on.push(m);
                        on_set.push_index(m);
                    } else {
                        off_set.push_index(m);
                    }
                }
                if on.is_empty() {
                    continue;
                }
                let exact = minimize_exact(arity, &on, &[]);
                let isf = Isf::from_sets(on_set, off_set).unwrap();
                let heur = minimize(&isf).unwrap();
                assert!(verify_cover(&heur, &isf).unwrap().is_valid());
                assert!(
                    heur.len() >= exact.len(),
                    "heuristic beat the exact minimum: {} < {}",
                    heur.len(),
                    exact.len()
                );
                assert!(
                    heur.len() <= exact.len() + 1,
                    "arity {arity}: heuristic {} vs exact {}",
                    heur.len(),
                    exact.len()
                );
            }
        }
    }
}
