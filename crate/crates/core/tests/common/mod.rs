#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use hiershare::hierarchy::{HierarchyTree, NodeRef, RoundState, UserId};
use hiershare::sharing::{
    distribute, prepare_round, Dealing, EvalPointMode, ShareKind, ShareRecord, ThresholdFactor,
};
use hiershare::{Curve, FieldElement};
use rand::{Rng, RngCore};

pub const TFS: [(u32, u32); 4] = [(1, 3), (1, 2), (2, 3), (1, 1)];

/// Random tree: 1..=fanout level-1 users, then 0..=fanout children per node
/// down to `depth` levels.
pub fn random_tree<R: RngCore>(
    rng: &mut R,
    curve: Curve,
    depth: usize,
    fanout: usize,
) -> HierarchyTree {
    let mut tree = HierarchyTree::with_curve(curve);
    let mut frontier = Vec::new();
    for _ in 0..rng.gen_range(1..=fanout) {
        frontier.push(tree.register(NodeRef::Server, rng).unwrap().id);
    }
    for _ in 1..depth {
        let mut next = Vec::new();
        for parent in frontier {
            for _ in 0..rng.gen_range(0..=fanout) {
                next.push(tree.register(NodeRef::User(parent), rng).unwrap().id);
            }
        }
        frontier = next;
    }
    tree
}

pub fn deal<R: RngCore>(
    tree: &mut HierarchyTree,
    secret: &FieldElement,
    tf: ThresholdFactor,
    mode: EvalPointMode,
    rng: &mut R,
) -> (RoundState, Dealing) {
    let (round, points) = prepare_round(tree, mode, 64, rng).unwrap();
    let dealing = distribute(tree, secret, &round, &points, tf, rng).unwrap();
    (round, dealing)
}

/// A random set that contains exactly `threshold` children of every internal
/// node it reaches, starting from the level-1 users.
pub fn minimal_quorum<R: RngCore>(
    tree: &HierarchyTree,
    shares: &BTreeMap<UserId, ShareRecord>,
    rng: &mut R,
) -> BTreeSet<UserId> {
    let mut chosen = BTreeSet::new();
    let mut stack = vec![NodeRef::Server];
    while let Some(group) = stack.pop() {
        let mut children = tree.active_children(group);
        if children.is_empty() {
            continue;
        }
        rand::seq::SliceRandom::shuffle(children.as_mut_slice(), rng);
        let t = shares[&children[0]].threshold;
        for child in children.into_iter().take(t) {
            chosen.insert(child);
            stack.push(NodeRef::User(child));
        }
    }
    chosen
}

fn to_u64(x: &FieldElement) -> u64 {
    u64::try_from(x.value()).unwrap()
}

/// Whether the secret lies in the span of the coalition's shares, each
/// written as a linear form in the unknowns of the dealing: the value at
/// zero of every group polynomial and their higher coefficients. Works for
/// fields below 2^32.
pub fn secret_in_span(coalition: &[ShareRecord]) -> bool {
    let p = u64::try_from(coalition[0].value.field().modulus()).unwrap();
    let mut index: BTreeMap<(NodeRef, usize), usize> = BTreeMap::new();
    let var = |key: (NodeRef, usize), index: &mut BTreeMap<(NodeRef, usize), usize>| {
        let n = index.len();
        *index.entry(key).or_insert(n)
    };
    let target = var((NodeRef::Server, 0), &mut index);
    let mut rows: Vec<BTreeMap<usize, u64>> = Vec::new();
    for share in coalition {
        let mut row = BTreeMap::new();
        let x = to_u64(&share.eval_point);
        row.insert(var((share.group, 0), &mut index), 1);
        let mut power = 1;
        for h in 1..share.threshold {
            power = power * x % p;
            row.insert(var((share.group, h), &mut index), power);
        }
        if share.kind == ShareKind::Split {
            let own = var((NodeRef::User(share.owner), 0), &mut index);
            row.insert(own, p - 1);
        }
        rows.push(row);
    }
    let width = index.len();
    let dense = |row: &BTreeMap<usize, u64>| {
        let mut v = vec![0u64; width];
        for (k, c) in row {
            v[*k] = *c % p;
        }
        v
    };
    let matrix: Vec<Vec<u64>> = rows.iter().map(dense).collect();
    let mut with_target = matrix.clone();
    let mut unit = vec![0u64; width];
    unit[target] = 1;
    with_target.push(unit);
    rank(matrix, p) == rank(with_target, p)
}

fn pow_mod(mut b: u64, mut e: u64, p: u64) -> u64 {
    let mut r = 1;
    b %= p;
    while e > 0 {
        if e & 1 == 1 {
            r = r * b % p;
        }
        b = b * b % p;
        e >>= 1;
    }
    r
}

fn rank(mut m: Vec<Vec<u64>>, p: u64) -> usize {
    let cols = m.first().map_or(0, Vec::len);
    let mut r = 0;
    for c in 0..cols {
        let Some(pivot) = (r..m.len()).find(|i| m[*i][c] != 0) else {
            continue;
        };
        m.swap(r, pivot);
        let inv = pow_mod(m[r][c], p - 2, p);
        for v in m[r].iter_mut() {
            *v = *v * inv % p;
        }
        for i in 0..m.len() {
            if i != r && m[i][c] != 0 {
                let f = m[i][c];
                let pivot_row = m[r].clone();
                for (v, pv) in m[i].iter_mut().zip(&pivot_row) {
                    *v = (*v + p - f * pv % p) % p;
                }
            }
        }
        r += 1;
    }
    r
}

pub fn tf(n: u32, d: u32) -> ThresholdFactor {
    ThresholdFactor::new(n, d).unwrap()
}

pub fn random_secret<R: Rng>(tree: &HierarchyTree, rng: &mut R) -> FieldElement {
    tree.field().random(rng)
}
