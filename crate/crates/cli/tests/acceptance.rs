//! Acceptance run: one line per criterion, exit status 1 if any fails.
//!
//! Expected values come from oracles written here: u64 arithmetic for the
//! toy curve and small fields, brute-force enumeration for secrecy, and a
//! rank test over the dealing's unknowns for adversary knowledge.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use hiershare::algebra::Field;
use hiershare::curve::CurvePoint;
use hiershare::hierarchy::{HierarchyTree, NodeRef, UserId};
use hiershare::proactive::{
    renewal_round, verify_renewal, EpochClock, Interference, RenewalBundle, TamperKind,
    VerdictOutcome,
};
use hiershare::sharing::{
    distribute, prepare_round, reconstruct, recover_group_value, EvalPointMode, ShareKind,
    ShareRecord, SharingError, ThresholdFactor,
};
use hiershare::simnet::adversary::{AdversaryConfig, Budget, Strategy};
use hiershare::simnet::{FieldMode, NodeSpec, RoundPolicy, SimConfig, World};
use hiershare::{Curve, CurveParams, FieldElement};
use hiershare_cli::runner::{self, RunOptions};
use num_bigint::BigUint;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

type Outcome = Result<String, String>;
type Criterion = fn() -> Outcome;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

const TFS: [(u32, u32); 4] = [(1, 3), (1, 2), (2, 3), (1, 1)];

fn tf(num: u32, den: u32) -> ThresholdFactor {
    ThresholdFactor::new(num, den).unwrap()
}

/// `ceil(num * n / den)` in integers.
fn quorum(num: u32, den: u32, n: usize) -> usize {
    (num as usize * n).div_ceil(den as usize)
}

fn small(x: &FieldElement) -> u64 {
    u64::try_from(x.value()).unwrap()
}

fn uid(n: u64) -> UserId {
    UserId::new(n).unwrap()
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

fn inv_mod(a: u64, p: u64) -> u64 {
    pow_mod(a, p - 2, p)
}

/// Value at zero of the polynomial through `points`, modulo `p`.
fn lagrange_at_zero(points: &[(u64, u64)], p: u64) -> u64 {
    let mut acc = 0;
    for (i, (xi, yi)) in points.iter().enumerate() {
        let mut num = 1;
        let mut den = 1;
        for (j, (xj, _)) in points.iter().enumerate() {
            if i != j {
                num = num * (p - xj % p) % p;
                den = den * ((xi + p - xj % p) % p) % p;
            }
        }
        acc = (acc + yi * num % p * inv_mod(den, p)) % p;
    }
    acc
}

fn subsets<T: Copy>(items: &[T], size: usize) -> Vec<Vec<T>> {
    if size == 0 {
        return vec![Vec::new()];
    }
    if items.len() < size {
        return Vec::new();
    }
    let mut out = Vec::new();
    for (i, first) in items.iter().enumerate() {
        for mut rest in subsets(&items[i + 1..], size - 1) {
            rest.insert(0, *first);
            out.push(rest);
        }
    }
    out
}

fn descendants(tree: &HierarchyTree, of: UserId, out: &mut BTreeSet<UserId>) {
    for child in tree.active_children(NodeRef::User(of)) {
        out.insert(child);
        descendants(tree, child, out);
    }
}

/// Random hierarchy: 1..=fanout level-1 users, then 0..=fanout children per
/// node, `depth` levels in all.
fn random_tree(rng: &mut ChaCha20Rng, curve: Curve, depth: usize, fanout: usize) -> HierarchyTree {
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

/// Exactly `quorum` children of every group reached from the server.
fn minimal_quorum(tree: &HierarchyTree, tf: (u32, u32), rng: &mut ChaCha20Rng) -> BTreeSet<UserId> {
    let mut chosen = BTreeSet::new();
    let mut stack = vec![NodeRef::Server];
    while let Some(group) = stack.pop() {
        let mut children = tree.active_children(group);
        if children.is_empty() {
            continue;
        }
        let t = quorum(tf.0, tf.1, children.len());
        children.shuffle(rng);
        for child in children.into_iter().take(t) {
            chosen.insert(child);
            stack.push(NodeRef::User(child));
        }
    }
    chosen
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut users = 0;
    for seed in 0..200u64 {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let depth = rng.gen_range(1..=4);
        let fanout = rng.gen_range(1..=6);
        let (num, den) = TFS[rng.gen_range(0..TFS.len())];
        let mut tree = random_tree(&mut rng, Curve::small(), depth, fanout);
        users += tree.len();
        let secret = tree.field().random(&mut rng);
        let (round, points) =
            prepare_round(&mut tree, EvalPointMode::RoundKey, 64, &mut rng).unwrap();
        let dealing = distribute(&tree, &secret, &round, &points, tf(num, den), &mut rng).unwrap();
        let all = tree.active_users();
        let got = reconstruct(&tree, &dealing.shares, &all).unwrap();
        ensure!(
            got == secret,
            "seed {seed}: all users recovered {got}, dealt {secret}"
        );
        let minimal = minimal_quorum(&tree, (num, den), &mut rng);
        let got = reconstruct(&tree, &dealing.shares, &minimal).unwrap();
        ensure!(
            got == secret,
            "seed {seed}: minimal quorum recovered {got}, dealt {secret}"
        );
    }
    let elapsed = start.elapsed();
    ensure!(
        elapsed < Duration::from_secs(10),
        "took {elapsed:?}, limit 10 s"
    );
    Ok(format!(
        "200 trees, {users} users, all exact, {elapsed:.2?}"
    ))
}

/// Fixed tree over F_31: server -> U1..U3, U1 -> U4..U7, U2 -> U8,U9,
/// U4 -> U10..U12. Threshold factor 2/3.
fn f31_tree() -> (HierarchyTree, BTreeMap<NodeRef, Vec<UserId>>) {
    let mut rng = ChaCha20Rng::seed_from_u64(31);
    let mut tree = HierarchyTree::without_curve(Field::new(31u8.into()).unwrap());
    let shape: [(NodeRef, usize); 4] = [
        (NodeRef::Server, 3),
        (NodeRef::User(uid(1)), 4),
        (NodeRef::User(uid(2)), 2),
        (NodeRef::User(uid(4)), 3),
    ];
    let mut groups = BTreeMap::new();
    for (parent, count) in shape {
        let ids = (0..count)
            .map(|_| tree.register(parent, &mut rng).unwrap().id)
            .collect();
        groups.insert(parent, ids);
    }
    (tree, groups)
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let p = 31u64;
    let (tf_num, tf_den) = (2, 3);
    let (mut tree, groups) = f31_tree();
    let mut quorums = 0;
    let mut sub_quorums = 0;
    for seed in 0..3u64 {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let secret = tree.field().element(rng.gen_range(0..p));
        let (round, points) =
            prepare_round(&mut tree, EvalPointMode::UserId, 64, &mut rng).unwrap();
        let dealing = distribute(
            &tree,
            &secret,
            &round,
            &points,
            tf(tf_num, tf_den),
            &mut rng,
        )
        .unwrap();
        let dealer = &dealing.dealer;
        // Full evaluation q_group(x) of each member: its share plus, for an
        // internal member, the part the server kept.
        let eval = |id: &UserId| {
            let share = &dealing.shares[id];
            let mut y = small(&share.value);
            if share.kind == ShareKind::Split {
                y = (y + small(&dealer.retained[id])) % p;
            }
            (small(&share.eval_point), y)
        };
        for (group, members) in &groups {
            let t = quorum(tf_num, tf_den, members.len());
            let expected = small(&dealer.polynomials[group].coefficients()[0]);
            ensure!(
                dealing.shares[&members[0]].threshold == t,
                "{group}: threshold {} != {t}",
                dealing.shares[&members[0]].threshold
            );
            for q in subsets(members, t) {
                let pts: Vec<_> = q.iter().map(eval).collect();
                ensure!(
                    lagrange_at_zero(&pts, p) == expected,
                    "{group}: quorum {q:?} interpolates wrong"
                );
                let mut participating: BTreeSet<UserId> = q.iter().copied().collect();
                for id in &q {
                    descendants(&tree, *id, &mut participating);
                }
                let got =
                    recover_group_value(&tree, &dealing.shares, &participating, *group).unwrap();
                ensure!(
                    small(&got) == expected,
                    "{group}: library recovered {got} from {q:?}, expected {expected}"
                );
                quorums += 1;
            }
            for size in 0..t {
                for sub in subsets(members, size) {
                    let mut participating: BTreeSet<UserId> = sub.iter().copied().collect();
                    for id in &sub {
                        descendants(&tree, *id, &mut participating);
                    }
                    let refused = matches!(
                        recover_group_value(&tree, &dealing.shares, &participating, *group),
                        Err(SharingError::InsufficientShares { .. })
                    );
                    ensure!(refused, "{group}: {sub:?} below quorum was not refused");
                    // Count polynomials of degree < t through the known
                    // points, by value at zero.
                    let pts: Vec<_> = sub.iter().map(eval).collect();
                    let mut counts = vec![0u64; p as usize];
                    for code in 0..p.pow(t as u32) {
                        let coeffs: Vec<u64> = (0..t as u32).map(|h| code / p.pow(h) % p).collect();
                        let fits = pts.iter().all(|(x, y)| {
                            coeffs.iter().rev().fold(0, |acc, c| (acc * x + c) % p) == *y
                        });
                        if fits {
                            counts[coeffs[0] as usize] += 1;
                        }
                    }
                    let each = p.pow((t - size) as u32 - 1);
                    ensure!(
                        counts.iter().all(|c| *c == each),
                        "{group}: {sub:?} leaves uneven candidates {counts:?}"
                    );
                    sub_quorums += 1;
                }
            }
        }
    }
    let elapsed = start.elapsed();
    ensure!(
        elapsed < Duration::from_secs(60),
        "took {elapsed:?}, limit 60 s"
    );
    Ok(format!(
        "{quorums} quorums recover, {sub_quorums} sub-quorums leave 31 equal candidates, {elapsed:.2?}"
    ))
}

fn criterion_3() -> Outcome {
    let mut checked = 0;
    for seed in 0..50u64 {
        let mut rng = ChaCha20Rng::seed_from_u64(1000 + seed);
        let (num, den) = TFS[seed as usize % 4];
        let mut tree = random_tree(&mut rng, Curve::small(), 4, 4);
        let modulus = tree.field().modulus().clone();
        let secret = tree.field().random(&mut rng);
        let (round, points) =
            prepare_round(&mut tree, EvalPointMode::RoundKey, 64, &mut rng).unwrap();
        let dealing = distribute(&tree, &secret, &round, &points, tf(num, den), &mut rng).unwrap();
        let users = tree.active_users();
        let owners: BTreeSet<UserId> = dealing.shares.keys().copied().collect();
        ensure!(
            owners == users,
            "seed {seed}: shares held by {owners:?}, users {users:?}"
        );
        ensure!(
            dealing.shares.iter().all(|(id, s)| s.owner == *id),
            "seed {seed}: share filed under the wrong user"
        );
        let moduli: BTreeSet<BigUint> = dealing
            .shares
            .values()
            .flat_map(|s| {
                [
                    s.value.field().modulus().clone(),
                    s.eval_point.field().modulus().clone(),
                ]
            })
            .chain(
                dealing
                    .dealer
                    .polynomials
                    .values()
                    .flat_map(|q| q.coefficients().iter().map(|c| c.field().modulus().clone())),
            )
            .chain(
                dealing
                    .dealer
                    .retained
                    .values()
                    .map(|v| v.field().modulus().clone()),
            )
            .collect();
        ensure!(
            moduli == BTreeSet::from([modulus.clone()]),
            "seed {seed}: moduli {moduli:?}"
        );
        checked += users.len();
    }
    Ok(format!(
        "{checked} users across 50 trees: one share each, one modulus"
    ))
}

fn criterion_4() -> Outcome {
    for seed in 0..50u64 {
        let mut rng = ChaCha20Rng::seed_from_u64(2000 + seed);
        let (num, den) = TFS[seed as usize % 4];
        let mut tree = random_tree(&mut rng, Curve::small(), 3, 4);
        let secret = tree.field().random(&mut rng);
        let (round, points) =
            prepare_round(&mut tree, EvalPointMode::RoundKey, 64, &mut rng).unwrap();
        let dealing = distribute(&tree, &secret, &round, &points, tf(num, den), &mut rng).unwrap();
        let all = tree.active_users();
        let mut shares = dealing.shares;
        let mut clock = EpochClock::new(4);
        for epoch in 1..=20u64 {
            let outcome = renewal_round(
                &tree,
                &shares,
                &mut clock,
                &Interference::default(),
                &mut rng,
            )
            .unwrap();
            ensure!(
                outcome.discarded.is_empty(),
                "seed {seed} epoch {epoch}: honest renewal discarded"
            );
            shares = outcome.shares;
            ensure!(
                shares.values().all(|s| s.epoch == epoch),
                "seed {seed} epoch {epoch}: stale share"
            );
            let got = reconstruct(&tree, &shares, &all).unwrap();
            ensure!(
                got == secret,
                "seed {seed} epoch {epoch}: recovered {got}, dealt {secret}"
            );
            let minimal = minimal_quorum(&tree, (num, den), &mut rng);
            ensure!(
                reconstruct(&tree, &shares, &minimal).unwrap() == secret,
                "seed {seed} epoch {epoch}: minimal quorum"
            );
            clock.next_epoch();
        }
    }
    Ok("50 seeds x 20 renewals, secret unchanged".into())
}

/// y^2 = x^3 + 2x + 2 over F_17, generator (5, 1) of order 19.
mod toy {
    pub type Point = Option<(u64, u64)>;
    const P: u64 = 17;
    const A: u64 = 2;
    pub const G: Point = Some((5, 1));

    fn inv(a: u64) -> u64 {
        super::inv_mod(a, P)
    }

    pub fn add(u: Point, v: Point) -> Point {
        let (Some((x1, y1)), Some((x2, y2))) = (u, v) else {
            return u.or(v);
        };
        if x1 == x2 && (y1 + y2) % P == 0 {
            return None;
        }
        let l = if (x1, y1) == (x2, y2) {
            (3 * x1 * x1 + A) % P * inv(2 * y1 % P) % P
        } else {
            (y2 + P - y1) % P * inv((x2 + P - x1) % P) % P
        };
        let x3 = (l * l + 2 * P - x1 - x2) % P;
        let y3 = (l * ((x1 + P - x3) % P) + P - y1) % P;
        Some((x3, y3))
    }

    pub fn mul(k: u64, pt: Point) -> Point {
        (0..k % 19).fold(None, |acc, _| add(acc, pt))
    }
}

fn to_point(pt: toy::Point) -> CurvePoint {
    match pt {
        None => CurvePoint::Identity,
        Some((x, y)) => CurvePoint::affine(x, y),
    }
}

fn toy_bundle(coeffs: &[u64], x: u64) -> RenewalBundle {
    let f = Curve::toy().scalar_field().clone();
    // Δ(0) = 0, so the evaluation skips the constant.
    let delta_eval = coeffs
        .iter()
        .enumerate()
        .map(|(i, c)| c * pow_mod(x, i as u64 + 1, 19))
        .sum::<u64>()
        % 19;
    RenewalBundle {
        from: NodeRef::Server,
        to: uid(1),
        epoch: 1,
        delta_eval: f.element(delta_eval),
        commitments: coeffs
            .iter()
            .map(|c| to_point(toy::mul(*c, toy::G)))
            .collect(),
    }
}

fn criterion_5() -> Outcome {
    let curve = Curve::toy();
    let f = curve.scalar_field().clone();
    let mut honest = 0u64;
    for k in 0..=3u32 {
        for code in 0..19u64.pow(k) {
            let coeffs: Vec<u64> = (0..k).map(|h| code / 19u64.pow(h) % 19).collect();
            for x in 1..19u64 {
                let bundle = toy_bundle(&coeffs, x);
                ensure!(
                    verify_renewal(&bundle, &f.element(x), Some(&curve)),
                    "honest bundle {coeffs:?} at x = {x} rejected"
                );
                honest += 1;
            }
        }
    }
    let mut rng = ChaCha20Rng::seed_from_u64(5);
    let mut tampered = [0u64; 2];
    for i in 0..1000 {
        let k = rng.gen_range(1..=3u32);
        let coeffs: Vec<u64> = (0..k).map(|_| rng.gen_range(0..19)).collect();
        let x = rng.gen_range(1..19u64);
        let mut bundle = toy_bundle(&coeffs, x);
        let shift = rng.gen_range(1..19u64);
        if i % 2 == 0 {
            bundle.delta_eval = f.element((small(&bundle.delta_eval) + shift) % 19);
            tampered[0] += 1;
        } else {
            let h = rng.gen_range(0..k as usize);
            bundle.commitments[h] = to_point(toy::mul(coeffs[h] + shift, toy::G));
            tampered[1] += 1;
        }
        ensure!(
            !verify_renewal(&bundle, &f.element(x), Some(&curve)),
            "tampering {i} passed verification"
        );
    }
    Ok(format!(
        "{honest} honest bundles verify; {} delta and {} commitment tamperings rejected",
        tampered[0], tampered[1]
    ))
}

/// Server -> U1 -> n children; U1 tampers and `silent` children keep quiet.
fn boundary_case(
    n: usize,
    (num, den): (u32, u32),
    silent: usize,
    kind: TamperKind,
    seed: u64,
) -> (VerdictOutcome, usize) {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut tree = HierarchyTree::with_curve(Curve::small());
    let parent = tree.register(NodeRef::Server, &mut rng).unwrap().id;
    let kids: Vec<_> = (0..n)
        .map(|_| tree.register(NodeRef::User(parent), &mut rng).unwrap().id)
        .collect();
    let secret = tree.field().element(4242u32);
    let (round, points) = prepare_round(&mut tree, EvalPointMode::RoundKey, 64, &mut rng).unwrap();
    let dealing = distribute(&tree, &secret, &round, &points, tf(num, den), &mut rng).unwrap();
    let interference = Interference {
        tamper: BTreeMap::from([(NodeRef::User(parent), kind)]),
        silenced: kids[..silent].iter().copied().collect(),
        ..Interference::default()
    };
    let mut clock = EpochClock::new(4);
    let outcome =
        renewal_round(&tree, &dealing.shares, &mut clock, &interference, &mut rng).unwrap();
    assert_eq!(outcome.verdicts.len(), 1);
    (
        outcome.verdicts[0].outcome,
        outcome.verdicts[0].supporting_claims,
    )
}

fn criterion_6() -> Outcome {
    let mut cases = 0;
    for n in 2..=8usize {
        for tf in [(1, 2), (2, 3)] {
            let k = quorum(tf.0, tf.1, n) - 1;
            if n - k < 2 {
                continue;
            }
            for kind in [TamperKind::DeltaEval, TamperKind::Commitment] {
                let seed = (n * 10) as u64;
                let at = boundary_case(n, tf, k, kind, seed);
                ensure!(
                    at == (VerdictOutcome::AccusedCompromised, n - k),
                    "n={n} k={k}: n-k claims gave {at:?}"
                );
                let below = boundary_case(n, tf, k + 1, kind, seed);
                ensure!(
                    below == (VerdictOutcome::ClaimersCompromised, n - k - 1),
                    "n={n} k={k}: n-k-1 claims gave {below:?}"
                );
                cases += 2;
            }
        }
    }
    // The bundled scripted scenario through the runner: false claims at
    // n - k - 1, then a tampering parent with n - k honest children.
    let dir = tempfile::tempdir().unwrap();
    let outcome = runner::run(&RunOptions {
        scenario: scenario_path("corruptor-scripted"),
        out: dir.path().to_path_buf(),
        ..RunOptions::default()
    })
    .map_err(|e| e.to_string())?;
    let verdicts: Vec<(u64, VerdictOutcome, usize)> = outcome
        .report
        .epochs
        .iter()
        .flat_map(|r| {
            r.verdicts
                .iter()
                .map(move |v| (r.epoch, v.outcome, v.supporting_claims))
        })
        .collect();
    let expected = vec![
        (1, VerdictOutcome::ClaimersCompromised, 2),
        (3, VerdictOutcome::AccusedCompromised, 3),
    ];
    ensure!(
        verdicts == expected,
        "scripted scenario verdicts {verdicts:?}"
    );
    ensure!(
        outcome.report.succeeded(),
        "scripted scenario did not succeed"
    );
    Ok(format!(
        "{cases} boundary cases plus the scripted scenario, both branches exact"
    ))
}

fn binary(levels: usize) -> Vec<NodeSpec> {
    fn node(levels: usize) -> NodeSpec {
        NodeSpec {
            children: if levels == 0 {
                Vec::new()
            } else {
                vec![node(levels - 1), node(levels - 1)]
            },
        }
    }
    vec![node(levels - 2), node(levels - 2)]
}

fn internal(spec: &[NodeSpec]) -> u64 {
    spec.iter()
        .map(|s| u64::from(!s.children.is_empty()) + internal(&s.children))
        .sum()
}

fn sim_config(name: &str, tree: Vec<NodeSpec>, seed: u64) -> SimConfig {
    SimConfig {
        name: name.into(),
        field: FieldMode::CurveOrder(CurveParams::small()),
        threshold_factor: tf(1, 2),
        tree,
        secret: BigUint::from(31337u32),
        eval_points: EvalPointMode::RoundKey,
        epochs: 3,
        ticks_per_epoch: 4,
        renewal: true,
        round_policy: RoundPolicy::Abort,
        adversary: AdversaryConfig {
            strategy: Strategy::PassiveStealer,
            budget: Budget::Fixed(0),
            ..AdversaryConfig::default()
        },
        events: Vec::new(),
        seed,
    }
}

fn criterion_7() -> Outcome {
    let mut lines = Vec::new();
    for levels in 3..=6usize {
        let tree = binary(levels);
        let n = 1 + tree.iter().map(NodeSpec::count).sum::<usize>() as u64;
        let multicasts = 1 + internal(&tree);
        let mut world = World::new(sim_config("complexity", tree, levels as u64)).unwrap();
        let report = world.run().clone();
        for row in &report.epochs {
            let renewal = row
                .renewal
                .as_ref()
                .ok_or(format!("n={n}: no renewal at epoch {}", row.epoch))?;
            ensure!(
                renewal.nodes == n,
                "n={n}: renewal counted {} nodes",
                renewal.nodes
            );
            ensure!(
                renewal.sealed_deltas == n - 1,
                "n={n}: {} sealed deltas",
                renewal.sealed_deltas
            );
            ensure!(
                renewal.commitment_multicasts == multicasts,
                "n={n}: {} multicasts, expected {multicasts}",
                renewal.commitment_multicasts
            );
            ensure!(
                renewal.all_pairs_baseline == n * (n - 1),
                "n={n}: baseline {}",
                renewal.all_pairs_baseline
            );
            let delta_msgs = row
                .messages
                .get(&hiershare::simnet::network::MessageKind::RenewalDelta)
                .copied()
                .unwrap_or(0);
            ensure!(
                delta_msgs == n - 1,
                "n={n}: network carried {delta_msgs} delta envelopes"
            );
        }
        lines.push(format!(
            "n={n}: {} deltas + {multicasts} multicasts vs {} all-pairs",
            n - 1,
            n * (n - 1)
        ));
    }
    Ok(lines.join("; "))
}

/// Whether the secret lies in the span of the shares, each read as a linear
/// form in the dealing's unknowns: per round and group, the value at zero
/// (fixed across renewals) and the higher coefficients (fresh at every
/// renewal epoch). A split share is its evaluation minus its own group's
/// value at zero.
fn secret_in_span(shares: &[ShareRecord]) -> bool {
    if shares.is_empty() {
        return false;
    }
    let p = u64::try_from(shares[0].value.field().modulus()).unwrap();
    let mut index: BTreeMap<(u64, NodeRef, u64, usize), usize> = BTreeMap::new();
    let mut var = |key| {
        let n = index.len();
        *index.entry(key).or_insert(n)
    };
    let rounds: BTreeSet<u64> = shares.iter().map(|s| s.round_id).collect();
    let targets: Vec<usize> = rounds
        .iter()
        .map(|r| var((*r, NodeRef::Server, 0, 0)))
        .collect();
    let mut rows: Vec<BTreeMap<usize, u64>> = Vec::new();
    for share in shares {
        let mut row = BTreeMap::new();
        let x = small(&share.eval_point);
        row.insert(var((share.round_id, share.group, 0, 0)), 1);
        let mut power = 1;
        for h in 1..share.threshold {
            power = power * x % p;
            row.insert(var((share.round_id, share.group, share.epoch, h)), power);
        }
        if share.kind == ShareKind::Split {
            row.insert(
                var((share.round_id, NodeRef::User(share.owner), 0, 0)),
                p - 1,
            );
        }
        rows.push(row);
    }
    let width = index.len();
    let dense = |row: &BTreeMap<usize, u64>| {
        let mut v = vec![0u64; width];
        for (k, c) in row {
            v[*k] = c % p;
        }
        v
    };
    let matrix: Vec<Vec<u64>> = rows.iter().map(dense).collect();
    let base = rank(matrix.clone(), p);
    targets.iter().any(|t| {
        let mut with_target = matrix.clone();
        let mut unit = vec![0u64; width];
        unit[*t] = 1;
        with_target.push(unit);
        rank(with_target, p) == base
    })
}

fn rank(mut m: Vec<Vec<u64>>, p: u64) -> usize {
    let cols = m.first().map_or(0, Vec::len);
    let mut r = 0;
    for c in 0..cols {
        let Some(pivot) = (r..m.len()).find(|i| m[*i][c] != 0) else {
            continue;
        };
        m.swap(r, pivot);
        let inv = inv_mod(m[r][c], p);
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

fn criterion_8() -> Outcome {
    let tree = vec![
        NodeSpec {
            children: vec![NodeSpec::default(); 5],
        },
        NodeSpec {
            children: vec![NodeSpec::default(); 3],
        },
        NodeSpec::default(),
    ];
    let mut off_recovered = 0;
    let mut latest = 0;
    for seed in 0..100u64 {
        let mut config = sim_config("secrecy", tree.clone(), seed);
        config.epochs = 10;
        config.adversary.budget = Budget::GroupK;
        for renewal in [true, false] {
            config.renewal = renewal;
            let mut world = World::new(config.clone()).unwrap();
            let report = world.run().clone();
            let stolen: Vec<ShareRecord> = world
                .adversary()
                .stolen
                .values()
                .map(|(_, s)| s.clone())
                .collect();
            let oracle = secret_in_span(&stolen);
            let flagged = report
                .summary
                .as_ref()
                .unwrap()
                .secret_recovered_by_adversary;
            ensure!(
                oracle == flagged,
                "seed {seed} renewal {renewal}: oracle says {oracle}, report says {flagged}"
            );
            ensure!(
                report.succeeded(),
                "seed {seed} renewal {renewal}: run failed"
            );
            if renewal {
                ensure!(
                    !oracle,
                    "seed {seed}: adversary reached the secret with renewal on"
                );
            } else if oracle {
                off_recovered += 1;
                let first = report
                    .epochs
                    .iter()
                    .position(|r| r.adversary_can_reconstruct)
                    .unwrap_or(0);
                latest = latest.max(first);
            }
        }
    }
    ensure!(
        off_recovered == 100,
        "renewal off: adversary reached the secret in only {off_recovered}/100 runs"
    );
    Ok(format!(
        "renewal on: 0/100 runs reach the secret; renewal off: 100/100 (by epoch {latest} at the latest)"
    ))
}

fn repo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn scenario_path(name: &str) -> PathBuf {
    repo().join("scenarios").join(format!("{name}.json"))
}

fn run_to(
    out: &Path,
    scenario: &Path,
    epochs: Option<u64>,
    save_at: Option<u64>,
    resume: Option<PathBuf>,
) -> Result<(String, String), String> {
    let outcome = runner::run(&RunOptions {
        scenario: scenario.to_path_buf(),
        seed: None,
        epochs,
        out: out.to_path_buf(),
        save_at,
        resume,
    })
    .map_err(|e| e.to_string())?;
    let read = |p: &Path| std::fs::read_to_string(p).map_err(|e| e.to_string());
    Ok((read(&outcome.report_path)?, read(&outcome.table_path)?))
}

fn criterion_9() -> Outcome {
    let mut scenarios: Vec<PathBuf> = std::fs::read_dir(repo().join("scenarios"))
        .map_err(|e| e.to_string())?
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    scenarios.sort();
    let mut resumes = 0;
    for path in &scenarios {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let first = run_to(a.path(), path, None, None, None)?;
        let second = run_to(b.path(), path, None, None, None)?;
        ensure!(first == second, "{}: two runs differ", path.display());
        let epochs = serde_json::from_str::<serde_json::Value>(&first.0).unwrap()["epochs"]
            .as_array()
            .unwrap()
            .len() as u64;
        for at in 1..epochs {
            let split = tempfile::tempdir().unwrap();
            run_to(split.path(), path, None, Some(at), None)?;
            let snapshot = std::fs::read_dir(split.path())
                .unwrap()
                .map(|e| e.unwrap().path())
                .find(|p| p.extension().is_some_and(|e| e == "snapshot"))
                .ok_or(format!("{}: no snapshot at {at}", path.display()))?;
            let resumed = tempfile::tempdir().unwrap();
            let third = run_to(resumed.path(), path, None, None, Some(snapshot))?;
            ensure!(
                third == first,
                "{}: resume at epoch {at} differs from a straight run",
                path.display()
            );
            resumes += 1;
        }
    }
    Ok(format!(
        "{} scenarios byte-identical across runs and {resumes} snapshot resumes",
        scenarios.len()
    ))
}

fn main() {
    let criteria: [(&str, Criterion); 9] = [
        ("round-trip correctness", criterion_1),
        ("threshold exactness and perfect secrecy", criterion_2),
        ("one share per user, one field", criterion_3),
        ("renewal invariance", criterion_4),
        ("detection completeness and soundness", criterion_5),
        ("claim resolution at n - k", criterion_6),
        ("renewal message complexity", criterion_7),
        ("proactive security end to end", criterion_8),
        ("determinism", criterion_9),
    ];
    // Only the summary lines should reach the terminal.
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = match panic::catch_unwind(AssertUnwindSafe(check)) {
            Ok(result) => result,
            Err(payload) => Err(payload
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into())),
        };
        let elapsed = start.elapsed();
        match result {
            Ok(detail) => println!(
                "criterion {}: PASS  {name}: {detail} [{elapsed:.2?}]",
                i + 1
            ),
            Err(detail) => {
                failed += 1;
                println!(
                    "criterion {}: FAIL  {name}: {detail} [{elapsed:.2?}]",
                    i + 1
                );
            }
        }
    }
    if failed > 0 {
        println!("{failed} of {} criteria failed", criteria.len());
        std::process::exit(1);
    }
    println!("all {} criteria passed", criteria.len());
}
