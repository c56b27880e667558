//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{chain_finality, leak_epochs, pair_scan, slashable};
use ffg_core::sim::scenarios::{
    accountability_config, dynamic_attack_config, inactivity_config, long_range_config, safety_fuzz_config,
    split_finality_config, stuck_config,
};
use ffg_core::sim::{run, RunReport, ScenarioConfig, ScenarioOutcome};
use ffg_core::{
    epochs_to_supermajority, Block, BlockId, BlockTree, Checkpoint, FinalityConfig, FinalityState, ForkChoiceRule,
    Fraction, Keyring, LeakConfig, Proposer, Registry, Transaction, ValidatorId, Vote, VotePool,
};

type Outcome = Result<String, String>;
type Criterion = Box<dyn FnOnce(&mut Vec<RunReport>) -> Outcome>;

fn main() {
    let fast = std::env::var("FFG_ACCEPTANCE_FAST").is_ok();
    let fuzz_runs = if fast { 500 } else { 10_000 };
    let mut fuzz = Vec::new();
    let criteria: Vec<(&str, Criterion)> = vec![
        ("1 safety fuzz", Box::new(move |fuzz| safety_fuzz(fuzz_runs, fuzz))),
        ("2 accountability", Box::new(|_| accountability())),
        ("3 plausible liveness", Box::new(|_| liveness())),
        ("4 stitching necessity", Box::new(|_| stitching())),
        ("5 long-range defense", Box::new(|_| long_range())),
        ("6 inactivity leak", Box::new(|_| inactivity())),
        ("7 fork-choice divergence", Box::new(|_| fork_choice())),
        ("8 property suite", Box::new(|fuzz| properties(fuzz))),
        ("9 determinism", Box::new(|_| determinism())),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let start = Instant::now();
        let outcome = f(&mut fuzz);
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  criterion {name}: {detail} ({secs:.1}s)"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  criterion {name}: {detail} ({secs:.1}s)");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}

fn run_ok(cfg: &ScenarioConfig) -> Result<RunReport, String> {
    run(cfg).map_err(|e| format!("{}: {e}", cfg.name))
}

fn safety_fuzz(runs: u64, keep: &mut Vec<RunReport>) -> Outcome {
    let mut conflicts = 0;
    let mut with_violations = 0;
    let mut partitioned = 0;
    for seed in 0..runs {
        let cfg = safety_fuzz_config(seed);
        if 3 * cfg.adversary_weight() >= cfg.genesis_weight() || !cfg.stitching_enabled || cfg.spacing != 5 {
            return Err(format!("seed {seed}: generator left the admissible space"));
        }
        let n = cfg.validators.len();
        if !(7..=20).contains(&n) {
            return Err(format!("seed {seed}: {n} validators"));
        }
        partitioned += cfg.partition.is_some() as u64;
        let report = run_ok(&cfg)?;
        conflicts += report.conflicts.len();
        with_violations += !report.violations.is_empty() as u64;
        keep.push(report);
    }
    let detail = format!(
        "{runs} runs, {conflicts} conflicting finalized pairs ({with_violations} runs with violations, {partitioned} partitioned)"
    );
    if conflicts == 0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn accountability() -> Outcome {
    let mut audits = 0;
    for seed in 0..200 {
        let cfg = accountability_config(seed);
        let total = cfg.genesis_weight();
        if 3 * cfg.adversary_weight() < total {
            return Err(format!("seed {seed}: adversary below a third"));
        }
        let report = run_ok(&cfg)?;
        if report.conflicts.is_empty() || report.audits.is_empty() {
            return Err(format!("seed {seed}: no dual finalization"));
        }
        let scanned = pair_scan(&report.trace.votes);
        let deposits: BTreeMap<ValidatorId, u64> =
            cfg.validators.iter().map(|v| (ValidatorId(v.id), v.deposit)).collect();
        for audit in &report.audits {
            if let Some(e) = &audit.error {
                return Err(format!("seed {seed}: audit error {e}"));
            }
            let w: u64 = audit.violators.iter().map(|v| deposits[v]).sum();
            if w != audit.violator_weight {
                return Err(format!("seed {seed}: violator weight {} vs oracle {w}", audit.violator_weight));
            }
            if 3 * w < total || 3 * w < audit.reference_total {
                return Err(format!("seed {seed}: violators hold {w} of {total}"));
            }
            if !audit.violators.iter().all(|v| scanned.contains(v)) {
                return Err(format!("seed {seed}: audit names a validator the pair scan clears"));
            }
            audits += 1;
        }
    }
    Ok(format!("200 dual-finalization runs, {audits} audits all at 3w >= total and confirmed by pair scan"))
}

struct Prefix {
    tree: BlockTree,
    pool: VotePool,
    keyring: Keyring,
    genesis: Registry,
    honest: Vec<ValidatorId>,
    history: BTreeMap<ValidatorId, Vec<Vote>>,
    ts: u64,
}

impl Prefix {
    fn push(&mut self, parent: BlockId, payload: Vec<Transaction>) -> BlockId {
        self.ts += 1;
        let h = self.tree.block_height(&parent).unwrap() + 1;
        let b = Block::new(parent, h, self.ts, Proposer::External, payload);
        let id = b.id;
        self.tree.insert_block(b).unwrap();
        id
    }

    fn cast(&mut self, v: ValidatorId, s: Checkpoint, t: Checkpoint) -> Vote {
        let vote = self.keyring.sign(v, s.block, t.block, s.height, t.height).unwrap();
        self.pool.add_vote(&self.keyring, vote.clone()).unwrap();
        self.history.entry(v).or_default().push(vote.clone());
        vote
    }

    fn checkpoints_on(&self, tip: &BlockId) -> Vec<Checkpoint> {
        self.tree.checkpoint_chain_through(tip).unwrap()
    }
}

const FINALITY: FinalityConfig = FinalityConfig {
    stitching: true,
    leak: None,
    finder_fee: Fraction::new(1, 100),
};

/// Random tree and vote history: honest validators vote from a justified
/// source to a higher target than any of their earlier votes; adversaries
/// vote anywhere, and some of their violations are put on chain.
fn liveness_case(seed: u64) -> Result<(bool, u64), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spacing = rng.gen_range(2..=3);
    let n = rng.gen_range(4..=7u32);
    let deposits: Vec<u64> = (0..n).map(|_| rng.gen_range(50..=150)).collect();
    let total: u64 = deposits.iter().sum();
    let mut adversaries = BTreeSet::new();
    let mut adv_weight = 0;
    let mut order: Vec<u32> = (0..n).collect();
    order.shuffle(&mut rng);
    for v in order {
        if 3 * (adv_weight + deposits[v as usize]) < total && rng.gen_bool(0.7) {
            adversaries.insert(ValidatorId(v));
            adv_weight += deposits[v as usize];
        }
    }
    let ids: Vec<ValidatorId> = (0..n).map(ValidatorId).collect();
    let mut p = Prefix {
        tree: BlockTree::new(spacing).unwrap(),
        pool: VotePool::new(),
        keyring: Keyring::from_seed(seed, ids.clone()),
        genesis: Registry::genesis(ids.iter().copied().zip(deposits.iter().copied()), 100),
        honest: ids.iter().copied().filter(|v| !adversaries.contains(v)).collect(),
        history: BTreeMap::new(),
        ts: 0,
    };
    let mut slashed_any = false;
    for _round in 0..rng.gen_range(2..=5) {
        for _ in 0..rng.gen_range(spacing..=3 * spacing) {
            let leaves = p.tree.leaves();
            let parent = if rng.gen_bool(0.8) {
                *leaves.choose(&mut rng).unwrap()
            } else {
                p.tree.blocks().map(|b| b.id).collect::<Vec<_>>().choose(&mut rng).copied().unwrap()
            };
            p.push(parent, vec![]);
        }
        let state = FinalityState::evaluate(&p.tree, &p.pool, &p.keyring, &p.genesis, &FINALITY);
        let leaves = p.tree.leaves();
        let mut payload = Vec::new();
        for v in p.honest.clone() {
            if rng.gen_bool(0.3) {
                continue;
            }
            let tip = *leaves.choose(&mut rng).unwrap();
            let source = state.highest_justified_on_chain(&p.tree, &tip);
            let last = p.history.get(&v).and_then(|h| h.iter().map(|x| x.target_height).max()).unwrap_or(0);
            let targets: Vec<Checkpoint> = p
                .checkpoints_on(&tip)
                .into_iter()
                .filter(|c| c.height > source.height && c.height > last)
                .collect();
            let Some(&target) = targets.choose(&mut rng) else { continue };
            let vote = p.keyring.sign(v, source.block, target.block, source.height, target.height).unwrap();
            if p.history.get(&v).is_some_and(|h| h.iter().any(|x| slashable(x, &vote))) {
                continue;
            }
            payload.push(Transaction::VoteInclusion(p.cast(v, source, target)));
        }
        for v in adversaries.clone() {
            for _ in 0..rng.gen_range(0..=2) {
                let tip = *leaves.choose(&mut rng).unwrap();
                let chain = p.checkpoints_on(&tip);
                let s = *chain.choose(&mut rng).unwrap();
                let later: Vec<Checkpoint> = chain.iter().copied().filter(|c| c.height > s.height).collect();
                let Some(&t) = later.choose(&mut rng) else { continue };
                let vote = p.cast(v, s, t);
                if rng.gen_bool(0.7) {
                    payload.push(Transaction::VoteInclusion(vote));
                }
            }
            let own = p.history.get(&v).cloned().unwrap_or_default();
            let pair = own
                .iter()
                .enumerate()
                .find_map(|(i, a)| own[i + 1..].iter().find(|b| slashable(a, b)).map(|b| (a.clone(), b.clone())));
            if let Some((a, b)) = pair {
                if rng.gen_bool(0.5) {
                    payload.push(Transaction::SlashEvidence(a, b));
                    slashed_any = true;
                }
            }
        }
        let leaves = p.tree.leaves();
        let at = *leaves.choose(&mut rng).unwrap();
        p.push(at, payload);
    }

    // Grow a branch from the highest justified checkpoint past every vote.
    let state = FinalityState::evaluate(&p.tree, &p.pool, &p.keyring, &p.genesis, &FINALITY);
    let a = state.highest_justified();
    let top = p.pool.votes().iter().map(|v| v.target_height).max().unwrap_or(0).max(a.height);
    let mut tip = a.block;
    while p.tree.block_height(&tip).unwrap() < (top + 3) * spacing {
        tip = p.push(tip, vec![]);
    }
    let state = FinalityState::evaluate(&p.tree, &p.pool, &p.keyring, &p.genesis, &FINALITY);
    let before = state.finalized();
    let plan = state
        .liveness_plan(&p.tree, &p.pool)
        .map_err(|e| format!("seed {seed}: no plan: {e}"))?;
    let mut payload = Vec::new();
    for v in p.honest.clone() {
        let votes = plan.votes(&p.keyring, v).ok_or("unsigned")?;
        for vote in votes {
            if p.history.get(&v).is_some_and(|h| h.iter().any(|x| slashable(x, &vote))) {
                return Err(format!("seed {seed}: plan makes {v} violate a commandment"));
            }
            p.pool.add_vote(&p.keyring, vote.clone()).unwrap();
            p.history.entry(v).or_default().push(vote.clone());
            payload.push(Transaction::VoteInclusion(vote));
        }
    }
    p.push(plan.finalize_target.block, payload);
    let after = FinalityState::evaluate(&p.tree, &p.pool, &p.keyring, &p.genesis, &FINALITY);
    if before.contains(&plan.target) || !after.is_finalized(&plan.target) {
        return Err(format!("seed {seed}: plan target {:?} not newly finalized", plan.target));
    }
    if !after.finalized().is_superset(&before) {
        return Err(format!("seed {seed}: finality shrank"));
    }
    Ok((slashed_any, plan.target.height))
}

fn liveness() -> Outcome {
    let mut post_slashing = 0;
    let mut heights = 0;
    for seed in 0..1000 {
        let (slashed, height) = liveness_case(seed)?;
        post_slashing += slashed as u32;
        heights += height;
    }
    Ok(format!(
        "1000 adversarial prefixes ({post_slashing} with slashing on chain, mean plan height {:.1}) finalized a new checkpoint with no compliant violations",
        heights as f64 / 1000.0
    ))
}

fn stitching() -> Outcome {
    let seed = 17;
    let open = run_ok(&dynamic_attack_config(seed, false))?;
    let Some(ScenarioOutcome::DynamicAttack { x, y, x_finalized, y_finalized }) = open.outcome else {
        return Err("missing outcome".into());
    };
    let dual = x_finalized && y_finalized && x.height == y.height && x.block != y.block;
    let unaccountable = open.violations.is_empty() && open.audits.iter().all(|a| a.violators.is_empty());
    let reported = open.conflicts.iter().any(|&(a, b)| (a, b) == (x, y) || (a, b) == (y, x));
    if !dual || !unaccountable || !reported {
        return Err(format!("without stitching: dual {dual}, no violators {unaccountable}"));
    }
    let closed = run_ok(&dynamic_attack_config(seed, true))?;
    let Some(ScenarioOutcome::DynamicAttack { x_finalized, y_finalized, .. }) = closed.outcome else {
        return Err("missing outcome".into());
    };
    let prevented = !(x_finalized && y_finalized) && closed.conflicts.is_empty();
    let accountable = !closed.audits.is_empty() && closed.audits.iter().all(|a| a.meets_bound);
    if prevented || accountable {
        Ok(format!(
            "without stitching both height-{} checkpoints finalize with no violators; with stitching {}",
            x.height,
            if prevented { "dual finalization is prevented" } else { "violators hold a third" }
        ))
    } else {
        Err("stitching neither prevented nor accounted for the conflict".into())
    }
}

fn long_range() -> Outcome {
    let safe = run_ok(&long_range_config(5, 5))?;
    let Some(ScenarioOutcome::LongRange { clients, .. }) = &safe.outcome else {
        return Err("missing outcome".into());
    };
    let defended = clients.iter().all(|c| c.slashed_on_all_accepted && !c.accepted_payout && !c.follows_revision);
    if !defended {
        return Err(format!("with a 5 delta delay: {clients:?}"));
    }
    let weak = run_ok(&long_range_config(5, 3))?;
    let Some(ScenarioOutcome::LongRange { clients, .. }) = &weak.outcome else {
        return Err("missing outcome".into());
    };
    let paid = clients.iter().filter(|c| c.accepted_payout).count();
    if paid == 0 {
        return Err("with a 3 delta delay no client accepted a payout".into());
    }
    Ok(format!(
        "5 delta: attackers slashed on every accepted chain; 3 delta: {paid} of {} clients accept a payout",
        clients.len()
    ))
}

/// Checkpoint heights at or after `from` that client 0's head chain first
/// justified and finalized.
fn resumed(report: &RunReport, from: u64) -> (Option<u64>, Option<u64>) {
    let c = &report.clients[0];
    let on_head: BTreeSet<Checkpoint> = c.finalized_on_head.iter().copied().collect();
    let j = c.justified.iter().map(|x| x.height).filter(|h| *h >= from).min();
    let f = on_head.iter().map(|x| x.height).filter(|h| *h >= from).min();
    (j, f)
}

fn inactivity() -> Outcome {
    let crash = 2;
    let rate = LeakConfig::new(Fraction::new(1, 10)).unwrap();
    let mut notes = Vec::new();
    for (online, offline, expected) in [(6u32, 4u32, 3u64), (5, 5, 7)] {
        let oracle = leak_epochs(&vec![100; online as usize], &vec![100; offline as usize], 1, 10);
        if oracle != expected {
            return Err(format!("{online}/{offline}: oracle {oracle}, expected {expected}"));
        }
        let library = epochs_to_supermajority(100 * online as u64, 100 * offline as u64, &rate).unwrap();
        if library != oracle {
            return Err(format!("{online}/{offline}: epochs_to_supermajority {library} vs oracle {oracle}"));
        }
        let report = run_ok(&inactivity_config(3, online, offline, crash))?;
        let (j, f) = resumed(&report, crash);
        if j != Some(crash + oracle) || f != Some(crash + oracle) {
            return Err(format!(
                "{online}/{offline}: justified again at {j:?}, finalized at {f:?}, oracle says {}",
                crash + oracle
            ));
        }
        notes.push(format!("{}/{} resumes {oracle} epochs after the crash", online * 10, offline * 10));
    }
    let split = run_ok(&split_finality_config(3))?;
    let Some(ScenarioOutcome::SplitFinality { leak_epochs: leaks, .. }) = &split.outcome else {
        return Err("missing outcome".into());
    };
    let oracle = leak_epochs(&[100; 3], &[100; 3], 1, 10);
    if leaks.iter().any(|l| *l != Some(oracle)) {
        return Err(format!("partitioned halves leaked {leaks:?}, oracle {oracle}"));
    }
    notes.push(format!("partitioned halves each finalize after {oracle} leak epochs"));
    Ok(notes.join("; "))
}

fn fork_choice() -> Outcome {
    let good = run_ok(&stuck_config(5, ForkChoiceRule::JustifiedHeight))?;
    let bad = run_ok(&stuck_config(5, ForkChoiceRule::LongestChain))?;
    let epochs = |r: &RunReport| match r.outcome {
        Some(ScenarioOutcome::Stuck { epochs_to_finalize, .. }) => Ok(epochs_to_finalize),
        _ => Err("missing outcome".to_string()),
    };
    let (g, b) = (epochs(&good)?, epochs(&bad)?);
    match (g, b) {
        (Some(k), None) if k <= 2 => Ok(format!(
            "justified-height rule finalizes after {k} epoch(s); longest chain never does"
        )),
        _ => Err(format!("justified-height {g:?}, longest chain {b:?}")),
    }
}

/// Checks every subset of `links × validators` on a single chain against the
/// fixpoint oracle. Returns the number of subsets checked.
fn enumerate(weights: &[u64], checkpoints: u64, links: &[(u64, u64)]) -> Result<u64, String> {
    let n = weights.len();
    let spacing = 2;
    let ids: Vec<ValidatorId> = (0..n as u32).map(ValidatorId).collect();
    let keyring = Keyring::from_seed(1, ids.clone());
    let genesis = Registry::genesis(ids.iter().copied().zip(weights.iter().copied()), 100);
    let total: u64 = weights.iter().sum();
    let bits = n * links.len();
    for mask in 0u64..(1 << bits) {
        let mut tree = BlockTree::new(spacing).unwrap();
        let mut pool = VotePool::new();
        let mut weight: BTreeMap<(u64, u64), u64> = BTreeMap::new();
        let mut cps = vec![BlockId::GENESIS];
        let mut parent = BlockId::GENESIS;
        for h in 1..=checkpoints * spacing {
            // Votes go in the block right after their target.
            let mut payload = Vec::new();
            if h > 1 && (h - 1) % spacing == 0 {
                let t = (h - 1) / spacing;
                for (li, &(s, _)) in links.iter().enumerate().filter(|(_, l)| l.1 == t) {
                    for (vi, v) in ids.iter().enumerate() {
                        if mask >> (li * n + vi) & 1 == 1 {
                            let vote = keyring.sign(*v, cps[s as usize], cps[t as usize], s, t).unwrap();
                            pool.insert_unchecked(vote.clone());
                            payload.push(Transaction::VoteInclusion(vote));
                            *weight.entry((s, t)).or_default() += weights[vi];
                        }
                    }
                }
            }
            let b = Block::new(parent, h, h, Proposer::External, payload);
            parent = b.id;
            if h % spacing == 0 {
                cps.push(b.id);
            }
            tree.insert_block(b).unwrap();
        }
        let state = FinalityState::evaluate(&tree, &pool, &keyring, &genesis, &FINALITY);
        let on_chain = tree.checkpoint_chain_through(&parent).unwrap();
        let justified: BTreeSet<u64> = on_chain
            .iter()
            .filter(|c| c.height < checkpoints && state.is_justified(&c.block))
            .map(|c| c.height)
            .collect();
        let finalized: BTreeSet<u64> = state
            .finalized()
            .iter()
            .filter(|c| c.height < checkpoints)
            .map(|c| c.height)
            .collect();
        let (oj, of) = chain_finality(&weight, total);
        if justified != oj || finalized != of {
            return Err(format!(
                "mask {mask:#x}: justified {justified:?} vs {oj:?}, finalized {finalized:?} vs {of:?}"
            ));
        }
    }
    Ok(1 << bits)
}

fn properties(fuzz: &[RunReport]) -> Outcome {
    let mut link_runs = 0;
    for r in fuzz.iter() {
        for name in ["link_properties", "monotone_views", "compliant_never_slashable"] {
            let Some(c) = r.check(name) else {
                return Err(format!("{}: no {name} check", r.config.name));
            };
            if c.enabled && !c.passed {
                return Err(format!("{}: {name} failed: {}", r.config.name, c.detail));
            }
            link_runs += (name == "link_properties" && c.enabled) as u64;
        }
    }
    if link_runs == 0 {
        return Err("no run exercised the link properties".into());
    }
    let chain4: Vec<(u64, u64)> = vec![(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];
    let direct5: Vec<(u64, u64)> = vec![(0, 1), (1, 2), (2, 3), (3, 4)];
    let all5: Vec<(u64, u64)> = (0..5).flat_map(|s| (s + 1..5).map(move |t| (s, t))).collect();
    let a = enumerate(&[100, 200, 300], 4, &chain4)?;
    let b = enumerate(&[100, 100, 150, 250], 5, &direct5)?;
    let c = enumerate(&[100, 200], 5, &all5)?;
    Ok(format!(
        "link properties held in {link_runs} fuzz runs, views monotone in all {}; {} vote subsets matched the brute-force oracle",
        fuzz.len(),
        a + b + c
    ))
}

fn determinism() -> Outcome {
    let mut cfgs: Vec<ScenarioConfig> = (0..30).map(|s| safety_fuzz_config(s * 7 + 1)).collect();
    cfgs.extend((0..8).map(accountability_config));
    cfgs.push(dynamic_attack_config(2, false));
    cfgs.push(dynamic_attack_config(2, true));
    cfgs.push(long_range_config(2, 5));
    cfgs.push(long_range_config(2, 3));
    cfgs.push(stuck_config(2, ForkChoiceRule::JustifiedHeight));
    cfgs.push(stuck_config(2, ForkChoiceRule::LongestChain));
    cfgs.push(split_finality_config(2));
    cfgs.push(split_finality_config(9));
    for seed in 0..4 {
        cfgs.push(inactivity_config(seed, 6, 4, 2));
    }
    for cfg in &cfgs {
        let (a, b) = (run_ok(cfg)?, run_ok(cfg)?);
        if a.digest != b.digest || a.to_json() != b.to_json() {
            return Err(format!("{}: digests {} vs {}", cfg.name, a.digest, b.digest));
        }
        if a.digest != a.compute_digest() {
            return Err(format!("{}: stored digest does not match its report", cfg.name));
        }
    }
    Ok(format!("{} scenario/seed pairs reproduced byte for byte", cfgs.len()))
}
