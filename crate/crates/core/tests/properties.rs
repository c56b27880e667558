mod common;

use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;

use common::{chain_finality, pair_scan};
use ffg_core::slashing::{scan, violators};
use ffg_core::{
    Block, BlockId, BlockTree, FinalityConfig, FinalityState, Fraction, Keyring, Proposer, Registry, Transaction,
    ValidatorId, VotePool,
};

const SPACING: u64 = 2;
const FINALITY: FinalityConfig = FinalityConfig {
    stitching: true,
    leak: None,
    finder_fee: Fraction::new(1, 100),
};

/// (validator index, source height, target height), with source < target.
fn link_votes(validators: usize, checkpoints: u64) -> impl Strategy<Value = Vec<(usize, u64, u64)>> {
    let vote = (0..validators, 0..checkpoints - 1).prop_flat_map(move |(v, s)| (Just(v), Just(s), s + 1..checkpoints));
    prop::collection::vec(vote, 0..24)
}

fn chain_case() -> impl Strategy<Value = (Vec<u64>, u64, Vec<(usize, u64, u64)>)> {
    (prop::collection::vec(1u64..300, 1..6), 3u64..7).prop_flat_map(|(w, n)| {
        let votes = link_votes(w.len(), n);
        (Just(w), Just(n), votes)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn single_chain_matches_fixpoint(case in chain_case()) {
        let (weights, checkpoints, votes) = case;
        let ids: Vec<ValidatorId> = (0..weights.len() as u32).map(ValidatorId).collect();
        let keyring = Keyring::from_seed(9, ids.clone());
        let genesis = Registry::genesis(ids.iter().copied().zip(weights.iter().copied()), 100);
        let total: u64 = weights.iter().sum();

        let mut tree = BlockTree::new(SPACING).unwrap();
        let mut pool = VotePool::new();
        let mut weight: BTreeMap<(u64, u64), u64> = BTreeMap::new();
        let mut counted = BTreeSet::new();
        let mut cps = vec![BlockId::GENESIS];
        let mut parent = BlockId::GENESIS;
        for h in 1..=checkpoints * SPACING {
            let mut payload = Vec::new();
            if h > 1 && (h - 1) % SPACING == 0 {
                let t = (h - 1) / SPACING;
                for &(vi, s, _) in votes.iter().filter(|v| v.2 == t) {
                    let vote = keyring.sign(ids[vi], cps[s as usize], cps[t as usize], s, t).unwrap();
                    if pool.insert_unchecked(vote.clone()) {
                        payload.push(Transaction::VoteInclusion(vote));
                    }
                    if counted.insert((vi, s, t)) {
                        *weight.entry((s, t)).or_default() += weights[vi];
                    }
                }
            }
            let b = Block::new(parent, h, h, Proposer::External, payload);
            parent = b.id;
            if h % SPACING == 0 {
                cps.push(b.id);
            }
            tree.insert_block(b).unwrap();
        }

        // Slashed validators lose their weight, so only compare clean histories.
        let flat: Vec<_> = pool.votes().to_vec();
        prop_assume!(pair_scan(&flat).is_empty());

        let state = FinalityState::evaluate(&tree, &pool, &keyring, &genesis, &FINALITY);
        let justified: BTreeSet<u64> = tree
            .checkpoint_chain_through(&parent)
            .unwrap()
            .iter()
            .filter(|c| c.height < checkpoints && state.is_justified(&c.block))
            .map(|c| c.height)
            .collect();
        let finalized: BTreeSet<u64> =
            state.finalized().iter().filter(|c| c.height < checkpoints).map(|c| c.height).collect();
        let (oj, of) = chain_finality(&weight, total);
        prop_assert_eq!(justified, oj);
        prop_assert_eq!(&finalized, &of);
        for c in state.finalized() {
            prop_assert!(state.is_justified(&c.block));
        }
    }

    #[test]
    fn violators_match_pair_scan(votes in link_votes(4, 8), salt in 0u8..4) {
        let ids: Vec<ValidatorId> = (0..4).map(ValidatorId).collect();
        let keyring = Keyring::from_seed(3, ids.clone());
        let block = |h: u64| {
            let mut b = [0u8; 32];
            b[0] = h as u8;
            b[1] = salt.wrapping_mul(h as u8);
            BlockId(b)
        };
        let mut pool = VotePool::new();
        for &(vi, s, t) in &votes {
            let v = keyring.sign(ids[vi], block(s), block(t), s, t).unwrap();
            pool.insert_unchecked(v);
        }
        let expected = pair_scan(pool.votes());
        prop_assert_eq!(violators(&pool), expected.clone());
        let found: BTreeSet<ValidatorId> = scan(&pool).iter().map(|v| v.validator).collect();
        prop_assert_eq!(found, expected);
    }
}
