//! Lattice construction against a brute-force closure, plus structural laws.

mod common;

use common::{build_from, random_dictionary, random_strategy, random_text, ClosureOracle};
use let_core::knowledge::{KnowledgeBase, RandomEmbeddings};
use let_core::lattice::{segment, CharSeq, Dictionary, LatticeGraph, Strategy};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn case(seed: u64, segmenters: usize) -> (String, Vec<(Strategy, Vec<String>)>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let text = random_text(&mut rng, 12);
    let segs = (0..segmenters)
        .map(|_| (random_strategy(&mut rng), random_dictionary(&mut rng, &text, 15)))
        .collect();
    (text, segs)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn reachability_matches_closure(seed in any::<u64>(), k in 1usize..4) {
        let (text, segs) = case(seed, k);
        let (lattice, paths) = build_from(&text, &segs);
        prop_assert_eq!(ClosureOracle::new(&paths).matches(&lattice), Ok(()));
    }

    #[test]
    fn every_path_tiles_the_sentence(seed in any::<u64>()) {
        let (text, segs) = case(seed, 1);
        let (strategy, words) = &segs[0];
        let seq = CharSeq::new(&text);
        let dict: Dictionary = words.iter().collect();
        let path = segment(&seq, &dict, *strategy);
        let mut next = 1;
        for n in &path {
            prop_assert_eq!(n.start, next);
            prop_assert!(n.end >= n.start);
            prop_assert!(n.len() == 1 || dict.contains(&n.surface));
            next = n.end + 1;
        }
        prop_assert_eq!(next, seq.len() + 1);
    }

    #[test]
    fn rebuilding_is_idempotent(seed in any::<u64>(), k in 1usize..4) {
        let (text, segs) = case(seed, k);
        let (lattice, _) = build_from(&text, &segs);
        let mut doubled = segs.clone();
        doubled.extend(segs.iter().cloned());
        let (again, _) = build_from(&text, &doubled);
        prop_assert_eq!(&again, &lattice);
    }

    #[test]
    fn adding_a_path_only_grows(seed in any::<u64>(), k in 1usize..3) {
        let (text, mut segs) = case(seed, k + 1);
        let extra = segs.pop().unwrap();
        let (small, _) = build_from(&text, &segs);
        segs.push(extra);
        let (big, _) = build_from(&text, &segs);
        for n in small.nodes() {
            let m = big.node_by_span(n.start, n.end);
            prop_assert!(m.is_some());
            let m = m.unwrap();
            let spans = |l: &LatticeGraph, ids: &[usize]| ids.iter().map(|&i| l.nodes()[i].span()).collect::<Vec<_>>();
            let grown = spans(&big, big.fw_reach(m.id));
            for s in spans(&small, small.fw_reach(n.id)) {
                prop_assert!(grown.contains(&s));
            }
        }
    }

    #[test]
    fn every_character_is_covered(seed in any::<u64>(), k in 1usize..4) {
        let (text, segs) = case(seed, k);
        let (lattice, _) = build_from(&text, &segs);
        let membership = lattice.char_membership();
        prop_assert_eq!(membership.len(), text.chars().count());
        for (t, ids) in membership.iter().enumerate() {
            prop_assert!(!ids.is_empty());
            for &i in ids {
                prop_assert!(lattice.nodes()[i].contains(t + 1));
            }
        }
    }

    #[test]
    fn knowledge_base_round_trips(
        entries in prop::collection::vec(
            ("[甲乙丙丁]{1,3}", "[a-z]{1,4}", prop::collection::vec("[A-Z][a-z]{0,3}", 1..4)),
            0..12,
        ),
        seed in any::<u64>(),
    ) {
        let text: String = entries
            .iter()
            .map(|(w, s, sems)| format!("{w}\t{s}\t{}\n", sems.join(",")))
            .collect();
        let random = RandomEmbeddings { dim: 5, seed };
        let kb = KnowledgeBase::parse(&text, "kb", None, random).unwrap();
        let back = KnowledgeBase::parse(&kb.write_kb(), "kb", Some(&kb.write_embeddings()), random).unwrap();
        prop_assert_eq!(&back, &kb);
        for (w, s, sems) in &entries {
            let senses = kb.lookup(w);
            let found = senses.iter().find(|x| &x.sense_id == s && &x.sememes == sems);
            prop_assert!(found.is_some());
        }
    }
}

#[test]
fn closure_oracle_on_a_known_lattice() {
    // [ab][c] and [a][bc]: a→bc, ab→c.
    let oracle = ClosureOracle::new(&[vec![(1, 2), (3, 3)], vec![(1, 1), (2, 3)]]);
    assert_eq!(oracle.spans, vec![(1, 1), (1, 2), (2, 3), (3, 3)]);
    assert_eq!(oracle.fw[0].iter().copied().collect::<Vec<_>>(), vec![0, 2]);
    assert_eq!(oracle.bw[3].iter().copied().collect::<Vec<_>>(), vec![1, 3]);
}
