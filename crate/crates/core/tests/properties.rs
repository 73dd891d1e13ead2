mod common;

use proptest::prelude::*;
use toxprop::dpo::extract_pairs;
use toxprop::interventions::{gate_write, output_filter, GateMode, ScriptedRewriter};
use toxprop::metrics::spg;
use toxprop::rollout::{run_paired, Arm, Backends, MemoryConditioning, RolloutConfig, SpgRecord};
use toxprop::scoring::{is_clean, Lexicon, LexiconScorer, DEFAULT_LEXICON};
use toxprop::seeds::SeedPost;
use toxprop::stats::{exact_mean_diff, p95, wilcoxon_signed_rank, Alternative};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn topology_invariants(t in common::template_strategy()) {
        if let Err(msg) = common::check_topology(&t) {
            prop_assert!(false, "{}", msg);
        }
    }
}

fn small_delta() -> impl Strategy<Value = f64> {
    // A coarse grid produces ties and zeros often.
    (-6i32..=6).prop_map(|k| k as f64 / 4.0)
}

proptest! {
    #[test]
    fn wilcoxon_exact_matches_enumeration(d in prop::collection::vec(small_delta(), 1..=12)) {
        let g = wilcoxon_signed_rank(&d, Alternative::Greater).p;
        let l = wilcoxon_signed_rank(&d, Alternative::Less).p;
        prop_assert!((g - common::brute_force_wilcoxon(&d, true)).abs() <= 1e-12);
        prop_assert!((l - common::brute_force_wilcoxon(&d, false)).abs() <= 1e-12);
        let two = wilcoxon_signed_rank(&d, Alternative::TwoSided).p;
        prop_assert!((two - (2.0 * g.min(l)).min(1.0)).abs() <= 1e-12);
    }

    #[test]
    fn wilcoxon_p_in_unit_interval(d in prop::collection::vec(-1.0f64..1.0, 0..60)) {
        for alt in [Alternative::Greater, Alternative::Less, Alternative::TwoSided] {
            let p = wilcoxon_signed_rank(&d, alt).p;
            prop_assert!((0.0..=1.0).contains(&p));
        }
    }

    #[test]
    fn p95_matches_sorted_index(v in prop::collection::vec(0.0f64..1.0, 1..300)) {
        prop_assert_eq!(p95(&v), Some(common::p95_oracle(&v)));
    }

    #[test]
    fn lexicon_score_invariants(words in prop::collection::vec(
        prop_oneof![
            prop::sample::select(DEFAULT_LEXICON.to_vec()).prop_map(str::to_owned),
            "[a-z]{1,8}",
        ],
        0..30,
    )) {
        let scorer = LexiconScorer::default();
        let text = words.join(" ");
        let s = scorer.score_text(&text);
        prop_assert!((0.0..=1.0).contains(&s));
        let shouty = format!("{}!!", text.to_uppercase());
        prop_assert_eq!(scorer.score_text(&shouty), s);
        let hits = words.iter().filter(|w| DEFAULT_LEXICON.contains(&w.as_str())).count();
        if words.is_empty() {
            prop_assert_eq!(s, 0.0);
        } else {
            prop_assert_eq!(s, hits as f64 / words.len() as f64);
        }
    }

    #[test]
    fn filters_are_idempotent(
        words in prop::collection::vec(
            prop_oneof![Just("vile".to_string()), Just("okay".to_string()), "[a-z]{1,6}"],
            1..20,
        ),
        tau in 0.05f64..=1.0,
    ) {
        let scorer = LexiconScorer::default();
        let rewriter = ScriptedRewriter::new(Lexicon::default());
        let text = words.join(" ");
        let once = output_filter(&text, &scorer, tau).unwrap();
        prop_assert_eq!(output_filter(&once, &scorer, tau).unwrap(), once.clone());
        for mode in [GateMode::Redact, GateMode::Rewrite] {
            let once = gate_write(&text, &scorer, tau, mode, Some(&rewriter)).unwrap();
            let twice = gate_write(&once, &scorer, tau, mode, Some(&rewriter)).unwrap();
            prop_assert_eq!(&twice, &once);
            prop_assert!(is_clean(scorer.score_text(&once), tau) || once == text);
        }
    }

    #[test]
    fn spg_uses_only_clean_records(
        recs in prop::collection::vec((any::<bool>(), 0.0f64..1.0, 0.0f64..1.0), 0..40),
        tau in 0.05f64..=1.0,
    ) {
        let records: Vec<SpgRecord> = recs
            .iter()
            .enumerate()
            .map(|(i, &(toxic, m_tox, next_tox))| SpgRecord {
                node: format!("n{i}"),
                arm: if toxic { Arm::Toxic } else { Arm::Neutral },
                m_turn: i as u32,
                m_tox,
                next_tox,
            })
            .collect();
        let pick = |arm| -> Vec<f64> {
            records
                .iter()
                .filter(|r| r.arm == arm && r.m_tox < tau)
                .map(|r| r.next_tox)
                .collect()
        };
        let expected = exact_mean_diff(&pick(Arm::Toxic), &pick(Arm::Neutral));
        prop_assert_eq!(spg(&records, tau).value(), expected);

        // Perturbing flagged records leaves SPG unchanged.
        let mut moved = records.clone();
        for r in moved.iter_mut().filter(|r| r.m_tox >= tau) {
            r.next_tox = 1.0 - r.next_tox;
        }
        prop_assert_eq!(spg(&moved, tau).value(), expected);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn dpo_retention_monotone(iota in 0.0f64..=1.0, lo in 0.0f64..0.5, step in 0.0f64..0.5) {
        let cfg = RolloutConfig::chain(4, iota).with_memory(MemoryConditioning::SummaryPlusParent);
        let backends = Backends::scripted(iota, Lexicon::default()).unwrap();
        let pair = run_paired("c", &cfg, &SeedPost::new("s", "a calm question"), 0, &backends)
            .unwrap();
        let a = extract_pairs(&[&pair], lo).unwrap();
        let b = extract_pairs(&[&pair], lo + step).unwrap();
        prop_assert!(b.len() <= a.len());
        prop_assert!(b.iter().all(|p| a.contains(p)));
        prop_assert!(a.iter().all(|p| p.delta() > lo));
    }
}
