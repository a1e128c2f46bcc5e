use std::collections::BTreeMap;
use std::sync::Arc;

use proptest::prelude::*;
use usp_core::authenticity::{adv_from_embeddings, ava, early_stop_trigger, sem_sim, style_sim, AuthorPair, EarlyStopKind};
use usp_core::consistency::{
    fact_con, fact_con_from_verdicts, harmonic, persona_coverage, AtomicFact, Direction, FactOrigin, Verdict,
    VerdictMapping,
};
use usp_core::corpus::{dedup_exact, read_dialogues, segment_dialogue, to_jsonl_line, TokenCounter, WordProxyCounter};
use usp_core::extractor::{
    merge_and_filter, AttributeSet, Category, ExtractError, PartialAttributes, ProfileExtractor, Scenario,
    TraitAssessment, TraitScore, INVALID_ENTRIES,
};
use usp_core::gateway::{ChatMessage, ChatRequest, MockBackend, Task};
use usp_core::prompts::JudgePrompts;
use usp_core::reward::{combine, cycle_reward};
use usp_core::sampler::{fit_kde, ldl, synthesize_virtual, uniformity_loss, weighted_without_replacement, ReducedPoint};
use usp_core::simulator::{simulate, SeedMode, SimBackends, SimulationConfig, StopReason};
use usp_core::{Channel, Corpus, Dialogue, Gateway, Role, UserProfile};

const VOCAB: [&str; 12] = [
    "tea", "river", "Thanks", "code", "music", "travel", "kids", "budget", "garden", "rain", "book", "chess",
];

fn phrase(max_words: usize) -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(&VOCAB[..]), 1..=max_words).prop_map(|w| w.join(" "))
}

fn dialogue_strategy(max_turns: usize) -> impl Strategy<Value = Dialogue> {
    prop::collection::vec(phrase(40), 1..=max_turns).prop_map(|texts| {
        let turns = texts
            .into_iter()
            .enumerate()
            .map(|(i, t)| (if i % 2 == 0 { Role::User } else { Role::Assistant }, t));
        Dialogue::new("d", turns).unwrap()
    })
}

fn points(n: std::ops::Range<usize>, dim: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-5.0f64..5.0, dim), n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn segmentation_partitions_and_respects_budget(d in dialogue_strategy(24), slack in 0usize..120) {
        let c = WordProxyCounter;
        let costs: Vec<usize> = d.turns.iter().map(|t| c.count(&t.text)).collect();
        let pair_max = costs.windows(2).map(|w| w[0] + w[1]).chain(costs.iter().copied()).max().unwrap();
        let budget = pair_max + slack;
        let segs = segment_dialogue(&d, budget, &c).unwrap();
        prop_assert_eq!(segs.iter().map(|s| s.turns.len()).sum::<usize>(), d.turns.len());
        for (k, s) in segs.iter().enumerate() {
            prop_assert!(s.turns.iter().map(|t| c.count(&t.text)).sum::<usize>() <= budget);
            if k > 0 {
                prop_assert_eq!(s.turns[0].role, Role::Assistant);
            }
        }
    }

    #[test]
    fn dedup_is_idempotent(ds in prop::collection::vec(dialogue_strategy(4), 1..12)) {
        let dialogues: Vec<Dialogue> = ds.into_iter().enumerate().map(|(i, mut d)| { d.id = format!("d{i}"); d }).collect();
        let once = dedup_exact(Corpus::new(dialogues).unwrap());
        let twice = dedup_exact(once.clone());
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn corpus_round_trips_byte_identically(ds in prop::collection::vec(dialogue_strategy(6), 1..6)) {
        let text: String = ds.iter().enumerate().map(|(i, d)| {
            let mut d = d.clone();
            d.id = format!("d{i}");
            d.meta.insert("source".into(), "test".into());
            to_jsonl_line(&d) + "\n"
        }).collect();
        let loaded = read_dialogues(text.as_bytes()).unwrap();
        prop_assert!(loaded.errors.is_empty());
        let again: String = loaded.corpus.dialogues.iter().map(|d| to_jsonl_line(d) + "\n").collect();
        prop_assert_eq!(text, again);
    }

    #[test]
    fn merge_never_invents_and_drops_inconclusive(
        values in prop::collection::vec(prop_oneof![phrase(4), prop::sample::select(&INVALID_ENTRIES[..]).prop_map(str::to_string)], 0..12),
        tasks in prop::collection::vec(phrase(5), 0..5),
        scores in prop::collection::vec(0u8..3, 5),
        seed in any::<u64>(),
    ) {
        let sc = AttributeSet {
            scene_consistent: BTreeMap::from([("hobbies".to_string(), values.clone())]),
            ..AttributeSet::default()
        };
        let sr = AttributeSet {
            scene_related: vec![Scenario { goals_or_plans: "plan a trip".into(), task_details: tasks.clone() }],
            ..AttributeSet::default()
        };
        let big_five: BTreeMap<String, TraitAssessment> = scores.iter().enumerate().map(|(i, s)| {
            let score = [TraitScore::High, TraitScore::Low, TraitScore::Inconclusive][*s as usize];
            (format!("trait{i}"), TraitAssessment { score, conclusion: format!("c{i}"), reason: format!("r{i}") })
        }).collect();
        let parts = [
            PartialAttributes { category: Category::SceneConsistent, attrs: sc, warnings: vec![] },
            PartialAttributes { category: Category::SceneRelated, attrs: sr, warnings: vec![] },
            PartialAttributes { category: Category::Personality, attrs: AttributeSet { big_five, ..AttributeSet::default() }, warnings: vec![] },
        ];
        let merged = merge_and_filter(&parts, seed).unwrap();
        let inputs: Vec<&str> = parts.iter().flat_map(|p| p.attrs.strings()).collect();
        for s in merged.strings() {
            prop_assert!(inputs.contains(&s));
        }
        prop_assert!(merged.big_five.values().all(|t| t.score != TraitScore::Inconclusive));
        let valid = |v: &String| !INVALID_ENTRIES.contains(&v.trim().to_lowercase().as_str());
        let mut expect: Vec<String> = values.iter().filter(|v| valid(v)).cloned().collect();
        let mut got = merged.scene_consistent.get("hobbies").cloned().unwrap_or_default();
        expect.sort();
        got.sort();
        prop_assert_eq!(got, expect);
        let mut expect_tasks = tasks.clone();
        let mut got_tasks = merged.scene_related.first().map(|s| s.task_details.clone()).unwrap_or_default();
        expect_tasks.sort();
        got_tasks.sort();
        prop_assert_eq!(got_tasks, expect_tasks);
    }

    #[test]
    fn mock_is_pure(seed in any::<u64>(), text in phrase(12)) {
        let g1 = Gateway::mock(seed);
        let g2 = Gateway::mock(seed);
        let req = ChatRequest::new(Task::UserTurn, vec![ChatMessage::user(text.clone())]).with_slot("profile", text.clone());
        prop_assert_eq!(g1.complete(&req).unwrap(), g2.complete(&req).unwrap());
        let a = g1.embed(&[text.as_str()], Channel::Style).unwrap();
        let b = g2.embed(&[text.as_str()], Channel::Style).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn embed_preserves_order(texts in prop::collection::vec(phrase(6), 1..8)) {
        let g = Gateway::mock(5);
        let batch = g.embed(&texts, Channel::Semantic).unwrap();
        for (t, v) in texts.iter().zip(&batch) {
            prop_assert_eq!(&g.embed_one(t, Channel::Semantic).unwrap(), v);
        }
    }

    #[test]
    fn fact_con_bounded_and_permutation_invariant(source in phrase(30), facts in prop::collection::vec(phrase(3), 1..8), rot in 0usize..8) {
        let g = Gateway::mock(1);
        let jp = JudgePrompts::default();
        let make = |fs: &[String]| fs.iter().enumerate().map(|(i, f)| AtomicFact::new(f.clone(), FactOrigin::ProfileDecomposition, i)).collect::<Vec<_>>();
        let a = fact_con(&source, &make(&facts), Direction::ProfileGivenDialogue, VerdictMapping::Strict, &g, &jp).unwrap().score;
        let mut rotated = facts.clone();
        rotated.rotate_left(rot % facts.len());
        let b = fact_con(&source, &make(&rotated), Direction::ProfileGivenDialogue, VerdictMapping::Strict, &g, &jp).unwrap().score;
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn fact_con_mappings_bounded(raw in prop::collection::vec(-1i64..=1, 1..20)) {
        let verdicts: Vec<Verdict> = raw.iter().map(|&r| Verdict::from_raw(r).unwrap()).collect();
        for m in [VerdictMapping::Strict, VerdictMapping::HalfCredit, VerdictMapping::SignedFloored] {
            let v = fact_con_from_verdicts(&verdicts, m).unwrap();
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn dpc_bounds(a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
        let h = harmonic(a, b);
        prop_assert!(h >= 0.0);
        prop_assert!(h <= (2.0 * a).min(2.0 * b) + 1e-15);
        prop_assert!(h <= (a + b) / 2.0 + 1e-15);
        prop_assert!((harmonic(a, a) - a).abs() < 1e-15);
    }

    #[test]
    fn coverage_monotone_in_user_turns(turns in prop::collection::vec(phrase(8), 1..6), extra in phrase(8)) {
        let p = UserProfile::from_narratives("p", "You enjoy tea and chess with your kids.", "You are frugal about the budget and love rain.");
        let build = |us: &[String]| Dialogue::new("d", us.iter().flat_map(|u| [(Role::User, u.clone()), (Role::Assistant, "ok".to_string())])).unwrap();
        let before = persona_coverage(&p, &build(&turns), None).unwrap();
        let mut more = turns.clone();
        more.push(extra);
        let after = persona_coverage(&p, &build(&more), None).unwrap();
        prop_assert!(after >= before);
    }

    #[test]
    fn similarity_symmetric_and_reflexive(a in phrase(10), b in phrase(10)) {
        let g = Gateway::mock(2);
        for f in [sem_sim, style_sim] {
            let ab = f(&a, &b, &g).unwrap().value;
            let ba = f(&b, &a, &g).unwrap().value;
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert!((f(&a, &a, &g).unwrap().value - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn adv_invariant_under_rotation(pts in points(6..7, 3), theta in 0.0f64..std::f64::consts::TAU) {
        let (gen, tgt) = pts.split_at(3);
        let rot = |v: &Vec<f64>| vec![theta.cos() * v[0] - theta.sin() * v[1], theta.sin() * v[0] + theta.cos() * v[1], v[2]];
        let base = adv_from_embeddings(gen, tgt, 2);
        let rg: Vec<Vec<f64>> = gen.iter().map(rot).collect();
        let rt: Vec<Vec<f64>> = tgt.iter().map(rot).collect();
        if let (Ok(x), Ok(y)) = (base, adv_from_embeddings(&rg, &rt, 2)) {
            for (d1, d2) in x.distances.iter().zip(&y.distances) {
                prop_assert!((d1 - d2).abs() < 1e-6, "{} vs {}", d1, d2);
            }
        }
    }

    #[test]
    fn esr_monotone_on_third_gratitude(prefix in prop::collection::vec(phrase(6), 0..4)) {
        let mut users: Vec<String> = prefix.iter().map(|p| format!("question {p}?")).collect();
        users.push("thanks!".into());
        users.push("thank you".into());
        let build = |us: &[String]| Dialogue::new("d", us.iter().flat_map(|u| [(Role::User, u.clone()), (Role::Assistant, "ok".to_string())])).unwrap();
        users.push("much appreciated".into());
        prop_assert_eq!(early_stop_trigger(&build(&users), 1.1), Some(EarlyStopKind::Gratitude));
    }

    #[test]
    fn ava_degenerate_thresholds(texts in prop::collection::vec((phrase(6), phrase(6), any::<bool>()), 1..6)) {
        let g = Gateway::mock(4);
        let pairs: Vec<AuthorPair> = texts.iter().map(|(a, b, s)| AuthorPair::new(a.clone(), b.clone(), *s)).collect();
        let same = pairs.iter().filter(|p| p.same_author).count() as f64 / pairs.len() as f64;
        prop_assert!((ava(&pairs, 1.0 + 1e-9, &g).unwrap() - (1.0 - same)).abs() < 1e-12);
        prop_assert!((ava(&pairs, -1.0, &g).unwrap() - same).abs() < 1e-12);
    }

    #[test]
    fn kde_density_non_negative_and_matches_sum(pts in points(3..20, 2), q in prop::collection::vec(-6.0f64..6.0, 2), h in 0.05f64..3.0) {
        let rp: Vec<ReducedPoint> = pts.iter().enumerate().map(|(i, c)| ReducedPoint { id: i.to_string(), coords: c.clone() }).collect();
        let m = fit_kde(rp, Some(h)).unwrap();
        let brute: f64 = pts.iter().map(|p| {
            let d2: f64 = p.iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum();
            (-d2 / (2.0 * h * h)).exp() / (2.0 * std::f64::consts::PI * h * h)
        }).sum::<f64>() / pts.len() as f64;
        let got = m.density(&q);
        prop_assert!(got >= 0.0);
        prop_assert!((got - brute).abs() <= 1e-9 * brute.max(1.0));
    }

    #[test]
    fn weighted_draws_are_distinct(weights in prop::collection::vec(0.001f64..10.0, 1..30), n in 0usize..35, seed in any::<u64>()) {
        let idx = weighted_without_replacement(&weights, n, seed);
        prop_assert_eq!(idx.len(), n.min(weights.len()));
        let mut sorted = idx.clone();
        sorted.sort_unstable();
        sorted.dedup();
        prop_assert_eq!(sorted.len(), idx.len());
    }

    #[test]
    fn uniformity_loss_non_positive(pts in points(2..12, 4)) {
        prop_assume!(pts.iter().all(|p| p.iter().map(|x| x * x).sum::<f64>() > 1e-6));
        let u = uniformity_loss(&pts).unwrap();
        prop_assert!(u <= 1e-12);
        prop_assert!(u >= -8.0 - 1e-9);
    }

    #[test]
    fn ldl_scales_linearly(pts in points(4..12, 3), c in 0.1f64..10.0) {
        let scaled: Vec<Vec<f64>> = pts.iter().map(|p| p.iter().map(|x| x * c).collect()).collect();
        let a = ldl(&pts, 2).unwrap();
        let b = ldl(&scaled, 2).unwrap();
        prop_assert!(a >= 0.0);
        prop_assert!((b - c * a).abs() <= 1e-9 * (1.0 + b.abs()));
    }

    #[test]
    fn virtual_profiles_differ_from_inputs(n in 3usize..10, seed in any::<u64>()) {
        let profiles: Vec<UserProfile> = (0..n).map(|i| UserProfile::from_narratives(format!("u{i}"), format!("You are person {i}."), format!("You talk like style {i}."))).collect();
        let emb: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64, (i * i) as f64 % 7.0, 1.0]).collect();
        for v in synthesize_virtual(&profiles, &emb, 3 * n, 2, seed).unwrap() {
            prop_assert!(!profiles.contains(&v.profile));
            prop_assert!(profiles.iter().all(|p| p.full_narrative() != v.profile.full_narrative()));
        }
    }

    #[test]
    fn combine_monotone_and_affine(a in 0.0f64..=1.0, b in 0.0f64..=1.0, l in 0.0f64..=1.0, da in 0.0f64..0.5) {
        let r = combine(a, b, l).unwrap();
        prop_assert!(combine((a + da).min(1.0), b, l).unwrap() >= r - 1e-15);
        prop_assert!(combine(a, (b + da).min(1.0), l).unwrap() >= r - 1e-15);
        let mid = combine(a, b, 0.5).unwrap();
        prop_assert!((mid - 0.5 * (combine(a, b, 0.0).unwrap() + combine(a, b, 1.0).unwrap())).abs() < 1e-12);
        prop_assert!(r >= a.min(b) - 1e-15 && r <= a.max(b) + 1e-15);
    }

    #[test]
    fn simulation_alternates_and_respects_budget(budget in 20usize..400, limit in 1usize..8, seed in any::<u64>()) {
        let g = Gateway::mock(seed);
        let p = UserProfile::from_narratives("p", "You are a student who loves chess and tea.", "You write short, casual messages.");
        let cfg = SimulationConfig { turn_limit: limit, token_budget: budget, seed, ..SimulationConfig::new(SeedMode::ProfileSeeded { profile: p }) };
        let s = simulate(&cfg, &SimBackends::from_gateway(&g)).unwrap();
        let d = &s.dialogue;
        if let Some(first) = d.turns.first() {
            prop_assert_eq!(first.role, Role::User);
        }
        for w in d.turns.windows(2) {
            prop_assert_ne!(w[0].role, w[1].role);
        }
        prop_assert!(d.turns.iter().map(|t| WordProxyCounter.count(&t.text)).sum::<usize>() <= budget);
        prop_assert!(d.user_turn_count() <= limit);
        prop_assert!(matches!(s.stop_reason, StopReason::TurnLimit | StopReason::TokenBudget | StopReason::EarlyStop));
        let again = simulate(&cfg, &SimBackends::from_gateway(&g)).unwrap();
        prop_assert_eq!(&again.dialogue, d);
    }
}

struct Identity(UserProfile);

impl ProfileExtractor for Identity {
    fn extract(&self, _: &Dialogue) -> Result<UserProfile, ExtractError> {
        Ok(self.0.clone())
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn identity_extraction_gives_full_cycle_reward(d in dialogue_strategy(8), of in phrase(10), sc in phrase(10)) {
        let g = Gateway::new(
            Arc::new(MockBackend::new(1)),
            Arc::new(MockBackend::new(1)),
            Arc::new(MockBackend::new(1)),
            Arc::new(MockBackend::new(1)),
        );
        let p = UserProfile::from_narratives("p", of, sc);
        let (r_cc, _) = cycle_reward(&p, &d, &Identity(p.clone()), &g).unwrap();
        prop_assert!((r_cc - 1.0).abs() < 1e-9);
    }
}
