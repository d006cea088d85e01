use std::collections::{BTreeMap, BTreeSet};

use geodiv_core::catalog::{Catalog, QuestionAxis, QuestionSpec};
use geodiv_core::manifest::SliceKey;
use geodiv_core::metrics::{diversity_score, js_distance, kendall_tau, spearman_rho, Distribution, PairedSamples};
use geodiv_core::sevi::{augmented_counts, mitigation_plan, sevi_diversity, RatingDimension, RatingDistribution, DEFAULT_MITIGATION_EPSILON};
use geodiv_core::validation::{vdi_accuracy, AnnotationAnswer, HumanAnnotation, MatchRule};
use proptest::prelude::*;
use proptest::sample::subsequence;

const OPTIONS: [&str; 4] = ["A", "B", "C", "D"];

fn counts() -> impl Strategy<Value = Vec<u64>> {
    prop::collection::vec(0u64..200, 2..24).prop_filter("some mass", |c| c.iter().any(|&x| x > 0))
}

fn probabilities(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, n)
        .prop_filter("some mass", |w| w.iter().sum::<f64>() > 1e-6)
        .prop_map(|w| {
            let s: f64 = w.iter().sum();
            w.into_iter().map(|x| x / s).collect()
        })
}

fn catalog() -> Catalog {
    let q = |id: &str, axis, entity: Option<&str>| QuestionSpec {
        id: id.into(),
        axis,
        entity: entity.map(Into::into),
        text: "?".into(),
        options: OPTIONS.iter().map(|s| s.to_string()).collect(),
        multi_select: true,
        visibility_text: entity.map(|_| "visible?".into()),
    };
    Catalog::new(
        "invariants",
        vec![
            q("house.a", QuestionAxis::EntityAppearance, Some("house")),
            q("bg.a", QuestionAxis::BackgroundOutdoor, None),
        ],
    )
    .unwrap()
}

fn option_set() -> impl Strategy<Value = BTreeSet<String>> {
    subsequence(OPTIONS.to_vec(), 1..=2).prop_map(|s| s.into_iter().map(String::from).collect())
}

/// (image, question, annotator answers, model reply)
type Item = (usize, bool, Vec<BTreeSet<String>>, Option<BTreeSet<String>>);

fn items() -> impl Strategy<Value = Vec<Item>> {
    prop::collection::vec(
        (
            0usize..1000,
            any::<bool>(),
            prop::collection::vec(option_set(), 1..5),
            prop::option::weighted(0.9, option_set()),
        ),
        1..30,
    )
    .prop_map(|mut v| {
        v.sort_by_key(|i| (i.0, i.1));
        v.dedup_by_key(|i| (i.0, i.1));
        v
    })
}

fn expand(items: &[Item]) -> (BTreeMap<(String, String), BTreeSet<String>>, Vec<HumanAnnotation>) {
    let mut model = BTreeMap::new();
    let mut annotations = Vec::new();
    for (image, entity, votes, reply) in items {
        let qid = if *entity { "house.a" } else { "bg.a" };
        let image = format!("img{image}");
        if let Some(r) = reply {
            model.insert((image.clone(), qid.to_string()), r.clone());
        }
        for (w, v) in votes.iter().enumerate() {
            annotations.push(HumanAnnotation {
                image_id: image.clone(),
                question_id: Some(qid.into()),
                dimension: None,
                annotator_id: format!("w{w}"),
                answer: AnnotationAnswer::Options(v.clone()),
                confidence: None,
                realism: None,
            });
        }
    }
    (model, annotations)
}

proptest! {
    #[test]
    fn diversity_is_bounded_and_order_free(mut c in counts(), pad in 0usize..4, shift in 0usize..24) {
        c.extend(std::iter::repeat_n(0, pad));
        let size = c.len();
        let d: f64 = diversity_score(&c, size).unwrap();
        prop_assert!((0.0..=1.0).contains(&d));
        let mut rotated = c.clone();
        rotated.rotate_left(shift % c.len());
        let r: f64 = diversity_score(&rotated, size).unwrap();
        prop_assert!((d - r).abs() <= 1e-12);
        let single: f32 = diversity_score(&c, size).unwrap();
        prop_assert!((single as f64 - d).abs() <= 1e-4);
    }

    #[test]
    fn scaling_counts_keeps_diversity(c in counts(), k in 1u64..50) {
        let scaled: Vec<u64> = c.iter().map(|x| x * k).collect();
        let a: f64 = diversity_score(&c, c.len()).unwrap();
        let b: f64 = diversity_score(&scaled, c.len()).unwrap();
        prop_assert!((a - b).abs() <= 1e-9);
    }

    #[test]
    fn js_distance_is_a_bounded_symmetric_metric(
        (p, q, r) in (2usize..10).prop_flat_map(|n| (probabilities(n), probabilities(n), probabilities(n)))
    ) {
        let (p, q, r) = (
            Distribution::unlabeled(p).unwrap(),
            Distribution::unlabeled(q).unwrap(),
            Distribution::unlabeled(r).unwrap(),
        );
        let pq: f64 = js_distance(&p, &q).unwrap();
        prop_assert!((0.0..=1.0).contains(&pq));
        prop_assert!((pq - js_distance(&q, &p).unwrap()).abs() <= 1e-12);
        prop_assert!(js_distance(&p, &r).unwrap() <= pq + js_distance(&q, &r).unwrap() + 1e-12);
    }

    #[test]
    fn rank_statistics_ignore_monotone_transforms(
        pairs in prop::collection::vec((0i32..20, 0i32..20), 3..40)
    ) {
        let xs: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
        let ys: Vec<f64> = pairs.iter().map(|p| p.1 as f64).collect();
        prop_assume!(xs.iter().any(|&x| x != xs[0]) && ys.iter().any(|&y| y != ys[0]));
        let warped: Vec<f64> = xs.iter().map(|x| (x / 3.0).exp() + x.powi(3)).collect();
        let a = PairedSamples::new(xs, ys.clone()).unwrap();
        let b = PairedSamples::new(warped, ys).unwrap();
        let (rho, rho_w): (f64, f64) = (spearman_rho(&a).unwrap(), spearman_rho(&b).unwrap());
        let (tau, tau_w): (f64, f64) = (kendall_tau(&a).unwrap(), kendall_tau(&b).unwrap());
        prop_assert!((rho - rho_w).abs() <= 1e-12);
        prop_assert!((tau - tau_w).abs() <= 1e-12);
        prop_assert!((-1.0..=1.0).contains(&rho) && (-1.0..=1.0).contains(&tau));
    }

    #[test]
    fn accuracy_is_bounded_and_order_free(items in items(), seed in any::<u64>()) {
        let catalog = catalog();
        let (model, mut annotations) = expand(&items);
        for rule in [MatchRule::Exact, MatchRule::Intersect] {
            let Ok(report) = vdi_accuracy(&model, &annotations, &catalog, rule) else { continue };
            let acc = report.overall.accuracy().unwrap();
            prop_assert!((0.0..=1.0).contains(&acc));
            prop_assert_eq!(report.ties_skipped + report.overall.evaluated, report.items);
            prop_assert_eq!(report.entity.evaluated + report.background.evaluated, report.overall.evaluated);
            prop_assert_eq!(report.items + report.unreplied, items.len());

            let n = annotations.len();
            for i in 0..n {
                let j = (seed.wrapping_mul(i as u64 + 7) % n as u64) as usize;
                annotations.swap(i, j);
            }
            let shuffled = vdi_accuracy(&model, &annotations, &catalog, rule).unwrap();
            prop_assert_eq!(&shuffled, &report);
        }
    }

    #[test]
    fn intersect_never_scores_below_exact(items in items()) {
        let catalog = catalog();
        let (model, annotations) = expand(&items);
        if let (Ok(e), Ok(i)) = (
            vdi_accuracy(&model, &annotations, &catalog, MatchRule::Exact),
            vdi_accuracy(&model, &annotations, &catalog, MatchRule::Intersect),
        ) {
            prop_assert!(i.overall.correct >= e.overall.correct);
        }
    }

    #[test]
    fn mitigation_spends_the_budget_and_never_lowers_diversity(
        counts in prop::array::uniform5(0u64..400).prop_filter("rated", |c| c.iter().sum::<u64>() >= 5),
    ) {
        let rd = RatingDistribution::new(SliceKey::new("d", "e", "c"), RatingDimension::Affluence, counts);
        let budget = rd.total();
        let plan = mitigation_plan(&rd, budget, DEFAULT_MITIGATION_EPSILON).unwrap();
        prop_assert_eq!(plan.iter().sum::<u64>(), budget);
        let pooled = RatingDistribution::new(rd.key.clone(), rd.dimension, augmented_counts(&rd, &plan));
        prop_assert!(sevi_diversity(&pooled).unwrap() >= sevi_diversity(&rd).unwrap() - 1e-12);
    }
}
