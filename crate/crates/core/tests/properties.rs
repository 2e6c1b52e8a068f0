use std::collections::{BTreeMap, HashMap};

use decent::data::{EntityId, EntityKind, Interaction, InteractionKind, InteractionLog, Populations, StaticGraph};
use decent::dynamics::{project, update_pair, EmbeddingState, UpdateNet};
use decent::eval::{auc, dispersion, f1_macro};
use decent::linalg::Matrix;
use decent::loss::{domain_loss, LossWeights};
use decent::static_embed::{laplacian, laplacian_quadratic, Laplacians};
use decent::training::t_batches;
use proptest::prelude::*;

fn scored_labels() -> impl Strategy<Value = (Vec<f64>, Vec<usize>)> {
    (2usize..40).prop_flat_map(|n| {
        (
            prop::collection::vec(-5.0f64..5.0, n),
            prop::collection::vec(0usize..2, n),
        )
            .prop_filter("both classes", |(_, y)| y.contains(&0) && y.contains(&1))
    })
}

fn edges(n: usize) -> impl Strategy<Value = Vec<(usize, usize, f64)>> {
    prop::collection::vec((0..n, 0..n, 0.1f64..3.0), 0..3 * n)
        .prop_map(|es| {
            let mut keep = BTreeMap::new();
            for (a, b, w) in es {
                if a != b {
                    keep.entry((a.min(b), a.max(b))).or_insert(w);
                }
            }
            keep.into_iter().map(|((a, b), w)| (a, b, w)).collect()
        })
}

fn net(out: usize, input: usize) -> impl Strategy<Value = UpdateNet> {
    (
        prop::collection::vec(-3.0f64..3.0, out * input),
        prop::collection::vec(-3.0f64..3.0, out),
    )
        .prop_map(move |(w, b)| UpdateNet {
            w: Matrix::from_col_major(out, input, w).unwrap(),
            b,
        })
}

proptest! {
    #[test]
    fn auc_ignores_increasing_transforms((scores, labels) in scored_labels(), a in 0.1f64..4.0, b in -3.0f64..3.0) {
        let base = auc(&scores, &labels).unwrap();
        let moved: Vec<f64> = scores.iter().map(|s| (a * s + b).exp()).collect();
        prop_assert!((auc(&moved, &labels).unwrap() - base).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&base));
    }

    #[test]
    fn f1_ignores_class_relabeling(
        pairs in prop::collection::vec((0usize..4, 0usize..4), 1..60),
        perm in Just(vec![0usize, 1, 2, 3]).prop_shuffle(),
    ) {
        let (pred, truth): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        let base = f1_macro(&pred, &truth, 4).unwrap();
        let p2: Vec<_> = pred.iter().map(|&c| perm[c]).collect();
        let t2: Vec<_> = truth.iter().map(|&c| perm[c]).collect();
        prop_assert!((f1_macro(&p2, &t2, 4).unwrap() - base).abs() < 1e-12);
    }

    #[test]
    fn dispersion_is_symmetric_and_non_negative(
        groups in prop::collection::vec(prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 3), 1..6), 1..5)
    ) {
        let m = dispersion(&groups).unwrap();
        for i in 0..m.len() {
            for j in 0..m.len() {
                prop_assert!(m[i][j] >= 0.0);
                prop_assert_eq!(m[i][j], m[j][i]);
            }
        }
    }

    #[test]
    fn singleton_dispersion_is_distance(points in prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 4), 1..6)) {
        let groups: Vec<_> = points.iter().map(|p| vec![p.clone()]).collect();
        let m = dispersion(&groups).unwrap();
        for i in 0..points.len() {
            prop_assert_eq!(m[i][i], 0.0);
            for j in 0..points.len() {
                let d: f64 = points[i].iter().zip(&points[j]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                prop_assert!((m[i][j] - d).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn projection_is_linear_in_the_embedding(
        e1 in prop::collection::vec(-2.0f64..2.0, 6),
        e2 in prop::collection::vec(-2.0f64..2.0, 6),
        w in prop::collection::vec(-2.0f64..2.0, 6),
        a in -3.0f64..3.0,
        delta in 0.0f64..10.0,
    ) {
        let mixed: Vec<f64> = e1.iter().zip(&e2).map(|(x, y)| a * x + y).collect();
        let lhs = project(&mixed, delta, &w);
        let (p1, p2) = (project(&e1, delta, &w), project(&e2, delta, &w));
        for i in 0..6 {
            prop_assert!((lhs[i] - (a * p1[i] + p2[i])).abs() < 1e-9);
        }
    }

    #[test]
    fn updates_stay_inside_the_unit_box(
        pn in net(4, 4 + 4 + 1 + 2 + 1),
        cn in net(4, 4 + 4 + 1 + 2 + 1),
        ep in prop::collection::vec(-1.0f64..1.0, 4),
        ec in prop::collection::vec(-1.0f64..1.0, 4),
        stat in prop::collection::vec(-3.0f64..3.0, 2),
        dynf in prop::collection::vec(-3.0f64..3.0, 1),
        dp in 0.0f64..5.0,
        dc in 0.0f64..5.0,
    ) {
        let (a, b) = update_pair(&ep, &ec, dp, dc, &stat, &dynf, &pn, &cn).unwrap();
        prop_assert!(a.iter().chain(&b).all(|x| x.abs() <= 1.0));
    }

    #[test]
    fn laplacian_quadratic_is_non_negative(n in 1usize..9, es in edges(8), e in prop::collection::vec(-5.0f64..5.0, 8 * 3)) {
        let es: Vec<_> = es.into_iter().filter(|(a, b, _)| *a < n && *b < n).collect();
        let g = StaticGraph::new(EntityKind::Room, n, es).unwrap();
        let q = laplacian_quadratic(&laplacian(&g), &e[..n * 3], 3).unwrap();
        prop_assert!(q >= -1e-12, "{q}");
    }

    #[test]
    fn domain_loss_ignores_a_common_shift(
        ed in edges(5), em in edges(6), er in edges(4),
        shift in prop::collection::vec(-4.0f64..4.0, 3),
        values in prop::collection::vec(-1.0f64..1.0, 15 * 3),
    ) {
        let pop = Populations { patients: 1, doctors: 5, medications: 6, rooms: 4 };
        let laps = Laplacians {
            doctor: laplacian(&StaticGraph::new(EntityKind::Doctor, 5, ed).unwrap()),
            medication: laplacian(&StaticGraph::new(EntityKind::Medication, 6, em).unwrap()),
            room: laplacian(&StaticGraph::new(EntityKind::Room, 4, er).unwrap()),
        };
        let mut base = EmbeddingState::zeros(3, &pop);
        let mut moved = base.clone();
        let mut k = 0;
        for kind in [EntityKind::Doctor, EntityKind::Medication, EntityKind::Room] {
            for i in 0..pop.count(kind) {
                let e = &values[k * 3..k * 3 + 3];
                let s: Vec<f64> = e.iter().zip(&shift).map(|(a, b)| a + b).collect();
                base.set(kind, i, e, 0.0);
                moved.set(kind, i, &s, 0.0);
                k += 1;
            }
        }
        let w = LossWeights::default();
        let a = domain_loss(&base, &laps, &w).unwrap();
        let b = domain_loss(&moved, &laps, &w).unwrap();
        prop_assert!((a - b).abs() < 1e-8, "{a} vs {b}");
    }

    #[test]
    fn temporal_batches_are_valid(raw in prop::collection::vec((0usize..3, 0usize..5, 0usize..4, 0u32..50), 0..80)) {
        let kinds = [InteractionKind::Physician, InteractionKind::Medication, InteractionKind::Transfer];
        let events: Vec<_> = raw
            .iter()
            .map(|&(k, p, c, t)| Interaction::new(kinds[k], p, c, t as f64))
            .collect();
        let log = InteractionLog::new(events, None).unwrap();
        let batches = t_batches(&log);
        prop_assert_eq!(batches.iter().map(|b| b.events.len()).sum::<usize>(), log.events().len());
        let mut seen: HashMap<EntityId, (usize, f64)> = HashMap::new();
        for (i, b) in batches.iter().enumerate() {
            prop_assert_eq!(b.index, i + 1);
            prop_assert!(!b.events.is_empty());
            let mut inside = std::collections::HashSet::new();
            for ev in &b.events {
                for id in [ev.patient_id(), ev.counterpart_id()] {
                    prop_assert!(inside.insert(id), "{id} twice in batch {}", b.index);
                    if let Some(&(pb, pt)) = seen.get(&id) {
                        prop_assert!(pb < b.index && pt <= ev.timestamp);
                    }
                    seen.insert(id, (b.index, ev.timestamp));
                }
            }
        }
    }
}
