mod common;

use common::pairwise_auc;
use proptest::prelude::*;
use vadrank_core::config::Config;
use vadrank_core::dataset::{synth_image_scene, GroundTruth};
use vadrank_core::eval::{auc, auc_values};
use vadrank_core::hitl::{expand_feedback, expert_feedback, Feedback};
use vadrank_core::localize::cam_mean;
use vadrank_core::rundir::{DatasetSpec, RunDir};
use vadrank_core::selftrain::{ensemble_score, run_self_training, select_pseudo_labels};
use vadrank_core::{Provenance, ScoreVector};

#[test]
fn vector_run_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = DatasetSpec::SynthVector {
        k_normal: 150,
        k_anomaly: 15,
        dim: 6,
        separation: 8.0,
        seed: 5,
    };
    let mut cfg = Config::with_seed(2);
    cfg.set("iterations", "3").unwrap();
    cfg.set("epochs", "60").unwrap();
    let dir = RunDir::create(tmp.path().join("run"), &cfg, &spec).unwrap();
    let data = spec.load().unwrap();
    let gt = data.truth.clone().unwrap();
    let run = dir.execute(&data.frames, &cfg, &mut |_| {}).unwrap();

    let ens = ScoreVector::read_csv(dir.ensemble_path(), Provenance::Ensemble).unwrap();
    let mean = run.prefix_ensembles().pop().unwrap();
    for (a, b) in ens.values().iter().zip(mean.values()) {
        assert!((a - b).abs() < 1e-12);
    }
    assert!(auc(&ens, &gt).unwrap().auc > 0.8);

    let mut session = dir.open_session(&data.frames, &cfg, &run).unwrap();
    for _ in 0..2 {
        let fb = expert_feedback(&session, &gt, cfg.hitl.k);
        session = dir.apply_round(session, &data.frames, fb).unwrap();
    }
    let reopened = dir.open_session(&data.frames, &cfg, &run).unwrap();
    assert_eq!(reopened.round(), 2);
    assert_eq!(reopened.scores(), session.scores());
    assert_eq!(reopened.feedback_log(), session.feedback_log());
    assert_eq!(dir.read_log().unwrap().iter().filter(|e| e.event == "feedback").count(), 2);
}

#[test]
fn image_ensemble_maps_reproduce_the_ensemble_score() {
    let scene = synth_image_scene(40, 4, 16, 16, 1).unwrap();
    let mut cfg = Config::with_seed(1);
    cfg.set("iterations", "2").unwrap();
    cfg.set("epochs", "3").unwrap();
    cfg.set("arch", "conv-gap-linear").unwrap();
    let run = run_self_training(&scene.frames, &cfg.run).unwrap();
    let em = run.ensemble();
    let scores = ensemble_score(&em, &scene.frames).unwrap();
    for id in [0, 7, 21] {
        let m = cam_mean(em.models(), scene.frames.frame(id).unwrap()).unwrap();
        let want = scores.values()[id];
        assert!((m.reconstructed_score() - want).abs() <= 1e-9 * (1.0 + want.abs()));
    }
}

fn labelled() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (2usize..60).prop_flat_map(|k| {
        (
            prop::collection::vec(prop_oneof![(-5i32..5).prop_map(f64::from), -5.0f64..5.0], k),
            prop::collection::vec(any::<bool>(), k),
        )
            .prop_filter("both classes", |(_, l)| l.iter().any(|&b| b) && l.iter().any(|&b| !b))
    })
}

proptest! {
    #[test]
    fn fast_auc_matches_pairwise((s, l) in labelled()) {
        let gt = GroundTruth::new(l.clone()).unwrap();
        let fast = auc_values(&s, &gt).unwrap().auc;
        prop_assert!((fast - pairwise_auc(&s, &l)).abs() <= 1e-12);
    }

    #[test]
    fn auc_is_rank_invariant_and_flips_with_sign((s, l) in labelled()) {
        let gt = GroundTruth::new(l).unwrap();
        let a = auc_values(&s, &gt).unwrap().auc;
        let squashed: Vec<f64> = s.iter().map(|v| (v / 3.0).tanh() * 2.0 + 1.0).collect();
        let negated: Vec<f64> = s.iter().map(|v| -v).collect();
        prop_assert!((auc_values(&squashed, &gt).unwrap().auc - a).abs() <= 1e-12);
        prop_assert!((auc_values(&negated, &gt).unwrap().auc - (1.0 - a)).abs() <= 1e-12);
    }

    #[test]
    fn pseudo_labels_are_sized_disjoint_and_extreme(
        s in prop::collection::vec(0u8..20, 10..300),
        a in 0.02f64..0.3,
        n in 0.02f64..0.5,
    ) {
        let k = s.len();
        let values: Vec<f64> = s.iter().map(|&v| f64::from(v)).collect();
        let sv = ScoreVector::new(values.clone(), Provenance::Fused).unwrap();
        let na = (a * k as f64 - 1e-9).ceil() as usize;
        let nn = (n * k as f64 - 1e-9).ceil() as usize;
        match select_pseudo_labels(&sv, a, n) {
            Ok(l) => {
                prop_assert_eq!(l.anomalies().len(), na);
                prop_assert_eq!(l.normals().len(), nn);
                let lowest_anomaly = l.anomalies().iter().map(|&i| values[i]).fold(f64::MAX, f64::min);
                let highest_normal = l.normals().iter().map(|&i| values[i]).fold(f64::MIN, f64::max);
                prop_assert!(lowest_anomaly >= highest_normal);
                prop_assert!(l.anomalies().iter().all(|i| !l.normals().contains(i)));
            }
            Err(_) => prop_assert!(na + nn > k || na == 0 || nn == 0),
        }
    }

    #[test]
    fn expansion_keeps_tags_and_stays_in_windows(
        k in 20usize..200,
        picks in prop::collection::vec((0usize..200, any::<bool>()), 1..8),
        radius in 0usize..6,
    ) {
        let mut fb = Feedback::default();
        for (id, anomalous) in picks {
            let id = id % k;
            if fb.anomalies.contains(&id) || fb.normals.contains(&id) {
                continue;
            }
            if anomalous { fb.anomalies.push(id) } else { fb.normals.push(id) }
        }
        let set = expand_feedback(&fb, k, radius);
        for a in &fb.anomalies {
            prop_assert!(set.anomalies.contains(a));
        }
        for n in &fb.normals {
            prop_assert!(set.normals.contains(n));
        }
        prop_assert!(set.anomalies.iter().all(|i| !set.normals.contains(i)));
        let tagged: Vec<usize> = fb.anomalies.iter().chain(&fb.normals).copied().collect();
        for &i in set.anomalies.iter().chain(&set.normals) {
            prop_assert!(i < k);
            prop_assert!(tagged.iter().any(|&t| t.abs_diff(i) <= radius));
        }
    }
}
