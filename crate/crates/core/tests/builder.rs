mod common;

use anomagent::agent_loop::{replay_episode, LoopConfig, Termination};
use anomagent::protocol::{check_format, ImageRef, Segment, ToolName, ToolObservation};
use anomagent::rewards::{total_reward, RewardWeights, TaskSource, TransitionTable};
use anomagent::trajectory_builder::{
    build_dataset, build_trajectory, classify, need_kr, sft_target_mask, BuildSpec, Steps,
    TaxonomyClass,
};
use common::{random_spec, sim};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn count(t: &anomagent::protocol::Trajectory, tool: ToolName) -> usize {
    t.tool_sequence().iter().filter(|&&x| x == tool).count()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn built_trajectories_satisfy_the_invariants(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = random_spec(&mut rng);
        let t = build_trajectory(&spec, &sim(rng.random())).unwrap();

        prop_assert!(check_format(&t));
        let n = count(&t, ToolName::ImageGen);
        if let Steps::Fixed(k) = spec.n {
            prop_assert_eq!(n, k as usize);
        }
        prop_assert!((1..=3).contains(&n));
        prop_assert_eq!(count(&t, ToolName::QualityEval), n);
        prop_assert_eq!(count(&t, ToolName::PromptGen), 1);
        prop_assert_eq!(count(&t, ToolName::MaskGen), 1);
        prop_assert_eq!(t.segments.iter().filter(|s| matches!(s, Segment::Answer(_))).count(), 1);
        prop_assert_eq!(classify(&t), TaxonomyClass::from_generations(n));

        let kr = count(&t, ToolName::KnowledgeRetrieval);
        match n {
            1 => prop_assert_eq!(kr, 0),
            2 => prop_assert!(kr <= 1),
            _ => prop_assert_eq!(kr, 1),
        }

        // The real anomaly is the final image and carries the mask.
        prop_assert_eq!(t.images.last().unwrap(), &spec.anomaly_image);
        let answer = t.answer().unwrap();
        prop_assert_eq!(answer.final_image_index, t.image_count());
        prop_assert_eq!(t.image_count() as usize, n + 1);

        // Replays through the environment to the same transcript.
        let e = replay_episode(&t, &LoopConfig::default());
        prop_assert_eq!(e.terminated_by, Termination::Answer);
        prop_assert_eq!(&e.trajectory, &t);

        // Disciplined by construction: no illegal transitions, every retrieval earns the bonus.
        let r = total_reward(&e, &RewardWeights::default(), &TransitionTable::default(), TaskSource::Reuse).unwrap();
        prop_assert_eq!(r.terms.transition_penalty, 0.0);
        prop_assert_eq!(r.terms.format_indicator, 1.0);
        prop_assert!((r.terms.kr_bonus - 0.2 * kr as f64).abs() < 1e-12);
        prop_assert!(*e.qe_scores.last().unwrap() >= LoopConfig::default().theta);
        prop_assert!(e.qe_scores[..n - 1].iter().all(|s| *s < LoopConfig::default().theta));

        let mask = sft_target_mask(&t);
        prop_assert_eq!(mask.len(), t.segments.len());
        for (m, s) in mask.iter().zip(&t.segments) {
            prop_assert_eq!(*m, !matches!(s, Segment::ToolReturn(_)));
        }
    }

    #[test]
    fn building_is_deterministic(seed in any::<u64>()) {
        let spec = random_spec(&mut ChaCha8Rng::seed_from_u64(seed));
        let a = build_trajectory(&spec, &sim(5)).unwrap();
        let b = build_trajectory(&spec, &sim(5)).unwrap();
        prop_assert_eq!(a.to_jsonl_line(), b.to_jsonl_line());
    }
}

#[test]
fn kr_ratio_extremes_control_dual_generation() {
    for seed in 0..50 {
        let base = BuildSpec::new("ano/a.png", "bottle", "crack")
            .with_n(Steps::Fixed(2))
            .with_seed(seed);
        let never = build_trajectory(&base.clone().with_kr_ratio(0.0), &sim(0)).unwrap();
        let always = build_trajectory(&base.with_kr_ratio(1.0), &sim(0)).unwrap();
        assert_eq!(count(&never, ToolName::KnowledgeRetrieval), 0);
        assert_eq!(count(&always, ToolName::KnowledgeRetrieval), 1);
    }
}

#[test]
fn normal_image_is_reconstructed_from_the_anomaly() {
    let spec = BuildSpec::new("ano_001", "pcb", "bent")
        .with_n(Steps::Fixed(1))
        .with_seed(1);
    let t = build_trajectory(&spec, &sim(0)).unwrap();
    assert_eq!(t.image(1), Some(&ImageRef::new("normal_of_ano_001")));
    assert_eq!(t.task.normal_image, ImageRef::new("normal_of_ano_001"));
    let mask = t.tool_returns().find_map(|o| match o {
        ToolObservation::Mask(m) => Some(m.mask_reference.clone()),
        _ => None,
    });
    assert_eq!(mask, Some(ImageRef::new("mask_of_ano_001")));
}

#[test]
fn need_kr_table() {
    assert!(!need_kr(1, 1, 0.0, 1.0));
    assert!(need_kr(3, 1, 0.99, 0.0));
    assert!(!need_kr(3, 2, 0.0, 1.0));
    assert!(!need_kr(3, 3, 0.0, 1.0));
    assert!(need_kr(2, 1, 0.3, 0.5));
    assert!(!need_kr(2, 1, 0.7, 0.5));
    assert!(!need_kr(2, 2, 0.0, 1.0));
}

#[test]
fn random_step_counts_are_uniform() {
    // 300 unpinned specs: each class count within 3 sigma of 100.
    let mut counts = [0usize; 3];
    for i in 0..300u64 {
        let spec = BuildSpec::new(format!("ano/{i}.png"), "tile", "crack")
            .with_seed(anomagent::derive_seed(99, i));
        let t = build_trajectory(&spec, &sim(0)).unwrap();
        counts[count(&t, ToolName::ImageGen) - 1] += 1;
    }
    let sigma = (300.0f64 * (1.0 / 3.0) * (2.0 / 3.0)).sqrt();
    for c in counts {
        assert!((c as f64 - 100.0).abs() <= 3.0 * sigma, "{counts:?}");
    }
}

#[test]
fn dataset_files_are_byte_identical_and_ordered() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let specs: Vec<BuildSpec> = (0..40).map(|_| random_spec(&mut rng)).collect();
    let (a_path, b_path) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
    let (built, stats) = build_dataset(&specs, &sim(2), &a_path).unwrap();
    build_dataset(&specs, &sim(2), &b_path).unwrap();
    let a = std::fs::read(&a_path).unwrap();
    assert_eq!(a, std::fs::read(&b_path).unwrap());
    assert_eq!(stats.total, 40);
    assert_eq!(stats.per_class.values().sum::<usize>(), 40);
    for (line, (spec, t)) in String::from_utf8(a)
        .unwrap()
        .lines()
        .zip(specs.iter().zip(&built))
    {
        assert_eq!(line, t.to_jsonl_line());
        assert_eq!(t.images.last().unwrap(), &spec.anomaly_image);
    }
}

#[test]
fn invalid_specs_are_recorded_not_fatal() {
    let dir = tempfile::tempdir().unwrap();
    let specs = vec![
        BuildSpec::new("ano/a.png", "bottle", "crack").with_seed(1),
        BuildSpec::new("ano/b.png", "bottle", "crack").with_kr_ratio(1.5),
    ];
    let (built, stats) = build_dataset(&specs, &sim(0), &dir.path().join("d.jsonl")).unwrap();
    assert_eq!(built.len(), 1);
    assert_eq!(stats.failures.len(), 1);
    assert_eq!(stats.failures[0].index, 1);
}
