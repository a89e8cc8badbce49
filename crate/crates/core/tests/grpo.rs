mod common;

use anomagent::grpo::{
    clipped_surrogate, group_advantages, grpo_loss, kl_estimate, sft_loss, GroupRollout,
    GrpoConfig, GrpoError, TokenLogprobs,
};
use common::{oracle_advantages, oracle_grpo_loss as oracle_loss, oracle_sft, oracle_surrogate};
use proptest::prelude::*;

fn rewards() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, 2..=16)
}

fn rollout(len: usize) -> impl Strategy<Value = TokenLogprobs> {
    (
        prop::collection::vec(-3.0f64..0.0, len),
        prop::collection::vec(-0.6f64..0.6, len),
        prop::collection::vec(-0.5f64..0.5, len),
        prop::collection::vec(prop::bool::weighted(0.7), len),
    )
        .prop_map(|(new, shift, kl, mask)| TokenLogprobs {
            old: new.iter().zip(&shift).map(|(n, s)| n - s).collect(),
            reference: new.iter().zip(&kl).map(|(n, k)| n + k).collect(),
            new,
            mask,
        })
}

fn group() -> impl Strategy<Value = GroupRollout> {
    (2usize..=6, 0usize..=8).prop_flat_map(|(g, len)| {
        (
            prop::collection::vec(-2.0f64..2.0, g),
            prop::collection::vec(rollout(len), g),
        )
            .prop_map(|(rewards, tokens)| GroupRollout { rewards, tokens })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn advantages_match_two_pass_oracle(r in rewards()) {
        let got = group_advantages(&r, &GrpoConfig::default()).unwrap();
        for (a, b) in got.iter().zip(oracle_advantages(&r, 1e-8)) {
            prop_assert!((a - b).abs() <= 1e-12, "{} vs {}", a, b);
        }
    }

    #[test]
    fn advantages_ignore_shift_and_scale(r in rewards(), shift in -100.0f64..100.0, scale in 0.01f64..100.0) {
        let cfg = GrpoConfig::default();
        let base = group_advantages(&r, &cfg).unwrap();
        let moved: Vec<f64> = r.iter().map(|x| x * scale + shift).collect();
        for (a, b) in base.iter().zip(group_advantages(&moved, &cfg).unwrap()) {
            prop_assert!((a - b).abs() <= 1e-8, "{} vs {}", a, b);
        }
        prop_assert!(base.iter().sum::<f64>().abs() <= 1e-9);
    }

    #[test]
    fn surrogate_respects_the_clip_bound(rho in 0.0f64..3.0, a in -3.0f64..3.0, eps in 0.01f64..0.5) {
        let (term, _) = clipped_surrogate(rho, a, eps);
        let clipped = rho.clamp(1.0 - eps, 1.0 + eps);
        prop_assert!(term <= (rho * a).max(clipped * a));
        if a >= 0.0 {
            prop_assert!(term <= rho * a);
        }
        prop_assert!((term - oracle_surrogate(rho, a, eps)).abs() <= 1e-15);
    }

    #[test]
    fn kl_is_non_negative_and_zero_only_on_agreement(new in -20.0f64..0.0, d in -5.0f64..5.0) {
        prop_assert!(kl_estimate(new, new + d) >= 0.0);
        prop_assert_eq!(kl_estimate(new, new), 0.0);
        if d.abs() > 1e-6 {
            prop_assert!(kl_estimate(new, new + d) > 0.0);
        }
    }

    #[test]
    fn loss_matches_explicit_branch_oracle(g in group(), filter in prop::bool::ANY, eps in 0.05f64..0.4, kl_beta in 0.0f64..0.2) {
        let cfg = GrpoConfig { epsilon: eps, kl_beta, filter_zero_advantage: filter, ..GrpoConfig::default() };
        let got = grpo_loss(&g, &cfg).unwrap();
        let (want, empty) = oracle_loss(&g, &cfg);
        prop_assert!((got.loss - want).abs() <= 1e-10, "{} vs {}", got.loss, want);
        prop_assert_eq!(got.empty_after_filter, empty);
    }

    #[test]
    fn unclipped_unpenalized_loss_is_reinforce(g in group()) {
        let cfg = GrpoConfig { epsilon: f64::INFINITY, kl_beta: 0.0, filter_zero_advantage: false, ..GrpoConfig::default() };
        let got = grpo_loss(&g, &cfg).unwrap();
        let adv = oracle_advantages(&g.rewards, cfg.std_floor);
        let mut terms = Vec::new();
        for (t, a) in g.tokens.iter().zip(&adv) {
            for i in (0..t.new.len()).filter(|&i| t.mask[i]) {
                terms.push((t.new[i] - t.old[i]).exp() * a);
            }
        }
        let want = if terms.is_empty() { 0.0 } else { -terms.iter().sum::<f64>() / terms.len() as f64 };
        prop_assert!((got.loss - want).abs() <= 1e-10);
    }

    #[test]
    fn sft_matches_filter_then_sum(lp in prop::collection::vec(-10.0f64..0.0, 0..64), seed in any::<u64>()) {
        let mask: Vec<bool> = (0..lp.len()).map(|i| (seed >> (i % 64)) & 1 == 1).collect();
        let got = sft_loss(&lp, &mask).unwrap();
        prop_assert!((got.loss - oracle_sft(&lp, &mask)).abs() <= 1e-12);
        prop_assert_eq!(got.tokens, mask.iter().filter(|m| **m).count());
    }
}

#[test]
fn zero_variance_group_is_filtered_out() {
    let tokens = vec![
        TokenLogprobs {
            new: vec![-0.5, -0.2],
            old: vec![-0.4, -0.2],
            reference: vec![-0.6, -0.1],
            mask: vec![true, true],
        };
        4
    ];
    let g = GroupRollout {
        rewards: vec![0.7; 4],
        tokens,
    };
    let cfg = GrpoConfig::default();
    assert_eq!(group_advantages(&g.rewards, &cfg).unwrap(), vec![0.0; 4]);
    let l = grpo_loss(&g, &cfg).unwrap();
    assert!(l.empty_after_filter);
    assert_eq!(l.loss, 0.0);
    assert_eq!(l.tokens, 0);

    let unfiltered = GrpoConfig {
        filter_zero_advantage: false,
        ..cfg
    };
    let l = grpo_loss(&g, &unfiltered).unwrap();
    assert!(!l.empty_after_filter);
    assert_eq!(l.tokens, 8);
}

#[test]
fn errors() {
    let cfg = GrpoConfig::default();
    assert_eq!(
        group_advantages(&[1.0], &cfg),
        Err(GrpoError::GroupTooSmall(1))
    );
    assert!(sft_loss(&[0.0], &[]).is_err());
    let bad = GroupRollout {
        rewards: vec![0.0, 1.0],
        tokens: vec![TokenLogprobs::default()],
    };
    assert!(matches!(
        grpo_loss(&bad, &cfg),
        Err(GrpoError::ShapeMismatch(_))
    ));
}

#[test]
fn certain_tokens_cost_nothing() {
    let l = sft_loss(&[0.0; 10], &[true; 10]).unwrap();
    assert_eq!(l.loss, 0.0);
    assert_eq!(l.tokens, 10);
}
