mod common;

use proptest::prelude::*;
use swarm_intent::consensus::{decide, decide_with_fallback, Vote, VoteInput};
use swarm_intent::StationId;

fn vote(robot: usize, action: u8, confidence: f64, detections: usize) -> Vote {
    Vote {
        robot,
        action: StationId::new(action).unwrap(),
        confidence,
        detections,
    }
}

#[test]
fn thousand_random_inputs_agree_with_brute_force() {
    let rep = common::consensus_report(1000, 5);
    assert!(rep.clean(), "{rep:?}");
}

#[test]
fn majority_by_weight() {
    // alpha = 1 makes V the visibility shares [0.3, 0.3, 0.4].
    let input = VoteInput {
        votes: vec![vote(0, 2, 0.5, 3), vote(1, 2, 0.5, 3), vote(2, 3, 0.9, 4)],
        alpha: 1.0,
        beta: 0.0,
    };
    let r = decide(&input).unwrap();
    assert_eq!(r.decided.get(), 2);
    assert!((r.totals[1] - 0.6).abs() < 1e-12 && (r.totals[2] - 0.4).abs() < 1e-12);
}

#[test]
fn ties_go_to_confidence_then_lowest_station() {
    let tied = |c0: f64, c1: f64| VoteInput {
        votes: vec![vote(0, 4, c0, 2), vote(1, 3, c1, 2)],
        alpha: 1.0,
        beta: 0.0,
    };
    let r = decide(&tied(0.9, 0.4)).unwrap();
    assert!(r.tie_break);
    assert_eq!(r.decided.get(), 4);
    assert_eq!(decide(&tied(0.5, 0.5)).unwrap().decided.get(), 3);
}

#[test]
fn zero_detections_fall_back_to_uniform() {
    let input = VoteInput {
        votes: vec![vote(0, 1, 0.2, 0), vote(1, 2, 0.8, 0)],
        alpha: 0.5,
        beta: 0.5,
    };
    assert!(decide(&input).is_err());
    let r = decide_with_fallback(&input).unwrap();
    assert!(r.uniform_visibility);
    assert_eq!(r.decided.get(), 2);
    assert!((r.votes[0] - 0.35).abs() < 1e-12);
}

fn votes_strategy() -> impl Strategy<Value = VoteInput> {
    (
        prop::collection::vec((1u8..=4, 0.01f64..=1.0, 0usize..30), 1..=6),
        0.0f64..=1.0,
    )
        .prop_filter("some detections", |(v, _)| v.iter().any(|x| x.2 > 0))
        .prop_map(|(v, alpha)| VoteInput {
            votes: v.into_iter().enumerate().map(|(i, (a, c, n))| vote(i, a, c, n)).collect(),
            alpha,
            beta: 1.0 - alpha,
        })
}

proptest! {
    #[test]
    fn votes_sum_to_alpha_plus_beta(input in votes_strategy()) {
        let r = decide(&input).unwrap();
        prop_assert!((r.votes.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert_eq!(Some(r.decided), common::consensus_oracle(&input).map(|o| o.0));
    }

    #[test]
    fn decided_class_has_the_largest_total(input in votes_strategy()) {
        let r = decide(&input).unwrap();
        let max = r.totals.iter().copied().fold(f64::MIN, f64::max);
        prop_assert!(max - r.totals[r.decided.index()] <= 1e-12);
    }

    #[test]
    fn scaling_confidences_keeps_the_decision(input in votes_strategy(), lambda in 0.05f64..1.0) {
        let mut scaled = input.clone();
        scaled.votes.iter_mut().for_each(|v| v.confidence *= lambda);
        prop_assert_eq!(decide(&input).unwrap().decided, decide(&scaled).unwrap().decided);
    }
}
