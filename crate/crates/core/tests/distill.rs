use splitwire::distill::{eckart_young_bound, toy_fixture, train_toy, FIXTURE_NAMES};
use splitwire::Error;

/// Epochs whose mean loss rose by more than float jitter.
fn rises(history: &[f64]) -> usize {
    history.windows(2).filter(|w| w[1] > w[0] * (1.0 + 1e-9)).count()
}

#[test]
fn loss_mostly_decreases() {
    for name in FIXTURE_NAMES {
        for seed in 0..3 {
            let fx = toy_fixture(name, seed).unwrap();
            let out = train_toy(&fx.teacher, &fx.student, &fx.dataset, &fx.config).unwrap();
            let losses: Vec<f64> = out.history.iter().map(|r| r.mean_loss).collect();
            assert_eq!(losses.len(), fx.config.epochs);
            let drop = if name == "linear_low_rank" { 0.9 } else { 1e-2 };
            assert!(losses.last().unwrap() < &(losses[0] * drop), "{name}/{seed}");
            assert!(rises(&losses) * 10 < losses.len(), "{name}/{seed}: {} rises", rises(&losses));
        }
    }
}

#[test]
fn low_rank_student_cannot_beat_the_bound() {
    for seed in 0..5 {
        let fx = toy_fixture("linear_low_rank", seed).unwrap();
        let out = train_toy(&fx.teacher, &fx.student, &fx.dataset, &fx.config).unwrap();
        let (a, x, b) = fx.oracle.unwrap();
        let bound = eckart_young_bound(&a, &x, b);
        assert!(out.final_loss >= bound * (1.0 - 1e-9), "{} < {bound}", out.final_loss);
        assert!(out.final_loss <= bound * 1.05);
    }
}

#[test]
fn learning_rate_follows_schedule() {
    let fx = toy_fixture("multi_tap", 0).unwrap();
    let out = train_toy(&fx.teacher, &fx.student, &fx.dataset, &fx.config).unwrap();
    for rec in &out.history {
        assert_eq!(rec.lr, fx.config.lr_at(rec.epoch));
    }
    let lrs: Vec<f64> = out.history.iter().map(|r| r.lr).collect();
    assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn unknown_fixture() {
    assert!(matches!(toy_fixture("resnet", 0), Err(Error::Argument(_))));
}
