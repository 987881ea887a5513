mod common;

use common::checks;
use isogrid_core::sched::{solve, EssParams, ScheduleProblem};
use isogrid_core::sot::ProbSeq;

#[test]
fn bigm_and_quantile_agree() {
    if let Err(e) = checks::mode_equivalence(20, 31) {
        panic!("{e}");
    }
}

fn spread_day(alpha: f64, ess: EssParams) -> ScheduleProblem {
    let el: Vec<f64> = (0..6).map(|t| 40.0 + 8.0 * t as f64).collect();
    let probs = vec![0.02, 0.05, 0.13, 0.3, 0.3, 0.13, 0.05, 0.02];
    let seq = ProbSeq::new(-14.0, 4.0, probs).unwrap();
    let mut p = ScheduleProblem::new(el, vec![seq; 6], alpha);
    p.ess = ess;
    p
}

fn costs(ess: EssParams) -> Vec<f64> {
    [0.9, 0.95, 0.99].iter().map(|&a| solve(&spread_day(a, ess.clone()), &checks::exact()).unwrap().solution.total_cost).collect()
}

#[test]
fn cost_rises_with_alpha_when_units_carry_the_reserve() {
    let c = costs(EssParams::none());
    assert!(c[0] < c[1] && c[1] < c[2], "{c:?}");
}

#[test]
fn battery_reserve_is_free() {
    let c = costs(EssParams::default());
    assert!(c.windows(2).all(|w| w[0] <= w[1] + 1e-9), "{c:?}");
    assert!((c[2] - c[0]).abs() < 1e-9, "{c:?}");
}
