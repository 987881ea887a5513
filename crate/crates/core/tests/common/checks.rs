//! Oracle checks parameterised by size, shared by the integration tests and
//! the acceptance harness. Each returns a one-line summary or the reason it
//! failed.

use isogrid_core::drl::{PerBuffer, Transition};
use isogrid_core::errmodel::{fit_tls, normal_log_likelihood};
use isogrid_core::lpsolve::{solve_lp, solve_milp, MilpOptions, Status};
use isogrid_core::nn::Activation;
use isogrid_core::sched::{solve, Mode, ScheduleProblem};
use isogrid_core::sot::{atc, stc_full};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StudentT};

use super::*;

pub type Check = Result<String, String>;

pub fn exact() -> MilpOptions {
    MilpOptions { gap_tol: 0.0, abs_gap: 1e-9, ..MilpOptions::default() }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

/// Addition and full-range subtraction against joint-outcome enumeration.
pub fn sot_equivalence(pairs: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for case in 0..pairs {
        let step = [0.25, 0.5, 1.0, 2.5][rng.random_range(0..4)];
        let (ka, a) = random_grid_seq(&mut rng, step, 64);
        let (kb, b) = random_grid_seq(&mut rng, step, 64);
        let sum = atc(&a, &b).map_err(|e| format!("pair {case}: {e}"))?;
        let diff = stc_full(&a, &b).map_err(|e| format!("pair {case}: {e}"))?;
        let g1 = max_seq_gap(&sum, &joint_outcomes(ka, &a.probs, kb, &b.probs, 1));
        let g2 = max_seq_gap(&diff, &joint_outcomes(ka, &a.probs, kb, &b.probs, -1));
        worst = worst.max(g1).max(g2);
        if g1.max(g2) > 1e-12 {
            return Err(format!("pair {case}: gap {:e}", g1.max(g2)));
        }
    }
    Ok(format!("{pairs} pairs, max gap {worst:.1e}"))
}

/// Big-M and quantile-reduced scheduling models reach the same optimum.
pub fn mode_equivalence(instances: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut solved = 0;
    let mut worst: f64 = 0.0;
    for case in 0..instances {
        let p = random_schedule(&mut rng, 6, 40);
        let q = solve(&ScheduleProblem { mode: Mode::QuantileReduced, ..p.clone() }, &exact());
        let b = solve(&ScheduleProblem { mode: Mode::BigM, ..p }, &exact());
        match (q, b) {
            (Ok(q), Ok(b)) => {
                if q.milp.status != Status::Optimal || b.milp.status != Status::Optimal {
                    return Err(format!("instance {case}: not solved to optimality"));
                }
                let gap = (q.solution.total_cost - b.solution.total_cost).abs();
                worst = worst.max(gap);
                if gap > 1e-6 {
                    return Err(format!("instance {case}: {} vs {}", q.solution.total_cost, b.solution.total_cost));
                }
                solved += 1;
            }
            (Err(_), Err(_)) => {}
            (q, b) => return Err(format!("instance {case}: feasibility differs ({:?} vs {:?})", q.err(), b.err())),
        }
    }
    if solved * 2 < instances {
        return Err(format!("only {solved}/{instances} instances feasible"));
    }
    Ok(format!("{solved}/{instances} feasible instances agree, max gap {worst:.1e}"))
}

/// Branch and bound against exhaustive enumeration, simplex against vertex
/// enumeration.
pub fn milp_correctness(instances: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut optimal = 0;
    for case in 0..instances {
        let model = random_milp(&mut rng, 10, 3, 5);
        let res = solve_milp(&model, &exact());
        match exhaustive_milp(&model) {
            Some(z) => {
                if res.status != Status::Optimal || !close(res.objective, z, 1e-9) {
                    return Err(format!("milp {case}: {:?} {} vs {z}", res.status, res.objective));
                }
                if model.max_violation(&res.values) > 1e-7 || model.max_integrality_violation(&res.values) > 1e-6 {
                    return Err(format!("milp {case}: infeasible incumbent"));
                }
                optimal += 1;
            }
            None if res.status == Status::Infeasible => {}
            None => return Err(format!("milp {case}: oracle infeasible, solver {:?}", res.status)),
        }
    }
    let mut lp_optimal = 0;
    for case in 0..instances {
        let n = 1 + case % 6;
        let m = 1 + (case / 6) % 6;
        let model = random_lp(&mut rng, n, m);
        let res = solve_lp(&model);
        match lp_oracle(&model, &vec![None; n]) {
            Some(z) => {
                if res.status != Status::Optimal || !close(res.objective, z, 1e-7) {
                    return Err(format!("lp {case}: {:?} {} vs {z}", res.status, res.objective));
                }
                lp_optimal += 1;
            }
            None if res.status == Status::Infeasible => {}
            None => return Err(format!("lp {case}: oracle infeasible, solver {:?}", res.status)),
        }
    }
    Ok(format!("{optimal}/{instances} MILPs and {lp_optimal}/{instances} LPs optimal and matching, the rest infeasible in both"))
}

/// Backpropagation against central differences for every activation.
pub fn gradient_fidelity(nets_per_activation: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut parts = Vec::new();
    for act in Activation::ALL {
        let mut worst: f64 = 0.0;
        for _ in 0..nets_per_activation {
            let (net, x) = random_net(&mut rng, act, 1e-3);
            let up = [rng.random_range(-2.0..2.0)];
            worst = worst.max(gradient_check(&net, &x, &up, 1e-5));
        }
        if worst >= 1e-4 {
            return Err(format!("{act:?}: max relative error {worst:e}"));
        }
        parts.push(format!("{act:?} {worst:.1e}"));
    }
    Ok(format!("max relative error: {}", parts.join(", ")))
}

fn transition(v: f64) -> Transition {
    Transition { state: [v; 7], action: v, reward: -v, next_state: [v; 7], done: false }
}

/// Empirical rank-based sampling frequencies and importance weights.
pub fn per_sampling_law(draws: usize, seed: u64) -> Check {
    const ENTRIES: usize = 40;
    const CAPACITY: usize = 64;
    let beta = 0.4;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut parts = Vec::new();
    for iota in [0.0, 0.5, 1.0] {
        let mut buf = PerBuffer::new(CAPACITY, iota, beta).map_err(|e| e.to_string())?;
        let mut prios = Vec::new();
        for j in 0..ENTRIES {
            buf.push(transition(j as f64));
            prios.push(rng.random_range(0.01..5.0));
        }
        for (j, &p) in prios.iter().enumerate() {
            buf.set_priority(j, p);
        }
        buf.resort();
        let law = per_law(&prios, iota);
        let reported = buf.sample_probabilities();
        if let Some(j) = (0..ENTRIES).find(|&j| (reported[j] - law[j]).abs() > 1e-12) {
            return Err(format!("iota {iota}: P({j}) = {} but the law gives {}", reported[j], law[j]));
        }
        let mut counts = vec![0usize; ENTRIES];
        for (j, p) in buf.sample(&mut rng, draws) {
            counts[j] += 1;
            let w = 1.0 / ((CAPACITY as f64).powf(beta) * p.powf(beta));
            if buf.weight_for(p) != w {
                return Err(format!("iota {iota}: weight {} differs from {w}", buf.weight_for(p)));
            }
        }
        let worst = (0..ENTRIES).map(|j| (counts[j] as f64 / draws as f64 - law[j]).abs()).fold(0.0, f64::max);
        if worst > 0.01 {
            return Err(format!("iota {iota}: frequency off by {worst}"));
        }
        for (j, &pj) in law.iter().enumerate() {
            let w = 1.0 / ((CAPACITY as f64).powf(beta) * pj.powf(beta));
            if !close(buf.importance_weight(j), w, 1e-12) {
                return Err(format!("iota {iota}: W({j}) = {} but the law gives {w}", buf.importance_weight(j)));
            }
        }
        parts.push(format!("iota {iota}: max freq gap {worst:.4}"));
    }
    Ok(parts.join(", "))
}

/// Parameter recovery of the t location-scale fit and its likelihood edge
/// over a normal fit.
pub fn tls_recovery(n: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = StudentT::new(4.0).unwrap();
    let xs: Vec<f64> = (0..n).map(|_| t.sample(&mut rng)).collect();
    let fit = fit_tls(&xs).map_err(|e| e.to_string())?;
    let p = fit.params;
    let normal = normal_log_likelihood(&xs);
    let summary = format!("mu {:.4}, eps {:.4}, shape {:.3}, loglik {:.1} vs normal {:.1}", p.mu, p.epsilon, p.vartheta, fit.log_likelihood, normal);
    if p.mu.abs() > 0.05 || (p.epsilon - 1.0).abs() > 0.05 || (p.vartheta - 4.0).abs() > 0.5 || fit.log_likelihood <= normal {
        return Err(summary);
    }
    Ok(summary)
}
