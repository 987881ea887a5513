//! Brute-force oracles and instance generators shared by integration tests
//! and the acceptance harness.
#![allow(dead_code)]

pub mod checks;

use isogrid_core::lpsolve::{MilpModel, Sense};
use rand::Rng;

/// Solves `a x = b` (n×n, row-major) by Gaussian elimination with partial
/// pivoting. `None` when (near) singular.
pub fn gauss_solve(mut a: Vec<f64>, mut b: Vec<f64>, n: usize) -> Option<Vec<f64>> {
    for k in 0..n {
        let p = (k..n).max_by(|&i, &j| a[i * n + k].abs().total_cmp(&a[j * n + k].abs()))?;
        if a[p * n + k].abs() < 1e-10 {
            return None;
        }
        for c in 0..n {
            a.swap(k * n + c, p * n + c);
        }
        b.swap(k, p);
        for i in k + 1..n {
            let f = a[i * n + k] / a[k * n + k];
            for c in k..n {
                a[i * n + c] -= f * a[k * n + c];
            }
            b[i] -= f * b[k];
        }
    }
    let mut x = vec![0.0; n];
    for k in (0..n).rev() {
        let s: f64 = (k + 1..n).map(|c| a[k * n + c] * x[c]).sum();
        x[k] = (b[k] - s) / a[k * n + k];
    }
    Some(x)
}

fn combinations(n: usize, k: usize, f: &mut dyn FnMut(&[usize])) {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, f: &mut dyn FnMut(&[usize])) {
        if cur.len() == k {
            f(cur);
            return;
        }
        for i in start..n {
            if n - i < k - cur.len() {
                break;
            }
            cur.push(i);
            rec(i + 1, n, k, cur, f);
            cur.pop();
        }
    }
    rec(0, n, k, &mut Vec::with_capacity(k), f);
}

/// Minimum of `c·x` over the polytope `{g_k·x <= h_k}` by enumerating every
/// basic solution. All variables must be boxed so the optimum is a vertex.
pub fn vertex_enumeration(c: &[f64], g: &[Vec<f64>], h: &[f64]) -> Option<f64> {
    let n = c.len();
    let feasible = |x: &[f64]| {
        g.iter().zip(h).all(|(row, &rhs)| {
            let act: f64 = row.iter().zip(x).map(|(a, v)| a * v).sum();
            act <= rhs + 1e-9 * (1.0 + rhs.abs())
        })
    };
    if n == 0 {
        return feasible(&[]).then_some(0.0);
    }
    let mut best: Option<f64> = None;
    combinations(g.len(), n, &mut |idx| {
        let mut a = Vec::with_capacity(n * n);
        let mut b = Vec::with_capacity(n);
        for &k in idx {
            a.extend_from_slice(&g[k]);
            b.push(h[k]);
        }
        if let Some(x) = gauss_solve(a, b, n) {
            if feasible(&x) {
                let z: f64 = c.iter().zip(&x).map(|(a, v)| a * v).sum();
                best = Some(best.map_or(z, |b: f64| b.min(z)));
            }
        }
    });
    best
}

/// LP optimum by vertex enumeration, with some columns fixed.
pub fn lp_oracle(model: &MilpModel, fixed: &[Option<f64>]) -> Option<f64> {
    let free: Vec<usize> = (0..model.num_columns()).filter(|&j| fixed[j].is_none()).collect();
    let pos = |j: usize| free.iter().position(|&f| f == j);
    let mut g = Vec::new();
    let mut h = Vec::new();
    for r in &model.rows {
        let mut row = vec![0.0; free.len()];
        let mut rhs = r.rhs;
        for &(j, a) in &r.coeffs {
            match fixed[j] {
                Some(v) => rhs -= a * v,
                None => row[pos(j).unwrap()] += a,
            }
        }
        let neg: Vec<f64> = row.iter().map(|v| -v).collect();
        match r.sense {
            Sense::Le => {
                g.push(row);
                h.push(rhs);
            }
            Sense::Ge => {
                g.push(neg);
                h.push(-rhs);
            }
            Sense::Eq => {
                g.push(row);
                h.push(rhs);
                g.push(neg);
                h.push(-rhs);
            }
        }
    }
    for (k, &j) in free.iter().enumerate() {
        let c = &model.columns[j];
        assert!(c.lower.is_finite() && c.upper.is_finite(), "oracle needs boxed columns");
        let mut up = vec![0.0; free.len()];
        up[k] = 1.0;
        g.push(up);
        h.push(c.upper);
        let mut lo = vec![0.0; free.len()];
        lo[k] = -1.0;
        g.push(lo);
        h.push(-c.lower);
    }
    let c: Vec<f64> = free.iter().map(|&j| model.columns[j].cost).collect();
    let fixed_cost: f64 = (0..model.num_columns()).filter_map(|j| fixed[j].map(|v| v * model.columns[j].cost)).sum();
    vertex_enumeration(&c, &g, &h).map(|z| z + fixed_cost)
}

/// MILP optimum by enumerating all binary assignments (binaries only).
pub fn exhaustive_milp(model: &MilpModel) -> Option<f64> {
    let bins: Vec<usize> = (0..model.num_columns()).filter(|&j| model.columns[j].integer).collect();
    assert!(bins.iter().all(|&j| model.is_binary(j)));
    let mut best: Option<f64> = None;
    for mask in 0u32..(1 << bins.len()) {
        let mut fixed = vec![None; model.num_columns()];
        for (k, &j) in bins.iter().enumerate() {
            fixed[j] = Some(((mask >> k) & 1) as f64);
        }
        if let Some(z) = lp_oracle(model, &fixed) {
            best = Some(best.map_or(z, |b: f64| b.min(z)));
        }
    }
    best
}

fn coef<R: Rng>(rng: &mut R) -> f64 {
    // half-integral values provoke ties and degeneracy
    if rng.random_bool(0.5) {
        (rng.random_range(-10..=10) as f64) * 0.5
    } else {
        rng.random_range(-5.0..5.0)
    }
}

fn sense<R: Rng>(rng: &mut R) -> Sense {
    match rng.random_range(0..10) {
        0 => Sense::Eq,
        1..=5 => Sense::Le,
        _ => Sense::Ge,
    }
}

/// Random boxed LP; rows are built around a known interior point so most
/// instances are feasible.
pub fn random_lp<R: Rng>(rng: &mut R, n: usize, m: usize) -> MilpModel {
    let mut model = MilpModel::new();
    let mut x0 = Vec::new();
    for j in 0..n {
        let lo = rng.random_range(-5..=0) as f64;
        let hi = lo + rng.random_range(1..=8) as f64;
        model.add_continuous(format!("x{j}"), lo, hi, coef(rng));
        x0.push(rng.random_range(lo..hi));
    }
    add_random_rows(rng, &mut model, &x0, m);
    model
}

fn add_random_rows<R: Rng>(rng: &mut R, model: &mut MilpModel, x0: &[f64], m: usize) {
    let n = model.num_columns();
    for i in 0..m {
        let mut coeffs = Vec::new();
        for j in 0..n {
            if rng.random_bool(0.7) {
                coeffs.push((j, coef(rng)));
            }
        }
        let act: f64 = coeffs.iter().map(|&(j, a)| a * x0[j]).sum();
        let s = sense(rng);
        let slack = rng.random_range(0.0..3.0);
        let rhs = match s {
            Sense::Le => act + slack,
            Sense::Ge => act - slack,
            Sense::Eq => act,
        };
        // occasionally tighten past the interior point to produce infeasible rows
        let rhs = if rng.random_bool(0.05) { rhs - 6.0 * slack - 1.0 } else { rhs };
        model.add_row(format!("r{i}"), coeffs, s, (rhs * 4.0).round() / 4.0);
    }
}

/// Random mixed-binary instance with at most `max_bin` binaries and
/// `max_cont` boxed continuous columns.
pub fn random_milp<R: Rng>(rng: &mut R, max_bin: usize, max_cont: usize, max_rows: usize) -> MilpModel {
    let nb = rng.random_range(1..=max_bin);
    let nc = rng.random_range(0..=max_cont);
    let m = rng.random_range(1..=max_rows);
    let mut model = MilpModel::new();
    let mut x0 = Vec::new();
    for j in 0..nb {
        model.add_binary(format!("b{j}"), coef(rng));
        x0.push(if rng.random_bool(0.5) { 1.0 } else { 0.0 });
    }
    for j in 0..nc {
        let lo = rng.random_range(-3..=0) as f64;
        let hi = lo + rng.random_range(1..=6) as f64;
        model.add_continuous(format!("y{j}"), lo, hi, coef(rng));
        x0.push(rng.random_range(lo..hi));
    }
    add_random_rows(rng, &mut model, &x0, m);
    model
}

/// Random scheduling instance with `T <= max_t` periods, one or two unit
/// types and error sequences of at most `max_cells` cells.
pub fn random_schedule<R: Rng>(rng: &mut R, max_t: usize, max_cells: usize) -> isogrid_core::sched::ScheduleProblem {
    use isogrid_core::sched::{EssParams, MtUnit, ScheduleProblem};
    use isogrid_core::sot::ProbSeq;
    let t = rng.random_range(1..=max_t);
    let n_types = rng.random_range(1..=2);
    let units: Vec<MtUnit> = (0..n_types)
        .map(|_| {
            let p_max = rng.random_range(20..=70) as f64;
            MtUnit {
                psi: rng.random_range(0.5..1.5),
                xi: rng.random_range(0.2..0.4),
                p_min: (p_max * rng.random_range(0.1..0.3)).round(),
                p_max,
                tau: rng.random_range(1.0..4.0),
                varsigma_r: rng.random_range(0.02..0.08),
                count: rng.random_range(1..=2),
            }
        })
        .collect();
    let cap: f64 = units.iter().map(|u| u.p_max * u.count as f64).sum();
    let ess = if rng.random_bool(0.7) { EssParams::default() } else { EssParams::none() };
    let el: Vec<f64> = (0..t).map(|_| (rng.random_range(0.05..0.6) * cap * 4.0).round() / 4.0).collect();
    let seqs: Vec<ProbSeq> = (0..t)
        .map(|_| {
            let cells = rng.random_range(1..=max_cells);
            let step = [0.5, 1.0, 2.0][rng.random_range(0..3)];
            let origin = -step * (cells / 2) as f64;
            let mut w: Vec<f64> = (0..cells).map(|_| rng.random_range(0.0..1.0f64).powi(2)).collect();
            let s: f64 = w.iter().sum();
            w.iter_mut().for_each(|x| *x /= s);
            ProbSeq::new(origin, step, w).unwrap()
        })
        .collect();
    let alpha = [0.8, 0.9, 0.95, 0.99][rng.random_range(0..4)];
    let mut p = ScheduleProblem::new(el, seqs, alpha);
    p.initial_on = vec![0; units.len()];
    p.units = units;
    p.ess = ess;
    p
}

/// Random sequence on the grid `k·step`, returned with its origin index.
pub fn random_grid_seq<R: Rng>(rng: &mut R, step: f64, max_len: usize) -> (i64, isogrid_core::sot::ProbSeq) {
    let len = rng.random_range(1..=max_len);
    let k = rng.random_range(-20i64..=20);
    let mut w: Vec<f64> = (0..len).map(|_| if rng.random_bool(0.1) { 0.0 } else { rng.random_range(0.0..1.0) }).collect();
    if w.iter().all(|&x| x == 0.0) {
        w[0] = 1.0;
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= s);
    (k, isogrid_core::sot::ProbSeq { origin: k as f64 * step, step, probs: w })
}

/// Distribution of `A + sign·B` by enumerating every joint outcome, keyed by
/// grid index.
pub fn joint_outcomes(ka: i64, a: &[f64], kb: i64, b: &[f64], sign: i64) -> std::collections::BTreeMap<i64, f64> {
    let mut out = std::collections::BTreeMap::new();
    for (i, &pa) in a.iter().enumerate() {
        for (j, &pb) in b.iter().enumerate() {
            let idx = (ka + i as i64) + sign * (kb + j as i64);
            *out.entry(idx).or_insert(0.0) += pa * pb;
        }
    }
    out
}

/// Largest probability difference between a sequence and a keyed oracle.
pub fn max_seq_gap(s: &isogrid_core::sot::ProbSeq, oracle: &std::collections::BTreeMap<i64, f64>) -> f64 {
    let k0 = (s.origin / s.step).round() as i64;
    let mut seen = std::collections::BTreeMap::new();
    for (i, &p) in s.probs.iter().enumerate() {
        seen.insert(k0 + i as i64, p);
    }
    let mut gap: f64 = ((s.origin / s.step) - k0 as f64).abs();
    for k in seen.keys().chain(oracle.keys()) {
        let a = seen.get(k).copied().unwrap_or(0.0);
        let b = oracle.get(k).copied().unwrap_or(0.0);
        gap = gap.max((a - b).abs());
    }
    gap
}

/// Floor on the denominator of gradient relative errors.
pub const GRAD_REL_FLOOR: f64 = 1e-6;

/// Largest relative error of the analytic parameter and input gradients of
/// `output·upstream` against central differences with step `h`.
pub fn gradient_check(net: &isogrid_core::nn::Mlp, x: &[f64], upstream: &[f64], h: f64) -> f64 {
    let f = |n: &isogrid_core::nn::Mlp, x: &[f64]| -> f64 { n.forward(x).unwrap().iter().zip(upstream).map(|(a, b)| a * b).sum() };
    let (g, dx) = net.backward(x, upstream).unwrap();
    let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(GRAD_REL_FLOOR);
    let mut worst: f64 = 0.0;
    let theta = net.flat_params();
    let analytic = g.flat();
    let mut probe = net.clone();
    for k in 0..theta.len() {
        let mut t = theta.clone();
        t[k] = theta[k] + h;
        probe.set_flat_params(&t).unwrap();
        let up = f(&probe, x);
        t[k] = theta[k] - h;
        probe.set_flat_params(&t).unwrap();
        let down = f(&probe, x);
        worst = worst.max(rel(analytic[k], (up - down) / (2.0 * h)));
    }
    for i in 0..x.len() {
        let mut xp = x.to_vec();
        xp[i] += h;
        let up = f(net, &xp);
        xp[i] = x[i] - h;
        let down = f(net, &xp);
        worst = worst.max(rel(dx[i], (up - down) / (2.0 * h)));
    }
    worst
}

/// Random network with every parameter uniform in `[-1, 1]`. ReLU inputs are
/// redrawn until no unit sits within `margin` of its kink.
pub fn random_net<R: Rng>(rng: &mut R, act: isogrid_core::nn::Activation, margin: f64) -> (isogrid_core::nn::Mlp, Vec<f64>) {
    use isogrid_core::nn::{Activation, Mlp};
    loop {
        let depth = rng.random_range(1..=3);
        let inputs = rng.random_range(1..=8);
        let mut dims = vec![inputs];
        dims.extend((0..depth).map(|_| rng.random_range(2..=12)));
        dims.push(1);
        let mut acts = vec![act; depth];
        acts.push(Activation::Identity);
        let mut net = Mlp::new(&dims, &acts, rng).unwrap();
        let p: Vec<f64> = (0..net.param_count()).map(|_| rng.random_range(-1.0..1.0)).collect();
        net.set_flat_params(&p).unwrap();
        for _ in 0..50 {
            let x: Vec<f64> = (0..inputs).map(|_| rng.random_range(-1.0..1.0)).collect();
            let trace = net.trace(&x).unwrap();
            let near_kink = act == Activation::Relu && trace.pre[..depth].iter().flatten().any(|z| z.abs() < margin);
            if !near_kink {
                return (net, x);
            }
        }
    }
}

/// Rank-based sampling law computed directly from priorities:
/// `P(j) ∝ rank(j)^-iota`, ranks by descending priority.
pub fn per_law(priorities: &[f64], iota: f64) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..priorities.len()).collect();
    idx.sort_by(|&a, &b| priorities[b].partial_cmp(&priorities[a]).unwrap());
    let mut p = vec![0.0; priorities.len()];
    for (r, &j) in idx.iter().enumerate() {
        p[j] = (1.0 / (r as f64 + 1.0)).powf(iota);
    }
    let z: f64 = p.iter().sum();
    p.iter().map(|v| v / z).collect()
}
