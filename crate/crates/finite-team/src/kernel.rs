//! Deep-state transition machinery.
//!
//! Given a deep state `d` and a local law `gamma`, the agents' realized joint
//! (state, action) counts follow independent multinomials, one per state.
//! Summing agents that land in a target state `x'` yields a binomial count
//! per source state, and the deep-state coordinate law is the convolution of
//! those binomials. The exact joint law of the next deep state is recovered
//! here by brute-force enumeration; the convolution path provides the cheap
//! per-coordinate marginals.

use std::collections::BTreeMap;

use crate::error::{FiniteError, Result};
use crate::model::{
    CountDistribution, DeepState, FiniteTeamModel, JointDistribution, JointLaw, LocalLaw,
};
use crate::space::{binomial, check_count_in_range, compositions};

/// Default budget for exact enumerations (number of multinomial terms).
pub const DEFAULT_ENUMERATION_BOUND: usize = 1_000_000;

/// Binomial(m, p) pmf over {0, …, m}.
///
/// Weights are built by the term ratio recurrence outward from the mode and
/// normalized at the end, so no factorial evaluation enters and the vector
/// sums to one up to a final rounding; drift stays below 1e-12 for m into
/// the thousands.
pub(crate) fn binomial_pmf(m: u32, p: f64) -> Vec<f64> {
    let m_us = m as usize;
    if m == 0 {
        return vec![1.0];
    }
    if p <= 0.0 {
        let mut v = vec![0.0; m_us + 1];
        v[0] = 1.0;
        return v;
    }
    if p >= 1.0 {
        let mut v = vec![0.0; m_us + 1];
        v[m_us] = 1.0;
        return v;
    }
    let mf = f64::from(m);
    let mode = (((mf + 1.0) * p).floor() as usize).min(m_us);
    let mut probs = vec![0.0; m_us + 1];
    probs[mode] = 1.0;
    let odds = p / (1.0 - p);
    for k in mode..m_us {
        let kf = k as f64;
        probs[k + 1] = probs[k] * (mf - kf) / (kf + 1.0) * odds;
    }
    for k in (1..=mode).rev() {
        let kf = k as f64;
        probs[k - 1] = probs[k] * kf / (mf - kf + 1.0) / odds;
    }
    let total: f64 = probs.iter().sum();
    for q in probs.iter_mut() {
        *q /= total;
    }
    probs
}

/// Plug-in joint law used when a kernel or cost must be evaluated given only
/// (d, gamma): the expected joint distribution d(x) * gamma(x)(u).
pub fn plug_in_joint(d: &DeepState, law: &LocalLaw) -> JointLaw {
    JointLaw::plug_in(&d.fractions(), law)
}

/// Mixed single-agent transition: T(x' | x, gamma, d) = sum_u p(x'|x,u,.) gamma(x)(u).
///
/// When the kernel reads the joint distribution it is evaluated at the
/// plug-in law of (d, gamma).
pub fn mixed_transition(
    model: &FiniteTeamModel,
    x_next: usize,
    x: usize,
    law: &LocalLaw,
    d: &DeepState,
) -> f64 {
    let joint = plug_in_joint(d, law);
    mixed_transition_with_joint(model, x_next, x, law, &joint)
}

pub(crate) fn mixed_transition_with_joint(
    model: &FiniteTeamModel,
    x_next: usize,
    x: usize,
    law: &LocalLaw,
    joint: &JointLaw,
) -> f64 {
    (0..model.num_actions())
        .map(|u| model.kernel_prob(x_next, x, u, joint) * law.prob(x, u))
        .sum()
}

/// Count law of agents arriving in `x_next` from source state `x`: a point
/// mass at zero when `x` is unoccupied, otherwise Binomial(n d(x), T).
pub fn phi(
    model: &FiniteTeamModel,
    x_next: usize,
    x: usize,
    law: &LocalLaw,
    d: &DeepState,
) -> CountDistribution {
    let m = d.count(x);
    if m == 0 {
        return CountDistribution::point_mass(0, 1);
    }
    let t = mixed_transition(model, x_next, x, law, d);
    CountDistribution::from_unchecked(binomial_pmf(m, t))
}

/// Convolution of the per-source-state arrival counts: the law of the total
/// number of agents in `x_next` at the next step. Support size is exactly n+1.
pub fn bar_phi(
    model: &FiniteTeamModel,
    x_next: usize,
    law: &LocalLaw,
    d: &DeepState,
) -> CountDistribution {
    let joint = plug_in_joint(d, law);
    let mut acc = vec![1.0f64];
    for x in 0..model.num_states() {
        let m = d.count(x);
        let part = if m == 0 {
            vec![1.0]
        } else {
            binomial_pmf(m, mixed_transition_with_joint(model, x_next, x, law, &joint))
        };
        acc = convolve(&acc, &part);
    }
    debug_assert_eq!(acc.len(), d.n() as usize + 1);
    CountDistribution::from_unchecked(acc)
}

fn convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, &ai) in a.iter().enumerate() {
        if ai == 0.0 {
            continue;
        }
        for (j, &bj) in b.iter().enumerate() {
            out[i + j] += ai * bj;
        }
    }
    out
}

/// Per-coordinate deep-state transition: P(d'(x') = y/n | d, gamma).
pub fn deep_state_marginal(
    model: &FiniteTeamModel,
    d: &DeepState,
    law: &LocalLaw,
    x_next: usize,
    y: u32,
) -> Result<f64> {
    check_count_in_range(y, d.n())?;
    Ok(bar_phi(model, x_next, law, d).prob(y as usize))
}

/// Multinomial(m, probs) outcomes as (count vector, probability) pairs.
///
/// Built from iterated binomials so each factor uses the numerically stable
/// pmf; enumeration order follows the colex composition order.
fn multinomial_outcomes(m: u32, probs: &[f64]) -> Vec<(Vec<u32>, f64)> {
    let k = probs.len();
    if k == 1 {
        return vec![(vec![m], 1.0)];
    }
    let mut out = Vec::new();
    for cells in compositions(m, k) {
        let mut prob = 1.0;
        let mut rem = m;
        let mut rest: f64 = probs.iter().sum();
        for (idx, &count) in cells.iter().enumerate() {
            if idx == k - 1 {
                break;
            }
            let p = probs[idx];
            let cond = if rest > 0.0 { (p / rest).clamp(0.0, 1.0) } else { 0.0 };
            if rem == 0 {
                if count > 0 {
                    prob = 0.0;
                }
            } else {
                prob *= binomial_pmf(rem, cond)[count as usize];
            }
            rem -= count.min(rem);
            rest -= p;
            if prob == 0.0 {
                break;
            }
        }
        if prob != 0.0 {
            out.push((cells, prob));
        }
    }
    out
}

/// Exact law of the realized joint (state, action) counts given (d, gamma):
/// independent multinomials across states, Multinomial(n d(x), gamma(x)).
pub fn joint_action_distribution(
    model: &FiniteTeamModel,
    d: &DeepState,
    law: &LocalLaw,
) -> Result<Vec<(JointDistribution, f64)>> {
    joint_action_distribution_bounded(model, d, law, DEFAULT_ENUMERATION_BOUND)
}

pub fn joint_action_distribution_bounded(
    model: &FiniteTeamModel,
    d: &DeepState,
    law: &LocalLaw,
    budget: usize,
) -> Result<Vec<(JointDistribution, f64)>> {
    let nx = model.num_states();
    let nu = model.num_actions();
    let mut terms: u128 = 1;
    for x in 0..nx {
        terms = terms.saturating_mul(u128::from(binomial(
            u64::from(d.count(x)) + nu as u64 - 1,
            nu as u64 - 1,
        )));
    }
    if terms > budget as u128 {
        return Err(FiniteError::EnumerationBound { terms, budget });
    }

    let per_state: Vec<Vec<(Vec<u32>, f64)>> = (0..nx)
        .map(|x| multinomial_outcomes(d.count(x), law.row(x)))
        .collect();

    let mut results = Vec::new();
    let mut stack_counts = vec![0u32; nx * nu];
    cartesian_joint(&per_state, 0, 1.0, &mut stack_counts, nu, &mut results);
    Ok(results)
}

fn cartesian_joint(
    per_state: &[Vec<(Vec<u32>, f64)>],
    x: usize,
    prob: f64,
    counts: &mut Vec<u32>,
    nu: usize,
    out: &mut Vec<(JointDistribution, f64)>,
) {
    if x == per_state.len() {
        out.push((
            JointDistribution::new(counts.clone(), nu).expect("valid joint counts"),
            prob,
        ));
        return;
    }
    for (cells, p) in &per_state[x] {
        for (u, &c) in cells.iter().enumerate() {
            counts[x * nu + u] = c;
        }
        cartesian_joint(per_state, x + 1, prob * p, counts, nu, out);
    }
}

/// Exact joint law of the next deep state, by full enumeration.
///
/// Enumerate realized joint counts, then per (x, u) cell allocate its agents
/// across next states with multinomial weights from the kernel evaluated at
/// the realized joint distribution, and aggregate by resulting count vector.
/// Feasible only at desk scale; the term budget guards the blow-up.
pub fn joint_deep_kernel_exact(
    model: &FiniteTeamModel,
    d: &DeepState,
    law: &LocalLaw,
) -> Result<Vec<(DeepState, f64)>> {
    joint_deep_kernel_exact_bounded(model, d, law, DEFAULT_ENUMERATION_BOUND)
}

pub fn joint_deep_kernel_exact_bounded(
    model: &FiniteTeamModel,
    d: &DeepState,
    law: &LocalLaw,
    budget: usize,
) -> Result<Vec<(DeepState, f64)>> {
    let nx = model.num_states();
    let nu = model.num_actions();
    let joints = joint_action_distribution_bounded(model, d, law, budget)?;

    // Term count across the allocation stage, checked before enumerating.
    let mut total_terms: u128 = 0;
    for (joint, _) in &joints {
        let mut terms: u128 = 1;
        for x in 0..nx {
            for u in 0..nu {
                let k = u64::from(joint.count(x, u));
                if k > 0 {
                    terms = terms
                        .saturating_mul(u128::from(binomial(k + nx as u64 - 1, nx as u64 - 1)));
                }
            }
        }
        total_terms = total_terms.saturating_add(terms);
    }
    if total_terms > budget as u128 {
        return Err(FiniteError::EnumerationBound {
            terms: total_terms,
            budget,
        });
    }

    let mut law_of_next: BTreeMap<Vec<u32>, f64> = BTreeMap::new();
    for (joint, joint_prob) in &joints {
        if *joint_prob == 0.0 {
            continue;
        }
        let realized = joint.to_law();
        // Occupied cells with their next-state allocation laws.
        let mut cell_allocs: Vec<Vec<(Vec<u32>, f64)>> = Vec::new();
        for x in 0..nx {
            for u in 0..nu {
                let k = joint.count(x, u);
                if k == 0 {
                    continue;
                }
                let q: Vec<f64> = (0..nx)
                    .map(|x_next| model.kernel_prob(x_next, x, u, &realized))
                    .collect();
                cell_allocs.push(multinomial_outcomes(k, &q));
            }
        }
        let mut next_counts = vec![0u32; nx];
        accumulate_allocations(
            &cell_allocs,
            0,
            *joint_prob,
            &mut next_counts,
            &mut law_of_next,
        );
    }

    Ok(law_of_next
        .into_iter()
        .map(|(counts, p)| (DeepState::new(counts).expect("valid counts"), p))
        .collect())
}

fn accumulate_allocations(
    cells: &[Vec<(Vec<u32>, f64)>],
    idx: usize,
    prob: f64,
    next_counts: &mut Vec<u32>,
    out: &mut BTreeMap<Vec<u32>, f64>,
) {
    if idx == cells.len() {
        *out.entry(next_counts.clone()).or_insert(0.0) += prob;
        return;
    }
    for (alloc, p) in &cells[idx] {
        for (x_next, &c) in alloc.iter().enumerate() {
            next_counts[x_next] += c;
        }
        accumulate_allocations(cells, idx + 1, prob * p, next_counts, out);
        for (x_next, &c) in alloc.iter().enumerate() {
            next_counts[x_next] -= c;
        }
    }
}

/// Expected per-agent cost of one step under (d, gamma).
///
/// Joint-independent costs reduce to sum_x d(x) sum_u gamma(x)(u) c(x, u);
/// otherwise the realized joint counts are enumerated exactly.
pub fn expected_cost(model: &FiniteTeamModel, d: &DeepState, law: &LocalLaw) -> Result<f64> {
    expected_cost_bounded(model, d, law, DEFAULT_ENUMERATION_BOUND)
}

pub fn expected_cost_bounded(
    model: &FiniteTeamModel,
    d: &DeepState,
    law: &LocalLaw,
    budget: usize,
) -> Result<f64> {
    let nx = model.num_states();
    let nu = model.num_actions();
    if !model.cost_depends_on_joint() {
        let probe = plug_in_joint(d, law);
        let mut total = 0.0;
        for x in 0..nx {
            let dx = d.fraction(x);
            if dx == 0.0 {
                continue;
            }
            let per_state: f64 = (0..nu)
                .map(|u| law.prob(x, u) * model.cost_value(x, u, &probe))
                .sum();
            total += dx * per_state;
        }
        return Ok(total);
    }
    let joints = joint_action_distribution_bounded(model, d, law, budget)?;
    let mut total = 0.0;
    for (joint, prob) in joints {
        if prob == 0.0 {
            continue;
        }
        let realized = joint.to_law();
        let mut step_cost = 0.0;
        for x in 0..nx {
            for u in 0..nu {
                let frac = realized.prob(x, u);
                if frac > 0.0 {
                    step_cost += model.cost_value(x, u, &realized) * frac;
                }
            }
        }
        total += step_cost * prob;
    }
    Ok(total)
}
