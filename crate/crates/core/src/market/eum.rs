//! Expected-utility bidding: exact per-timestep breakpoint optimization, and
//! the joint CVaR-weighted linear program.
//!
//! The expected per-timestep profit
//!
//! ```text
//! J_t(p) = DA_t·p + (1/(N·W)) Σ_c Σ_n w_c·[ −(p−pred_{n,t})⁺·(DA_t+Δup_c)
//!                                           +(pred_{n,t}−p)⁺·(DA_t−Δdown_c) ]
//! ```
//!
//! is piecewise linear and concave in `p` whenever every cluster satisfies
//! `Δup + Δdown ≥ 0`, so its maximum over `[0, 1]` sits at a scenario value
//! or at a boundary; `strategy_eum` evaluates exactly those candidates with
//! prefix sums. The CVaR variant couples all timesteps through one shared
//! value-at-risk level and is solved as a single LP; the per-(cluster,
//! scenario, timestep) profit and the CVaR identity are substituted into the
//! objective rather than materialized as LP variables.

use super::{BidSchedule, MarketError, ScenarioMatrix};
use crate::lp::{LpProblem, LpStatus, Relation, Sense, SolverOptions, Simplex};

/// Exact breakpoint maximizer of the expected profit, independent per
/// timestep. Ties resolve to the smallest bid.
pub fn strategy_eum(scenarios: &ScenarioMatrix) -> Result<BidSchedule, MarketError> {
    if scenarios.n_timesteps() == 0 || scenarios.n_scenarios() == 0 {
        return Err(MarketError::EmptyScenarios);
    }
    let w_total = scenarios.clusters.total_weight();
    let mut bids = Vec::with_capacity(scenarios.n_timesteps());
    for t in 0..scenarios.n_timesteps() {
        let preds = &scenarios.preds[t];
        let da = scenarios.dam[t];
        let n = preds.len();
        // Weighted mean deficit price and surplus price for this timestep.
        let mut a_up = 0.0;
        let mut a_dn = 0.0;
        for c in scenarios.clusters.clusters() {
            a_up += c.weight * (da + c.delta_up);
            a_dn += c.weight * (da - c.delta_down);
        }
        a_up /= w_total;
        a_dn /= w_total;

        let prefix: Vec<f64> = preds
            .iter()
            .scan(0.0, |acc, &v| {
                *acc += v;
                Some(*acc)
            })
            .collect();
        let total: f64 = prefix.last().copied().unwrap_or(0.0);
        let objective = |p: f64| -> f64 {
            let k = preds.partition_point(|&v| v <= p);
            let below = if k > 0 { prefix[k - 1] } else { 0.0 };
            let deficit = p * k as f64 - below;
            let surplus = (total - below) - p * (n - k) as f64;
            da * p + (-a_up * deficit + a_dn * surplus) / n as f64
        };

        let mut best = (f64::NEG_INFINITY, 0.0);
        let mut consider = |p: f64| {
            let j = objective(p);
            if j > best.0 {
                best = (j, p);
            }
        };
        consider(0.0);
        for &p in preds {
            consider(p);
        }
        consider(1.0);
        bids.push(best.1);
    }
    Ok(BidSchedule {
        timestamps: scenarios.timestamps.clone(),
        bids,
        strategy: "eum".into(),
        method: String::new(),
    })
}

/// Result of the CVaR-weighted program.
#[derive(Debug, Clone)]
pub struct EumCvarOutcome {
    pub schedule: BidSchedule,
    /// Expected profit per timestep draw under the scenario measure.
    pub expected_profit: f64,
    /// CVaR of the per-timestep profit distribution at level gamma.
    pub cvar: f64,
    /// `(1-β)·expected + β·CVaR` actually optimized.
    pub objective: f64,
}

/// Expected profit and the exact profit distribution `(probability, profit)`
/// over (cluster, scenario, timestep) triples at fixed bids.
fn profit_distribution(scenarios: &ScenarioMatrix, bids: &[f64]) -> (f64, Vec<(f64, f64)>) {
    let t_count = scenarios.n_timesteps();
    let n = scenarios.n_scenarios();
    let w_total = scenarios.clusters.total_weight();
    let mut expected = 0.0;
    let mut dist = Vec::with_capacity(t_count * n * scenarios.clusters.len());
    for t in 0..t_count {
        let da = scenarios.dam[t];
        let p = bids[t];
        for &pred in &scenarios.preds[t] {
            let deficit = (p - pred).max(0.0);
            let surplus = (pred - p).max(0.0);
            for c in scenarios.clusters.clusters() {
                let pi = c.weight / (w_total * n as f64 * t_count as f64);
                let profit =
                    p * da - deficit * (da + c.delta_up) + surplus * (da - c.delta_down);
                expected += pi * profit;
                dist.push((pi, profit));
            }
        }
    }
    (expected, dist)
}

/// CVaR at level `gamma`: mean of the worst `1 − gamma` probability mass,
/// splitting the boundary atom.
fn cvar_of_distribution(dist: &mut [(f64, f64)], gamma: f64) -> f64 {
    dist.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
    let tail = 1.0 - gamma;
    let mut mass = 0.0;
    let mut acc = 0.0;
    for &(pi, profit) in dist.iter() {
        if mass + pi >= tail {
            acc += (tail - mass) * profit;
            mass = tail;
            break;
        }
        acc += pi * profit;
        mass += pi;
    }
    acc / mass.max(1e-300)
}

/// Maximize `(1−β)·E[profit] + β·CVaR_γ`. With `β = 0` the joint program
/// reduces to the separable expected-utility problem and is routed to the
/// exact breakpoint optimizer.
pub fn strategy_eum_cvar(
    scenarios: &ScenarioMatrix,
    gamma: f64,
    beta: f64,
) -> Result<EumCvarOutcome, MarketError> {
    if !(0.0 < gamma && gamma < 1.0) {
        return Err(MarketError::BadGamma(gamma));
    }
    if !(0.0..=1.0).contains(&beta) {
        return Err(MarketError::BadBeta(beta));
    }
    if beta == 0.0 {
        let mut schedule = strategy_eum(scenarios)?;
        schedule.strategy = "eum_cvar".into();
        let (expected, mut dist) = profit_distribution(scenarios, &schedule.bids);
        let cvar = cvar_of_distribution(&mut dist, gamma);
        return Ok(EumCvarOutcome {
            schedule,
            expected_profit: expected,
            cvar,
            objective: expected,
        });
    }
    solve_eum_cvar_lp(scenarios, gamma, beta)
}

/// The joint LP over all timesteps, regardless of `β`. Variables: bids
/// `p_t ∈ [0,1]`, per-scenario deficits and surpluses `dpv, spv ≥ 0` tied by
/// `dpv − spv = p_t − pred`, tail slacks `σ ≥ max(0, VaR − profit)`, and a
/// free shared `VaR`.
pub fn solve_eum_cvar_lp(
    scenarios: &ScenarioMatrix,
    gamma: f64,
    beta: f64,
) -> Result<EumCvarOutcome, MarketError> {
    if !(0.0 < gamma && gamma < 1.0) {
        return Err(MarketError::BadGamma(gamma));
    }
    if !(0.0..=1.0).contains(&beta) {
        return Err(MarketError::BadBeta(beta));
    }
    let t_count = scenarios.n_timesteps();
    let n = scenarios.n_scenarios();
    let clusters = scenarios.clusters.clusters();
    let c_count = clusters.len();
    if t_count == 0 || n == 0 || c_count == 0 {
        return Err(MarketError::EmptyScenarios);
    }
    let w_total = scenarios.clusters.total_weight();
    // Probability of one (cluster, scenario, timestep) triple.
    let pi_c: Vec<f64> = clusters
        .iter()
        .map(|c| c.weight / (w_total * n as f64 * t_count as f64))
        .collect();

    let idx_p = |t: usize| t;
    let idx_dpv = |t: usize, s: usize| t_count + t * n + s;
    let idx_spv = |t: usize, s: usize| t_count + n * t_count + t * n + s;
    let idx_sigma =
        |t: usize, s: usize, c: usize| t_count + 2 * n * t_count + (t * n + s) * c_count + c;
    let idx_var = t_count + 2 * n * t_count + c_count * n * t_count;
    let n_vars = idx_var + 1;

    let mut problem = LpProblem::new(Sense::Maximize, n_vars);
    for t in 0..t_count {
        problem.set_bounds(idx_p(t), 0.0, 1.0);
    }
    problem.set_bounds(idx_var, f64::NEG_INFINITY, f64::INFINITY);

    let mut objective = vec![0.0; n_vars];
    let pi_t: f64 = pi_c.iter().sum::<f64>() * n as f64; // mass per timestep
    for t in 0..t_count {
        let da = scenarios.dam[t];
        objective[idx_p(t)] = (1.0 - beta) * da * pi_t;
        let mut up_cost = 0.0;
        let mut dn_gain = 0.0;
        for (c, cl) in clusters.iter().enumerate() {
            up_cost += pi_c[c] * (da + cl.delta_up);
            dn_gain += pi_c[c] * (da - cl.delta_down);
        }
        for s in 0..n {
            objective[idx_dpv(t, s)] = -(1.0 - beta) * up_cost;
            objective[idx_spv(t, s)] = (1.0 - beta) * dn_gain;
            for c in 0..c_count {
                objective[idx_sigma(t, s, c)] = -beta / (1.0 - gamma) * pi_c[c];
            }
        }
    }
    objective[idx_var] = beta;
    problem.set_objective(&objective);

    // dpv - spv - p = -pred
    for t in 0..t_count {
        for s in 0..n {
            problem.add_row_sparse(
                &[
                    (idx_dpv(t, s), 1.0),
                    (idx_spv(t, s), -1.0),
                    (idx_p(t), -1.0),
                ],
                Relation::Eq,
                -scenarios.preds[t][s],
            );
        }
    }
    // sigma >= VaR - profit(c, s, t):
    // DA·p - (DA+Δup)·dpv + (DA-Δdown)·spv + sigma - VaR >= 0
    for t in 0..t_count {
        let da = scenarios.dam[t];
        for s in 0..n {
            for (c, cl) in clusters.iter().enumerate() {
                problem.add_row_sparse(
                    &[
                        (idx_p(t), da),
                        (idx_dpv(t, s), -(da + cl.delta_up)),
                        (idx_spv(t, s), da - cl.delta_down),
                        (idx_sigma(t, s, c), 1.0),
                        (idx_var, -1.0),
                    ],
                    Relation::Ge,
                    0.0,
                );
            }
        }
    }

    let mut simplex = Simplex::new(&problem, SolverOptions::default())?;
    let status = simplex.solve()?;
    if status != LpStatus::Optimal {
        return Err(MarketError::BadLpStatus(format!("{status:?}")));
    }
    let solution = simplex.solution();

    let bids: Vec<f64> = (0..t_count)
        .map(|t| solution.values[idx_p(t)].clamp(0.0, 1.0))
        .collect();
    let var_star = solution.values[idx_var];
    let mut sigma_mass = 0.0;
    for t in 0..t_count {
        for s in 0..n {
            for c in 0..c_count {
                sigma_mass += pi_c[c] * solution.values[idx_sigma(t, s, c)];
            }
        }
    }
    let cvar = var_star - sigma_mass / (1.0 - gamma);
    let (expected, _) = profit_distribution(scenarios, &bids);
    Ok(EumCvarOutcome {
        schedule: BidSchedule {
            timestamps: scenarios.timestamps.clone(),
            bids,
            strategy: "eum_cvar".into(),
            method: String::new(),
        },
        expected_profit: expected,
        cvar,
        objective: solution.objective,
    })
}
