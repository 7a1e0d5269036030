//! Acceptance suite: one test per criterion, each printing a PASS line with
//! its measured numbers. Oracles (grid searches, basis enumeration, tail
//! averages) are implemented here, independently of the library paths they
//! check.

use std::time::Instant;

use chrono::{Duration, NaiveDate, TimeZone, Utc};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use pvbid::config::{validate, RunConfig};
use pvbid::pipeline::Pipeline;
use pvbid_core::conformal::{
    ConformalConfig, ConformalPredictor, Method, UncertaintyModel,
};
use pvbid_core::data::{preprocess, split, synth_generate, Dataset, Location, SplitSpec, SynthConfig};
use pvbid_core::evaluation::{coverage, wis};
use pvbid_core::lp::{solve_lp, LpProblem, LpStatus, Relation, Sense};
use pvbid_core::market::{
    backtest, build_scenarios, cluster_deltas, newsvendor_fractile, solve_eum_cvar_lp,
    strategy_eum, strategy_eum_cvar, strategy_newsvendor, strategy_perfect, strategy_trust,
    strategy_worst_case, BidSchedule, DeltaCluster, DeltaClusterSet, NewsvendorConstraint,
    ScenarioMatrix,
};
use pvbid_core::models::{fit_lqr, fit_ols, fit_rfr, FeatureScaler, PointModel, RfrParams};

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen::<f64>().max(1e-300);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// I.i.d. heteroscedastic regression draws packaged as a Dataset.
fn synthetic_regression(
    rng: &mut ChaCha8Rng,
    n: usize,
    start_hour: i64,
    mean: impl Fn(f64, f64) -> f64,
    noise_sd: impl Fn(f64, f64) -> f64,
) -> Dataset {
    let base = Utc.with_ymd_and_hms(2017, 6, 1, 0, 0, 0).unwrap() + Duration::hours(start_hour);
    let rows: Vec<_> = (0..n)
        .map(|i| {
            let x1: f64 = rng.gen();
            let x2: f64 = rng.gen();
            let y = mean(x1, x2) + noise_sd(x1, x2) * normal(rng);
            (base + Duration::hours(i as i64), y, vec![x1, x2])
        })
        .collect();
    Dataset::from_rows(
        Location::new(0.0, 0.0).unwrap(),
        vec!["x1".into(), "x2".into()],
        rows,
    )
    .unwrap()
}

fn calibrated(
    method: Method,
    model: &PointModel,
    train: &Dataset,
    cal: &Dataset,
) -> ConformalPredictor {
    let scaler = FeatureScaler::fit(train).unwrap();
    ConformalPredictor::calibrate(
        model.clone(),
        cal,
        ConformalConfig::for_method(method),
        Some(&scaler),
    )
    .unwrap()
}

#[test]
fn c01_marginal_coverage() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mean = |x1: f64, x2: f64| 0.2 + 0.5 * x1 + 0.2 * (6.0 * x1).sin() + 0.1 * x2;
    let sd = |x1: f64, _x2: f64| 0.05 + 0.10 * x1;
    let train = synthetic_regression(&mut rng, 1000, 0, mean, sd);
    let cal = synthetic_regression(&mut rng, 2000, 2000, mean, sd);
    let test = synthetic_regression(&mut rng, 2000, 6000, mean, sd);
    let model = PointModel::Forest(
        fit_rfr(
            &train,
            RfrParams {
                n_trees: 60,
                max_features: 2,
                min_leaf: 5,
            },
            1,
        )
        .unwrap(),
    );
    for method in Method::ALL {
        let cp = calibrated(method, &model, &train, &cal);
        for alpha in [0.1, 0.2, 0.5] {
            let c = coverage(&cp, &test, alpha).unwrap();
            assert!(
                c >= 1.0 - alpha - 0.025 && c <= 1.0,
                "{} at alpha {alpha}: coverage {c}",
                method.name()
            );
        }
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 60.0, "took {elapsed:?}");
    println!("acceptance 01 marginal-coverage: PASS ({elapsed:?})");
}

#[test]
fn c02_adaptivity() {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    // Noise grows steeply with x1 while the mean stays monotone in it, so
    // prediction-value bins line up with noise regimes.
    let mean = |x1: f64, x2: f64| 0.1 + 0.7 * x1 + 0.05 * x2;
    let sd = |x1: f64, _x2: f64| 0.02 + 0.28 * x1;
    let train = synthetic_regression(&mut rng, 2000, 0, mean, sd);
    let cal = synthetic_regression(&mut rng, 5000, 4000, mean, sd);
    let test = synthetic_regression(&mut rng, 6000, 12000, mean, sd);
    let model = PointModel::Linear(fit_ols(&train, &[0, 1]).unwrap().model);
    let scaler = FeatureScaler::fit(&train).unwrap();
    let alpha = 0.1;

    let m3 = ConformalPredictor::calibrate(
        model.clone(),
        &cal,
        ConformalConfig {
            n_bins: 10,
            ..ConformalConfig::for_method(Method::M3)
        },
        Some(&scaler),
    )
    .unwrap();
    let m1 = calibrated(Method::M1, &model, &train, &cal);

    let binning = m3.binning().unwrap().clone();
    let n_bins = binning.n_bins();
    let mut m3_hits = vec![(0usize, 0usize); n_bins];
    let mut m1_hits = vec![(0usize, 0usize); n_bins];
    for r in test.records() {
        let bin = binning.bin_for(model.predict(&r.features));
        let (lo, hi) = m3.interval(&r.features, alpha);
        m3_hits[bin].1 += 1;
        if lo <= r.pv && r.pv <= hi {
            m3_hits[bin].0 += 1;
        }
        let (lo, hi) = m1.interval(&r.features, alpha);
        m1_hits[bin].1 += 1;
        if lo <= r.pv && r.pv <= hi {
            m1_hits[bin].0 += 1;
        }
    }
    let mut m1_range = (f64::INFINITY, f64::NEG_INFINITY);
    for bin in 0..n_bins {
        let (h3, n3) = m3_hits[bin];
        if n3 >= 100 {
            let c3 = h3 as f64 / n3 as f64;
            assert!(
                (c3 - 0.9).abs() <= 0.05,
                "M3 bin {bin} coverage {c3} strays from 0.9"
            );
        }
        let (h1, n1) = m1_hits[bin];
        if n1 >= 100 {
            let c1 = h1 as f64 / n1 as f64;
            m1_range.0 = m1_range.0.min(c1);
            m1_range.1 = m1_range.1.max(c1);
        }
    }
    let spread = m1_range.1 - m1_range.0;
    assert!(
        spread > 0.05,
        "basic CP per-bin coverage spread {spread} too uniform"
    );
    println!("acceptance 02 adaptivity: PASS (M1 bin-coverage spread {spread:.3})");
}

#[test]
fn c03_wis_ranking_direction() {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    // Nonlinear mean, heteroscedastic noise: adaptive conformal variants
    // beat basic CP, and a single-feature linear quantile fit trails all.
    let mean = |x1: f64, x2: f64| 0.1 + 0.6 / (1.0 + (-8.0 * (x1 - 0.5)).exp()) + 0.15 * x2;
    let sd = |x1: f64, _x2: f64| 0.03 + 0.12 * x1;
    let train = synthetic_regression(&mut rng, 1200, 0, mean, sd);
    let cal = synthetic_regression(&mut rng, 1500, 3000, mean, sd);
    let test = synthetic_regression(&mut rng, 1500, 6000, mean, sd);
    let model = PointModel::Forest(
        fit_rfr(
            &train,
            RfrParams {
                n_trees: 60,
                max_features: 2,
                min_leaf: 5,
            },
            3,
        )
        .unwrap(),
    );

    let wis_m1 = wis(&calibrated(Method::M1, &model, &train, &cal), &test)
        .unwrap()
        .wis;
    let mut advanced = Vec::new();
    for method in [Method::M2, Method::M3, Method::M4, Method::M5] {
        let w = wis(&calibrated(method, &model, &train, &cal), &test)
            .unwrap()
            .wis;
        assert!(
            w < wis_m1,
            "{} wis {w} not below basic CP {wis_m1}",
            method.name()
        );
        advanced.push(w);
    }
    // Single-feature linear quantile benchmark on the 99-quantile grid.
    let taus: Vec<f64> = (1..=99).map(|j| j as f64 / 100.0).collect();
    let slqr = fit_lqr(&train, &[0], &taus).unwrap();
    let wis_slqr = wis(&slqr, &test).unwrap().wis;
    assert!(
        wis_m1 < wis_slqr,
        "basic CP {wis_m1} not below quantile benchmark {wis_slqr}"
    );
    println!(
        "acceptance 03 ranking: PASS (M2-M5 {:.4}..{:.4} < M1 {wis_m1:.4} < SLQR {wis_slqr:.4})",
        advanced.iter().cloned().fold(f64::INFINITY, f64::min),
        advanced.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    );
}

/// Expected profit at one timestep from the raw definition.
fn eum_objective_brute(sm: &ScenarioMatrix, t: usize, p: f64) -> f64 {
    let n = sm.preds[t].len() as f64;
    let w = sm.clusters.total_weight();
    let da = sm.dam[t];
    let mut acc = da * p;
    for cl in sm.clusters.clusters() {
        for &pred in &sm.preds[t] {
            let d = (p - pred).max(0.0);
            let s = (pred - p).max(0.0);
            acc += cl.weight * (-d * (da + cl.delta_up) + s * (da - cl.delta_down)) / (n * w);
        }
    }
    acc
}

fn random_clusters(rng: &mut ChaCha8Rng, c: usize) -> DeltaClusterSet {
    DeltaClusterSet::from_clusters(
        (0..c)
            .map(|_| DeltaCluster {
                delta_up: rng.gen_range(0.0..0.6),
                delta_down: rng.gen_range(0.0..0.6),
                weight: rng.gen_range(1.0..5.0),
            })
            .collect(),
    )
}

fn random_matrix(rng: &mut ChaCha8Rng, t_count: usize, n: usize, c: usize) -> ScenarioMatrix {
    let base = Utc.with_ymd_and_hms(2017, 6, 1, 8, 0, 0).unwrap();
    let mut preds = Vec::new();
    let mut dam = Vec::new();
    for _ in 0..t_count {
        let mut q: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
        q.sort_by(|a, b| a.partial_cmp(b).unwrap());
        preds.push(q);
        dam.push(rng.gen_range(0.2..1.0));
    }
    ScenarioMatrix {
        timestamps: (0..t_count)
            .map(|i| base + Duration::hours(i as i64))
            .collect(),
        dam,
        preds,
        clusters: random_clusters(rng, c),
    }
}

#[test]
fn c04_eum_breakpoint_exactness() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    for _ in 0..200 {
        let n = rng.gen_range(1..=9usize);
        let c = rng.gen_range(1..=3usize);
        let sm = random_matrix(&mut rng, 1, n, c);
        let bids = strategy_eum(&sm).unwrap();
        let chosen = eum_objective_brute(&sm, 0, bids.bids[0]);
        let mut grid_best = f64::NEG_INFINITY;
        for i in 0..=10_000 {
            grid_best = grid_best.max(eum_objective_brute(&sm, 0, i as f64 / 10_000.0));
        }
        assert!(
            chosen >= grid_best - 1e-9,
            "breakpoint {chosen} below grid {grid_best}"
        );
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 10.0, "took {elapsed:?}");
    println!("acceptance 04 eum-exactness: PASS ({elapsed:?})");
}

/// Exact profit distribution `(probability, profit)` at fixed bids.
fn profit_samples(sm: &ScenarioMatrix, bids: &[f64]) -> Vec<(f64, f64)> {
    let t_count = sm.n_timesteps();
    let n = sm.n_scenarios();
    let w_total = sm.clusters.total_weight();
    let mut out = Vec::new();
    for t in 0..t_count {
        let da = sm.dam[t];
        for &pred in &sm.preds[t] {
            for cl in sm.clusters.clusters() {
                let pi = cl.weight / (w_total * n as f64 * t_count as f64);
                let d = (bids[t] - pred).max(0.0);
                let s = (pred - bids[t]).max(0.0);
                out.push((pi, bids[t] * da - d * (da + cl.delta_up) + s * (da - cl.delta_down)));
            }
        }
    }
    out
}

fn tail_average(mut samples: Vec<(f64, f64)>, gamma: f64) -> f64 {
    samples.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
    let tail = 1.0 - gamma;
    let mut mass = 0.0;
    let mut acc = 0.0;
    for (pi, profit) in samples {
        if mass + pi >= tail {
            acc += (tail - mass) * profit;
            mass = tail;
            break;
        }
        acc += pi * profit;
        mass += pi;
    }
    acc / mass
}

/// Best objective over a per-coordinate 1e-3 bid grid, with the shared
/// value-at-risk level scanned coarse-to-fine.
fn cvar_grid_oracle(sm: &ScenarioMatrix, gamma: f64, beta: f64) -> f64 {
    let t_count = sm.n_timesteps();
    let n = sm.n_scenarios();
    let w_total = sm.clusters.total_weight();
    let pi: Vec<f64> = sm
        .clusters
        .clusters()
        .iter()
        .map(|c| c.weight / (w_total * n as f64 * t_count as f64))
        .collect();

    // v range from profits at extreme bids.
    let mut v_lo = f64::INFINITY;
    let mut v_hi = f64::NEG_INFINITY;
    for p in [0.0, 1.0] {
        for (_, profit) in profit_samples(sm, &vec![p; t_count]) {
            v_lo = v_lo.min(profit);
            v_hi = v_hi.max(profit);
        }
    }
    v_lo -= 0.1;
    v_hi += 0.1;

    let eval_v = |v: f64| -> f64 {
        let mut total = beta * v;
        for t in 0..t_count {
            let da = sm.dam[t];
            let mut best = f64::NEG_INFINITY;
            for i in 0..=1000 {
                let p = i as f64 / 1000.0;
                let mut expected = 0.0;
                let mut tail = 0.0;
                for &pred in &sm.preds[t] {
                    let d = (p - pred).max(0.0);
                    let s = (pred - p).max(0.0);
                    for (c, cl) in sm.clusters.clusters().iter().enumerate() {
                        let profit =
                            p * da - d * (da + cl.delta_up) + s * (da - cl.delta_down);
                        expected += pi[c] * profit;
                        tail += pi[c] * (v - profit).max(0.0);
                    }
                }
                best = best.max((1.0 - beta) * expected - beta / (1.0 - gamma) * tail);
            }
            total += best;
        }
        total
    };

    let coarse_steps = 200;
    let mut best = (f64::NEG_INFINITY, v_lo);
    for i in 0..=coarse_steps {
        let v = v_lo + (v_hi - v_lo) * i as f64 / coarse_steps as f64;
        let g = eval_v(v);
        if g > best.0 {
            best = (g, v);
        }
    }
    let h = (v_hi - v_lo) / coarse_steps as f64;
    for i in 0..=160 {
        let v = best.1 - 2.0 * h + 4.0 * h * i as f64 / 160.0;
        let g = eval_v(v);
        if g > best.0 {
            best = (g, v);
        }
    }
    best.0
}

#[test]
fn c05_cvar_lp_correctness() {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    for round in 0..50 {
        let t_count = rng.gen_range(1..=4usize);
        let n = rng.gen_range(1..=5usize);
        let c = rng.gen_range(1..=2usize);
        let gamma = rng.gen_range(0.3..0.75);
        let beta = rng.gen_range(0.05..0.85);
        let sm = random_matrix(&mut rng, t_count, n, c);

        let lp = solve_eum_cvar_lp(&sm, gamma, beta).unwrap();
        let grid = cvar_grid_oracle(&sm, gamma, beta);
        assert!(
            lp.objective >= grid - 1e-9,
            "round {round}: LP {} below grid {grid}",
            lp.objective
        );
        assert!(
            lp.objective - grid <= 2e-3,
            "round {round}: LP {} further than 2e-3 above grid {grid}",
            lp.objective
        );

        let tail = tail_average(profit_samples(&sm, &lp.schedule.bids), gamma);
        assert!(
            (lp.cvar - tail).abs() <= 1e-6,
            "round {round}: LP CVaR {} vs tail average {tail}",
            lp.cvar
        );

        // β = 0 reduction to the expected-utility optimum.
        let lp0 = solve_eum_cvar_lp(&sm, gamma, 0.0).unwrap();
        let eum = strategy_eum(&sm).unwrap();
        let expected_eum: f64 = profit_samples(&sm, &eum.bids)
            .into_iter()
            .map(|(pi, pr)| pi * pr)
            .sum();
        assert!(
            (lp0.objective - expected_eum).abs() <= 1e-6,
            "round {round}: beta=0 LP {} vs EUM {expected_eum}",
            lp0.objective
        );
    }
    println!("acceptance 05 cvar-correctness: PASS");
}

/// Basic-solution enumeration oracle: finite bounds become rows, slacks get
/// +1 (Le) or -1 (Ge) columns, and every size-m column subset is solved.
fn enumerate_boxed_lp(
    objective: &[f64],
    rows: &[(Vec<f64>, Relation, f64)],
    upper: &[f64],
) -> Option<f64> {
    let n = objective.len();
    let mut all_rows: Vec<(Vec<f64>, Relation, f64)> = rows.to_vec();
    for (j, &u) in upper.iter().enumerate() {
        let mut c = vec![0.0; n];
        c[j] = 1.0;
        all_rows.push((c, Relation::Le, u));
    }
    let m = all_rows.len();
    let total = n + m;
    let mut best: Option<f64> = None;
    let mut combo: Vec<usize> = (0..m).collect();
    loop {
        // Solve for this basis.
        'solve: {
            let mut a = vec![0.0; m * m];
            for (ci, &col) in combo.iter().enumerate() {
                for i in 0..m {
                    a[i * m + ci] = if col < n {
                        all_rows[i].0[col]
                    } else if col - n == i {
                        match all_rows[i].1 {
                            Relation::Ge => -1.0,
                            _ => 1.0,
                        }
                    } else {
                        0.0
                    };
                }
            }
            let mut rhs: Vec<f64> = all_rows.iter().map(|r| r.2).collect();
            for col in 0..m {
                let mut piv = col;
                for r in col + 1..m {
                    if a[r * m + col].abs() > a[piv * m + col].abs() {
                        piv = r;
                    }
                }
                if a[piv * m + col].abs() < 1e-10 {
                    break 'solve;
                }
                if piv != col {
                    for j in 0..m {
                        a.swap(col * m + j, piv * m + j);
                    }
                    rhs.swap(col, piv);
                }
                let d = a[col * m + col];
                for r in 0..m {
                    if r == col {
                        continue;
                    }
                    let f = a[r * m + col] / d;
                    if f != 0.0 {
                        for j in col..m {
                            a[r * m + j] -= f * a[col * m + j];
                        }
                        rhs[r] -= f * rhs[col];
                    }
                }
            }
            let mut x = vec![0.0; total];
            let mut ok = true;
            for (ci, &col) in combo.iter().enumerate() {
                let v = rhs[ci] / a[ci * m + ci];
                if !v.is_finite() || v < -1e-8 {
                    ok = false;
                    break;
                }
                x[col] = v;
            }
            if !ok {
                break 'solve;
            }
            let obj: f64 = objective.iter().zip(&x).map(|(c, v)| c * v).sum();
            if best.map_or(true, |b| obj > b) {
                best = Some(obj);
            }
        }
        // Next combination.
        let mut i = m;
        loop {
            if i == 0 {
                return best;
            }
            i -= 1;
            if combo[i] != i + total - m {
                combo[i] += 1;
                for j in i + 1..m {
                    combo[j] = combo[j - 1] + 1;
                }
                break;
            }
        }
    }
}

#[test]
fn c06_lp_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut solved = 0;
    let mut infeasible = 0;
    for round in 0..100 {
        let n = rng.gen_range(2..=5usize);
        let m = rng.gen_range(2..=5usize);
        let objective: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let upper: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..4.0)).collect();
        let rows: Vec<(Vec<f64>, Relation, f64)> = (0..m)
            .map(|_| {
                (
                    (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect(),
                    if rng.gen_bool(0.7) {
                        Relation::Le
                    } else {
                        Relation::Ge
                    },
                    rng.gen_range(-2.0..4.0),
                )
            })
            .collect();

        let mut p = LpProblem::new(Sense::Maximize, n);
        p.set_objective(&objective);
        for (j, &u) in upper.iter().enumerate() {
            p.set_bounds(j, 0.0, u);
        }
        for (coeffs, rel, rhs) in &rows {
            p.add_row(coeffs.clone(), *rel, *rhs);
        }
        let s = solve_lp(&p).unwrap();
        let oracle = enumerate_boxed_lp(&objective, &rows, &upper);
        match (s.status, oracle) {
            (LpStatus::Optimal, Some(best)) => {
                assert!(
                    (s.objective - best).abs() <= 1e-6,
                    "round {round}: solver {} vs enumeration {best}",
                    s.objective
                );
                solved += 1;
            }
            (LpStatus::Infeasible, None) => infeasible += 1,
            (status, oracle) => {
                panic!("round {round}: solver {status:?} but oracle {oracle:?}")
            }
        }
    }
    assert!(solved >= 30, "only {solved} solvable instances");

    // Hand fixtures.
    let mut inf = LpProblem::new(Sense::Maximize, 1);
    inf.set_objective(&[1.0]);
    inf.add_row(vec![1.0], Relation::Le, 1.0);
    inf.add_row(vec![1.0], Relation::Ge, 2.0);
    assert_eq!(solve_lp(&inf).unwrap().status, LpStatus::Infeasible);

    let mut unb = LpProblem::new(Sense::Maximize, 2);
    unb.set_objective(&[1.0, 0.0]);
    unb.add_row(vec![-1.0, 1.0], Relation::Le, 1.0);
    assert_eq!(solve_lp(&unb).unwrap().status, LpStatus::Unbounded);
    println!("acceptance 06 lp-oracle: PASS ({solved} optimal, {infeasible} infeasible)");
}

#[test]
fn c07_newsvendor_identities() {
    // Eq-style fixture: dam 50, rtm_down 30, rtm_up 70.
    let cluster = DeltaCluster {
        delta_up: 70.0 - 50.0,
        delta_down: 50.0 - 30.0,
        weight: 4.0,
    };
    assert_eq!(newsvendor_fractile(&cluster).unwrap(), 0.5);

    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let mean = |x1: f64, x2: f64| 0.2 + 0.5 * x1 + 0.2 * x2;
    let sd = |x1: f64, _x2: f64| 0.04 + 0.08 * x1;
    let train = synthetic_regression(&mut rng, 400, 0, mean, sd);
    let cal = synthetic_regression(&mut rng, 400, 1000, mean, sd);
    let test = synthetic_regression(&mut rng, 300, 2000, mean, sd);
    let model = PointModel::Linear(fit_ols(&train, &[0, 1]).unwrap().model);
    for method in [Method::M1, Method::M5] {
        let cp = calibrated(method, &model, &train, &cal);
        let clusters = DeltaClusterSet::single(20.0, 20.0, 7.0);
        let nv =
            strategy_newsvendor(&cp, &test, &clusters, NewsvendorConstraint::None).unwrap();
        let trust = strategy_trust(&cp, &test);
        assert_eq!(nv.bids, trust.bids, "{} bids diverge", method.name());
    }
    println!("acceptance 07 newsvendor-identities: PASS");
}

#[test]
fn c08_backtest_dominance() {
    let cfg = SynthConfig {
        seed: 88,
        days: 913, // one test year after a 1.5y train / 1y calibration split
        no_arbitrage: true,
        ..Default::default()
    };
    let (raw, prices) = synth_generate(&cfg).unwrap();
    let ds = preprocess(&raw, 1.05).unwrap();
    let spec = SplitSpec::new(
        NaiveDate::from_ymd_opt(2015, 7, 1).unwrap(),
        NaiveDate::from_ymd_opt(2016, 7, 1).unwrap(),
    )
    .unwrap();
    let (train, cal, test) = split(&ds, &spec).unwrap();
    let model = PointModel::Forest(
        fit_rfr(
            &train,
            RfrParams {
                n_trees: 80,
                max_features: 3,
                min_leaf: 5,
            },
            2,
        )
        .unwrap(),
    );
    let cp = calibrated(Method::M4, &model, &train, &cal);
    let cal_prices = prices.aligned_to(&cal.timestamps()).unwrap();
    let clusters = cluster_deltas(&cal_prices, 12, 8).unwrap();
    let scenarios = build_scenarios(&cp, &test, &prices, &clusters, 99).unwrap();

    let mut schedules: Vec<BidSchedule> = vec![
        strategy_trust(&cp, &test),
        strategy_worst_case(&cp, &test),
        strategy_newsvendor(&cp, &test, &clusters, NewsvendorConstraint::None).unwrap(),
        strategy_newsvendor(&cp, &test, &clusters, NewsvendorConstraint::Decision(0.1)).unwrap(),
        strategy_eum(&scenarios).unwrap(),
    ];
    let reduced = clusters.reduce(2, 1).unwrap();
    let small = build_scenarios(&cp, &test, &prices, &reduced, 5)
        .unwrap()
        .truncated(96);
    schedules.push(strategy_eum_cvar(&small, 0.6, 0.1).unwrap().schedule);

    let perfect_full = strategy_perfect(&test);
    let perfect_report = backtest(&perfect_full, &test, &prices).unwrap();
    assert_eq!(perfect_report.imbalance_pct, 0.0);

    let actual_by_ts: std::collections::BTreeMap<_, _> = test
        .records()
        .iter()
        .map(|r| (r.timestamp, r.pv))
        .collect();
    for schedule in &schedules {
        let report = backtest(schedule, &test, &prices).unwrap();
        // Perfect bids over exactly this schedule's window.
        let perfect_here = BidSchedule {
            timestamps: schedule.timestamps.clone(),
            bids: schedule
                .timestamps
                .iter()
                .map(|ts| actual_by_ts[ts])
                .collect(),
            strategy: "perfect".into(),
            method: "actual".into(),
        };
        let perfect_profit = backtest(&perfect_here, &test, &prices).unwrap().profit;
        assert!(
            perfect_profit >= report.profit - 1e-9,
            "{}: perfect {perfect_profit} below strategy {}",
            schedule.strategy,
            report.profit
        );
    }
    println!("acceptance 08 backtest-dominance: PASS");
}

#[test]
fn c09_pinball_coverage_condition() {
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let n = 400;
    let base = Utc.with_ymd_and_hms(2017, 6, 1, 0, 0, 0).unwrap();
    let rows: Vec<_> = (0..n)
        .map(|i| {
            let x: f64 = rng.gen();
            let y = 0.15 + 0.6 * x + 0.25 * (rng.gen::<f64>() - 0.5);
            (base + Duration::hours(i as i64), y, vec![x])
        })
        .collect();
    let ds = Dataset::from_rows(Location::new(0.0, 0.0).unwrap(), vec!["x".into()], rows)
        .unwrap();
    let taus = [0.05, 0.5, 0.95];
    let qm = fit_lqr(&ds, &[0], &taus).unwrap();
    for &tau in &taus {
        let m = qm.model_at(tau);
        let below = ds
            .records()
            .iter()
            .filter(|r| r.pv < m.predict(&r.features))
            .count() as f64
            / n as f64;
        let slack = 2.0 / n as f64;
        assert!(
            below >= tau - slack && below <= tau + slack,
            "tau {tau}: fraction below {below} outside ±{slack}"
        );
    }
    println!("acceptance 09 pinball-coverage: PASS");
}

#[test]
fn c10_end_to_end_determinism_and_runtime() {
    let dir = tempfile::tempdir().unwrap();
    let config_for = |out: &std::path::Path| -> RunConfig {
        let text = format!(
            r#"
seed = 42
out = "{}"

[data]
source = "synth"
days = 1461

[split]
train_end = "2016-01-01"
cal_end = "2017-01-01"

[model]
kind = "rfr"
n_trees = 375
max_features = 3

[uncertainty]
methods = ["M1", "M2", "M3", "M4", "M5"]

[market]
clusters = 20
scenarios = 99

[[strategy]]
kind = "perfect"
[[strategy]]
kind = "trust"
[[strategy]]
kind = "worst_case"
[[strategy]]
kind = "newsvendor"
[[strategy]]
kind = "newsvendor"
constraint = "dec"
fraction = 0.1
[[strategy]]
kind = "newsvendor"
constraint = "prob"
fraction = 0.1
[[strategy]]
kind = "eum"
[[strategy]]
kind = "eum_cvar"
gamma = 0.6
beta = 0.1
window = 168
"#,
            out.display()
        );
        let cfg: RunConfig = toml::from_str(&text).unwrap();
        validate(&cfg).unwrap();
        cfg
    };

    let out_a = dir.path().join("run_a");
    let started = Instant::now();
    let summary = Pipeline::new(config_for(&out_a)).run().unwrap();
    let elapsed = started.elapsed();
    assert!(
        elapsed.as_secs_f64() < 600.0,
        "full pipeline took {elapsed:?}"
    );
    assert_eq!(summary.methods.len(), 5);
    // Perfect information closes with zero imbalance.
    let perfect = summary
        .backtest
        .iter()
        .find(|r| r.strategy == "perfect")
        .expect("perfect row");
    assert_eq!(perfect.imbalance_pct, 0.0);

    let out_b = dir.path().join("run_b");
    Pipeline::new(config_for(&out_b)).run().unwrap();

    let mut files_a = collect_files(&out_a);
    let mut files_b = collect_files(&out_b);
    files_a.sort();
    files_b.sort();
    assert_eq!(
        files_a.iter().map(|(r, _)| r).collect::<Vec<_>>(),
        files_b.iter().map(|(r, _)| r).collect::<Vec<_>>(),
        "file sets differ"
    );
    for ((rel, bytes_a), (_, bytes_b)) in files_a.iter().zip(&files_b) {
        assert_eq!(bytes_a, bytes_b, "artifact {rel} differs between runs");
    }
    println!(
        "acceptance 10 determinism-and-runtime: PASS (single run {elapsed:?}, {} artifacts identical)",
        files_a.len()
    );
}

fn collect_files(root: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path
                    .strip_prefix(root)
                    .unwrap()
                    .to_string_lossy()
                    .to_string();
                out.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    out
}
