//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test -p scr-core --test acceptance -- --nocapture`.
//! Set `SCR_ACCEPTANCE=1,4,7` to run a subset while iterating.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nalgebra::{DMatrix, SymmetricEigen};
use scr_core::analysis::{default_grid, run_analysis, AnalysisConfig};
use scr_core::bounds::{
    fice_bounds_curve, fice_bounds_rr, fice_bounds_rr_point, numerators, pi_ios_bounds_point, BoundAssumption, FunctionalPoint,
    ObservedFunctionals,
};
use scr_core::design::{fit_propensity, mahalanobis_match, pair_bootstrap, smd_table, MatchMode};
use scr_core::domain::{classify_patient_type, excluded_by, indicators_from_profile, Assumption};
use scr_core::io::{write_observed, write_potential};
use scr_core::oracle::{oracle_estimands, oracle_observed_functionals, OracleReport};
use scr_core::sensitivity::{sensitivity_report_weighted, SensitivityReport, SensitivitySettings};
use scr_core::simulate::{
    scenario_a, scenario_b, simulate_cohort, ArmHazards, CohortSpec, CovariateLaw, FrailtyConfig, HazardSpecs, TransitionHazardSpec,
    TreatmentMechanism,
};
use scr_core::survfit::{em_fit, gamma_laplace_deriv, posterior_frailty_moments, EmOptions};
use scr_core::{Arm, PotentialOutcomeProfile};

const HORIZON: f64 = 1.0;

// Tolerances and budgets, pinned.
const AC1_PI_AI: (f64, f64) = (0.002, 0.025);
const AC1_PI_AS: (f64, f64) = (0.70, 0.84);
const AC1_IOS_MINUS_AS: (f64, f64) = (0.005, 0.05);
const AC1_N: usize = 1_000_000;
const AC1_BUDGET: Duration = Duration::from_secs(120);
const AC2_SE_MULT: f64 = 3.0;
const AC3_SACE_MAX: f64 = 0.01;
const AC3_EFFECT_MIN: f64 = 0.02;
const AC3_BUDGET: Duration = Duration::from_secs(120);
const AC4_POPULATIONS: usize = 1000;
const AC4_TOL: f64 = 1e-12;
const AC4_BUDGET: Duration = Duration::from_secs(60);
const AC5_TOL: f64 = 1e-12;
const AC6_SETS: usize = 10_000;
const AC6_TOL: f64 = 1e-12;
const AC7_DECIMALS: f64 = 5e-4;
const AC8_N_PER_ARM: usize = 20_000;
const AC8_SEEDS: u64 = 10;
const AC8_BETA_TOL: f64 = 0.12;
const AC8_THETA_REL: f64 = 0.15;
const AC8_THETA_ABS_AT_ZERO: f64 = 0.05;
const AC8_MIN_PASSES: usize = 9;
const AC8_BUDGET: Duration = Duration::from_secs(600);
const AC9_MONOTONE_REL: f64 = 1e-8;
const AC9_QUADRATURE_TOL: f64 = 1e-8;
const AC9_FD_REL: f64 = 1e-6;
const AC10_MC_DRAWS: usize = 10_000;
const AC10_SUP_GAP: f64 = 0.01;
const AC10_SE_MULT: f64 = 3.0;
/// Baseline hazards are evaluated on this many steps over `(0, r]`.
const AC10_STEPS: usize = 1000;
/// Gauss-Hermite nodes for the normal covariate.
const AC10_X_NODES: usize = 20;
const AC10_BUDGET: Duration = Duration::from_secs(600);
const AC11_POST_SMD: f64 = 0.1;
const AC11_PRE_SMD: f64 = 0.3;
const AC11_SE_REL: f64 = 0.15;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Outcome { pass, detail: detail.into() }
    }
}

/// Shared between criteria so each large population is simulated once.
#[derive(Default)]
struct Cache {
    scenario_a: BTreeMap<(u64, u64), OracleReport>,
}

fn key(theta: f64, rho: f64) -> (u64, u64) {
    (theta.to_bits(), rho.to_bits())
}

fn cohort_spec(hazards: HazardSpecs, n: usize, theta: f64, rho: f64, seed: u64) -> CohortSpec {
    CohortSpec {
        n,
        covariates: CovariateLaw::BinaryNormal,
        hazards,
        frailty: FrailtyConfig::new(theta, theta, rho).unwrap(),
        treatment: TreatmentMechanism::Randomized { p: 0.5 },
        censoring_rate: 0.0,
        common_randomness: false,
        seed,
    }
}

fn population_oracle(hazards: HazardSpecs, n: usize, theta: f64, rho: f64, seed: u64) -> OracleReport {
    let cohort = simulate_cohort(&cohort_spec(hazards, n, theta, rho, seed)).unwrap();
    let profiles = cohort.profiles();
    drop(cohort);
    oracle_estimands(&profiles, None, &default_grid(52, HORIZON), HORIZON).unwrap()
}

fn defined(c: &[Option<f64>]) -> impl Iterator<Item = f64> + '_ {
    c.iter().flatten().copied()
}

fn ac1(cache: &mut Cache) -> Outcome {
    let start = Instant::now();
    let mut pass = true;
    let mut lines = Vec::new();
    for theta in [1.0, 3.0] {
        for rho in [0.0, 0.5, 1.0] {
            let seed = 1000 + (theta as u64) * 10 + (rho * 2.0) as u64;
            let rep = population_oracle(scenario_a(), AC1_N, theta, rho, seed);
            let gap = rep.pi_ios - rep.pi_as;
            let ok = (AC1_PI_AI.0..=AC1_PI_AI.1).contains(&rep.pi_ai)
                && (AC1_PI_AS.0..=AC1_PI_AS.1).contains(&rep.pi_as)
                && (AC1_IOS_MINUS_AS.0..=AC1_IOS_MINUS_AS.1).contains(&gap);
            pass &= ok;
            lines.push(format!(
                "θ={theta} ρ={rho}: π_ai={:.4} π_as={:.4} π_ios−π_as={:.4}{}",
                rep.pi_ai,
                rep.pi_as,
                gap,
                if ok { "" } else { " (out of range)" }
            ));
            cache.scenario_a.insert(key(theta, rho), rep);
        }
    }
    let elapsed = start.elapsed();
    pass &= elapsed < AC1_BUDGET;
    Outcome::new(pass, format!("{}; {:.1?}", lines.join("; "), elapsed))
}

fn scenario_a_oracle(cache: &mut Cache, theta: f64, rho: f64) -> &OracleReport {
    cache.scenario_a.entry(key(theta, rho)).or_insert_with(|| {
        let seed = 1000 + (theta as u64) * 10 + (rho * 2.0) as u64;
        population_oracle(scenario_a(), AC1_N, theta, rho, seed)
    })
}

/// Weighted covariate rows reproducing the binary-normal law: both levels of
/// the binary covariate crossed with Gauss-Hermite nodes for the normal one.
fn quadrature_rows(nodes: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    // Golub-Welsch on the Jacobi matrix of the probabilists' Hermite polynomials.
    let jacobi = DMatrix::from_fn(nodes, nodes, |i, j| if i + 1 == j || j + 1 == i { (i.max(j) as f64).sqrt() } else { 0.0 });
    let eig = SymmetricEigen::new(jacobi);
    let mut rows = Vec::with_capacity(2 * nodes);
    let mut weights = Vec::with_capacity(2 * nodes);
    for b in [0.0, 1.0] {
        for k in 0..nodes {
            rows.push(vec![b, eig.eigenvalues[k]]);
            weights.push(0.5 * eig.eigenvectors[(0, k)].powi(2));
        }
    }
    (rows, weights)
}

fn truth_report(hazards: &HazardSpecs, theta: f64, rho: f64, draws: usize, seed: u64) -> SensitivityReport {
    let m0 = hazards.arm(Arm::Zero).discretized(Arm::Zero, theta, HORIZON, AC10_STEPS);
    let m1 = hazards.arm(Arm::One).discretized(Arm::One, theta, HORIZON, AC10_STEPS);
    let settings = SensitivitySettings { grid: default_grid(52, HORIZON), horizon: HORIZON, mc_draws: draws, seed };
    let (rows, weights) = quadrature_rows(AC10_X_NODES);
    sensitivity_report_weighted(&m0, &m1, rho, &rows, Some(&weights), &settings).unwrap()
}

fn ac2(cache: &mut Cache) -> Outcome {
    let rep = scenario_a_oracle(cache, 1.0, 0.5);
    let last = rep.aice.difference.last().copied().flatten();
    let oracle_ok = last == Some(0.0);
    let sens = truth_report(&scenario_a(), 1.0, 0.5, 2000, 21);
    let est = sens.aice.difference.last().cloned().flatten();
    let sens_ok = match &est {
        Some(e) => e.value.abs() <= AC2_SE_MULT * e.mc_se.unwrap_or(0.0),
        None => false,
    };
    Outcome::new(
        oracle_ok && sens_ok,
        format!(
            "oracle AICE(r) = {last:?}; sensitivity AICE(r) = {:?} ± {:?}",
            est.as_ref().map(|e| e.value),
            est.as_ref().and_then(|e| e.mc_se)
        ),
    )
}

fn ac3() -> Outcome {
    let start = Instant::now();
    let rep = population_oracle(scenario_b(), AC1_N, 1.0, 0.0, 3003);
    let sace = defined(&rep.sace.difference).fold(0.0f64, |m, v| m.max(v.abs()));
    let fice = defined(&rep.fice.difference).fold(f64::NEG_INFINITY, f64::max);
    let aice = defined(&rep.aice.difference).fold(f64::NEG_INFINITY, f64::max);
    let elapsed = start.elapsed();
    Outcome::new(
        sace < AC3_SACE_MAX && fice > AC3_EFFECT_MIN && aice > AC3_EFFECT_MIN && elapsed < AC3_BUDGET,
        format!("sup|SACE| = {sace:.4}; max FICE = {fice:.4}; max AICE = {aice:.4}; π_ai = {:.4}; {elapsed:.1?}", rep.pi_ai),
    )
}

const TIMES_1: [f64; 5] = [0.15, 0.45, 0.75, 1.05, f64::INFINITY];
const TIMES_2: [f64; 6] = [0.3, 0.6, 0.9, 1.2, 1.5, f64::INFINITY];

fn random_profile(rng: &mut ChaCha8Rng) -> PotentialOutcomeProfile {
    let mut world = || {
        let t2 = TIMES_2[rng.random_range(0..TIMES_2.len())];
        let t1 = TIMES_1[rng.random_range(0..TIMES_1.len())];
        (if t1 > t2 { f64::INFINITY } else { t1 }, t2)
    };
    let (t1_0, t2_0) = world();
    let (t1_1, t2_1) = world();
    PotentialOutcomeProfile::new(t1_0, t2_0, t1_1, t2_1).unwrap()
}

fn assumption_of(a: BoundAssumption) -> Option<Assumption> {
    match a {
        BoundAssumption::None => None,
        BoundAssumption::WeakOrp => Some(Assumption::WeakOrp),
        BoundAssumption::IosOrp => Some(Assumption::IosOrp),
    }
}

/// A weighted discrete population whose patient types all satisfy `a`.
fn random_population(rng: &mut ChaCha8Rng, a: BoundAssumption) -> (Vec<PotentialOutcomeProfile>, Vec<f64>) {
    loop {
        let atoms = rng.random_range(1..=12);
        let mut profiles = Vec::new();
        let mut weights = Vec::new();
        for _ in 0..atoms {
            let p = random_profile(rng);
            let pt = classify_patient_type(indicators_from_profile(&p, HORIZON).unwrap());
            if assumption_of(a).is_some_and(|s| excluded_by(pt, s)) {
                continue;
            }
            profiles.push(p);
            weights.push(rng.random::<f64>() + 1e-3);
        }
        if !profiles.is_empty() {
            return (profiles, weights);
        }
    }
}

const AC4_GRID: [f64; 10] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0];

struct Population {
    assumption: BoundAssumption,
    functionals: ObservedFunctionals,
    truth: OracleReport,
}

fn ac4_populations() -> Vec<Population> {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut out = Vec::new();
    for a in BoundAssumption::ALL {
        for _ in 0..AC4_POPULATIONS {
            let (profiles, weights) = random_population(&mut rng, a);
            out.push(Population {
                assumption: a,
                functionals: oracle_observed_functionals(&profiles, Some(&weights), 0.5, &AC4_GRID, HORIZON).unwrap(),
                truth: oracle_estimands(&profiles, Some(&weights), &AC4_GRID, HORIZON).unwrap(),
            });
        }
    }
    out
}

fn ac4(pops: &[Population], elapsed_gen: Duration) -> Outcome {
    let start = Instant::now();
    let mut violations = 0;
    let mut checks = 0;
    for p in pops {
        let diff = fice_bounds_curve(&p.functionals, p.assumption);
        for (k, b) in diff.iter().enumerate() {
            if let Some(d) = p.truth.fice.difference[k] {
                checks += 1;
                if !b.contains(d, AC4_TOL) {
                    violations += 1;
                }
            }
            if let Some(rr) = p.truth.fice.risk_ratio[k] {
                let bb = fice_bounds_rr(&p.functionals, p.assumption, k);
                checks += 1;
                if bb.lower.is_some_and(|l| rr < l - AC4_TOL) || bb.upper.is_some_and(|u| rr > u + AC4_TOL) {
                    violations += 1;
                }
            }
        }
    }
    let elapsed = elapsed_gen + start.elapsed();
    Outcome::new(
        violations == 0 && elapsed < AC4_BUDGET,
        format!("{} populations per class, {checks} checks, {violations} violations; {elapsed:.1?}", AC4_POPULATIONS),
    )
}

fn ac5(pops: &[Population]) -> Outcome {
    let mut checked = 0;
    let mut worst = 0.0f64;
    for p in pops.iter().filter(|p| p.assumption == BoundAssumption::IosOrp) {
        let pi = p.truth.pi_ios;
        if pi <= 0.5 {
            continue;
        }
        let f = &p.functionals;
        for (k, b) in fice_bounds_curve(f, BoundAssumption::IosOrp).iter().enumerate() {
            let ef1_1 = f.ef1[1][k];
            if 1.0 - pi < ef1_1 && ef1_1 < pi {
                checked += 1;
                worst = worst.max((b.width() - (1.0 / pi - 1.0)).abs());
            }
        }
    }
    Outcome::new(
        checked > 0 && worst <= AC5_TOL,
        format!("{checked} grid points satisfy the condition; max |width − (1/π_ios − 1)| = {worst:.1e}"),
    )
}

fn random_point(rng: &mut ChaCha8Rng) -> FunctionalPoint {
    // Cell probabilities (infected-dead, infected-alive, uninfected-alive, uninfected-dead) per arm.
    let mut cells = || {
        let e: Vec<f64> = (0..4).map(|_| -rng.random::<f64>().max(1e-300).ln()).collect();
        let s: f64 = e.iter().sum();
        [e[0] / s, e[1] / s, e[2] / s]
    };
    let c0 = cells();
    let c1 = cells();
    let frac0: f64 = rng.random();
    let frac1: f64 = rng.random();
    let ef1_0_r = c0[0] + c0[1];
    FunctionalPoint {
        ef1_0: frac0 * ef1_0_r,
        ef1_1: frac1 * (c1[0] + c1[1]),
        ef1_0_r,
        epsi0: c0[0] + c0[1] + c0[2],
        epsi1: c1[0] + c1[1] + c1[2],
        eboth0: c0[0],
    }
}

fn ac6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut violations = BTreeMap::<&str, usize>::new();
    let mut coincidences = 0;
    for _ in 0..AC6_SETS {
        let p = random_point(&mut rng);
        let mut flag = |name: &'static str, ok: bool| {
            if !ok {
                *violations.entry(name).or_default() += 1;
            }
        };
        flag("rr weak = ios", fice_bounds_rr_point(&p, BoundAssumption::WeakOrp) == fice_bounds_rr_point(&p, BoundAssumption::IosOrp));
        let (ut, lt) = numerators(&p, BoundAssumption::WeakOrp);
        let (ui, li) = numerators(&p, BoundAssumption::IosOrp);
        let (un, ln) = numerators(&p, BoundAssumption::None);
        flag("ios and weak numerators agree", ut == ui && lt == li);
        flag("ũ ≤ u̇", ut <= un + AC6_TOL);
        flag("l̃ ≤ l̇", lt <= ln + AC6_TOL);
        let pn = pi_ios_bounds_point(&p, BoundAssumption::None);
        let pw = pi_ios_bounds_point(&p, BoundAssumption::WeakOrp);
        let pi = pi_ios_bounds_point(&p, BoundAssumption::IosOrp);
        flag("π lower none ≤ weak ≤ ios", pn.lower <= pw.lower + AC6_TOL && pw.lower <= pi.lower + AC6_TOL);
        flag("π upper none ≤ weak ≤ ios", pn.upper <= pw.upper + AC6_TOL && pw.upper <= pi.upper + AC6_TOL);
        flag("ios π is the point EPsi0", pi.lower == p.epsi0 && pi.upper == p.epsi0);
        flag("assumption-free π interval nonempty", pn.lower <= pn.upper + AC6_TOL);
        if p.epsi0 <= p.epsi1 {
            coincidences += 1;
            flag("none and weak π uppers coincide", (pn.upper - pw.upper).abs() <= AC6_TOL);
        }
    }
    let total: usize = violations.values().sum();
    Outcome::new(total == 0, format!("{AC6_SETS} functional sets ({coincidences} with EPsi0 ≤ EPsi1); violations {violations:?}"))
}

fn ac7() -> Outcome {
    let p = FunctionalPoint { ef1_0: 0.073, ef1_1: 0.073, ef1_0_r: 0.073, epsi0: 0.815, epsi1: 0.876, eboth0: 0.027 };
    let ios = pi_ios_bounds_point(&p, BoundAssumption::IosOrp);
    let weak = pi_ios_bounds_point(&p, BoundAssumption::WeakOrp);
    let close = |a: f64, b: f64| (a - b).abs() < AC7_DECIMALS;
    Outcome::new(
        close(ios.lower, 0.815) && close(ios.upper, 0.815) && close(weak.lower, 0.691) && close(weak.upper, 0.815),
        format!("ios-ORP {:.3}; weak-ORP [{:.3}, {:.3}]", ios.lower, weak.lower, weak.upper),
    )
}

/// Recovery design: frequent infections followed by death inside the window
/// and sizeable covariate effects, so `θ` is well identified at this sample size.
fn em_hazards() -> ArmHazards {
    let w = |shape: f64, scale: f64, beta: [f64; 2]| TransitionHazardSpec::new(shape, scale, beta.to_vec()).unwrap();
    ArmHazards { h01: w(1.0, 0.4, [1.0, -0.8]), h02: w(1.0, 1.0, [0.6, 0.7]), h12: w(1.0, 0.5, [-0.7, 0.9]) }
}

fn ac8() -> Outcome {
    let start = Instant::now();
    let truth = em_hazards();
    let mut passes = BTreeMap::new();
    let mut worst_beta = 0.0f64;
    let mut theta_hats = Vec::new();
    for theta in [1.0, 0.0] {
        let mut count = 0;
        for s in 0..AC8_SEEDS {
            let spec = CohortSpec {
                n: 2 * AC8_N_PER_ARM,
                covariates: CovariateLaw::BinaryNormal,
                hazards: HazardSpecs { arms: [truth.clone(), truth.clone()] },
                frailty: FrailtyConfig::new(theta, theta, 0.0).unwrap(),
                treatment: TreatmentMechanism::Randomized { p: 0.5 },
                censoring_rate: 0.0,
                common_randomness: false,
                seed: 8000 + s,
            };
            // Both arms share the law, so one arm of a doubled cohort is a sample of n per arm.
            let records: Vec<_> = simulate_cohort(&spec).unwrap().records().into_iter().filter(|r| r.treat == Arm::Zero).collect();
            let fit = match em_fit(&records, Arm::Zero, &EmOptions::default()) {
                Ok(f) => f,
                Err(_) => continue,
            };
            let mut ok = true;
            for (c, spec) in fit.model.components.iter().zip([&truth.h01, &truth.h02, &truth.h12]) {
                for (b, t) in c.beta.iter().zip(&spec.beta) {
                    worst_beta = worst_beta.max((b - t).abs());
                    ok &= (b - t).abs() <= AC8_BETA_TOL;
                }
            }
            let th = fit.theta();
            theta_hats.push(format!("{th:.3}"));
            ok &= if theta == 0.0 { th <= AC8_THETA_ABS_AT_ZERO } else { (th - theta).abs() <= AC8_THETA_REL * theta };
            count += ok as usize;
        }
        passes.insert(format!("θ={theta}"), count);
    }
    let elapsed = start.elapsed();
    Outcome::new(
        passes.values().all(|&c| c >= AC8_MIN_PASSES) && elapsed < AC8_BUDGET,
        format!("passes {passes:?} of {AC8_SEEDS}; max |β̂ − β| = {worst_beta:.3}; θ̂ = [{}]; {elapsed:.1?}", theta_hats.join(", ")),
    )
}

/// `∫ γ^a e^{−kγ} Gamma(γ; 1/θ, θ) dγ` up to the Gamma normalizer, and the
/// same integral weighted by `log γ`, by Simpson's rule on `u = log γ`.
fn frailty_integrals(theta: f64, k: f64, a: f64) -> (f64, f64, f64) {
    let shape = 1.0 / theta;
    let n = 200_000;
    let (lo, hi) = (-60.0, 6.0);
    let h = (hi - lo) / n as f64;
    let (mut m0, mut m1, mut ml) = (0.0, 0.0, 0.0);
    for i in 0..=n {
        let u = lo + i as f64 * h;
        let w = if i == 0 || i == n {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        let g = u.exp();
        let f = ((a + shape) * u - (k + shape) * g).exp();
        m0 += w * f;
        m1 += w * f * g;
        ml += w * f * u;
    }
    (m0, m1, ml)
}

fn ac9() -> Outcome {
    // Likelihood monotonicity along a real fit.
    let spec = CohortSpec {
        n: 4000,
        covariates: CovariateLaw::BinaryNormal,
        hazards: HazardSpecs { arms: [em_hazards(), em_hazards()] },
        frailty: FrailtyConfig::new(1.0, 1.0, 0.0).unwrap(),
        treatment: TreatmentMechanism::Randomized { p: 0.5 },
        censoring_rate: 0.3,
        common_randomness: false,
        seed: 909,
    };
    let records = simulate_cohort(&spec).unwrap().records();
    let mut monotone = true;
    let mut iterations = 0;
    for arm in Arm::BOTH {
        let arm_records: Vec<_> = records.iter().filter(|r| r.treat == arm).cloned().collect();
        let fit = em_fit(&arm_records, arm, &EmOptions::default()).unwrap();
        iterations += fit.loglik_trace.len();
        monotone &= fit.loglik_trace.windows(2).all(|w| w[1] >= w[0] - AC9_MONOTONE_REL * w[0].abs());
    }

    // Posterior moments against quadrature.
    let mut worst_q = 0.0f64;
    for &theta in &[0.3, 1.0, 2.5] {
        for &k in &[0.05, 0.7, 3.0] {
            for dp in 0..=2u8 {
                let (m0, m1, ml) = frailty_integrals(theta, k, dp as f64);
                let (mean, log_mean) = posterior_frailty_moments(theta, k, dp);
                worst_q = worst_q.max((mean - m1 / m0).abs()).max((log_mean - ml / m0).abs());
            }
        }
    }

    // Laplace derivatives against central differences.
    let mut worst_fd = 0.0f64;
    for &theta in &[0.2, 1.0, 4.0] {
        for &k in &[0.1f64, 1.0, 5.0] {
            for q in 1..=2u8 {
                let h = 1e-4 * k.max(1.0);
                let fd = (gamma_laplace_deriv(theta, k + h, q - 1) - gamma_laplace_deriv(theta, k - h, q - 1)) / (2.0 * h);
                let exact = gamma_laplace_deriv(theta, k, q);
                worst_fd = worst_fd.max(((fd - exact) / exact).abs());
            }
        }
    }
    Outcome::new(
        monotone && worst_q <= AC9_QUADRATURE_TOL && worst_fd <= AC9_FD_REL,
        format!(
            "log-likelihood nondecreasing over {iterations} iterations: {monotone}; \
             E-step vs quadrature {worst_q:.1e}; Laplace vs finite differences {worst_fd:.1e}"
        ),
    )
}

fn sup_gap(est: &[Option<scr_core::sensitivity::Estimate>], oracle: &[Option<f64>]) -> f64 {
    est.iter().zip(oracle).filter_map(|(e, o)| Some((e.as_ref()?.value - (*o)?).abs())).fold(0.0, f64::max)
}

fn ac10(cache: &mut Cache) -> Outcome {
    let start = Instant::now();
    let mut pass = true;
    let mut lines = Vec::new();
    for (k, rho) in [0.0, 0.5, 1.0].into_iter().enumerate() {
        let oracle = scenario_a_oracle(cache, 3.0, rho).clone();
        let sens = truth_report(&scenario_a(), 3.0, rho, AC10_MC_DRAWS, 100 + k as u64);
        let gaps = [
            ("FICE", sup_gap(&sens.fice.difference, &oracle.fice.difference)),
            ("SACE", sup_gap(&sens.sace.difference, &oracle.sace.difference)),
            ("total", sup_gap(&sens.total.difference, &oracle.total.difference)),
        ];
        let n = oracle.total_weight;
        let mut worst_z = 0.0f64;
        for (e, &p) in sens.pt_probs.iter().zip(&oracle.pt_probs) {
            let se = (e.mc_se.unwrap_or(0.0).powi(2) + p * (1.0 - p) / n).sqrt();
            let diff = (e.value - p).abs();
            let z = if se > 0.0 {
                diff / se
            } else if diff == 0.0 {
                0.0
            } else {
                f64::INFINITY
            };
            worst_z = worst_z.max(z);
        }
        let ok = gaps.iter().all(|(_, g)| *g < AC10_SUP_GAP) && worst_z <= AC10_SE_MULT;
        pass &= ok;
        lines.push(format!(
            "ρ={rho}: {} max pt z = {worst_z:.2}",
            gaps.iter().map(|(n, g)| format!("{n} gap {g:.4},")).collect::<Vec<_>>().join(" ")
        ));
    }
    let elapsed = start.elapsed();
    pass &= elapsed < AC10_BUDGET;
    Outcome::new(pass, format!("{}; {elapsed:.1?}", lines.join("; ")))
}

fn ac11() -> Outcome {
    let spec = CohortSpec {
        n: 5000,
        covariates: CovariateLaw::Gaussian { dim: 3 },
        hazards: HazardSpecs { arms: [em_hazards_p(3), em_hazards_p(3)] },
        frailty: FrailtyConfig::new(1.0, 1.0, 0.5).unwrap(),
        treatment: TreatmentMechanism::Logistic { intercept: 1.0, coefficients: vec![0.6, -0.5, 0.4] },
        censoring_rate: 0.0,
        common_randomness: false,
        seed: 1111,
    };
    let records = simulate_cohort(&spec).unwrap().records();
    let ps = fit_propensity(&records).unwrap();
    let matched = mahalanobis_match(&records, &ps, 0.3, MatchMode::Mahalanobis).unwrap();
    let table = smd_table(&records, Some(&matched));
    let pre = table.iter().map(|r| r.before.abs()).fold(0.0, f64::max);
    let post = table.iter().map(|r| r.after.unwrap().abs()).fold(0.0, f64::max);

    let n = 200;
    let mut ratios = 0.0;
    for meta in 0..30u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(meta);
        let data: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let mean = data.iter().sum::<f64>() / n as f64;
        let sd = (data.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        let stat = |idx: &[usize]| Ok(vec![Some(idx.iter().map(|&i| data[i]).sum::<f64>() / idx.len() as f64)]);
        let r = pair_bootstrap(n, stat, 200, 5000 + meta).unwrap();
        ratios += r.se[0].unwrap() / (sd / (n as f64).sqrt());
    }
    let ratio = ratios / 30.0;

    let d = AnalysisConfig::default();
    let defaults_ok = d.caliper == 0.3 && d.bootstrap == 200 && d.grid.len() == 52 && d.rhos == vec![0.0, 0.5, 1.0];
    Outcome::new(
        pre > AC11_PRE_SMD && post < AC11_POST_SMD && (ratio - 1.0).abs() < AC11_SE_REL && defaults_ok,
        format!(
            "max SMD {pre:.3} → {post:.3} over {} pairs; bootstrap SE / (sd/√n) = {ratio:.3}; \
             defaults caliper {} B {} grid {} ρ {:?}",
            matched.pairs.len(),
            d.caliper,
            d.bootstrap,
            d.grid.len(),
            d.rhos
        ),
    )
}

fn em_hazards_p(p: usize) -> ArmHazards {
    let w = |shape: f64, scale: f64, beta: &[f64]| {
        let mut b = beta.to_vec();
        b.resize(p, 0.0);
        TransitionHazardSpec::new(shape, scale, b).unwrap()
    };
    ArmHazards { h01: w(1.5, 1.2, &[0.5, -0.5]), h02: w(1.2, 1.8, &[0.3, 0.4]), h12: w(1.3, 0.6, &[-0.4, 0.6]) }
}

fn pipeline_bytes() -> Vec<u8> {
    let spec = CohortSpec {
        n: 3000,
        covariates: CovariateLaw::Gaussian { dim: 2 },
        hazards: HazardSpecs { arms: [em_hazards_p(2), em_hazards_p(2)] },
        frailty: FrailtyConfig::new(1.0, 1.0, 0.5).unwrap(),
        treatment: TreatmentMechanism::Logistic { intercept: 0.5, coefficients: vec![0.5, -0.4] },
        censoring_rate: 0.2,
        common_randomness: false,
        seed: 1212,
    };
    let cohort = simulate_cohort(&spec).unwrap();
    let mut bytes = Vec::new();
    write_observed(&mut bytes, &cohort.records()).unwrap();
    write_potential(&mut bytes, &cohort.subjects).unwrap();
    let cfg = AnalysisConfig {
        grid: default_grid(6, HORIZON),
        mc_draws: 50,
        bootstrap: 4,
        bootstrap_mc_draws: 10,
        fast_bootstrap: true,
        seed: 12,
        ..AnalysisConfig::default()
    };
    let out = run_analysis(&cohort.records(), &cfg).unwrap();
    bytes.extend(serde_json::to_vec(&out.report).unwrap());
    bytes
}

fn ac12() -> Outcome {
    let run = |threads: usize| rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(pipeline_bytes);
    let a = run(1);
    let b = run(1);
    let c = run(4);
    Outcome::new(a == b && a == c, format!("{} bytes; repeat identical: {}; 1 vs 4 threads identical: {}", a.len(), a == b, a == c))
}

#[test]
fn acceptance_criteria() {
    let only: Option<Vec<u32>> = std::env::var("SCR_ACCEPTANCE").ok().map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let wanted = |n: u32| only.as_ref().is_none_or(|v| v.contains(&n));
    let mut cache = Cache::default();
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    let mut record = |n: u32, name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        if !wanted(n) {
            return;
        }
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default();
            Outcome::new(false, format!("panicked: {msg}"))
        });
        println!("AC{n:<2} {} {name}: {}", if outcome.pass { "PASS" } else { "FAIL" }, outcome.detail);
        results.push((n, name, outcome));
    };

    record(1, "scenario A strata proportions", &mut || ac1(&mut cache));
    record(2, "AICE terminal zero", &mut || ac2(&mut cache));
    record(3, "scenario B qualitative divergence", &mut ac3);
    let gen_start = Instant::now();
    let pops = if wanted(4) || wanted(5) { ac4_populations() } else { Vec::new() };
    let gen_time = gen_start.elapsed();
    record(4, "bound containment", &mut || ac4(&pops, gen_time));
    record(5, "width identity", &mut || ac5(&pops));
    record(6, "analytic coincidences and orderings", &mut ac6);
    record(7, "π_ios worked numbers", &mut ac7);
    record(8, "EM recovery", &mut ac8);
    record(9, "EM internals", &mut ac9);
    record(10, "oracle equivalence at the truth", &mut || ac10(&mut cache));
    record(11, "design pipeline", &mut ac11);
    record(12, "determinism", &mut ac12);

    let failed: Vec<String> = results.iter().filter(|r| !r.2.pass).map(|r| format!("AC{} {}", r.0, r.1)).collect();
    assert!(failed.is_empty(), "failing criteria: {failed:?}");
}
