//! End-to-end acceptance criteria. Runs without the libtest harness and
//! prints one PASS/FAIL line per criterion; exits nonzero if any fails.

use std::time::Instant;

use itertools::Itertools;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use flockdelay::certificate::{
    critical_speed_constant_data, find_eta, monotone_speed_extension, solve_c1, Certification, Menu,
};
use flockdelay::delay::retarded_time;
use flockdelay::diagnostics::check_decay;
use flockdelay::dynamics::{
    consistency_sweep, picard_contraction_factor, simulate, solve_picard, InitialData, PicardConfig, SimConfig,
};
use flockdelay::meanfield::{
    ensemble_norm_distance, mkr_distance, particle_convergence_study, perturbation_study, sample_initial_ensemble,
    InitialLaw, PositionLaw, Sampling, TailMode, TrajectoryEnsemble, VelocityLaw,
};
use flockdelay::{InfluenceFunction, InitialPath, TrajectoryHistory};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn uniform_vec(rng: &mut ChaCha8Rng, d: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..d).map(|_| rng.gen_range(lo..hi)).collect()
}

fn in_ball(rng: &mut ChaCha8Rng, d: usize, r: f64) -> Vec<f64> {
    loop {
        let p = uniform_vec(rng, d, -1.0, 1.0);
        if norm(&p) <= 1.0 {
            return p.iter().map(|x| x * r).collect();
        }
    }
}

fn cv(x0: Vec<f64>, v0: Vec<f64>) -> InitialPath {
    InitialPath::ConstantVelocity { x0, v0 }
}

/// `c tau = |z - x0 - v (t - tau)|` solved as a quadratic in `tau`.
fn linear_tau(z: &[f64], x0: &[f64], v: &[f64], t: f64, c: f64) -> f64 {
    let w: Vec<f64> = (0..z.len()).map(|k| z[k] - x0[k] - v[k] * t).collect();
    let wv: f64 = w.iter().zip(v).map(|(a, b)| a * b).sum();
    let ww: f64 = w.iter().map(|a| a * a).sum();
    let a = c * c - v.iter().map(|a| a * a).sum::<f64>();
    let disc = (wv * wv + a * ww).sqrt();
    if wv >= 0.0 {
        (wv + disc) / a
    } else {
        ww / (disc - wv)
    }
}

fn delay_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut cases = Vec::new();
    for k in 0..1000 {
        let d = 1 + k % 3;
        let s = rng.gen_range(0.1..2.0);
        let c = s * rng.gen_range(1.05..10.0);
        let x0 = uniform_vec(&mut rng, d, -3.0, 3.0);
        let v = in_ball(&mut rng, d, s);
        let z = uniform_vec(&mut rng, d, -3.0, 3.0);
        let knots = k % 2 == 1;
        cases.push((s, c, x0, v, z, knots));
    }
    let start = Instant::now();
    let mut worst = 0.0f64;
    for (s, c, x0, v, z, knots) in &cases {
        let mut h = TrajectoryHistory::new(cv(x0.clone(), v.clone()), *s).unwrap();
        let t = if *knots {
            let dt = 0.125;
            for j in 1..=16 {
                let t = j as f64 * dt;
                let x: Vec<f64> = x0.iter().zip(v).map(|(a, b)| a + b * t).collect();
                h.append(t, &x, v).unwrap();
            }
            2.0
        } else {
            0.0
        };
        let r = retarded_time(&h, t, z, *c).unwrap();
        worst = worst.max((r.tau - linear_tau(z, x0, v, t, *c)).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-10 && secs < 1.0,
        format!("max |tau - tau_exact| = {worst:.2e} over 1000 cases in {secs:.3} s"),
    )
}

fn random_run(seed: u64) -> (SimConfig, InitialData) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(2..=20);
    let d = rng.gen_range(1..=3);
    let s = 1.0;
    let c = rng.gen_range(1.2..10.0);
    let beta = rng.gen_range(0.0..1.5);
    let paths = (0..n)
        .map(|i| {
            let v = if i == 0 {
                let mut v = in_ball(&mut rng, d, 1.0);
                let r = norm(&v).max(1e-3);
                v.iter_mut().for_each(|a| *a /= r);
                while norm(&v) > s {
                    v.iter_mut().for_each(|a| *a *= 1.0 - f64::EPSILON);
                }
                v
            } else {
                in_ball(&mut rng, d, s)
            };
            cv(uniform_vec(&mut rng, d, -2.0, 2.0), v)
        })
        .collect();
    let mut cfg = SimConfig::new(c, s, InfluenceFunction::power_law(beta).unwrap(), 0.05, 10.0);
    cfg.sample_every = 20;
    (cfg, InitialData::new(paths))
}

fn bound_suite() -> (Outcome, Outcome) {
    let reports: Vec<_> = (0..100u64)
        .into_par_iter()
        .map(|seed| {
            let (cfg, init) = random_run(seed);
            simulate(&cfg, &init).map(|o| o.invariants)
        })
        .collect();
    let mut errors = 0;
    let (mut dchecks, mut dviol, mut dmax) = (0, 0, f64::NEG_INFINITY);
    let (mut schecks, mut sviol, mut smax) = (0, 0, f64::NEG_INFINITY);
    for r in &reports {
        match r {
            Ok(r) => {
                dchecks += r.delay_checks;
                dviol += r.delay_violations;
                dmax = dmax.max(r.max_delay_excess);
                schecks += r.speed_checks;
                sviol += r.speed_violations;
                smax = smax.max(r.max_speed_excess);
            }
            Err(_) => errors += 1,
        }
    }
    (
        outcome(
            errors == 0 && dviol == 0 && dchecks > 0,
            format!("{dchecks} checks, {dviol} violations, max tau - dX/(c-s) = {dmax:.2e}, {errors} aborted runs"),
        ),
        outcome(
            errors == 0 && sviol == 0 && schecks > 0,
            format!("{schecks} checks, {sviol} violations, max |v| - s = {smax:.2e}, {errors} aborted runs"),
        ),
    )
}

fn picard_cross_validation() -> Outcome {
    let results: Vec<_> = (0..20u64)
        .into_par_iter()
        .map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let n = rng.gen_range(1..=5);
            let d = rng.gen_range(1..=2);
            let s = rng.gen_range(0.2..1.0);
            let c = s * rng.gen_range(2.0..8.0);
            let m = 0.5 * (s + c);
            let kernel = InfluenceFunction::power_law(rng.gen_range(0.0..1.0)).unwrap();
            let mut t_step = 0.1f64.min((m - s) / (2.0 * m));
            while picard_contraction_factor(m, c, kernel.lipschitz_bound(), t_step) > 0.5 {
                t_step *= 0.5;
            }
            let paths: Vec<InitialPath> = (0..n)
                .map(|_| cv(uniform_vec(&mut rng, d, -1.0, 1.0), in_ball(&mut rng, d, s)))
                .collect();
            let p = PicardConfig::new(m, t_step);
            let h = t_step / (p.grid_points - 1) as f64;
            let cfg = SimConfig::new(c, s, kernel, h, t_step);
            let sol = solve_picard(&cfg, &p, &paths).unwrap();
            let rk = simulate(&cfg, &InitialData::new(paths)).unwrap();
            let mut diff = 0.0f64;
            for (k, &t) in sol.times.iter().enumerate() {
                for (i, hist) in rk.histories.iter().enumerate() {
                    let v = hist.eval_velocity(t).unwrap();
                    let w = &sol.velocities[k][i * d..(i + 1) * d];
                    diff = diff.max(v.iter().zip(w).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt());
                }
            }
            let tol = 10.0 * (h * h + h.powi(4));
            (
                diff <= tol && sol.max_empirical_factor <= sol.analytic_factor,
                diff / tol,
            )
        })
        .collect();
    let failed = results.iter().filter(|r| !r.0).count();
    let worst = results.iter().map(|r| r.1).fold(0.0, f64::max);
    outcome(
        failed == 0,
        format!("20 configs, {failed} failed, worst diff / tolerance = {worst:.3e}, empirical <= analytic factor"),
    )
}

fn certified_flocking() -> Outcome {
    let cases: Vec<(f64, usize)> = [0.1, 0.25, 0.4]
        .iter()
        .flat_map(|&b| [2usize, 5, 10].map(|n| (b, n)))
        .collect();
    let results: Vec<_> = cases
        .par_iter()
        .map(|&(beta, n)| {
            let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
            let s = 1.0;
            let paths: Vec<InitialPath> = (0..n)
                .map(|_| cv(uniform_vec(&mut rng, 2, -0.5, 0.5), uniform_vec(&mut rng, 2, -0.2, 0.2)))
                .collect();
            let init = InitialData::new(paths);
            let (x, v) = init.state_at_zero().unwrap();
            let diam = |f: &[f64]| {
                (0..n)
                    .cartesian_product(0..n)
                    .map(|(i, j)| norm(&[f[2 * i] - f[2 * j], f[2 * i + 1] - f[2 * j + 1]]))
                    .fold(0.0, f64::max)
            };
            let (dx0, dv0) = (diam(&x), diam(&v));
            let kernel = InfluenceFunction::power_law(beta).unwrap();
            let Some(eta) = find_eta(&kernel, dx0, dv0).unwrap().eta else {
                return (false, format!("beta {beta} N {n}: no eta"));
            };
            let Certification::Certified(cert) =
                critical_speed_constant_data(&kernel, dx0, dv0, s, eta, &Menu::default()).unwrap()
            else {
                return (false, format!("beta {beta} N {n}: infeasible"));
            };
            let mut cfg = SimConfig::new(cert.c_star, s, kernel, 0.02, cert.suggested_horizon());
            cfg.sample_every = 1;
            let out = simulate(&cfg, &init).unwrap();
            let rep = check_decay(&out.series, cert.eta, cert.sigma, cert.kappa, 1e-9).unwrap();
            (
                rep.holds && out.invariants.failures() == 0,
                format!(
                    "beta {beta} N {n}: c* {:.1}, T {:.0}, max dV ratio {:.3}, max D ratio {:.3}",
                    cert.c_star, cfg.horizon, rep.max_dv_ratio, rep.max_d_ratio
                ),
            )
        })
        .collect();
    let failed: Vec<&String> = results.iter().filter(|r| !r.0).map(|r| &r.1).collect();
    outcome(
        failed.is_empty(),
        if failed.is_empty() {
            format!("9 cases hold; e.g. {}", results[8].1)
        } else {
            format!("failing: {failed:?}")
        },
    )
}

fn hand_checked_certificate() -> Outcome {
    let k = InfluenceFunction::constant(1.0).unwrap();
    let cert = critical_speed_constant_data(&k, 1.0, 1.0, 1.0, 0.5, &Menu::forced(1.0, 2.0)).unwrap();
    let Some(cert) = cert.certificate() else {
        return outcome(false, "no certificate".into());
    };
    // Independent bisection on (1/eta) ln(eta kappa/(kappa+sigma) + 1) = X/(c - s).
    let (eta, kappa, sigma, x, s) = (0.5f64, 0.25f64, 2.0f64, 5.0f64, 1.0f64);
    let lhs = (eta * kappa / (kappa + sigma) + 1.0).ln() / eta;
    let (mut lo, mut hi) = (s + 1e-9, 1e6);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if x / (mid - s) > lhs {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let oracle = 0.5 * (lo + hi);
    let closed = 1.0 + 5.0 / (2.0 * (19.0f64 / 18.0).ln());
    let lib = solve_c1(eta, kappa, sigma, x, s).unwrap();
    let rel = |a: f64, b: f64| ((a - b) / b).abs();
    let pass = cert.kappa == 0.25
        && rel(cert.c1, oracle) <= 1e-10
        && rel(cert.c1, closed) <= 1e-10
        && rel(lib, oracle) <= 1e-10;
    outcome(
        pass,
        format!(
            "kappa = {}, c1 = {:.12}, oracle {:.12}, closed form {:.12}",
            cert.kappa, cert.c1, oracle, closed
        ),
    )
}

fn monotone_extension() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut certs = Vec::new();
    let mut draws = 0;
    while certs.len() < 100 && draws < 10_000 {
        draws += 1;
        let beta = rng.gen_range(0.0..0.5);
        let dx0 = rng.gen_range(0.05..3.0);
        let dv0 = rng.gen_range(0.0..1.0);
        let s = rng.gen_range(0.5..2.0);
        let kernel = InfluenceFunction::power_law(beta).unwrap();
        let Some(eta) = find_eta(&kernel, dx0, dv0).unwrap().eta else {
            continue;
        };
        if let Certification::Certified(c) =
            critical_speed_constant_data(&kernel, dx0, dv0, s, eta, &Menu::default()).unwrap()
        {
            certs.push((kernel, c));
        }
    }
    let mut checks = 0;
    let mut failures = 0;
    for (kernel, cert) in &certs {
        for f in [1.0, 2.0, 10.0] {
            checks += 1;
            if !monotone_speed_extension(cert, kernel, f * cert.c_star).unwrap() {
                failures += 1;
            }
        }
    }
    outcome(
        certs.len() == 100 && failures == 0,
        format!(
            "{} certificates, {checks} speed checks, {failures} failures",
            certs.len()
        ),
    )
}

fn infinite_speed_consistency() -> Outcome {
    let pair = InitialData::new(vec![cv(vec![-1.0], vec![0.1]), cv(vec![1.0], vec![-0.1])]);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let ten = InitialData::new(
        (0..10)
            .map(|_| cv(uniform_vec(&mut rng, 2, -1.0, 1.0), in_ball(&mut rng, 2, 0.5)))
            .collect(),
    );
    let speeds = [10.0, 20.0, 40.0, 80.0];
    let mut pass = true;
    let mut detail = Vec::new();
    for (name, init) in [("N=2", &pair), ("N=10", &ten)] {
        let cfg = SimConfig::new(10.0, 1.0, InfluenceFunction::power_law(0.5).unwrap(), 0.01, 5.0);
        let sweep = consistency_sweep(&cfg, init, &speeds).unwrap();
        pass &= sweep.strictly_decreasing();
        detail.push(format!(
            "{name}: {}",
            sweep.rows.iter().map(|r| format!("{:.3e}", r.distance)).join(" > ")
        ));
    }
    outcome(pass, detail.join("; "))
}

fn law(dim: usize, sampling: Sampling, seed: u64) -> InitialLaw {
    InitialLaw {
        position: PositionLaw::UniformBox {
            lo: vec![-1.0; dim],
            hi: vec![1.0; dim],
        },
        velocity: VelocityLaw::UniformBall {
            center: vec![0.0; dim],
            radius: 0.5,
        },
        tail: TailMode::Shared {
            velocity: vec![0.0; dim],
        },
        sampling,
        s: 1.0,
        window: 2.0,
        seed,
    }
}

fn ot_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let sizes: Vec<(usize, usize)> = (1..=7)
        .cartesian_product(1..=7)
        .filter(|&(n, m)| n * m / gcd(n, m) <= 7)
        .collect();
    let mut worst = 0.0f64;
    for case in 0..200u64 {
        let (n, m) = sizes[rng.gen_range(0..sizes.len())];
        let d = rng.gen_range(1..=2);
        let a = sample_initial_ensemble(&law(d, Sampling::Iid, 2 * case), n).unwrap();
        let b = sample_initial_ensemble(&law(d, Sampling::Iid, 2 * case + 1), m).unwrap();
        let l = n * m / gcd(n, m);
        let cost = |i: usize, j: usize| ensemble_norm_distance(&a, &b, i / (l / n), j / (l / m)).unwrap();
        let brute = (0..l)
            .permutations(l)
            .map(|p| p.iter().enumerate().map(|(i, &j)| cost(i, j)).sum::<f64>())
            .fold(f64::INFINITY, f64::min)
            / l as f64;
        worst = worst.max((mkr_distance(&a, &b).unwrap() - brute).abs());
    }

    let mut cfg = SimConfig::new(4.0, 1.0, InfluenceFunction::power_law(0.5).unwrap(), 0.05, 1.0);
    cfg.align_breaks = false;
    let ensembles: Vec<TrajectoryEnsemble> = (0..150u64)
        .into_par_iter()
        .map(|k| {
            let e = sample_initial_ensemble(&law(2, Sampling::Iid, 1000 + k), 1 + (k as usize % 5)).unwrap();
            e.evolve(&cfg).unwrap().0
        })
        .collect();
    let (mut zero, mut asym, mut tri) = (0.0f64, 0.0f64, f64::NEG_INFINITY);
    for t in 0..50 {
        let (a, b, c) = (&ensembles[3 * t], &ensembles[3 * t + 1], &ensembles[3 * t + 2]);
        let ab = mkr_distance(a, b).unwrap();
        let ba = mkr_distance(b, a).unwrap();
        let bc = mkr_distance(b, c).unwrap();
        let ac = mkr_distance(a, c).unwrap();
        zero = zero.max(mkr_distance(a, a).unwrap());
        asym = asym.max((ab - ba).abs());
        tri = tri.max(ac - ab - bc);
    }
    outcome(
        worst <= 1e-12 && zero == 0.0 && asym <= 1e-10 && tri <= 1e-8,
        format!(
            "200 cases, max |W - brute force| = {worst:.1e}; 50 triples: d(e,e) max {zero:.1e}, asymmetry {asym:.1e}, triangle excess {tri:.1e}"
        ),
    )
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn smooth_curve_law() -> InitialLaw {
    InitialLaw {
        position: PositionLaw::UniformBox {
            lo: vec![-1.0],
            hi: vec![1.0],
        },
        velocity: VelocityLaw::Affine {
            offset: vec![0.0],
            gain: -0.5,
        },
        tail: TailMode::Shared { velocity: vec![0.0] },
        sampling: Sampling::Halton,
        s: 1.0,
        window: 5.0,
        seed: 0,
    }
}

fn study_config() -> SimConfig {
    let mut cfg = SimConfig::new(5.0, 1.0, InfluenceFunction::power_law(0.5).unwrap(), 0.05, 5.0);
    cfg.align_breaks = false;
    cfg
}

fn particle_convergence() -> Outcome {
    let start = Instant::now();
    let study = particle_convergence_study(&smooth_curve_law(), &[4, 8, 16, 32], &study_config(), false).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let nonincreasing = study.rows.windows(2).all(|w| w[1].wt <= w[0].wt);
    let failures: usize = study.reports.iter().map(|r| r.failures()).sum();
    outcome(
        nonincreasing && failures == 0 && secs <= 600.0,
        format!(
            "W_T(N, 2N) = {} in {secs:.1} s",
            study.rows.iter().map(|r| format!("{:.4}", r.wt)).join(", ")
        ),
    )
}

fn stability_proxy() -> Outcome {
    let mut l = law(2, Sampling::Iid, 11);
    l.window = 5.0;
    let study = perturbation_study(&l, 8, &[0.1, 0.01, 0.001], &study_config(), false).unwrap();
    let ratios: Vec<f64> = study.rows.iter().filter_map(|r| r.ratio).collect();
    let band = ratios.iter().copied().fold(0.0, f64::max) / ratios.iter().copied().fold(f64::INFINITY, f64::min);
    outcome(
        ratios.len() == 3 && band <= 3.0,
        format!(
            "W_T/W_0 = {}, band {band:.4}",
            ratios.iter().map(|r| format!("{r:.4}")).join(", ")
        ),
    )
}

fn convergence_order() -> Outcome {
    let init = InitialData::new(vec![cv(vec![-1.0], vec![0.5]), cv(vec![1.0], vec![-0.5])]);
    let kernel = InfluenceFunction::power_law(0.5).unwrap();
    let finals: Vec<Vec<f64>> = [0.1, 0.05, 0.025]
        .iter()
        .map(|&dt| {
            let out = simulate(&SimConfig::new(2.0, 1.0, kernel.clone(), dt, 2.0), &init).unwrap();
            let st = out.final_state;
            st.x.iter().chain(&st.v).copied().collect()
        })
        .collect();
    let diff = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let e1 = diff(&finals[0], &finals[1]);
    let e2 = diff(&finals[1], &finals[2]);
    let order = (e1 / e2).log2();
    outcome(
        order >= 3.0,
        format!("Richardson differences {e1:.3e}, {e2:.3e}, order {order:.2}"),
    )
}

type Criterion = fn() -> Vec<Outcome>;

fn main() {
    let criteria: [(&[&str], Criterion); 11] = [
        (&["delay-solver exactness"], || vec![delay_exactness()]),
        (&["delay bound", "velocity bound"], || {
            let (a, b) = bound_suite();
            vec![a, b]
        }),
        (&["Picard/RK4 cross-validation"], || vec![picard_cross_validation()]),
        (&["certified flocking end-to-end"], || vec![certified_flocking()]),
        (&["hand-checked certificate"], || vec![hand_checked_certificate()]),
        (&["monotone speed extension"], || vec![monotone_extension()]),
        (&["infinite-speed consistency"], || vec![infinite_speed_consistency()]),
        (&["OT exactness and metric axioms"], || vec![ot_exactness()]),
        (&["particle-method convergence trend"], || vec![particle_convergence()]),
        (&["stability proxy"], || vec![stability_proxy()]),
        (&["RK convergence order"], || vec![convergence_order()]),
    ];
    let mut k = 0;
    let mut failed = 0;
    for (names, run) in criteria {
        let start = Instant::now();
        let results = run();
        let secs = start.elapsed().as_secs_f64();
        for (name, r) in names.iter().zip(results) {
            k += 1;
            if !r.pass {
                failed += 1;
            }
            println!(
                "criterion {k:>2} {name:<34} {} ({secs:.1} s) {}",
                if r.pass { "PASS" } else { "FAIL" },
                r.detail
            );
        }
    }
    println!("acceptance: {} of {k} criteria passed", k - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
