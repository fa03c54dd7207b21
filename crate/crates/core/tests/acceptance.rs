//! Acceptance gate: each test covers one numbered criterion and prints a
//! single pass/fail line (visible with `--nocapture`).

mod common;

use std::time::Instant;

use common::*;
use nalgebra::{DMatrix, DVector};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use uotdc_core::gaussian::{kl_gaussian, GaussianMeasure, Tolerances};
use uotdc_core::oracle;
use uotdc_core::sim::{analytic_control_cost, check_moments, simulate, SimConfig};
use uotdc_core::udc::{LinearSystem, SdpVariables, UdcOptions, UdcProblem};
use uotdc_core::uot::UotProblem;

fn report(number: usize, name: &str, run: impl FnOnce() + std::panic::UnwindSafe) {
    let outcome = std::panic::catch_unwind(run);
    match outcome {
        Ok(()) => println!("acceptance criterion {number} ({name}): PASS"),
        Err(payload) => {
            println!("acceptance criterion {number} ({name}): FAIL");
            std::panic::resume_unwind(payload);
        }
    }
}

fn identity_system(d: usize, t: usize) -> LinearSystem<f64> {
    LinearSystem::new(DMatrix::identity(d, d), DMatrix::identity(d, d), t).unwrap()
}

fn rel(x: f64, y: f64) -> f64 {
    (x - y).abs() / y.abs().max(1e-12)
}

#[test]
fn criterion_1_fixed_point_identity() {
    report(1, "fixed-point identity", || {
        let start = Instant::now();
        let tol = Tolerances::default();
        let mut rng = StdRng::seed_from_u64(301);
        for d in 1..=3usize {
            let c0 = rng.gen_range(0.5..2.0);
            let m0 = DVector::from_fn(d, |_, _| rng.gen_range(-1.0..1.0));
            let s0 = random_spd(d, &mut rng);
            let alpha = GaussianMeasure::new(c0, m0.clone(), s0.clone()).unwrap();
            let p = UotProblem::new(alpha.clone(), alpha.clone(), rng.gen_range(0.5..2.0))
                .unwrap();
            let sol = p.solve(&tol, 10_000).unwrap();
            assert!(rel(sol.mass, c0) < 1e-6);
            assert!((sol.marginal1.mean() - &m0).norm() < 1e-6 * (1.0 + m0.norm()));
            assert!((sol.marginal1.cov() - &s0).amax() < 1e-6 * (1.0 + s0.amax()));
            assert!((sol.marginal2.mean() - &m0).norm() < 1e-6 * (1.0 + m0.norm()));
            assert!((sol.marginal2.cov() - &s0).amax() < 1e-6 * (1.0 + s0.amax()));
            assert!(
                (sol.map.linear.clone() - DMatrix::identity(d, d)).amax() < 1e-5
            );
            assert!(sol.map.offset.norm() < 1e-5);
        }
        assert!(start.elapsed().as_secs_f64() < 1.0, "criterion 1 over budget");
    });
}

#[test]
fn criterion_2_oracle_agreement() {
    report(2, "oracle agreement", || {
        let start = Instant::now();
        let tol = Tolerances::default();
        let instances = [
            (1.0, -0.5, 0.5, 1.0, 0.5, 0.7, 0.5),
            (1.2, -1.0, 0.4, 0.8, 0.8, 0.6, 1.0),
            (0.7, 0.0, 0.6, 1.3, 0.4, 0.5, 1.0),
            (1.5, -0.3, 0.7, 0.9, 0.9, 0.4, 5.0),
            (0.9, 0.2, 0.5, 1.1, -0.4, 0.8, 5.0),
        ];
        let lo = DVector::from_vec(vec![-8.0]);
        let hi = DVector::from_vec(vec![8.0]);
        for &(ca, ma, va, cb, mb, vb, gamma) in &instances {
            let a = gauss_1d(ca, ma, va);
            let b = gauss_1d(cb, mb, vb);
            let p = UotProblem::new(a.clone(), b.clone(), gamma).unwrap();
            let sol = p.solve(&tol, 10_000).unwrap();
            let ga = oracle::discretize(&a, &lo, &hi, 400).unwrap();
            let gb = oracle::discretize(&b, &lo, &hi, 400).unwrap();
            let mut samples = Vec::new();
            let mut moment_samples: Vec<(f64, [f64; 3])> = Vec::new();
            for &eps in &[0.1, 0.05] {
                let (plan, report) =
                    oracle::solve_discrete_uot(&ga, &gb, gamma, eps, 50_000).unwrap();
                assert!(report.converged);
                samples.push((eps, report.objective));
                let (mass, mean, cov) =
                    oracle::weighted_moments(ga.points(), &plan.marginal1()).unwrap();
                moment_samples.push((eps, [mass, mean[0], cov[(0, 0)]]));
            }
            let extrapolated = oracle::extrapolate_to_zero(&samples).unwrap();
            assert!(
                rel(sol.objective, extrapolated) < 0.02,
                "objective gap: closed form {} vs oracle {}",
                sol.objective,
                extrapolated
            );
            // Marginal moments carry an O(eps) entropic bias; extrapolate
            // each one through the same eps list before comparing.
            let moment = |i: usize| {
                let pairs: Vec<(f64, f64)> =
                    moment_samples.iter().map(|&(e, m)| (e, m[i])).collect();
                oracle::extrapolate_to_zero(&pairs).unwrap()
            };
            let (mass, mean, cov) = (moment(0), moment(1), moment(2));
            let scale = sol.marginal1.cov()[(0, 0)].sqrt();
            assert!(rel(mass, sol.mass) < 0.05, "mass gap {}", rel(mass, sol.mass));
            assert!(
                (mean - sol.marginal1.mean()[0]).abs()
                    / sol.marginal1.mean()[0].abs().max(scale)
                    < 0.05
            );
            assert!(rel(cov, sol.marginal1.cov()[(0, 0)]) < 0.05);
        }
        assert!(start.elapsed().as_secs_f64() < 60.0, "criterion 2 over budget");
    });
}

#[test]
fn criterion_3_one_step_equivalence() {
    report(3, "one-step UDC/UOT equivalence", || {
        let start = Instant::now();
        let tol = Tolerances::default();
        let options = UdcOptions::default();
        let mut rng = StdRng::seed_from_u64(303);
        for _ in 0..20 {
            let d = rng.gen_range(1..=3);
            let gamma = rng.gen_range(0.3..5.0);
            let alpha = random_measure(d, &mut rng);
            let beta = random_measure(d, &mut rng);
            let udc = UdcProblem::new(identity_system(d, 2), alpha.clone(), beta.clone(), gamma)
                .unwrap();
            let uot = UotProblem::new(alpha, beta, gamma).unwrap();
            let udc_sol = udc.solve(&options).unwrap();
            let uot_sol = uot.solve(&tol, 10_000).unwrap();
            assert!(rel(udc_sol.objective, uot_sol.objective) < 1e-4);
            assert!(rel(udc_sol.mass, uot_sol.mass) < 1e-4);
        }
        assert!(start.elapsed().as_secs_f64() < 10.0, "criterion 3 over budget");
    });
}

#[test]
fn criterion_4_gradient_correctness() {
    report(4, "gradient correctness", || {
        let mut rng = StdRng::seed_from_u64(304);
        let h = 1e-5;
        // 25 random SPD points for the UOT covariance gradient.
        for _ in 0..25 {
            let d = rng.gen_range(1..=3);
            let p = UotProblem::new(
                random_measure(d, &mut rng),
                random_measure(d, &mut rng),
                rng.gen_range(0.3..4.0),
            )
            .unwrap();
            let s1 = random_spd(d, &mut rng);
            let s2 = random_spd(d, &mut rng);
            let (g1, g2) = p.cov_gradient(&s1, &s2).unwrap();
            let d1 = (DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0f64..1.0)) / 2.0)
                .map(|x| x)
                + DMatrix::zeros(d, d);
            let d1 = (&d1 + d1.transpose()) * 0.5;
            let d2 = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0f64..1.0));
            let d2 = (&d2 + d2.transpose()) * 0.5;
            let analytic = (g1.transpose() * &d1).trace() + (g2.transpose() * &d2).trace();
            let fp = p.cov_cost(&(&s1 + &d1 * h), &(&s2 + &d2 * h)).unwrap();
            let fm = p.cov_cost(&(&s1 - &d1 * h), &(&s2 - &d2 * h)).unwrap();
            let fd = (fp - fm) / (2.0 * h);
            assert!(
                (analytic - fd).abs() <= 1e-5 * fd.abs().max(1e-2),
                "uot gradient mismatch: {analytic} vs {fd}"
            );
        }
        // 25 random SPD points for the UDC covariance-program gradient.
        for _ in 0..25 {
            let d = rng.gen_range(1..=2);
            let t = rng.gen_range(2..=4);
            let prob = UdcProblem::new(
                identity_system(d, t),
                random_measure(d, &mut rng),
                random_measure(d, &mut rng),
                rng.gen_range(0.5..3.0),
            )
            .unwrap();
            let sigma1 = random_spd(d, &mut rng);
            let cross: Vec<_> = (0..t - 1)
                .map(|_| DMatrix::from_fn(d, d, |_, _| rng.gen_range(-0.2..0.2)))
                .collect();
            let second: Vec<_> = (0..t - 1)
                .map(|_| random_spd(d, &mut rng) + DMatrix::identity(d, d))
                .collect();
            let roll = |s1: &DMatrix<f64>, cr: &[DMatrix<f64>], sc: &[DMatrix<f64>]| {
                let mut sigmas = vec![s1.clone()];
                for k in 0..t - 1 {
                    let next = sigmas[k].clone() + &cr[k] + cr[k].transpose() + &sc[k];
                    sigmas.push(next);
                }
                SdpVariables {
                    sigmas,
                    cross: cr.to_vec(),
                    second: sc.to_vec(),
                }
            };
            let vars = roll(&sigma1, &cross, &second);
            let (g_sigma, g_cross, g_second) = prob.covariance_gradient(&vars).unwrap();
            let d_sigma = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0f64..1.0));
            let d_sigma = (&d_sigma + d_sigma.transpose()) * 0.5;
            let d_cross: Vec<_> = (0..t - 1)
                .map(|_| DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0)))
                .collect();
            let d_second: Vec<_> = (0..t - 1)
                .map(|_| {
                    let m = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0f64..1.0));
                    (&m + m.transpose()) * 0.5
                })
                .collect();
            let analytic = (g_sigma.transpose() * &d_sigma).trace()
                + g_cross
                    .iter()
                    .zip(&d_cross)
                    .map(|(g, dm)| (g.transpose() * dm).trace())
                    .sum::<f64>()
                + g_second
                    .iter()
                    .zip(&d_second)
                    .map(|(g, dm)| (g.transpose() * dm).trace())
                    .sum::<f64>();
            let eval = |sgn: f64| {
                let s1 = &sigma1 + &d_sigma * (sgn * h);
                let cr: Vec<_> = cross
                    .iter()
                    .zip(&d_cross)
                    .map(|(c, dm)| c + dm * (sgn * h))
                    .collect();
                let sc: Vec<_> = second
                    .iter()
                    .zip(&d_second)
                    .map(|(y, dm)| y + dm * (sgn * h))
                    .collect();
                prob.covariance_objective(&roll(&s1, &cr, &sc)).unwrap()
            };
            let fd = (eval(1.0) - eval(-1.0)) / (2.0 * h);
            assert!(
                (analytic - fd).abs() <= 1e-5 * fd.abs().max(1e-2),
                "udc gradient mismatch: {analytic} vs {fd}"
            );
        }
    });
}

#[test]
fn criterion_5_restart_agreement() {
    report(5, "convexity/global-optimality audit", || {
        let tol = Tolerances::default();
        let options = UdcOptions::default();
        let mut rng = StdRng::seed_from_u64(305);
        // UOT covariance subproblem: 10 instances, 5 restarts, 1e-6.
        for _ in 0..10 {
            let d = rng.gen_range(1..=3);
            let p = UotProblem::new(
                random_measure(d, &mut rng),
                random_measure(d, &mut rng),
                rng.gen_range(0.3..4.0),
            )
            .unwrap();
            let mut values = Vec::new();
            for _ in 0..5 {
                let (s1, s2, _) = p
                    .solve_covariances_from(
                        random_spd(d, &mut rng),
                        random_spd(d, &mut rng),
                        &tol,
                        10_000,
                    )
                    .unwrap();
                values.push(p.cov_cost(&s1, &s2).unwrap());
            }
            let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert!(max - min < 1e-6 * (1.0 + min.abs()), "uot spread {:?}", values);
        }
        // UDC covariance program: 10 instances, 5 restarts, 1e-5.
        for _ in 0..10 {
            let d = rng.gen_range(1..=2);
            let t = 3;
            let sys = identity_system(d, t);
            let prob = UdcProblem::new(
                sys.clone(),
                random_measure(d, &mut rng),
                random_measure(d, &mut rng),
                rng.gen_range(0.5..3.0),
            )
            .unwrap();
            let mut values = Vec::new();
            for _ in 0..5 {
                let sigma1 = random_spd(d, &mut rng);
                let mut sigmas = vec![sigma1];
                let mut cross = Vec::new();
                let mut second = Vec::new();
                for _ in 0..t - 1 {
                    let k = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-0.3..0.3));
                    let noise = random_spd(d, &mut rng) * 0.3;
                    let cur = sigmas.last().unwrap().clone();
                    let sk = &k * &cur;
                    let yk = &k * &cur * k.transpose() + &noise;
                    let next = &cur + &sk + sk.transpose() + &yk;
                    cross.push(sk);
                    second.push((&yk + yk.transpose()) * 0.5);
                    sigmas.push((&next + next.transpose()) * 0.5);
                }
                let (vars, _) = prob
                    .solve_covariance_program_from(
                        SdpVariables {
                            sigmas,
                            cross,
                            second,
                        },
                        &options,
                    )
                    .unwrap();
                values.push(prob.covariance_objective(&vars).unwrap());
            }
            let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert!(max - min < 1e-5 * (1.0 + min.abs()), "udc spread {:?}", values);
        }
    });
}

#[test]
fn criterion_6_mass_stage_optimality() {
    report(6, "mass-stage optimality", || {
        let tol = Tolerances::default();
        let options = UdcOptions::default();
        let mut rng = StdRng::seed_from_u64(306);
        // Solved UOT instances.
        for _ in 0..6 {
            let d = rng.gen_range(1..=3);
            let p = UotProblem::new(
                random_measure(d, &mut rng),
                random_measure(d, &mut rng),
                rng.gen_range(0.3..4.0),
            )
            .unwrap();
            let sol = p.solve(&tol, 10_000).unwrap();
            let q = sol.subproblem_value;
            let obj = |c: f64| c * q + p.mass_cost(c).unwrap();
            let best = obj(sol.mass);
            assert!(obj(sol.mass * (1.0 + 1e-3)) > best);
            assert!(obj(sol.mass * (1.0 - 1e-3)) > best);
            for _ in 0..20 {
                assert!(obj(rng.gen_range(0.01..5.0)) >= best - 1e-10);
            }
        }
        // Solved UDC instances.
        for _ in 0..4 {
            let d = rng.gen_range(1..=2);
            let prob = UdcProblem::new(
                identity_system(d, 3),
                random_measure(d, &mut rng),
                random_measure(d, &mut rng),
                rng.gen_range(0.5..3.0),
            )
            .unwrap();
            let sol = prob.solve(&options).unwrap();
            let q = sol.subproblem_value;
            let obj = |c: f64| c * q + prob.mass_cost(c).unwrap();
            let best = obj(sol.mass);
            assert!(obj(sol.mass * (1.0 + 1e-3)) > best);
            assert!(obj(sol.mass * (1.0 - 1e-3)) > best);
            for _ in 0..20 {
                assert!(obj(rng.gen_range(0.01..5.0)) >= best - 1e-10);
            }
        }
    });
}

#[test]
fn criterion_7_dominance() {
    report(7, "Gaussian dominance (oracle and mixture policies)", || {
        let tol = Tolerances::default();
        let options = UdcOptions::default();
        let mut rng = StdRng::seed_from_u64(307);
        // UOT: closed form dominates the grid oracle within discretization slack.
        let lo = DVector::from_vec(vec![-7.0]);
        let hi = DVector::from_vec(vec![7.0]);
        for _ in 0..10 {
            let gamma = rng.gen_range(0.5..2.0);
            let a = gauss_1d(
                rng.gen_range(0.7..1.4),
                rng.gen_range(-1.0..0.0),
                rng.gen_range(0.3..0.8),
            );
            let b = gauss_1d(
                rng.gen_range(0.7..1.4),
                rng.gen_range(0.0..1.0),
                rng.gen_range(0.3..0.8),
            );
            let p = UotProblem::new(a.clone(), b.clone(), gamma).unwrap();
            let sol = p.solve(&tol, 10_000).unwrap();
            let ga = oracle::discretize(&a, &lo, &hi, 120).unwrap();
            let gb = oracle::discretize(&b, &lo, &hi, 120).unwrap();
            let mut samples = Vec::new();
            for &eps in &[0.1, 0.05] {
                let (_, rep) = oracle::solve_discrete_uot(&ga, &gb, gamma, eps, 50_000).unwrap();
                samples.push((eps, rep.objective));
            }
            let oracle_obj = oracle::extrapolate_to_zero(&samples).unwrap();
            assert!(sol.objective <= oracle_obj + 0.02 * oracle_obj.abs().max(0.1));
        }
        // UDC: Gaussian optimum dominates moment-matched mixture competitors.
        for trial in 0..10 {
            let gamma = rng.gen_range(0.5..3.0);
            let t = 3;
            let alpha = gauss_1d(
                rng.gen_range(0.7..1.5),
                rng.gen_range(-1.0..0.0),
                rng.gen_range(0.3..0.8),
            );
            let beta = gauss_1d(
                rng.gen_range(0.7..1.5),
                rng.gen_range(0.0..1.0),
                rng.gen_range(0.3..0.8),
            );
            let prob =
                UdcProblem::new(identity_system(1, t), alpha.clone(), beta.clone(), gamma)
                    .unwrap();
            let sol = prob.solve(&options).unwrap();
            let c = sol.mass;
            let gains: Vec<f64> = sol.policy.gains.iter().map(|k| k[(0, 0)]).collect();
            let ffs: Vec<f64> = sol.policy.feedforwards.iter().map(|v| v[0]).collect();
            let noises: Vec<f64> = sol.policy.noise_covs.iter().map(|n| n[(0, 0)]).collect();
            let centers: Vec<f64> = sol.policy.means.iter().map(|m| m[0]).collect();
            let m1 = sol.trajectory.means[0][0];
            let v1 = sol.trajectory.covs[0][(0, 0)];
            let delta = (v1 / 2.0).sqrt();
            let comp_var = v1 / 2.0;
            let mut comp_means = [[0.0f64; 4], [0.0; 4]];
            let mut comp_vars = [0.0f64; 4];
            comp_means[0][0] = m1 + delta;
            comp_means[1][0] = m1 - delta;
            comp_vars[0] = comp_var;
            for k in 0..t - 1 {
                for ci in 0..2 {
                    let u = gains[k] * (comp_means[ci][k] - centers[k]) + ffs[k];
                    comp_means[ci][k + 1] = comp_means[ci][k] + u;
                }
                let a_cl = 1.0 + gains[k];
                comp_vars[k + 1] = a_cl * a_cl * comp_vars[k] + noises[k];
            }
            let n = 20_000usize;
            let (mut cost_sum, mut cost_sq) = (0.0, 0.0);
            for traj in 0..n {
                let mut mc = ChaCha8Rng::seed_from_u64(9000 + trial as u64);
                mc.set_stream(traj as u64);
                let pick: f64 = StandardNormal.sample(&mut mc);
                let center = if pick >= 0.0 { m1 + delta } else { m1 - delta };
                let z: f64 = StandardNormal.sample(&mut mc);
                let mut x = center + comp_var.sqrt() * z;
                let mut cost = 0.0;
                for k in 0..t - 1 {
                    let w: f64 = StandardNormal.sample(&mut mc);
                    let u = gains[k] * (x - centers[k]) + ffs[k] + noises[k].sqrt() * w;
                    cost += u * u;
                    x += u;
                }
                cost_sum += cost;
                cost_sq += cost * cost;
            }
            let mc_cost = cost_sum / n as f64;
            let mc_var = (cost_sq / n as f64 - mc_cost * mc_cost).max(0.0) * n as f64
                / (n as f64 - 1.0);
            let se = (mc_var / n as f64).sqrt();
            let mix = |k: usize| {
                let (mu_a, mu_b, v) = (comp_means[0][k], comp_means[1][k], comp_vars[k]);
                move |x: f64| c * (gauss_pdf(0.5, mu_a, v)(x) + gauss_pdf(0.5, mu_b, v)(x))
            };
            let kl1 = kl_quadrature(
                mix(0),
                gauss_pdf(alpha.mass(), alpha.mean()[0], alpha.cov()[(0, 0)]),
                -15.0,
                15.0,
                6_000,
            );
            let kl_t = kl_quadrature(
                mix(t - 1),
                gauss_pdf(beta.mass(), beta.mean()[0], beta.cov()[(0, 0)]),
                -15.0,
                15.0,
                6_000,
            );
            let competitor = c * mc_cost + gamma * (kl1 + kl_t);
            assert!(sol.objective <= competitor + 4.0 * c * se + 1e-6);
        }
    });
}

#[test]
fn criterion_8_figure_reproduction() {
    report(8, "figure-1 qualitative reproduction", || {
        let tol = Tolerances::default();
        let a = gauss_1d(1.0, -1.5, 0.4);
        let b = gauss_1d(1.0, 1.5, 0.6);
        let band = 0.8;
        let mut fractions = Vec::new();
        let mut fidelities = Vec::new();
        for &gamma in &[0.2, 30.0] {
            let p = UotProblem::new(a.clone(), b.clone(), gamma).unwrap();
            let sol = p.solve(&tol, 10_000).unwrap();
            let raster = sol.rasterize_plan(-5.0, 5.0, 240, 0.25).unwrap();
            let (mut in_band, mut total) = (0.0, 0.0);
            for i in 0..240 {
                for j in 0..240 {
                    let v = raster.density[(i, j)];
                    total += v;
                    if (raster.coords[i] - raster.coords[j]).abs() <= band {
                        in_band += v;
                    }
                }
            }
            fractions.push(in_band / total);
            fidelities.push(
                kl_gaussian(&sol.marginal1, &a).unwrap()
                    + kl_gaussian(&sol.marginal2, &b).unwrap(),
            );
        }
        assert!(
            fractions[0] > fractions[1] + 0.05,
            "diagonal-band mass: gamma=0.2 {} vs gamma=30 {}",
            fractions[0],
            fractions[1]
        );
        assert!(
            fidelities[1] < fidelities[0],
            "endpoint KL: gamma=30 {} vs gamma=0.2 {}",
            fidelities[1],
            fidelities[0]
        );
    });
}

#[test]
fn criterion_9_simulator_consistency() {
    report(9, "simulator consistency", || {
        let start = Instant::now();
        let options = UdcOptions::default();
        let mut rng = StdRng::seed_from_u64(309);
        for instance in 0..10u64 {
            let d = rng.gen_range(1..=3);
            let t = rng.gen_range(3..=10);
            let prob = UdcProblem::new(
                identity_system(d, t),
                random_measure(d, &mut rng),
                random_measure(d, &mut rng),
                rng.gen_range(0.5..3.0),
            )
            .unwrap();
            let sol = prob.solve(&options).unwrap();
            let exact = uotdc_core::udc::propagate(
                prob.system(),
                &sol.trajectory.means[0],
                &sol.trajectory.covs[0],
                &sol.policy,
            )
            .unwrap();
            let cost = analytic_control_cost(prob.system(), &exact, &sol.policy);
            let mut passed = false;
            // Flake budget: one retry with a second fixed seed.
            for attempt in 0..2u64 {
                let cfg = SimConfig {
                    sample_count: 100_000,
                    seed: 1000 * instance + attempt,
                    record_controls: false,
                };
                let emp = simulate(
                    prob.system(),
                    &sol.trajectory.means[0],
                    &sol.trajectory.covs[0],
                    &sol.policy,
                    &cfg,
                )
                .unwrap();
                let check = check_moments(&emp, &exact, cost);
                if check.pass() {
                    passed = true;
                    break;
                }
            }
            assert!(passed, "moment check failed twice on instance {instance}");
            // Determinism under a fixed seed.
            if instance == 0 {
                let cfg = SimConfig {
                    sample_count: 5_000,
                    seed: 77,
                    record_controls: false,
                };
                let e1 = simulate(
                    prob.system(),
                    &sol.trajectory.means[0],
                    &sol.trajectory.covs[0],
                    &sol.policy,
                    &cfg,
                )
                .unwrap();
                let e2 = simulate(
                    prob.system(),
                    &sol.trajectory.means[0],
                    &sol.trajectory.covs[0],
                    &sol.policy,
                    &cfg,
                )
                .unwrap();
                assert_eq!(e1.total_control_cost, e2.total_control_cost);
                for k in 0..t {
                    assert_eq!(e1.means[k], e2.means[k]);
                }
            }
        }
        assert!(
            start.elapsed().as_secs_f64() < 120.0,
            "criterion 9 over budget"
        );
    });
}
