//! Acceptance criteria. Each criterion prints one PASS or FAIL line; the
//! process exits nonzero if any criterion fails.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use eiv_adapt::dgp::{generate, replication_seed, ModelId, ModelSpec, SigmaChoice};
use eiv_adapt::estimators::estimate_beta;
use eiv_adapt::mc::{bandwidth_sweep, run_mc, McConfig, McResult, McTest};
use eiv_adapt::sdr::estimate_b;
use eiv_adapt::teststat::{
    run_test, v_split, v_tilde, variance_plugin_split, variance_plugins_tilde, RegimeRequest,
    TestConfig,
};
use eiv_adapt::{KernelSpec, LinkFunction, PointSet};

const SEED: u64 = 1;

struct Outcome {
    pass: bool,
    detail: String,
}

fn spec(model: ModelId, p: usize, a: f64) -> ModelSpec {
    ModelSpec::new(model, p, a, SigmaChoice::Identity).unwrap()
}

fn table_config(model: ModelId, p: usize, n: usize, a_grid: &[f64], reps: usize, tests: Vec<McTest>) -> McConfig {
    McConfig {
        reps,
        seed: SEED,
        a_grid: a_grid.to_vec(),
        tests,
        ..McConfig::new(spec(model, p, 0.0), n)
    }
}

fn rate(result: &McResult, test: &str, a: f64) -> f64 {
    let row = result
        .rows
        .iter()
        .find(|r| r.test == test && r.a == a)
        .unwrap_or_else(|| panic!("missing row {test} a={a}"));
    assert!(row.valid(), "cell {test} a={a} has {} failures", row.failures);
    row.reject_rate
}

fn within(value: f64, target: f64, tol: f64) -> bool {
    (value - target).abs() <= tol
}

fn criterion_1() -> Outcome {
    let cfg = table_config(ModelId::H11, 2, 100, &[0.0], 500, vec![McTest::new(RegimeRequest::Split)]);
    let size = rate(&run_mc(&cfg).unwrap(), "split", 0.0);
    Outcome {
        pass: within(size, 0.0455, 0.030),
        detail: format!("H11 p=2 n=100 size {size:.4}, target 0.0455 ± 0.030"),
    }
}

fn criterion_2() -> Outcome {
    let cfg = table_config(ModelId::H11, 2, 200, &[0.5], 500, vec![McTest::new(RegimeRequest::Split)]);
    let power = rate(&run_mc(&cfg).unwrap(), "split", 0.5);
    Outcome {
        pass: power >= 0.90,
        detail: format!("H11 p=2 n=200 a=0.5 power {power:.4}, needs >= 0.90"),
    }
}

fn criterion_3() -> Outcome {
    let cfg = table_config(ModelId::H11, 8, 100, &[0.0], 500, vec![McTest::new(RegimeRequest::Split)]);
    let size8 = rate(&run_mc(&cfg).unwrap(), "split", 0.0);
    let size_ok = within(size8, 0.042, 0.030);

    let grid = vec![1.0, 1.6, 2.0];
    let mut gap: f64 = 0.0;
    let mut curves = Vec::new();
    let sweeps: Vec<McResult> = [2usize, 8]
        .iter()
        .map(|&p| {
            let mut cfg = table_config(ModelId::H11, p, 100, &[0.0], 300, vec![McTest::new(RegimeRequest::Split)]);
            cfg.c_grid = grid.clone();
            bandwidth_sweep(&cfg).unwrap()
        })
        .collect();
    for &c in &grid {
        let a = sweeps[0].find("split", 0.0, c).unwrap().reject_rate;
        let b = sweeps[1].find("split", 0.0, c).unwrap().reject_rate;
        gap = gap.max((a - b).abs());
        curves.push(format!("c={c}: {a:.3}/{b:.3}"));
    }
    Outcome {
        pass: size_ok && gap <= 0.05,
        detail: format!(
            "p=8 size {size8:.4} (target 0.042 ± 0.030); p=2/p=8 curves [{}], sup gap {gap:.3} <= 0.05",
            curves.join(", ")
        ),
    }
}

fn criterion_4() -> Outcome {
    let tests = vec![
        McTest::new(RegimeRequest::Split),
        McTest::with_c(RegimeRequest::Zheng, 3.9),
    ];
    let cfg = table_config(ModelId::H11, 8, 100, &[0.3], 300, tests);
    let r = run_mc(&cfg).unwrap();
    let (tn, zh) = (rate(&r, "split", 0.3), rate(&r, "zheng", 0.3));
    Outcome {
        pass: tn - zh >= 0.05,
        detail: format!("p=8 a=0.3 power T_n {tn:.4} vs Zheng {zh:.4}, gap {:.4} >= 0.05", tn - zh),
    }
}

fn criterion_5() -> Outcome {
    let cfg = table_config(ModelId::H15, 4, 200, &[0.0, 0.5], 500, vec![McTest::new(RegimeRequest::Split)]);
    let r = run_mc(&cfg).unwrap();
    let (size, power) = (rate(&r, "split", 0.0), rate(&r, "split", 0.5));
    Outcome {
        pass: power >= 0.20 && within(size, 0.05, 0.03),
        detail: format!("H15 p=4 n=200 power {power:.4} (>= 0.20), size {size:.4} (0.05 ± 0.03)"),
    }
}

fn criterion_6() -> Outcome {
    let tests = vec![
        McTest::new(RegimeRequest::Split),
        McTest::new(RegimeRequest::InfiniteLambda),
    ];
    let cfg = table_config(ModelId::H11, 2, 100, &[0.0], 500, tests);
    let r = run_mc(&cfg).unwrap();
    let (tn, t2) = (rate(&r, "split", 0.0), rate(&r, "infinite-lambda", 0.0));
    Outcome {
        pass: within(tn, 0.0525, 0.03) && within(t2, 0.0610, 0.03),
        detail: format!("lambda=4 n=100 sizes T_n {tn:.4} (0.0525 ± 0.03), T_n^(2) {t2:.4} (0.0610 ± 0.03)"),
    }
}

const K: KernelSpec = KernelSpec::QUARTIC;

fn kh(a: &[f64], b: &[f64], h: f64) -> f64 {
    a.iter().zip(b).map(|(x, y)| K.eval((x - y) / h) / h).product()
}

fn kh2(a: &[f64], b: &[f64], h: f64) -> f64 {
    a.iter().zip(b).map(|(x, y)| K.eval((x - y) / h).powi(2) / h).product()
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-10 * a.abs().max(b.abs()).max(1.0)
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut worst = 0usize;
    for _ in 0..50 {
        let n = rng.random_range(2..=50);
        let half = rng.random_range(1..=25);
        let big_n = 2 * half;
        let d = rng.random_range(1..=3);
        let h = rng.random_range(0.3..2.5);
        let lambda = big_n as f64 / n as f64;
        let mut draw = |k: usize| -> Vec<f64> { (0..k).map(|_| rng.sample(StandardNormal)).collect() };
        let zc = draw(n * d);
        let ztc = draw(big_n * d);
        let (e1, e2, eta) = (draw(n), draw(n), draw(big_n));
        let z = PointSet::new(d, zc.clone()).unwrap();
        let zt = PointSet::new(d, ztc.clone()).unwrap();
        let zr = |i: usize| &zc[i * d..(i + 1) * d];
        let tr = |s: usize| &ztc[s * d..(s + 1) * d];
        let (nf, bf) = (n as f64, big_n as f64);

        let (mut vt, mut vs, mut t1, mut s1) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    vt += e1[i] * kh(zr(i), zr(j), h) * e1[j];
                    vs += e1[i] * kh(zr(i), zr(j), h) * e2[j];
                    t1 += kh2(zr(i), zr(j), h) * e1[i].powi(2) * e1[j].powi(2);
                    s1 += kh2(zr(i), zr(j), h) * e1[i].powi(2) * e2[j].powi(2);
                }
            }
        }
        let (mut t2, mut s2, mut s3) = (0.0, 0.0, 0.0);
        for i in 0..n {
            for s in 0..big_n {
                t2 += kh2(zr(i), tr(s), h) * e1[i].powi(2) * eta[s].powi(2);
                if s >= half {
                    s2 += kh2(zr(i), tr(s), h) * e1[i].powi(2) * eta[s].powi(2);
                } else {
                    s3 += kh2(zr(i), tr(s), h) * e2[i].powi(2) * eta[s].powi(2);
                }
            }
        }
        let (mut t3, mut s4) = (0.0, 0.0);
        for s in 0..big_n {
            for r in 0..big_n {
                if s != r {
                    t3 += kh2(tr(s), tr(r), h) * eta[s].powi(2) * eta[r].powi(2);
                }
                if s >= half && r < half {
                    s4 += kh2(tr(s), tr(r), h) * eta[s].powi(2) * eta[r].powi(2);
                }
            }
        }
        let split_tau = 2.0 / (nf * (nf - 1.0)) * s1
            + 4.0 / (lambda * nf * bf) * (s2 + s3)
            + 16.0 / (lambda * lambda * bf * bf) * s4;
        let norm = nf * (nf - 1.0);

        let plug = variance_plugins_tilde(&e1, &eta, &z, &zt, h).unwrap();
        let got_split = variance_plugin_split(&e1, &e2, &eta[..half], &eta[half..], &z, &zt, h, lambda).unwrap();
        let checks = [
            close(v_tilde(&e1, &z, h).unwrap(), vt / norm),
            close(v_split(&e1, &e2, &z, h).unwrap(), vs / norm),
            close(plug.tau1, 2.0 * t1 / norm),
            close(plug.tau2, t2 / (nf * bf)),
            close(plug.tau3, 2.0 * t3 / (bf * (bf - 1.0))),
            close(got_split, split_tau),
        ];
        worst += checks.iter().filter(|c| !**c).count();
    }
    Outcome {
        pass: worst == 0,
        detail: format!("50 random instances (n, N <= 50), {worst} mismatches beyond 1e-10"),
    }
}

fn criterion_8() -> Outcome {
    let null = spec(ModelId::H11, 2, 0.0);
    let beta = null.beta();
    let reps = 200;
    let (mut ones, mut cos_sum) = (0usize, 0.0);
    for rep in 0..reps {
        let d = generate(&null, 200, 800, replication_seed(SEED, &null, 200, 800, rep)).unwrap();
        let est = estimate_b(&d.primary, &d.validation).unwrap();
        if est.q_hat == 1 {
            ones += 1;
        }
        cos_sum += (est.b_hat.transpose() * &beta).norm() / beta.norm();
    }
    let freq1 = ones as f64 / reps as f64;
    let mean_cos = cos_sum / reps as f64;

    let alt = spec(ModelId::H14, 4, 1.0);
    let mut twos = 0usize;
    for rep in 0..reps {
        let d = generate(&alt, 400, 1600, replication_seed(SEED, &alt, 400, 1600, rep)).unwrap();
        if estimate_b(&d.primary, &d.validation).unwrap().q_hat == 2 {
            twos += 1;
        }
    }
    let freq2 = twos as f64 / reps as f64;
    Outcome {
        pass: freq1 >= 0.90 && mean_cos >= 0.95 && freq2 >= 0.60,
        detail: format!(
            "H0: P(q=1) {freq1:.3} (>= 0.90), mean |cos| {mean_cos:.4} (>= 0.95); H14 a=1 n=400: P(q=2) {freq2:.3} (>= 0.60)"
        ),
    }
}

fn criterion_9() -> Outcome {
    let null = spec(ModelId::H11, 2, 0.0);
    let beta = null.beta();
    let reps = 200;
    let sizes = [100usize, 200, 400];
    let mut logs = Vec::new();
    for &n in &sizes {
        let mut sq = 0.0;
        for rep in 0..reps {
            let seed = replication_seed(SEED, &null, n, 4 * n, rep);
            let d = generate(&null, n, 4 * n, seed).unwrap();
            let est = estimate_beta(&d.primary, &d.validation, LinkFunction::Linear).unwrap();
            sq += (est.beta_hat - &beta).norm_squared();
        }
        logs.push(((n as f64).ln(), (sq / reps as f64).sqrt().ln()));
    }
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / 3.0;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / 3.0;
    let slope = logs.iter().map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
        / logs.iter().map(|(x, _)| (x - mx).powi(2)).sum::<f64>();
    Outcome {
        pass: slope > -0.7 && slope < -0.3,
        detail: format!("log-RMSE slope {slope:.3} over n = 100, 200, 400, needs (-0.7, -0.3)"),
    }
}

fn criterion_10() -> Outcome {
    let mut failures = Vec::new();
    let mut check = |ok: bool, name: &str| {
        if !ok {
            failures.push(name.to_string());
        }
    };

    // kernel identities by midpoint quadrature
    let m = 200_000;
    let du = 2.0 / m as f64;
    let (mut mass, mut sq, mut second) = (0.0, 0.0, 0.0);
    for i in 0..m {
        let u = -1.0 + (i as f64 + 0.5) * du;
        mass += K.eval(u) * du;
        sq += K.eval(u).powi(2) * du;
        second += u * K.eval(u) * du;
    }
    check((mass - 1.0).abs() < 1e-9, "kernel mass");
    check((sq - 5.0 / 7.0).abs() < 1e-9 && (K.square_integral() - 5.0 / 7.0).abs() < 1e-15, "kernel square integral");
    check(second.abs() < 1e-12, "kernel symmetry");
    check((K.convolution_square_integral() - 1_168_780.0 / 2_263_261.0).abs() < 1e-12, "convolution constant");

    // permutation invariance of the full test
    let s = spec(ModelId::H11, 2, 0.3);
    let d = generate(&s, 80, 320, SEED).unwrap();
    let cfg = TestConfig::new(LinkFunction::Linear, 1.6).unwrap().with_regime(RegimeRequest::Split);
    let base = run_test(&d.primary, &d.validation, &cfg).unwrap();
    let perm: Vec<usize> = (0..80).rev().collect();
    let y = DVector::from_fn(80, |i, _| d.primary.y()[perm[i]]);
    let w = DMatrix::from_fn(80, 2, |i, j| d.primary.w()[(perm[i], j)]);
    let permuted = eiv_adapt::PrimarySample::new(y, w).unwrap();
    let other = run_test(&permuted, &d.validation, &cfg).unwrap();
    check(
        (base.standardized - other.standardized).abs() < 1e-9 * base.standardized.abs().max(1.0),
        "primary permutation invariance",
    );

    // homogeneity of degree two in the residuals
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let e: Vec<f64> = (0..40).map(|_| rng.sample(StandardNormal)).collect();
    let z = PointSet::new(1, (0..40).map(|_| rng.sample(StandardNormal)).collect()).unwrap();
    let e3: Vec<f64> = e.iter().map(|x| 3.0 * x).collect();
    let (a, b) = (v_tilde(&e, &z, 0.7).unwrap(), v_tilde(&e3, &z, 0.7).unwrap());
    check((b - 9.0 * a).abs() <= 1e-12 * b.abs().max(1.0), "homogeneity");

    // determinism and worker-count independence
    check(generate(&s, 50, 200, 9).unwrap() == generate(&s, 50, 200, 9).unwrap(), "generator determinism");
    let mut mc = table_config(ModelId::H11, 2, 60, &[0.0, 0.4], 40, vec![
        McTest::new(RegimeRequest::Split),
        McTest::with_c(RegimeRequest::Zheng, 3.9),
    ]);
    mc.workers = Some(1);
    let one = run_mc(&mc).unwrap();
    mc.workers = Some(4);
    let four = run_mc(&mc).unwrap();
    check(one == four, "worker-count independence");
    check(one == run_mc(&mc).unwrap(), "simulation determinism");

    Outcome {
        pass: failures.is_empty(),
        detail: if failures.is_empty() {
            "kernel identities, permutation invariance, homogeneity, determinism, worker independence".into()
        } else {
            format!("failed: {}", failures.join(", "))
        },
    }
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        ("size replication", criterion_1),
        ("power replication", criterion_2),
        ("dimension robustness", criterion_3),
        ("Zheng degradation", criterion_4),
        ("directionality", criterion_5),
        ("regime study", criterion_6),
        ("oracle equivalence", criterion_7),
        ("SDR consistency", criterion_8),
        ("beta rate", criterion_9),
        ("invariant suite", criterion_10),
    ];
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = run();
        let status = if outcome.pass { "PASS" } else { "FAIL" };
        if !outcome.pass {
            failed += 1;
        }
        println!(
            "criterion {:>2} {status} {name}: {} [{:.1}s]",
            k + 1,
            outcome.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
