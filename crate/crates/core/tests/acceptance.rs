//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use ist_lab::estimator::EstimatorKind;
use ist_lab::linalg::{eig_sym, psd_check, solve_spd, weighted_sqnorm, SymMatrix, PSD_TOL};
use ist_lab::problem::{gen_heterogeneous, gen_homogeneous, QuadraticProblem};
use ist_lab::rng::{self, standard_normal, Purpose};
use ist_lab::runner::{self, Metric, RunConfig};
use ist_lab::sketch::{self, enumerate_expectation, for_each_outcome, SketchKind, ENUMERATION_BUDGET};
use ist_lab::theory::{self, thm2_bound, BoundTerms, MomentPropagator, Theta};
use ist_lab::Vector;

type Outcome = Result<String, String>;

fn gaussian(d: usize, seed: u64, index: u64) -> Vector {
    let mut g = rng::stream(seed, Purpose::Aux, index);
    Vector::from_fn(d, |_, _| standard_normal(&mut g))
}

fn single_client(d: usize) -> QuadraticProblem {
    QuadraticProblem::new(vec![SymMatrix::identity(d)], vec![Vector::zeros(d)], None).unwrap()
}

fn iterates(trace: &runner::Trace, repeat: usize) -> Vec<Vector> {
    trace.repeats[repeat].iterates.as_ref().expect("kept").iter().map(|x| Vector::from_vec(x.clone())).collect()
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

/// Sketch unbiasedness and variance of RandQ and Bernoulli by enumeration.
fn c01() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    let mut check = |kind: SketchKind, d: usize, omega: f64| -> Result<(), String> {
        let p = single_client(d);
        for t in 0..100 {
            let x = gaussian(d, 1, cases * 1000 + t);
            let mut mean = Vector::zeros(d);
            let mut var = 0.0;
            for_each_outcome(kind, &p, ENUMERATION_BUDGET, |s, prob| {
                let cx = s.apply(0, &x).unwrap();
                var += prob * (&cx - &x).norm_squared();
                mean += cx * prob;
            })
            .map_err(err)?;
            let e1 = (&mean - &x).amax();
            let e2 = (var - omega * x.norm_squared()).abs();
            worst = worst.max(e1).max(e2);
            ensure(e1 <= 1e-12 && e2 <= 1e-12, || format!("{kind} d={d}: mean err {e1:e}, variance err {e2:e}"))?;
        }
        cases += 1;
        Ok(())
    };
    for d in 1..=6 {
        for q in 1..=d {
            check(SketchKind::RandQ(q), d, d as f64 / q as f64 - 1.0)?;
        }
    }
    for d in 1..=4 {
        for prob in [0.1, 0.25, 0.5, 0.75, 1.0] {
            check(SketchKind::Bernoulli(prob), d, 1.0 / prob - 1.0)?;
        }
    }
    Ok(format!("{cases} (kind, d) cases x 100 vectors, worst error {worst:.1e}"))
}

/// Per-realization reconstruction of Perm-q and ScaledPermHet.
fn c02() -> Outcome {
    let mut g = rng::stream(2, Purpose::Aux, 0);
    let mut draws = 0;
    for &(n, d) in &[(2, 2), (3, 6), (5, 20), (10, 100), (25, 100), (100, 100)] {
        let p = gen_heterogeneous(n, d, 20 + n as u64).map_err(err)?;
        for _ in 0..1000 {
            let s = sketch::sample(SketchKind::PermQ, &p, &mut g).map_err(err)?;
            ensure(s.mean_sketch().iter().all(|&v| v == 1.0), || format!("Perm-q n={n} d={d}: mean sketch != I"))?;
            ensure(s.per_client.iter().all(|c| c.len() == d / n && c.iter().all(|&(_, w)| w == n as f64)), || {
                format!("Perm-q n={n} d={d}: wrong support or weight")
            })?;
            draws += 1;
        }
    }
    let mut worst: f64 = 0.0;
    for &n in &[2, 3, 5, 10, 50, 100] {
        let p = gen_heterogeneous(n, n, 40 + n as u64).map_err(err)?;
        let id = SymMatrix::identity(n);
        for _ in 0..1000 {
            let s = sketch::sample(SketchKind::ScaledPermHet, &p, &mut g).map_err(err)?;
            let gap = s.b_matrix(&p).sub(&id).max_abs();
            worst = worst.max(gap);
            ensure(gap <= 1e-12, || format!("ScaledPermHet n=d={n}: |B - I|_max = {gap:e}"))?;
            draws += 1;
        }
    }
    Ok(format!("{draws} samples; Perm-q mean sketch exactly I; ScaledPermHet worst |B-I| {worst:.1e}"))
}

/// Closed-form expectations against enumeration over all permutations.
fn c03() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut track = |what: &str, n: usize, gap: f64| -> Result<(), String> {
        worst = worst.max(gap);
        ensure(gap <= 1e-12, || format!("{what} n=d={n}: gap {gap:e}"))
    };
    for n in 2..=4 {
        let nf = n as f64;
        let hom = gen_homogeneous(n, n, 30 + n as u64).map_err(err)?;
        let l = hom.l(0);
        let e = enumerate_expectation(SketchKind::PermQ, &hom).map_err(err)?;
        track("Perm-1 E_B", n, e.e_b.sub(&l.diag().to_sym().scale(nf)).max_abs())?;

        let (pre, _) = hom.precondition_homogeneous().map_err(err)?;
        let e = enumerate_expectation(SketchKind::ScaledPermHomog, &pre).map_err(err)?;
        track("scaled hom E_B", n, e.e_b.sub(&pre.l(0).diag().to_sym()).max_abs())?;
        let c_tilde = pre.b(0);
        track("scaled hom E_Cb", n, (&e.e_cb - c_tilde / nf.sqrt()).amax())?;

        let het = gen_heterogeneous(n, n, 50 + n as u64).map_err(err)?;
        let e = enumerate_expectation(SketchKind::ScaledPermHet, &het).map_err(err)?;
        track("scaled het E_B", n, e.e_b.sub(&SymMatrix::identity(n)).max_abs())?;
        let mut want = Vector::zeros(n);
        for i in 0..n {
            want += het.b(i).component_div(&het.l(i).diag().0.map(f64::sqrt));
        }
        want /= nf * nf.sqrt();
        track("scaled het E_Cb", n, (&e.e_cb - want).amax())?;
    }
    Ok(format!("n = d in 2..=4, worst gap {worst:.1e}"))
}

/// Identity-sketch rates on interpolation problems, checked at every step.
fn c04() -> Outcome {
    let (n, d, k_max) = (5, 50, 200);
    let mut tightest = f64::NEG_INFINITY;
    for seed in 0..20 {
        let p = gen_heterogeneous(n, d, 400 + seed).map_err(err)?.set_interpolation();
        let spec = p.l_bar_spectrum();
        let theta = match theory::compute_theta(&p, SketchKind::Identity).map_err(err)? {
            Theta::Finite(t) => t,
            Theta::Inadmissible => return Err("identity theta inadmissible".into()),
        };
        ensure((theta - spec.lambda_max()).abs() <= 1e-9 * spec.lambda_max(), || {
            format!("theta {theta} != lambda_max {}", spec.lambda_max())
        })?;
        let gamma = 1.0 / theta;
        let (coeff, rho) = theory::interpolation_rates(&p, SketchKind::Identity, gamma).map_err(err)?;
        let rho_want = 1.0 - spec.lambda_min() / spec.lambda_max();
        ensure((rho - rho_want).abs() <= 1e-9, || format!("rho {rho} != {rho_want}"))?;

        let mut cfg = RunConfig::new(EstimatorKind::Dgd, gamma, k_max, seed);
        cfg.keep_iterates = true;
        let xs = iterates(&runner::run(&p, &cfg).map_err(err)?, 0);
        // W = L̄² here, so the weighted gradient norm is the Euclidean one.
        let f: Vec<f64> = xs.iter().map(|x| p.f_val(x).unwrap()).collect();
        let dist0 = weighted_sqnorm(&xs[0], p.l_bar()).map_err(err)?;
        let mut acc = 0.0;
        for k in 1..=k_max {
            acc += p.grad(&xs[k - 1]).map_err(err)?.norm_squared();
            let lhs = acc / k as f64;
            let rhs = coeff * (f[0] - f[k]) / k as f64;
            tightest = tightest.max(lhs - rhs);
            ensure(lhs <= rhs + 1e-8, || format!("seed {seed} K={k}: averaged gradient {lhs:e} > {rhs:e}"))?;
            let dist = weighted_sqnorm(&xs[k], p.l_bar()).map_err(err)?;
            let bound = rho.powi(k as i32) * dist0;
            ensure(dist <= bound + 1e-8, || format!("seed {seed} k={k}: distance {dist:e} > {bound:e}"))?;
        }
    }
    Ok(format!("20 seeds x {k_max} steps, max(lhs - rhs) = {tightest:.2e}"))
}

/// ScaledPermHet with unit step on n = 10, d = 100 interpolation problems.
fn c05() -> Outcome {
    let mut worst = f64::NEG_INFINITY;
    let mut failures = Vec::new();
    for seed in 0..20 {
        let p = gen_heterogeneous(10, 100, 500 + seed).map_err(err)?.set_interpolation();
        let cfg = RunConfig::new(EstimatorKind::Ist(SketchKind::ScaledPermHet), 1.0, 1, seed);
        let trace = runner::run(&p, &cfg).map_err(err)?;
        let log_gap = trace.repeats[0].values[1][0];
        worst = worst.max(log_gap);
        if log_gap > -14.0 {
            failures.push(seed);
        }
    }
    ensure(failures.is_empty(), || {
        format!(
            "relative f-gap after one step reaches 10^{worst:.2} (need <= 1e-14); failing seeds {failures:?}. \
             With d = 10n each client keeps a 10x10 block of D^-1/2 L D^-1/2, so B != I per realization"
        )
    })?;
    Ok(format!("20 seeds, worst log10 relative gap {worst:.2}"))
}

/// The two-dimensional counterexample fixture.
fn c06() -> Outcome {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/remark_2d.json");
    let p = QuadraticProblem::load(&path).map_err(err)?;
    let mut lines = Vec::new();
    for kind in [SketchKind::PermQ, SketchKind::ScaledPermHomog] {
        let cert = theory::certificate(&p, kind, None).map_err(err)?;
        ensure(!cert.w_psd && cert.theta == Theta::Inadmissible, || {
            format!("{kind}: W_psd = {}, theta = {:?}", cert.w_psd, cert.theta)
        })?;
        let w = cert.w_matrix();
        ensure(!psd_check(&w, PSD_TOL).map_err(err)?, || format!("{kind}: W reported PSD"))?;
        let det = w.get(0, 0) * w.get(1, 1) - w.get(0, 1) * w.get(1, 0);
        lines.push(format!("{kind}: det W = {det}"));
    }
    Ok(format!("W_psd = false, theta = inadmissible ({})", lines.join(", ")))
}

/// Empirical mean of the iterates against the exact expectation recursion.
fn c07() -> Outcome {
    let (n, gamma, reps) = (4, 0.5, 10_000);
    let kind = SketchKind::ScaledPermHet;
    let p = gen_heterogeneous(n, n, 700).map_err(err)?;
    let mut cfg = RunConfig::new(EstimatorKind::Ist(kind), gamma, 50, 7);
    cfg.repeats = reps;
    cfg.keep_iterates = true;
    let trace = runner::run(&p, &cfg).map_err(err)?;
    let all: Vec<Vec<Vector>> = (0..reps).map(|r| iterates(&trace, r)).collect();
    let x0 = all[0][0].clone();
    let mut worst_z: f64 = 0.0;
    let mut compare = |k: usize, want: &Vector| -> Result<(), String> {
        let rf = reps as f64;
        let mean = all.iter().fold(Vector::zeros(n), |acc, xs| acc + &xs[k]) / rf;
        for j in 0..n {
            let var = all.iter().map(|xs| (xs[k][j] - mean[j]).powi(2)).sum::<f64>() / (rf - 1.0);
            let se = (var / rf).sqrt();
            let diff = (mean[j] - want[j]).abs();
            // All repeats share x⁰, so k = 0 has zero spread up to round-off.
            if k > 0 {
                worst_z = worst_z.max(diff / se);
            }
            ensure(diff <= 5.0 * se + 1e-12, || format!("k={k} j={j}: |mean - expected| = {diff:e}, 5 SE = {:e}", 5.0 * se))?;
        }
        Ok(())
    };
    for k in 0..=20 {
        compare(k, &theory::expected_iterate(&p, kind, &x0, gamma, k).map_err(err)?)?;
    }
    let nf = n as f64;
    let mut x_inf = Vector::zeros(n);
    for i in 0..n {
        x_inf += p.b(i).component_div(&p.l(i).diag().0.map(f64::sqrt));
    }
    x_inf /= nf * nf.sqrt();
    compare(50, &x_inf)?;
    Ok(format!("{reps} repeats, k <= 20 and k = 50, largest deviation {worst_z:.2} SE"))
}

/// Exact geometric decay on preconditioned homogeneous problems.
fn c08() -> Outcome {
    let n = 50;
    let (p, _) = gen_homogeneous(n, n, 800).map_err(err)?.precondition_homogeneous().map_err(err)?;
    let x_inf = theory::fixed_point(&p, SketchKind::ScaledPermHomog).map_err(err)?;
    let mut worst: f64 = 0.0;
    let mut steps = 0;
    for gamma in [0.1, 0.5, 0.9] {
        let mut cfg = RunConfig::new(EstimatorKind::Ist(SketchKind::ScaledPermHomog), gamma, 60, 8);
        cfg.repeats = 4;
        cfg.keep_iterates = true;
        let trace = runner::run(&p, &cfg).map_err(err)?;
        let first = trace.repeats[0].iterates.as_ref().unwrap();
        ensure(trace.repeats.iter().all(|r| r.iterates.as_ref().unwrap() == first), || {
            format!("gamma {gamma}: repeats differ")
        })?;
        let sigma2 = ist_lab::estimator::heterogeneity_sigma2(&p, SketchKind::ScaledPermHomog).map_err(err)?;
        ensure(sigma2 <= 1e-14, || format!("sigma2 = {sigma2:e}"))?;
        let xs = iterates(&trace, 0);
        let d0 = (&xs[0] - &x_inf).norm();
        for k in 0..xs.len() - 1 {
            let (a, b) = ((&xs[k] - &x_inf).norm(), (&xs[k + 1] - &x_inf).norm());
            // Once the distance nears round-off of x^∞ the ratio is noise.
            if b < 1e-4 * d0 {
                break;
            }
            let rel = (b / a - (1.0 - gamma)).abs() / (1.0 - gamma);
            worst = worst.max(rel);
            steps += 1;
            ensure(rel <= 1e-10, || format!("gamma {gamma} k={k}: ratio {} vs {}", b / a, 1.0 - gamma))?;
        }
    }
    Ok(format!("{steps} ratios checked, worst relative error {worst:.1e}; repeats bitwise identical"))
}

/// Step-size sweep: faster convergence but a higher plateau for larger steps.
fn c09() -> Outcome {
    let gammas = [0.1, 0.3, 0.9];
    let (k, fraction, band) = (2000, 0.1, 1.0);
    let mut summary = Vec::new();
    for seed in 0..5 {
        let p = gen_heterogeneous(10, 100, 900 + seed).map_err(err)?;
        let base = RunConfig::new(EstimatorKind::Ist(SketchKind::ScaledPermHet), gammas[0], k, seed);
        let traces = runner::sweep(&p, &base, &gammas).map_err(err)?;
        let mut plateaus = Vec::new();
        let mut reach = Vec::new();
        for t in &traces {
            ensure(!t.any_diverged(), || format!("seed {seed}: run diverged"))?;
            plateaus.push(t.plateau(Metric::FGapRelLog, fraction).unwrap());
            reach.push(t.rounds_to_plateau(Metric::FGapRelLog, fraction, band).unwrap());
        }
        let detail = format!("seed {seed}: plateaus {plateaus:.2?}, rounds to plateau {reach:?}");
        ensure(plateaus.windows(2).all(|w| w[0] < w[1]), || format!("plateau not increasing; {detail}"))?;
        ensure(reach.windows(2).all(|w| w[0] > w[1]), || format!("rounds not decreasing; {detail}"))?;
        summary.push(format!("[{}]", plateaus.iter().map(|v| format!("{v:.2}")).collect::<Vec<_>>().join(" ")));
    }
    Ok(format!("gammas {gammas:?}, log10 plateaus per seed {}", summary.join(" ")))
}

/// Averaged-gradient bound with exact moments on enumerable instances.
fn c10() -> Outcome {
    let k_max = 100;
    let kind = SketchKind::ScaledPermHet;
    let mut margin = f64::INFINITY;
    let mut instances = 0;
    for n in 2..=4 {
        for seed in 0..3 {
            let p = gen_heterogeneous(n, n, 1000 + 10 * n as u64 + seed).map_err(err)?;
            let terms = BoundTerms::for_problem(&p, kind).map_err(err)?;
            let f_star = p.f_val(&p.solution().map_err(err)?).map_err(err)?;
            let x0 = gaussian(n, 10, seed);
            for (beta, gamma) in [(0.1, 0.5), (0.25, 1.0 / 3.0)] {
                let traj = MomentPropagator::new(&p, kind, gamma).map_err(err)?.trajectory(&x0, k_max);
                let gaps: Vec<f64> = traj.iter().map(|m| 0.5 * m.dist_sq_l(&p)).collect();
                let f_traj: Vec<f64> = gaps.iter().map(|g| f_star + g).collect();
                let curve = thm2_bound(&terms, gamma, beta, &f_traj).map_err(err)?;
                let mut acc = 0.0;
                for kk in 1..=k_max {
                    // E‖∇f(x)‖²_{L̄⁻¹} = 2(E f(x) − f*).
                    acc += 2.0 * gaps[kk - 1];
                    let lhs = acc / kk as f64;
                    let rhs = curve.at(kk).unwrap();
                    margin = margin.min(rhs - lhs);
                    ensure(lhs <= rhs + 1e-8, || {
                        format!("n={n} seed={seed} beta={beta} gamma={gamma} K={kk}: {lhs:e} > {rhs:e}")
                    })?;
                }
                instances += 1;
            }
        }
    }
    Ok(format!("{instances} (instance, beta, gamma) cases, K <= {k_max}, smallest margin {margin:.2e}"))
}

/// Bias consistency and the zero-bias instance.
fn c11() -> Outcome {
    let mut worst: f64 = 0.0;
    for t in 0..50u64 {
        let n = 2 + (t % 3) as usize;
        let p = gen_heterogeneous(n, n, 1100 + t).map_err(err)?;
        let e = enumerate_expectation(SketchKind::ScaledPermHet, &p).map_err(err)?;
        let x_inf = solve_spd(&e.e_b, &e.e_cb).map_err(err)?;
        let h = theory::bias_h(&p).map_err(err)?;
        let gap = (p.solution().map_err(err)? - x_inf - h).amax();
        worst = worst.max(gap);
        ensure(gap <= 1e-10, || format!("ensemble {t}: |x* - x_inf - h| = {gap:e}"))?;
    }
    let mut final_dist: f64 = 0.0;
    for n in [4, 9, 16] {
        let p = theory::equicorrelation_instance(n).map_err(err)?;
        let kind = SketchKind::ScaledPermHomog;
        let h = p.solution().map_err(err)? - theory::fixed_point(&p, kind).map_err(err)?;
        ensure(h.norm() <= 1e-10, || format!("equicorrelation n={n}: |h| = {:e}", h.norm()))?;
        let mut cfg = RunConfig::new(EstimatorKind::Ist(kind), 0.5, 80, n as u64);
        cfg.keep_iterates = true;
        let xs = iterates(&runner::run(&p, &cfg).map_err(err)?, 0);
        let dist = (xs.last().unwrap() - p.solution().map_err(err)?).norm();
        final_dist = final_dist.max(dist);
        ensure(dist <= 1e-10, || format!("equicorrelation n={n}: IST ends {dist:e} from x*"))?;
    }
    Ok(format!("50 ensembles, worst gap {worst:.1e}; zero-bias IST ends within {final_dist:.1e} of x*"))
}

/// Trace of the inverse of unit-diagonal preconditioned matrices.
fn c12() -> Outcome {
    let mut slack = f64::INFINITY;
    for t in 0..100u64 {
        let d = 1 + (t as usize * 37) % 100;
        let (p, _) = gen_homogeneous(1, d, 1200 + t).map_err(err)?.precondition_homogeneous().map_err(err)?;
        let tr: f64 = eig_sym(p.l(0)).map_err(err)?.map(|v| 1.0 / v).trace();
        slack = slack.min(tr - d as f64);
        ensure(tr >= d as f64 - 1e-9, || format!("d={d}: tr(L~^-1) = {tr} < d"))?;
    }
    Ok(format!("100 matrices, smallest tr(L~^-1) - d = {slack:.3e}"))
}

struct Criterion {
    id: u32,
    name: &'static str,
    limit: Duration,
    check: fn() -> Outcome,
}

fn main() -> ExitCode {
    let secs = Duration::from_secs;
    let criteria = [
        Criterion { id: 1, name: "sketch unbiasedness and variance", limit: secs(10), check: c01 },
        Criterion { id: 2, name: "per-realization reconstruction", limit: secs(10), check: c02 },
        Criterion { id: 3, name: "closed-form expectations", limit: secs(5), check: c03 },
        Criterion { id: 4, name: "identity-sketch rates", limit: secs(30), check: c04 },
        Criterion { id: 5, name: "one-iteration convergence", limit: secs(10), check: c05 },
        Criterion { id: 6, name: "indefinite W counterexample", limit: secs(1), check: c06 },
        Criterion { id: 7, name: "exact expectation recursion", limit: secs(60), check: c07 },
        Criterion { id: 8, name: "homogeneous geometric decay", limit: secs(10), check: c08 },
        Criterion { id: 9, name: "step-size sweep neighborhoods", limit: secs(120), check: c09 },
        Criterion { id: 10, name: "averaged-gradient bound validity", limit: secs(30), check: c10 },
        Criterion { id: 11, name: "bias consistency", limit: secs(10), check: c11 },
        Criterion { id: 12, name: "trace inequality", limit: secs(5), check: c12 },
    ];
    let filter: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for c in criteria.iter().filter(|c| filter.is_empty() || filter.contains(&c.id)) {
        let start = Instant::now();
        let outcome = (c.check)();
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(msg) if elapsed > c.limit => Err(format!("{msg}; took {elapsed:.2?}, limit {:?}", c.limit)),
            other => other,
        };
        match outcome {
            Ok(msg) => println!("PASS criterion {:>2} ({}) [{elapsed:.2?}]: {msg}", c.id, c.name),
            Err(msg) => {
                failed += 1;
                println!("FAIL criterion {:>2} ({}) [{elapsed:.2?}]: {msg}", c.id, c.name);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criterion(s) failed");
        ExitCode::FAILURE
    }
}
