//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.
//!
//! Built with `harness = false` so the verdict lines are always printed.

use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use antmute::complexity::{
    energy_report_from_counts, fpo_iteration, fpo_report, Algorithm, DistributionMode, FpoParams, PowerModel,
};
use antmute::experiment::{
    evaluate_split, generate_dataset, report_files, run_heuristics, train_asymmetric, train_symmetric, Dataset,
    ExperimentConfig, MetricsArtifact, ReportInputs,
};
use antmute::linalg::{
    c, dominant_eigenpair, hermitian_eigen, hpd_inverse, principal_submatrix, trace_re, CMat, C64,
};
use antmute::nam::{softargmax, softmax, softmax_backward, total_loss, total_loss_grad, LossConfig, NamModel, Split};
use antmute::tam::{greedy_tam, AntennaMask, ScheduledUser, TamProblem};
use antmute::txrx::{
    expanded_error_covariance, mmse_error_covariance, mmse_receiver, zf_user_rate, zf_user_rate_direct,
    LinkParams,
};
use antmute::{ArrayGeometry, ChannelParams, Drop};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn cgauss(rng: &mut ChaCha8Rng) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    c(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> CMat {
    CMat::from_fn(rows, cols, |_, _| cgauss(rng))
}

fn columns(h: &CMat, idx: &[usize]) -> CMat {
    CMat::from_fn(h.nrows(), idx.len(), |i, j| h[(i, idx[j])])
}

fn bits(mask: usize, m: usize) -> Vec<usize> {
    (0..m).filter(|i| mask >> i & 1 == 1).collect()
}

/// Instance family shared by the two monotonicity lemmas.
fn lemma_instance(rng: &mut ChaCha8Rng) -> (usize, usize) {
    (rng.random_range(2..=4), rng.random_range(6..=12))
}

fn zf_monotonicity() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (mut checks, mut violations, mut worst) = (0usize, 0usize, 0.0f64);
    let mut route_err = 0.0f64;
    for _ in 0..1000 {
        let (k, m) = lemma_instance(&mut rng);
        let h = random_matrix(&mut rng, k, m);
        let noise: f64 = rng.random_range(0.1..2.0);
        // rates of every subset with at least k antennas
        let mut rates: Vec<Option<Vec<f64>>> = vec![None; 1 << m];
        for (s, slot) in rates.iter_mut().enumerate() {
            let idx = bits(s, m);
            if idx.len() < k {
                continue;
            }
            let hs = columns(&h, &idx);
            *slot = Some((0..k).map(|u| zf_user_rate(&hs, u, 1.0, noise, 1.0).unwrap()).collect());
        }
        // inverse-form and norm-form routes agree on the full array
        let w = antmute::txrx::zf_precoder(&h).unwrap();
        for u in 0..k {
            let a = zf_user_rate(&h, u, 1.0, noise, 1.0).unwrap();
            let b = zf_user_rate_direct(&h, &w, u, 1.0, noise, 1.0);
            route_err = route_err.max((a - b).abs() / a.abs().max(1e-300));
        }
        for s in 0..(1usize << m) {
            let Some(base) = &rates[s] else { continue };
            for add in 0..m {
                if s >> add & 1 == 1 {
                    continue;
                }
                let grown = rates[s | 1 << add].as_ref().expect("superset has enough antennas");
                for (a, b) in base.iter().zip(grown) {
                    checks += 1;
                    let drop = (a - b) / a.abs().max(1e-300);
                    worst = worst.max(drop);
                    if drop > 1e-9 {
                        violations += 1;
                    }
                }
            }
        }
    }
    verdict(
        violations == 0 && route_err <= 1e-10,
        format!("{checks} subset/antenna/user checks, {violations} decreases (worst relative {worst:.2e}); inverse vs norm route max rel err {route_err:.2e}"),
    )
}

fn eigen_monotonicity() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let (mut checks, mut violations, mut worst) = (0usize, 0usize, 0.0f64);
    let n_rx = 2;
    for _ in 0..1000 {
        let (k, m) = lemma_instance(&mut rng);
        let noise: f64 = rng.random_range(0.1..2.0);
        let r_in = CMat::identity(n_rx, n_rx) * c(noise, 0.0);
        for _ in 0..k {
            let h = random_matrix(&mut rng, n_rx, m);
            let r = h.adjoint() * &h;
            let mut traces = vec![f64::NAN; 1 << m];
            for (s, t) in traces.iter_mut().enumerate().skip(1) {
                let idx = bits(s, m);
                let (_, u) = dominant_eigenpair(&principal_submatrix(&r, &idx)).unwrap();
                let mut w = CMat::zeros(m, 1);
                for (j, &i) in idx.iter().enumerate() {
                    w[(i, 0)] = u[j];
                }
                *t = trace_re(&mmse_error_covariance(&h, &w, &r_in).unwrap());
            }
            for s in 1..(1usize << m) {
                for add in 0..m {
                    if s >> add & 1 == 1 {
                        continue;
                    }
                    checks += 1;
                    let rise = (traces[s | 1 << add] - traces[s]) / traces[s];
                    worst = worst.max(rise);
                    if rise > 1e-9 {
                        violations += 1;
                    }
                }
            }
        }
    }
    verdict(
        violations == 0,
        format!("{checks} subset/antenna checks, {violations} trace(E) increases (worst relative {worst:.2e})"),
    )
}

fn sherman_morrison_and_interlace() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let mut sm_err = 0.0f64;
    for _ in 0..500 {
        let (k, m) = lemma_instance(&mut rng);
        let h = random_matrix(&mut rng, k, m);
        let add = rng.random_range(0..m);
        let mut rest: Vec<usize> = (0..m).filter(|&i| i != add).collect();
        let keep = rng.random_range(k..=rest.len());
        rest.truncate(keep);
        let hs = columns(&h, &rest);
        let g_s_inv = hpd_inverse(&(&hs * hs.adjoint())).unwrap();
        let col = h.column(add).into_owned();
        let g_a = &hs * hs.adjoint() + &col * col.adjoint();
        let direct = hpd_inverse(&g_a).unwrap();
        let gh = &g_s_inv * &col;
        let denom = c(1.0, 0.0) + (col.adjoint() * &gh)[(0, 0)];
        let updated = &g_s_inv - (&gh * gh.adjoint()) / denom;
        let scale = direct.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let err = (&updated - &direct).iter().map(|z| z.norm()).fold(0.0, f64::max) / scale;
        sm_err = sm_err.max(err);
    }

    let mut ordering_violations = 0usize;
    for _ in 0..500 {
        let m = rng.random_range(2..=12);
        let rank = rng.random_range(1..=m);
        let a = random_matrix(&mut rng, rank, m);
        let r = a.adjoint() * &a;
        let n = rng.random_range(1..m);
        let mut idx: Vec<usize> = (0..m).collect();
        for i in 0..m {
            let j = rng.random_range(i..m);
            idx.swap(i, j);
        }
        idx.truncate(n);
        idx.sort_unstable();
        let sorted = |v: Vec<f64>| {
            let mut v = v;
            v.sort_by(|x, y| y.total_cmp(x));
            v
        };
        let lam = sorted(hermitian_eigen(&r).0);
        let mu = sorted(hermitian_eigen(&principal_submatrix(&r, &idx)).0);
        let tol = 1e-10 * lam[0].max(1.0);
        for i in 0..n {
            if mu[i] > lam[i] + tol || mu[i] < lam[i + m - n] - tol {
                ordering_violations += 1;
            }
        }
    }
    verdict(
        sm_err <= 1e-9 && ordering_violations == 0,
        format!("Sherman-Morrison max rel err {sm_err:.2e} over 500; interlace violations {ordering_violations} over 500"),
    )
}

fn mmse_equivalence() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let mut worst = 0.0f64;
    for _ in 0..500 {
        let n_rx = rng.random_range(1..=4);
        let m = rng.random_range(4..=16);
        let users = rng.random_range(1..=4);
        let l = rng.random_range(1..=2);
        let h = random_matrix(&mut rng, n_rx, m);
        let w = random_matrix(&mut rng, m, users * l);
        let noise: f64 = rng.random_range(0.05..2.0);
        let k = rng.random_range(0..users);
        let own = k * l..(k + 1) * l;
        let w_k = w.columns(own.start, l).into_owned();
        let mut r_in = CMat::identity(n_rx, n_rx) * c(noise, 0.0);
        for j in 0..users * l {
            if !own.contains(&j) {
                let hw = &h * w.column(j);
                r_in += &hw * hw.adjoint();
            }
        }
        let e10 = mmse_error_covariance(&h, &w_k, &r_in).unwrap();
        let v = mmse_receiver(&h, &w, own.clone(), noise).unwrap();
        let e9 = expanded_error_covariance(&h, &w, own, &v, noise).unwrap();
        let (t9, t10) = (trace_re(&e9), trace_re(&e10));
        worst = worst.max((t9 - t10).abs() / t10.abs());
    }
    verdict(worst <= 1e-9, format!("500 instances, max relative trace gap {worst:.2e}"))
}

fn greedy_gap() -> Verdict {
    let g = ArrayGeometry::new(4, 2).unwrap();
    let n = g.per_pol();
    let link = LinkParams {
        stream_power_w: 1.0,
        noise_power_w: 1.0,
        prb_bandwidth_hz: 1.0,
        slot_duration_s: 1.0,
        se_cap: 8.0,
        streams_per_user: 2,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    let (mut equal, mut worse_than_opt, mut total, mut seed) = (0usize, 0usize, 0usize, 0u64);
    while total < 200 {
        seed += 1;
        let users = rng.random_range(1..=3);
        let drop = Drop::new(g, ChannelParams::default(), users, seed).unwrap();
        let set = drop.realize(0, 2).unwrap();
        let scheduled: Vec<ScheduledUser> = set
            .users
            .iter()
            .map(|u| {
                // unit average element gain keeps the SNR in a useful range
                let p: f64 = u.prbs.iter().map(|h| h.norm_squared()).sum::<f64>() / (u.prbs.len() * h_len(&u.prbs)) as f64;
                let prbs: Vec<CMat> = u.prbs.iter().map(|h| h / c(p.sqrt(), 0.0)).collect();
                ScheduledUser {
                    r_avg: antmute::channel::pol_avg_covariance(&prbs, &g).unwrap(),
                    prbs,
                }
            })
            .collect();
        let m_min = rng.random_range(1..=3);
        let probe = TamProblem::from_users(g, scheduled.clone(), link.clone(), 0.0, m_min).unwrap();
        let full = probe.evaluate(&AntennaMask::full(n)).unwrap();
        let weakest = full.rates.iter().map(|r| r.rate_bits).fold(f64::INFINITY, f64::min);
        let r_min = weakest * rng.random_range(0.3..0.98);
        let p = TamProblem::from_users(g, scheduled, link.clone(), r_min, m_min).unwrap();
        let best = (1u32..(1 << n))
            .filter(|&b| {
                let mask = AntennaMask::from_bits((0..n).map(|i| b >> i & 1 == 1).collect());
                p.evaluate(&mask).unwrap().feasible
            })
            .map(|b| b.count_ones() as usize)
            .min()
            .expect("full array is feasible by construction");
        let sol = greedy_tam(&p).unwrap();
        total += 1;
        if !sol.feasible || sol.mask.popcount() < best {
            worse_than_opt += 1;
        } else if sol.mask.popcount() == best {
            equal += 1;
        }
    }
    let frac = equal as f64 / total as f64;
    verdict(
        worse_than_opt == 0 && frac >= 0.70,
        format!("{total} instances at M/2 = {n}: greedy = optimum on {equal} ({:.1}%), below optimum or infeasible on {worse_than_opt}", 100.0 * frac),
    )
}

fn h_len(prbs: &[CMat]) -> usize {
    prbs.first().map_or(1, |h| h.len())
}

fn loss_gradient() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    let n = 8;
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let z: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let label = rng.random_range(0..n);
        let mut y = vec![0.0; n];
        y[label] = 1.0;
        let cfg = LossConfig {
            lambda: rng.random_range(0.0..2.0),
            alpha: rng.random_range(0.0..1.0),
            beta: rng.random_range(1.0..20.0),
        };
        let f = |z: &[f64]| total_loss(&y, &softmax(z), &cfg);
        let p = softmax(&z);
        let analytic = softmax_backward(&p, &total_loss_grad(&y, &p, &cfg));
        let h = 1e-5;
        let numeric: Vec<f64> = (0..n)
            .map(|i| {
                let (mut a, mut b) = (z.clone(), z.clone());
                a[i] += h;
                b[i] -= h;
                (f(&a) - f(&b)) / (2.0 * h)
            })
            .collect();
        let diff = analytic.iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale = analytic.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-8);
        worst = worst.max(diff / scale);
    }

    let mut sa_worst = 0.0f64;
    for _ in 0..100 {
        let top = rng.random_range(0..n);
        let peak: f64 = rng.random_range(0.2..1.0);
        let v: Vec<f64> = (0..n)
            .map(|i| if i == top { peak } else { rng.random_range(0.0..peak - 0.1) })
            .collect();
        sa_worst = sa_worst.max((softargmax(&v, 100.0) - top as f64).abs());
    }
    verdict(
        worst <= 1e-4 && sa_worst <= 0.05,
        format!("100 points, max relative gradient error {worst:.2e}; softargmax(beta=100) max deviation {sa_worst:.2e} at margin 0.1"),
    )
}

fn proposition_direction() -> Verdict {
    let cfg = ExperimentConfig::desk();
    let t = Instant::now();
    let data = generate_dataset(&cfg).unwrap();
    let gen_s = t.elapsed().as_secs_f64();
    if data.samples.len() < 20_000 {
        return verdict(false, format!("dataset has only {} samples", data.samples.len()));
    }
    let mut passes = 0;
    let mut lines = Vec::new();
    for s in 0..3u64 {
        let mut c = cfg.clone();
        c.seeds.init += 100 * s;
        c.nam.symmetric.seed += 100 * s;
        c.nam.asymmetric.seed += 100 * s;
        let (sym, _) = train_symmetric(&c, &data).unwrap();
        let (asym, _) = train_asymmetric(&c, &data, &sym, &c.nam.loss).unwrap();
        let e0 = evaluate_split(&c, &data, &sym, Split::Test).unwrap();
        let e1 = evaluate_split(&c, &data, &asym, Split::Test).unwrap();
        let dq = 100.0 * (e1.qos_guarantee - e0.qos_guarantee);
        let da = 100.0 * (e0.accuracy - e1.accuracy);
        let ok = dq >= 1.0 && da <= 5.0;
        passes += usize::from(ok);
        lines.push(format!(
            "seed {s}: acc {:.3}->{:.3} qos {:.3}->{:.3} ({})",
            e0.accuracy,
            e1.accuracy,
            e0.qos_guarantee,
            e1.qos_guarantee,
            if ok { "ok" } else { "miss" }
        ));
    }
    let total_s = t.elapsed().as_secs_f64();
    verdict(
        passes >= 2 && total_s < 900.0,
        format!(
            "{} samples ({gen_s:.0} s to generate), {passes}/3 seeds meet +1 pp qos and <= 5 pt accuracy drop; {}; {total_s:.0} s total",
            data.samples.len(),
            lines.join("; ")
        ),
    )
}

fn complexity_reproduction() -> Verdict {
    let t = Instant::now();
    let f = fpo_iteration(8, 4, 4, 2, 273);
    let arch = antmute::Architecture::default();
    let mut ordered = true;
    let mut ratios = (0.0, 0.0);
    for mode in [DistributionMode::Paper, DistributionMode::Corrected] {
        let r = fpo_report(&FpoParams::reference(), &arch, mode).unwrap();
        let get = |a: Algorithm| r.algorithms.iter().find(|x| x.algorithm == a).unwrap().fpos_per_slot;
        let (g, s, fc) = (get(Algorithm::Greedy), get(Algorithm::Sequential), get(Algorithm::FixedColumn));
        ordered &= g > s && s > fc && fc > r.nn.total;
        if mode == DistributionMode::Paper {
            ratios = (r.greedy_over_nn, r.fixed_column_over_nn);
        }
    }
    let secs = t.elapsed().as_secs_f64();
    verdict(
        f == 131_552.0 && ratios.0 > 1000.0 && (15.0..=35.0).contains(&ratios.1) && ordered && secs < 1.0,
        format!(
            "F(8,4,4,2,273) = {f}; greedy/nn {:.1}, fixed_column/nn {:.2}; greedy > sequential > fixed_column > nn in both modes: {ordered}; {secs:.3} s",
            ratios.0, ratios.1
        ),
    )
}

fn energy_arithmetic() -> Verdict {
    let g = ArrayGeometry::default();
    let counts = [16usize, 18, 16, 18, 17];
    let e = energy_report_from_counts(&counts, &g, &PowerModel::default()).unwrap();
    let pct = 100.0 * e.saving_fraction;
    verdict(
        (e.mean_active - 17.0).abs() < 1e-12 && (pct - 73.4).abs() <= 0.1,
        format!("mean active {:.2} of {} -> saving {pct:.3}%", e.mean_active, e.total_antennas),
    )
}

fn determinism() -> Verdict {
    let mut cfg = ExperimentConfig::desk();
    cfg.dataset.drops = 30;
    cfg.dataset.slots_per_drop = 4;
    cfg.nam.symmetric.epochs = 2;
    cfg.nam.asymmetric.epochs = 2;
    let dir = tempfile::tempdir().unwrap();

    let pipeline = |tag: &str| {
        let data = generate_dataset(&cfg).unwrap();
        let ds_path = dir.path().join(format!("data_{tag}.bin"));
        data.write(&ds_path).unwrap();
        let data = Dataset::read(&ds_path).unwrap();
        let (sym, _) = train_symmetric(&cfg, &data).unwrap();
        let (asym, _) = train_asymmetric(&cfg, &data, &sym, &cfg.nam.loss).unwrap();
        let model_path = dir.path().join(format!("asym_{tag}.json"));
        asym.save(&model_path).unwrap();
        let asym = NamModel::load(&model_path).unwrap();
        let metrics: Vec<MetricsArtifact> = [("sym", &sym), ("asym", &asym)]
            .iter()
            .map(|(name, m)| MetricsArtifact {
                config_hash: cfg.hash(),
                seeds: cfg.seeds.clone(),
                model: name.to_string(),
                split: Split::Test,
                metrics: evaluate_split(&cfg, &data, m, Split::Test).unwrap(),
            })
            .collect();
        let run = run_heuristics(&cfg, Some(&asym)).unwrap();
        let files = report_files(&ReportInputs {
            config: &cfg,
            heuristics: Some(&run),
            metrics: &metrics,
        })
        .unwrap();
        (
            std::fs::read(&ds_path).unwrap(),
            std::fs::read(&model_path).unwrap(),
            files,
            data,
            asym,
        )
    };
    let (ds_a, model_a, files_a, data_a, model_obj) = pipeline("a");
    let (ds_b, model_b, files_b, _, _) = pipeline("b");

    let csv_same = files_a == files_b;
    let n_files = files_a.len();
    let dataset_round_trip = Dataset::from_bytes(&ds_a, dir.path()).unwrap() == data_a && data_a.to_bytes().unwrap() == ds_a;
    let reloaded = NamModel::from_json(&model_obj.to_json().unwrap()).unwrap();
    let model_round_trip = reloaded == model_obj && reloaded.to_json().unwrap().into_bytes() == model_a;
    verdict(
        csv_same && ds_a == ds_b && model_a == model_b && dataset_round_trip && model_round_trip,
        format!(
            "{n_files} report files identical: {csv_same}; dataset bytes identical: {}; model bytes identical: {}; dataset round trip: {dataset_round_trip}; model round trip: {model_round_trip}",
            ds_a == ds_b,
            model_a == model_b
        ),
    )
}

type Criterion = (&'static str, fn() -> Verdict);

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("zf-rate-monotonicity", zf_monotonicity),
        ("eigen-bf-monotonicity", eigen_monotonicity),
        ("sherman-morrison-interlace", sherman_morrison_and_interlace),
        ("mmse-error-covariance-equivalence", mmse_equivalence),
        ("greedy-optimality-gap", greedy_gap),
        ("loss-gradient", loss_gradient),
        ("asymmetric-retraining-direction", proposition_direction),
        ("complexity-reproduction", complexity_reproduction),
        ("energy-arithmetic", energy_arithmetic),
        ("determinism-persistence", determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let t = Instant::now();
        let v = run();
        let tag = if v.pass { "PASS" } else { "FAIL" };
        println!("{tag} {name} ({:.1} s): {}", t.elapsed().as_secs_f64(), v.detail);
        failed += usize::from(!v.pass);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
