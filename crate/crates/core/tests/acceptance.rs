//! Acceptance suite. Each test prints one `[PASS]`/`[FAIL]` line; run with
//! `cargo test --release --test acceptance -- --nocapture --test-threads=1`
//! to see them in order.

use std::time::{Duration, Instant};

use bdnn::codes::CodeMatrix;
use bdnn::network::{encode, forward, LayerSchedule, Mode, NetworkParams};
use bdnn::search::{
    self, euclidean_ground_truth, hamming_distance, label_ground_truth, mean_average_precision,
    precision_at_radius, rank_by_hamming, GroundTruth, Neighbor, PackedCodes,
};
use bdnn::sh::{self, pairwise_labels, ShConfig};
use bdnn::synth::{generate, SynthSpec};
use bdnn::uh::{self, UhConfig};
use bdnn::{Matrix, Penalties, Phase};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(name: &str, pass: bool, detail: String) {
    println!("[{}] {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "{name}: {detail}");
}

fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

fn random_codes(bits: usize, count: usize, rng: &mut ChaCha8Rng) -> CodeMatrix {
    let e = (0..bits * count)
        .map(|_| if rng.random_bool(0.5) { 1 } else { -1 })
        .collect();
    CodeMatrix::from_entries(bits, count, e).unwrap()
}

fn random_params(schedule: LayerSchedule, rng: &mut ChaCha8Rng) -> NetworkParams {
    let len = NetworkParams::zeros(schedule.clone()).len();
    let flat: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
    NetworkParams::from_flat(schedule, &flat).unwrap()
}

fn random_penalties(rng: &mut ChaCha8Rng) -> Penalties {
    Penalties {
        weight_decay: rng.random_range(0.01..1.0),
        binding: rng.random_range(0.01..1.0),
        independence: rng.random_range(0.01..1.0),
        balance: rng.random_range(0.01..1.0),
    }
}

/// Largest `|fd - g| / max(|fd|, |g|, 1)` over all coordinates, with central
/// differences of step `1e-5`.
fn max_fd_error(params: &NetworkParams, grad: &NetworkParams, f: impl Fn(&NetworkParams) -> f64) -> f64 {
    let flat = params.to_flat();
    let g = grad.to_flat();
    let eps = 1e-5;
    let at = |v: Vec<f64>| f(&NetworkParams::from_flat(params.schedule().clone(), &v).unwrap());
    let mut worst: f64 = 0.0;
    for i in 0..flat.len() {
        let mut plus = flat.clone();
        plus[i] += eps;
        let mut minus = flat.clone();
        minus[i] -= eps;
        let fd = (at(plus) - at(minus)) / (2.0 * eps);
        worst = worst.max((fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1.0));
    }
    worst
}

#[test]
fn gradient_fidelity() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst_uh: f64 = 0.0;
    let mut worst_sh: f64 = 0.0;
    for _ in 0..20 {
        let d = rng.random_range(1..=6);
        let m = rng.random_range(2..=8);
        let bits = rng.random_range(1..=3);
        let hidden = rng.random_range(1..=6);
        let s = LayerSchedule::unsupervised(d, &[hidden], bits).unwrap();
        let params = random_params(s, &mut rng);
        let x = random_matrix(d, m, &mut rng);
        let codes = random_codes(bits, m, &mut rng);
        let pen = random_penalties(&mut rng);
        let g = uh::gradient_uh(&params, &codes, &x, &pen).unwrap();
        worst_uh = worst_uh.max(max_fd_error(&params, &g, |p| {
            uh::objective_uh(p, &codes, &x, &pen).unwrap()
        }));
    }
    for _ in 0..20 {
        let d = rng.random_range(1..=6);
        let m = rng.random_range(2..=8);
        let bits = rng.random_range(1..=3);
        let hidden: Vec<usize> = (0..rng.random_range(1..=2)).map(|_| rng.random_range(1..=6)).collect();
        let s = LayerSchedule::supervised(d, &hidden, bits).unwrap();
        let params = random_params(s, &mut rng);
        let x = random_matrix(d, m, &mut rng);
        let codes = random_codes(bits, m, &mut rng);
        let labels: Vec<u32> = (0..m).map(|_| rng.random_range(0..3)).collect();
        let sim = pairwise_labels(&labels);
        let pen = random_penalties(&mut rng);
        let g = sh::gradient_sh(&params, &codes, &x, &sim, &pen).unwrap();
        worst_sh = worst_sh.max(max_fd_error(&params, &g, |p| {
            sh::objective_sh(p, &codes, &x, &sim, &pen).unwrap()
        }));
    }
    let elapsed = start.elapsed();
    report(
        "gradient fidelity",
        worst_uh <= 1e-5 && worst_sh <= 1e-5 && elapsed < Duration::from_secs(30),
        format!("max rel err uh {worst_uh:.2e}, sh {worst_sh:.2e} (tol 1e-5), {elapsed:.2?} (limit 30s)"),
    );
}

fn all_codes(bits: usize, m: usize) -> Vec<CodeMatrix> {
    (0u32..1 << (bits * m))
        .map(|mask| {
            let e = (0..bits * m)
                .map(|i| if mask >> i & 1 == 1 { 1 } else { -1 })
                .collect();
            CodeMatrix::from_entries(bits, m, e).unwrap()
        })
        .collect()
}

fn single_flips(b: &CodeMatrix) -> Vec<CodeMatrix> {
    let mut out = Vec::new();
    for j in 0..b.samples() {
        for k in 0..b.bits() {
            let mut f = b.clone();
            f.set(k, j, -b.get(k, j));
            out.push(f);
        }
    }
    out
}

#[test]
fn code_step_optimality() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let all = all_codes(2, 3);
    assert_eq!(all.len(), 64);
    let mut uh_ok = true;
    let mut at_global = 0;
    for _ in 0..50 {
        let d = rng.random_range(2..=5);
        let s = LayerSchedule::unsupervised(d, &[rng.random_range(2..=5)], 2).unwrap();
        let params = random_params(s, &mut rng);
        let x = random_matrix(d, 3, &mut rng);
        let startb = random_codes(2, 3, &mut rng);
        let binding = rng.random_range(0.0..2.0);
        let pen = Penalties { binding, ..random_penalties(&mut rng) };
        let sub = |b: &CodeMatrix| uh::b_step_objective(&params, &x, b, binding).unwrap();
        let out = uh::dcc(&params, &x, &startb, binding, 100).unwrap();
        let value = sub(&out.codes);
        let flip_optimal = single_flips(&out.codes).iter().all(|f| sub(f) >= value - 1e-12);
        let global = all.iter().map(sub).fold(f64::INFINITY, f64::min);
        // The sub-objective is the code-dependent part of the full objective, scaled by 2m.
        let j = |b: &CodeMatrix| uh::objective_uh(&params, b, &x, &pen).unwrap();
        let consistent = all
            .iter()
            .all(|b| ((j(b) - j(&out.codes)) * 6.0 - (sub(b) - value)).abs() <= 1e-9 * (1.0 + value.abs()));
        uh_ok &= out.converged && flip_optimal && value >= global - 1e-12 && value <= sub(&startb) + 1e-12 && consistent;
        if value <= global + 1e-12 {
            at_global += 1;
        }
    }

    let mut sh_ok = true;
    let mut sh_cases = 0;
    for (bits, m) in [(1, 2), (2, 3), (3, 4), (4, 3), (2, 6), (1, 12), (3, 3)] {
        for _ in 0..3 {
            let d = rng.random_range(2..=4);
            let s = LayerSchedule::supervised(d, &[3], bits).unwrap();
            let params = random_params(s, &mut rng);
            let x = random_matrix(d, m, &mut rng);
            let labels: Vec<u32> = (0..m).map(|_| rng.random_range(0..2)).collect();
            let sim = pairwise_labels(&labels);
            let pen = random_penalties(&mut rng);
            let h = forward(&params, &x).unwrap().output(3).clone();
            let ours = sh::b_step_sh(&h).unwrap();
            let j = |b: &CodeMatrix| sh::objective_sh(&params, b, &x, &sim, &pen).unwrap();
            let best = all_codes(bits, m).into_iter().map(|b| j(&b)).fold(f64::INFINITY, f64::min);
            sh_ok &= (j(&ours) - best).abs() <= 1e-12 * (1.0 + best.abs());
            sh_cases += 1;
        }
    }
    let elapsed = start.elapsed();
    report(
        "code step optimality",
        uh_ok && sh_ok && elapsed < Duration::from_secs(10),
        format!(
            "uh: 50 instances flip-optimal and certified (global optimum reached in {at_global}/50), \
             sh: {sh_cases} instances match enumeration, {elapsed:.2?} (limit 10s)"
        ),
    );
}

fn uh_config(d: usize, bits: usize, seed: u64) -> UhConfig {
    let hidden = bdnn::network::default_hidden_layers(bits);
    let mut cfg = UhConfig::new(LayerSchedule::unsupervised(d, &hidden, bits).unwrap());
    cfg.seed = seed;
    cfg
}

#[test]
fn monotone_alternating_descent() {
    let data = generate(&SynthSpec {
        clusters: 3,
        dims: 16,
        samples_per_cluster: 100,
        seed: 7,
        ..SynthSpec::default()
    })
    .unwrap();
    let cfg = uh_config(16, 8, 7);
    assert_eq!(cfg.iterations, 10);
    assert_eq!(cfg.penalties, Penalties::UNSUPERVISED);
    let out = uh::train_uh(&data.x, &cfg).unwrap();
    let mut worst: f64 = f64::NEG_INFINITY;
    for w in out.history.windows(2) {
        worst = worst.max((w[1].objective - w[0].objective) / w[0].objective.abs());
    }
    let half_steps = out.history.iter().filter(|e| e.phase != Phase::Init).count();
    report(
        "monotone alternating descent",
        worst <= 1e-8 && half_steps == 21,
        format!(
            "{half_steps} half-steps, objective {:.6e} -> {:.6e}, largest relative change {worst:.2e} (limit +1e-8)",
            out.history[0].objective,
            out.history.last().unwrap().objective
        ),
    );
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix; columns of the
/// returned matrix are eigenvectors, sorted by descending eigenvalue.
fn jacobi_eigen(a: &Matrix) -> (Vec<f64>, Matrix) {
    let n = a.nrows();
    let mut a = a.clone();
    let mut v = Matrix::identity(n, n);
    for _ in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)].powi(2))
            .sum();
        if off < 1e-22 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[(p, q)].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * a[(p, q)]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[(k, p)], a[(k, q)]);
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[(p, k)], a[(q, k)]);
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[(k, p)], v[(k, q)]);
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].total_cmp(&a[(i, i)]));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let vectors = Matrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    (values, vectors)
}

/// Sign of the top-`bits` principal projections, centered on the database mean.
fn pca_sign_codes(db: &Matrix, queries: &Matrix, bits: usize) -> (CodeMatrix, CodeMatrix) {
    let (d, m) = db.shape();
    let mean: Vec<f64> = (0..d).map(|i| db.row(i).iter().sum::<f64>() / m as f64).collect();
    let center = |x: &Matrix| Matrix::from_fn(d, x.ncols(), |i, j| x[(i, j)] - mean[i]);
    let xc = center(db);
    let cov = &xc * xc.transpose() / (m as f64 - 1.0);
    let (_, vecs) = jacobi_eigen(&cov);
    let p = vecs.columns(0, bits).transpose();
    let sign = |x: &Matrix| {
        let z = &p * center(x);
        let e = z.iter().map(|&v| if v >= 0.0 { 1 } else { -1 }).collect();
        CodeMatrix::from_entries(bits, x.ncols(), e).unwrap()
    };
    (sign(db), sign(queries))
}

fn map_of(db: &CodeMatrix, q: &CodeMatrix, gt: &GroundTruth) -> f64 {
    search::evaluate(&PackedCodes::pack(db), &PackedCodes::pack(q), gt, None, 2)
        .unwrap()
        .map
}

struct Retrieval {
    uh_map: f64,
    pca_map: f64,
}

fn unsupervised_retrieval(seed: u64, bits: usize) -> Retrieval {
    let data = generate(&SynthSpec {
        clusters: 3,
        dims: 16,
        samples_per_cluster: 100,
        queries_per_cluster: 20,
        seed,
        ..SynthSpec::default()
    })
    .unwrap();
    let gt = euclidean_ground_truth(&data.x, &data.queries, 50).unwrap();
    let trained = uh::train_uh(&data.x, &uh_config(16, bits, seed)).unwrap();
    let db = encode(&trained.params, &data.x).unwrap();
    let q = encode(&trained.params, &data.queries).unwrap();
    let (pdb, pq) = pca_sign_codes(&data.x, &data.queries, bits);
    Retrieval {
        uh_map: map_of(&db, &q, &gt),
        pca_map: map_of(&pdb, &pq, &gt),
    }
}

#[test]
fn unsupervised_retrieval_beats_pca_sign() {
    let start = Instant::now();
    let runs: Vec<Retrieval> = (0..5).map(|s| unsupervised_retrieval(1000 + s, 8)).collect();
    let wins = runs.iter().filter(|r| r.uh_map > r.pca_map).count();
    let detail: Vec<String> = runs
        .iter()
        .map(|r| format!("{:.3}/{:.3}", r.uh_map, r.pca_map))
        .collect();
    let elapsed = start.elapsed();
    report(
        "unsupervised retrieval vs sign-of-PCA",
        wins >= 4 && elapsed < Duration::from_secs(120),
        format!(
            "network/baseline mAP per seed [{}], wins {wins}/5 (need 4), {elapsed:.2?} (limit 2min)",
            detail.join(", ")
        ),
    );
}

#[test]
fn supervised_retrieval_quality() {
    let start = Instant::now();
    let mut good = 0;
    let mut detail = Vec::new();
    for seed in 0..5 {
        let data = generate(&SynthSpec {
            clusters: 2,
            dims: 8,
            samples_per_cluster: 40,
            queries_per_cluster: 20,
            seed: 2000 + seed,
            ..SynthSpec::default()
        })
        .unwrap();
        let hidden = bdnn::network::default_hidden_layers(4);
        let mut cfg = ShConfig::new(LayerSchedule::supervised(8, &hidden, 4).unwrap());
        cfg.seed = seed;
        assert_eq!(cfg.penalties, Penalties::SUPERVISED);
        assert_eq!(cfg.iterations, 5);
        let trained = sh::train_sh(&data.x, &data.labels, &cfg).unwrap();
        let db = PackedCodes::pack(&encode(&trained.params, &data.x).unwrap());
        let q = PackedCodes::pack(&encode(&trained.params, &data.queries).unwrap());
        let gt = label_ground_truth(&data.labels, &data.query_labels);
        let r = search::evaluate(&db, &q, &gt, None, 2).unwrap();
        if r.map >= 0.9 && r.precision_at_radius >= 0.9 {
            good += 1;
        }
        detail.push(format!("{:.3}/{:.3}", r.map, r.precision_at_radius));
    }
    let elapsed = start.elapsed();
    report(
        "supervised retrieval quality",
        good >= 4 && elapsed < Duration::from_secs(60),
        format!(
            "mAP/precision@2 per seed [{}], {good}/5 reach 0.9 (need 4), {elapsed:.2?} (limit 1min)",
            detail.join(", ")
        ),
    );
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

#[test]
fn longer_codes_do_not_degrade() {
    let seeds = 3000..3005;
    let short: Vec<f64> = seeds.clone().map(|s| unsupervised_retrieval(s, 8).uh_map).collect();
    let long: Vec<f64> = seeds.map(|s| unsupervised_retrieval(s, 16).uh_map).collect();
    let (ms, ml) = (median(short.clone()), median(long.clone()));
    report(
        "code length trend",
        ml >= ms - 0.02,
        format!("median mAP 8 bits {ms:.4}, 16 bits {ml:.4} (need >= 8-bit - 0.02); 8: {short:.3?}, 16: {long:.3?}"),
    );
}

/// Reference evaluator written straight from the metric definitions.
fn naive_metrics(ranking: &[Neighbor], relevant: &[usize], top_k: Option<usize>, radius: u32) -> (f64, f64) {
    let is_rel = |i: usize| relevant.contains(&i);
    let cut = top_k.unwrap_or(ranking.len()).min(ranking.len());
    let mut precisions = Vec::new();
    for pos in 0..cut {
        if is_rel(ranking[pos].index) {
            let hits = ranking[..=pos].iter().filter(|n| is_rel(n.index)).count();
            precisions.push(hits as f64 / (pos + 1) as f64);
        }
    }
    let denom = top_k.map_or(relevant.len(), |k| relevant.len().min(k));
    let ap = if denom == 0 { 0.0 } else { precisions.iter().sum::<f64>() / denom as f64 };
    let inside: Vec<&Neighbor> = ranking.iter().filter(|n| n.distance <= radius).collect();
    let prec = if inside.is_empty() {
        0.0
    } else {
        inside.iter().filter(|n| is_rel(n.index)).count() as f64 / inside.len() as f64
    };
    (ap, prec)
}

#[test]
fn metric_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let mut worst: f64 = 0.0;
    let mut zero_coverage_ok = true;
    for inst in 0..100 {
        let n = rng.random_range(1..40);
        let queries = rng.random_range(1..6);
        let top_k = if rng.random_bool(0.5) { Some(rng.random_range(1..=n)) } else { None };
        // Every tenth instance puts every item outside the radius.
        let min_distance = if inst % 10 == 0 { 3 } else { 0 };
        let mut rankings = Vec::new();
        let mut sets = Vec::new();
        for _ in 0..queries {
            let mut dist: Vec<u32> = (0..n).map(|_| rng.random_range(min_distance..8)).collect();
            dist.sort_unstable();
            let mut perm: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                perm.swap(i, rng.random_range(0..=i));
            }
            rankings.push(
                perm.iter()
                    .zip(&dist)
                    .map(|(&index, &distance)| Neighbor { index, distance })
                    .collect::<Vec<_>>(),
            );
            sets.push((0..n).filter(|_| rng.random_bool(0.3)).collect::<Vec<_>>());
        }
        let gt = GroundTruth::new(sets.clone(), n).unwrap();
        let map = mean_average_precision(&rankings, &gt, top_k).unwrap();
        let prec = precision_at_radius(&rankings, &gt, 2).unwrap();
        let naive: Vec<(f64, f64)> = rankings
            .iter()
            .zip(&sets)
            .map(|(r, s)| naive_metrics(r, s, top_k, 2))
            .collect();
        let nmap = naive.iter().map(|p| p.0).sum::<f64>() / queries as f64;
        let nprec = naive.iter().map(|p| p.1).sum::<f64>() / queries as f64;
        worst = worst.max((map - nmap).abs()).max((prec - nprec).abs());
        if min_distance > 2 {
            zero_coverage_ok &= prec == 0.0;
        }
    }
    report(
        "metric oracles",
        worst <= 1e-12 && zero_coverage_ok,
        format!("100 instances, max deviation {worst:.1e} (tol 1e-12), zero-coverage precision is 0: {zero_coverage_ok}"),
    );
}

#[test]
fn packed_search_correctness() {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let mut mismatches = 0;
    for bits in [1usize, 8, 63, 64, 65, 128] {
        let a = random_codes(bits, 1000, &mut rng);
        let b = random_codes(bits, 1000, &mut rng);
        let (pa, pb) = (PackedCodes::pack(&a), PackedCodes::pack(&b));
        for j in 0..1000 {
            let naive = a.column(j).iter().zip(b.column(j)).filter(|(x, y)| x != y).count() as u32;
            if hamming_distance(pa.get(j), pb.get(j)).unwrap() != naive {
                mismatches += 1;
            }
        }
    }
    let mut ranking_ok = true;
    for bits in [4usize, 8, 65] {
        let db = random_codes(bits, 200, &mut rng);
        let q = random_codes(bits, 5, &mut rng);
        let (pdb, pq) = (PackedCodes::pack(&db), PackedCodes::pack(&q));
        for j in 0..5 {
            let mut naive: Vec<(u32, usize)> = (0..200)
                .map(|i| {
                    let d = db.column(i).iter().zip(q.column(j)).filter(|(x, y)| x != y).count();
                    (d as u32, i)
                })
                .collect();
            naive.sort();
            let ours: Vec<(u32, usize)> = rank_by_hamming(pq.get(j), &pdb)
                .unwrap()
                .iter()
                .map(|n| (n.distance, n.index))
                .collect();
            ranking_ok &= ours == naive;
        }
    }
    report(
        "packed search correctness",
        mismatches == 0 && ranking_ok,
        format!("6000 pairs, {mismatches} distance mismatches; ranking matches naive sort: {ranking_ok}"),
    );
}

#[test]
fn training_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    assert_eq!(
        bdnn::cli::run(["bdnn", "synth", "--dims", "8", "--samples", "30", "--seed", "5", "--out", &p("x.bin")]),
        0
    );
    std::fs::write(p("run.cfg"), "mode = uh\ncode_length = 4\nhidden_layers = 10\niterations = 3\nseed = 9\n").unwrap();
    for run in ["a", "b"] {
        let code = bdnn::cli::run([
            "bdnn", "train", "--config", &p("run.cfg"), "--data", &p("x.bin"),
            "--out", &p(&format!("{run}.model")), "--trace", &p(&format!("{run}.csv")),
        ]);
        assert_eq!(code, 0);
    }
    let read = |name: &str| std::fs::read(p(name)).unwrap();
    let same_model = read("a.model") == read("b.model");
    let same_trace = read("a.csv") == read("b.csv");
    report(
        "determinism",
        same_model && same_trace,
        format!("model files identical: {same_model}, trace files identical: {same_trace}"),
    );
}

#[test]
fn schedule_modes_are_consistent() {
    // Guards the layer layouts every criterion above relies on.
    let u = LayerSchedule::unsupervised(16, &[90, 20], 8).unwrap();
    assert_eq!((u.mode(), u.code_layer(), u.sizes().last().copied()), (Mode::Unsupervised, 4, Some(16)));
    let s = LayerSchedule::supervised(8, &[90, 20], 4).unwrap();
    assert_eq!((s.mode(), s.code_layer()), (Mode::Supervised, 4));
}
