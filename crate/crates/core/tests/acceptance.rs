//! Acceptance suite: one PASS/FAIL line per criterion, each with its own
//! runtime limit. Exits nonzero if any criterion fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::{dense_mttkrp, dense_phi, max_rel_diff, random_instance, rel_close, weighted_factor};
use cpapr_core::roofline::{builtin_machine, work_and_traffic, Rational};
use cpapr_core::{
    attainable, compute_phi, compute_pi, cp_apr_mu, cp_apr_mu_from, enumerate_policies, geometric_mean,
    map_policy_to_kernel, mttkrp_with, peak_flops, random_tensor, report_kernel_breakdown, run_stream,
    KernelConfig, KernelCostModel, KruskalModel, PerturbationMode, PhiStrategy, PolicyParams, PolicySpace,
    PreparedPhi, SolverOptions, SparseTensor, StreamKernel,
};
use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn roofline_constants() -> Outcome {
    let cpu = builtin_machine("e5-2690v4").ok_or("missing e5-2690v4")?;
    let gpu = builtin_machine("k80").ok_or("missing k80")?;
    let cpu_peak = peak_flops(&cpu);
    let gpu_peak = peak_flops(&gpu);
    ensure!(cpu_peak == 1164.8, "CPU peak {cpu_peak}");
    ensure!((gpu_peak - 2910.0).abs() <= 29.1, "GPU peak {gpu_peak}");
    let p_cpu = attainable(&cpu, 0.27);
    ensure!(cpu.bandwidth_gbs == 153.6 && (p_cpu - 41.5).abs() <= 0.1, "CPU attainable {p_cpu}");
    let p_gpu = attainable(&gpu, 0.125);
    ensure!(gpu.bandwidth_gbs == 480.0 && (p_gpu - 60.0).abs() <= 0.1, "GPU attainable {p_gpu}");
    Ok(format!("peak {cpu_peak} / {gpu_peak}, attainable {p_cpu:.3} / {p_gpu:.3}"))
}

fn cost_model_formulas() -> Outcome {
    let mut checked = 0;
    for nnz in [1u64, 7, 1000, 123_456_789] {
        let n = Rational::from_integer(u128::from(nnz));
        for r in 1..=32u32 {
            let rr = Rational::from_integer(u128::from(r));
            let base = work_and_traffic(&KernelCostModel::base(r), nnz).map_err(|e| e.to_string())?;
            ensure!(base.flops == n * (Rational::from_integer(4) * rr + Rational::from_integer(2)), "base W R={r}");
            ensure!(base.words == n * (Rational::from_integer(5) * rr + Rational::from_integer(2)), "base Q R={r}");
            for v in 1..=32u32 {
                let rv = Ratio::new(u128::from(r), u128::from(v));
                let c = work_and_traffic(&KernelCostModel::chunked(r, v), nnz).map_err(|e| e.to_string())?;
                let w = n * (Rational::from_integer(4) * rr + rv + Rational::from_integer(3));
                let q = n * (Rational::from_integer(6) * rr + Rational::from_integer(2) * rv + Rational::from_integer(3));
                ensure!(c.flops == w && c.words == q, "chunked R={r} V={v}");
                checked += 1;
            }
        }
    }
    Ok(format!("{checked} chunked cases exact"))
}

fn three_policies() -> [PolicyParams; 3] {
    [
        PolicyParams::SEQUENTIAL,
        PolicyParams::new(2, 1, 3).unwrap(),
        PolicyParams::new(6, 2, 16).unwrap(),
    ]
}

fn phi_oracle() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..200u64 {
        let inst = random_instance(seed, &[2, 3, 4]);
        let t = &inst.tensor;
        let perms = t.permutations();
        for mode in 0..t.order() {
            let b = weighted_factor(&inst.model, mode);
            let pi = compute_pi(&inst.model, t, mode).map_err(|e| e.to_string())?;
            let want = dense_phi(t, &b, inst.model.factors(), mode, 1e-10);
            let mut strategies = vec![PhiStrategy::AtomicPerNonzero];
            strategies.extend([1, 3, 7, t.nnz()].map(|v| PhiStrategy::ChunkedSorted { chunk_size: v }));
            for strategy in strategies {
                for policy in three_policies() {
                    let cfg = KernelConfig { strategy, policy, worker_budget: 4, perturbation: PerturbationMode::None };
                    let got = compute_phi(t, &b, &pi, Some(&perms[mode]), 1e-10, &cfg).map_err(|e| e.to_string())?;
                    let d = max_rel_diff(&got.phi, &want);
                    ensure!(d <= 1e-10, "seed {seed} mode {mode} {strategy} {policy}: rel diff {d:e}");
                    worst = worst.max(d);
                }
            }
        }
    }
    Ok(format!("200 instances, worst rel diff {worst:.1e}"))
}

fn check_nonnegative(model: &KruskalModel) -> bool {
    model.weights().iter().all(|&w| w >= 0.0) && model.factors().iter().all(|f| f.as_slice().iter().all(|&v| v >= 0.0))
}

fn mu_monotone() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for case in 0..50u64 {
        let order = rng.random_range(2..=4);
        let dims: Vec<usize> = (0..order).map(|_| rng.random_range(2..=8)).collect();
        let nnz = rng.random_range(10..=200);
        let t = random_tensor(&dims, nnz, 8, case).map_err(|e| e.to_string())?;
        let opts = SolverOptions {
            rank: rng.random_range(1..=5),
            max_outer: 10,
            seed: case,
            kkt_tol: 1e-300,
            ..SolverOptions::default()
        }
        .sequential();
        let (_, trace) = cp_apr_mu(&t, &opts).map_err(|e| e.to_string())?;
        ensure!(trace.outer_iterations() == 10, "case {case}: stopped early");
        let mut prev = trace.initial_objective;
        for (k, obj) in trace.objectives().into_iter().enumerate() {
            ensure!(obj <= prev + 1e-9, "case {case} outer {k}: {obj} > {prev}");
            prev = obj;
        }
        for outer in 1..=10 {
            let (model, _) = cp_apr_mu(&t, &SolverOptions { max_outer: outer, ..opts.clone() }).map_err(|e| e.to_string())?;
            ensure!(check_nonnegative(&model), "case {case}: negative entry after outer {outer}");
        }
    }
    Ok("50 tensors x 10 outer iterations".into())
}

fn rank_one_fit() -> Outcome {
    let opts = |seed| SolverOptions { rank: 1, max_outer: 200, kkt_tol: 1e-12, seed, ..SolverOptions::default() }.sequential();
    let single = SparseTensor::new(vec![1, 1], vec![vec![0, 0]], vec![7.0]).map_err(|e| e.to_string())?;
    let (m, _) = cp_apr_mu(&single, &opts(1)).map_err(|e| e.to_string())?;
    ensure!(rel_close(m.value_at(&[0, 0]), 7.0, 1e-6), "1x1 fit {}", m.value_at(&[0, 0]));

    let vectors: [&[f64]; 3] = [&[1.0, 2.0, 0.0, 3.0], &[2.0, 1.0, 5.0], &[1.0, 0.5, 4.0, 2.0, 1.0]];
    for (order, seed) in [(2usize, 2u64), (3, 3)] {
        let dims: Vec<usize> = vectors[..order].iter().map(|v| v.len()).collect();
        let mut coords = Vec::new();
        let mut values = Vec::new();
        let mut idx = vec![0; order];
        loop {
            let v: f64 = 3.0 * idx.iter().zip(&vectors).map(|(&i, v)| v[i]).product::<f64>();
            if v > 0.0 {
                coords.push(idx.clone());
                values.push(v);
            }
            let mut m = 0;
            while m < order {
                idx[m] += 1;
                if idx[m] < dims[m] {
                    break;
                }
                idx[m] = 0;
                m += 1;
            }
            if m == order {
                break;
            }
        }
        let t = SparseTensor::new(dims, coords.clone(), values.clone()).map_err(|e| e.to_string())?;
        let (m, trace) = cp_apr_mu(&t, &opts(seed)).map_err(|e| e.to_string())?;
        ensure!(trace.converged, "order {order}: did not converge");
        for (c, v) in coords.iter().zip(&values) {
            let got = m.value_at(c);
            ensure!(rel_close(got, *v, 1e-6), "order {order} at {c:?}: {got} vs {v}");
        }
    }
    Ok("1x1, 2-way and 3-way separable tensors".into())
}

fn mttkrp_oracle() -> Outcome {
    let mut worst: f64 = 0.0;
    let policies = [
        PolicyParams::new(2, 1, 3).unwrap(),
        PolicyParams::new(3, 2, 7).unwrap(),
        PolicyParams::new(8, 4, 1).unwrap(),
    ];
    for seed in 0..200u64 {
        let inst = random_instance(seed + 1000, &[3, 4]);
        let t = &inst.tensor;
        let f = inst.model.factors();
        let perms = t.permutations();
        for mode in 0..t.order() {
            let want = dense_mttkrp(t, f, mode);
            let mut outputs = Vec::new();
            for policy in policies {
                for strategy in [PhiStrategy::AtomicPerNonzero, PhiStrategy::ChunkedSorted { chunk_size: policy.vector_size }] {
                    let cfg = KernelConfig { strategy, policy, worker_budget: 4, perturbation: PerturbationMode::None };
                    outputs.push(mttkrp_with(t, f, mode, Some(&perms[mode]), &cfg).map_err(|e| e.to_string())?);
                }
            }
            for got in &outputs {
                let d = max_rel_diff(got, &want);
                ensure!(d <= 1e-10, "seed {seed} mode {mode}: rel diff {d:e}");
                ensure!(max_rel_diff(got, &outputs[0]) <= 1e-10, "seed {seed}: policy dependence");
                worst = worst.max(d);
            }
        }
    }
    Ok(format!("200 instances, worst rel diff {worst:.1e}"))
}

fn stream_table() -> Outcome {
    let expect = [
        (StreamKernel::Copy, 16, 0, "0"),
        (StreamKernel::Scale, 16, 1, "0.0625"),
        (StreamKernel::Add, 24, 1, "0.042"),
        (StreamKernel::Triad, 24, 2, "0.083"),
    ];
    for (k, bytes, flops, label) in expect {
        ensure!(k.bytes_per_iter() == bytes && k.flops_per_iter() == flops, "{k} bytes/ops");
        ensure!(k.intensity() == Ratio::new(flops, bytes), "{k} intensity");
        ensure!(k.intensity_label() == label, "{k} label");
    }
    let results = run_stream(10_000_000, 3, &StreamKernel::ALL).map_err(|e| e.to_string())?;
    ensure!(results.len() == 4, "expected four results");
    for r in &results {
        ensure!(r.validated, "{} failed validation", r.kernel);
    }
    let triad = results.iter().find(|r| r.kernel == "triad").unwrap();
    Ok(format!("10^7 elements validated, triad {:.2} GB/s", triad.best_gbs))
}

fn policy_constraint() -> Outcome {
    let pow2: Vec<usize> = (0..=11).map(|k| 1 << k).collect();
    let all = enumerate_policies(&PolicySpace::new(pow2.clone(), pow2.clone(), pow2)).map_err(|e| e.to_string())?;
    ensure!(all.iter().all(|p| p.team_size * p.vector_size <= 1024), "oversized policy emitted");
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for case in 0..50 {
        let nnz = rng.random_range(0..20_000);
        let policy = all[rng.random_range(0..all.len())];
        let strategy = if case % 2 == 0 {
            PhiStrategy::AtomicPerNonzero
        } else {
            PhiStrategy::ChunkedSorted { chunk_size: policy.vector_size }
        };
        let budget = rng.random_range(1..=64);
        let s = map_policy_to_kernel(policy, strategy, budget, nnz).map_err(|e| e.to_string())?;
        let mut hits = vec![0u8; nnz];
        for w in 0..s.workers {
            for chunk in s.worker_chunks(w) {
                for j in chunk {
                    hits[j] += 1;
                }
            }
        }
        ensure!(hits.iter().all(|&h| h == 1), "case {case}: {policy} nnz {nnz} not covered exactly once");
    }
    Ok(format!("{} policies bounded, 50 schedules exact", all.len()))
}

fn ppa_sanity() -> Outcome {
    let t = random_tensor(&[300, 200, 100], 40_000, 5, 9).map_err(|e| e.to_string())?;
    let prepared = PreparedPhi::new(&t, 10, 1, 1e-10).map_err(|e| e.to_string())?;
    let cfg = |p| KernelConfig {
        strategy: PhiStrategy::ChunkedSorted { chunk_size: 128 },
        policy: PolicyParams::SEQUENTIAL,
        worker_budget: 1,
        perturbation: p,
    };
    let none = cfg(PerturbationMode::None);
    prepared.sweep_time(&none).map_err(|e| e.to_string())?;
    let mut ratios = Vec::new();
    for _ in 0..5 {
        let (mut a, mut b) = (Duration::ZERO, Duration::ZERO);
        for k in 0..8 {
            let first = prepared.sweep_time(&none).map_err(|e| e.to_string())?;
            let second = prepared.sweep_time(&none).map_err(|e| e.to_string())?;
            // alternate which side runs first so ordering effects cancel
            if k % 2 == 0 {
                a += first;
                b += second;
            } else {
                a += second;
                b += first;
            }
        }
        ratios.push(a.as_secs_f64() / b.as_secs_f64());
    }
    for r in &ratios {
        ensure!((0.8..=1.2).contains(r), "None/None ratio {r:.3} outside 20%: {ratios:?}");
    }
    let mut sorted = ratios.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[2];
    ensure!((0.95..=1.05).contains(&median), "median None/None ratio {median:.3}");

    for strategy in [PhiStrategy::AtomicPerNonzero, PhiStrategy::ChunkedSorted { chunk_size: 16 }] {
        for mode in 0..3 {
            let base = KernelConfig { strategy, ..none };
            let a = prepared.run(mode, &base).map_err(|e| e.to_string())?;
            let b = prepared
                .run(mode, &KernelConfig { perturbation: PerturbationMode::NoAtomics, ..base })
                .map_err(|e| e.to_string())?;
            ensure!(a.phi == b.phi, "NoAtomics differs from None on one worker");
        }
    }
    let g = geometric_mean(&[2.0, 8.0]).map_err(|e| e.to_string())?;
    ensure!(g == 4.0, "geomean {g}");
    Ok(format!("median None/None {median:.3}"))
}

fn kernel_breakdown() -> Outcome {
    let small = random_tensor(&[10, 8, 6], 100, 4, 1).map_err(|e| e.to_string())?;
    let opts = SolverOptions { rank: 3, max_outer: 2, kkt_tol: 1e-300, ..SolverOptions::default() };
    let (_, trace) = cp_apr_mu(&small, &opts).map_err(|e| e.to_string())?;
    let shares = report_kernel_breakdown(&trace).map_err(|e| e.to_string())?;
    let total: f64 = shares.iter().map(|s| s.percent).sum();
    ensure!(shares.len() == 4 && (total - 100.0).abs() <= 0.01, "small run shares sum to {total}");

    let t = random_tensor(&[1000, 800, 600], 100_000, 5, 10).map_err(|e| e.to_string())?;
    let opts = SolverOptions { rank: 16, max_outer: 2, kkt_tol: 1e-300, ..SolverOptions::default() };
    let model = cpapr_core::init_model(t.dims(), 16, 3).map_err(|e| e.to_string())?;
    let (_, trace) = cp_apr_mu_from(&t, model, &opts).map_err(|e| e.to_string())?;
    let shares = report_kernel_breakdown(&trace).map_err(|e| e.to_string())?;
    let total: f64 = shares.iter().map(|s| s.percent).sum();
    ensure!(shares.len() == 4 && (total - 100.0).abs() <= 0.01, "shares sum to {total}");
    let top = shares.iter().max_by(|a, b| a.percent.total_cmp(&b.percent)).unwrap();
    ensure!(top.kernel == "phi", "largest share is {} ({:.1}%)", top.kernel, top.percent);
    Ok(format!("phi share {:.1}%", top.percent))
}

fn main() {
    let criteria: [(u32, &str, u64, fn() -> Outcome); 10] = [
        (1, "roofline constants", 1, roofline_constants),
        (2, "cost-model formulas", 1, cost_model_formulas),
        (3, "phi oracle equivalence", 60, phi_oracle),
        (4, "MU monotonicity and nonnegativity", 120, mu_monotone),
        (5, "rank-1 exact fit", 10, rank_one_fit),
        (6, "MTTKRP oracle equivalence", 60, mttkrp_oracle),
        (7, "STREAM validation and table fidelity", 30, stream_table),
        (8, "policy constraint and coverage", 10, policy_constraint),
        (9, "PPA harness sanity", 60, ppa_sanity),
        (10, "kernel-time breakdown", 120, kernel_breakdown),
    ];
    let filter: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (id, name, limit, run) in criteria {
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        let outcome = match outcome {
            Ok(_) if secs > limit as f64 => Err(format!("took {secs:.2} s, limit {limit} s")),
            other => other,
        };
        match outcome {
            Ok(detail) => println!("criterion {id:>2} PASS  {name} ({secs:.2} s): {detail}"),
            Err(why) => {
                failed += 1;
                println!("criterion {id:>2} FAIL  {name} ({secs:.2} s): {why}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
