//! Acceptance suite. Run with `--nocapture` to see one line per criterion.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::*;
use nulledit::attention_sim::{cross_attention_forward, recoupling_probe, softmax_rows, AttentionInstance, TokenRole};
use nulledit::bundle::{encode_payload, read_bundle, write_bundle, MatrixManifest};
use nulledit::debias::{bias_delta, two_sided_edit};
use nulledit::edit_solvers::{
    absorb_edit, ace_deltas, ace_edit, sequential_edit, uce_edit, AceProjectors, EditMode,
    EditRequest, KnowledgeLedger,
};
use nulledit::harness::{conflict_concepts, run_sequential_scenario, run_timing_benchmark, ScenarioConfig, ACE, UCE_UNCACHED};
use nulledit::linalg::{
    gram_projector, hstack, null_space_projector, projector_from_gram, EmbeddingSet, WeightKind,
    WeightMatrix, DEFAULT_TOL,
};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn set(m: M) -> EmbeddingSet {
    EmbeddingSet::new(m, "t").unwrap()
}

fn weight(m: M, kind: WeightKind) -> WeightMatrix {
    WeightMatrix::new(m, kind).unwrap()
}

fn request(mode: EditMode, t1: &M, s: &M, t0: &M, ridge: f64) -> EditRequest {
    EditRequest::new(mode, set(t1.clone()), set(s.clone()), set(t0.clone()))
        .unwrap()
        .with_ridge(ridge)
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Random preserve set with optional rank deficiency and duplicated columns.
fn preserve_set(r: &mut ChaCha8Rng, d: usize, n: usize) -> M {
    match r.random_range(0..3) {
        0 => gaussian(r, d, n),
        1 => {
            let rank = r.random_range(0..=d.min(n));
            low_rank(r, d, n, rank)
        }
        _ => {
            let extra = r.random_range(1..=n.max(1));
            let rank = r.random_range(0..=d.min(n));
            let base = low_rank(r, d, n, rank);
            with_duplicates(r, &base, extra)
        }
    }
}

// ── Criteria ────────────────────────────────────────────────────────

fn projector_laws() -> Outcome {
    let mut r = rng(1001);
    let mut worst = [0.0f64; 3];
    for i in 0..500 {
        let d = r.random_range(1..=64);
        let n = r.random_range(0..=512);
        let t0 = preserve_set(&mut r, d, n);
        let p = null_space_projector(&set(t0.clone()), DEFAULT_TOL, None).map_err(|e| format!("instance {i}: {e}"))?;
        let c = p.check(&t0);
        worst = [worst[0].max(c.symmetry), worst[1].max(c.idempotence), worst[2].max(c.annihilation)];
        ensure(c.symmetry <= 1e-10 && c.idempotence <= 1e-8 && c.annihilation <= 1e-8, || {
            format!("instance {i} ({d}x{n}): {c:?}")
        })?;
    }
    Ok(format!("worst symmetry {:.1e}, idempotence {:.1e}, annihilation {:.1e}", worst[0], worst[1], worst[2]))
}

fn gram_equals_direct() -> Outcome {
    let mut r = rng(1002);
    let mut worst = 0.0f64;
    for i in 0..200 {
        let d = r.random_range(1..=64);
        let n = r.random_range(1..=256);
        let t0 = preserve_set(&mut r, d, n);
        let direct = null_space_projector(&set(t0.clone()), DEFAULT_TOL, None).map_err(|e| e.to_string())?;
        let via_gram = gram_projector(&set(t0), DEFAULT_TOL).map_err(|e| e.to_string())?;
        let gap = (direct.data() - via_gram.data()).norm();
        worst = worst.max(gap);
        ensure(gap <= 1e-6, || format!("instance {i} ({d}x{n}): gap {gap:e}"))?;
    }
    Ok(format!("worst Frobenius gap {worst:.1e}"))
}

fn exact_preservation() -> Outcome {
    let mut r = rng(1003);
    let mut worst = 0.0f64;
    for i in 0..200 {
        let d = r.random_range(4..=24);
        let n0 = r.random_range(1..d);
        let n1 = r.random_range(1..=4);
        let (wk, wv) = (gaussian(&mut r, d, d), gaussian(&mut r, d, d));
        let (t1, s, t0) = (gaussian(&mut r, d, n1), gaussian(&mut r, d, n1), gaussian(&mut r, d, n0));
        let ridge = if i % 4 == 0 { 0.0 } else { 1.0 };
        let k = weight(wk.clone(), WeightKind::Key);
        let v = weight(wv.clone(), WeightKind::Value);
        let ace = ace_edit(&k, &v, &request(EditMode::Ace, &t1, &s, &t0, ridge)).map_err(|e| format!("ace {i}: {e}"))?;
        let kp = gaussian(&mut r, d, 2);
        let ledger = absorb_edit(&KnowledgeLedger::new(d, d), &set(kp), &set(gaussian(&mut r, d, 2))).unwrap();
        let seq = sequential_edit(&k, &request(EditMode::Sequential, &t1, &s, &t0, 1.0), &ledger)
            .map_err(|e| format!("sequential {i}: {e}"))?;

        let n_vp = r.random_range(1..d);
        let vp = gaussian(&mut r, d, n_vp);
        let p_out = projector_from_gram(&set(vp).gram(), DEFAULT_TOL, None).unwrap();
        let p_in = projector_from_gram(&set(t0.clone()).gram(), DEFAULT_TOL, None).unwrap();
        let two = two_sided_edit(&v, &set(t1.clone()), &(&wv * &s), &p_out, &p_in, &ledger, 1.0)
            .map_err(|e| format!("two-sided {i}: {e}"))?;
        let two_drift = (&two * &t0).norm() / (&wv * &t0).norm();

        for (name, drift) in [("ace", ace.preservation_drift), ("sequential", seq.preservation_drift), ("two-sided", two_drift)] {
            worst = worst.max(drift);
            ensure(drift <= 1e-10, || format!("{name} instance {i}: drift {drift:e}"))?;
        }
    }

    let mut uce_least = f64::INFINITY;
    for seed in 0..20u64 {
        let mut r = rng(1100 + seed);
        let d = 16;
        let t0 = gaussian(&mut r, d, 4);
        let t1 = conflict_concepts(seed, &set(t0.clone()), 2, 30.0).unwrap().into_data();
        let s = gaussian(&mut r, d, 2);
        let k = weight(gaussian(&mut r, d, d), WeightKind::Key);
        let uce = uce_edit(&k, &request(EditMode::UceBaseline, &t1, &s, &t0, 1.0)).map_err(|e| e.to_string())?;
        uce_least = uce_least.min(uce.preservation_drift);
    }
    ensure(uce_least > 1e-3, || format!("uce drift only {uce_least:e} on a conflict instance"))?;
    Ok(format!("constrained worst drift {worst:.1e}; uce least drift {uce_least:.2e}"))
}

fn oracle_optimality() -> Outcome {
    let mut r = rng(1004);
    let mut worst = [0.0f64; 4];
    for trial in 0..6 {
        let d = 6 + 2 * trial;
        let (n0, n1) = (2 + trial % 3, 1 + trial % 3);
        let (wk, wv) = (gaussian(&mut r, d, d), gaussian(&mut r, d, d));
        let (t1, s, t0) = (gaussian(&mut r, d, n1), gaussian(&mut r, d, n1), gaussian(&mut r, d, n0));
        let ridge = if trial % 2 == 0 { 0.0 } else { 0.5 };
        let (k, v) = (weight(wk.clone(), WeightKind::Key), weight(wv.clone(), WeightKind::Value));

        // UCE against the normal equations.
        let uce = uce_edit(&k, &request(EditMode::UceBaseline, &t1, &s, &t0, ridge)).map_err(|e| e.to_string())?;
        let normal = &t1 * t1.transpose() + &t0 * t0.transpose() + ridge * M::identity(d, d);
        let oracle = (&wk * &s - &wk * &t1) * t1.transpose() * psd_pinv(&normal, 1e-12);
        let gap = (uce.delta_k.as_ref().unwrap() - oracle).amax();
        worst[0] = worst[0].max(gap);
        ensure(gap <= 1e-8, || format!("uce trial {trial}: entrywise {gap:e}"))?;

        // ACE against projected gradient on both weights.
        let ridge = 1.0;
        let p = AceProjectors::build(&k, &v, &set(t0.clone()), DEFAULT_TOL, None).map_err(|e| e.to_string())?;
        let raw = ace_deltas(&k, &v, &set(t1.clone()), &set(s.clone()), &p, ridge).map_err(|e| e.to_string())?;
        let ours = edit_objective(&wk, &raw.delta_k, &t1, &raw.target_k, None, ridge)
            + edit_objective(&wv, &raw.delta_v, &t1, &raw.target_v, None, ridge);
        let p_in = gs_null_projector(&t0, 1e-9);
        let target_k = gs_null_projector(&(&wv * &t0), 1e-9) * (&wk * &s);
        let target_v = gs_null_projector(&(&wk * &t0), 1e-9) * (&wv * &s);
        let dk = projected_gradient(&wk, &t1, &target_k, None, ridge, None, Some(&p_in), 20_000);
        let dv = projected_gradient(&wv, &t1, &target_v, None, ridge, None, Some(&p_in), 20_000);
        let theirs = edit_objective(&wk, &dk, &t1, &target_k, None, ridge) + edit_objective(&wv, &dv, &t1, &target_v, None, ridge);
        let gap = rel_gap(ours, theirs, 1e-12);
        worst[1] = worst[1].max(gap);
        ensure(gap <= 1e-5, || format!("ace trial {trial}: {ours} vs {theirs}"))?;

        // Sequential against gradient descent with a ledger.
        let kp = gaussian(&mut r, d, 3);
        let ledger = absorb_edit(&KnowledgeLedger::new(d, d), &set(kp.clone()), &set(gaussian(&mut r, d, 3))).unwrap();
        let seq = sequential_edit(&k, &request(EditMode::Sequential, &t1, &s, &t0, ridge), &ledger).map_err(|e| e.to_string())?;
        let v1 = &wk * &s;
        let delta = seq.delta_k.unwrap();
        let oracle = projected_gradient(&wk, &t1, &v1, Some(&kp), ridge, None, Some(&p_in), 20_000);
        let ours = edit_objective(&wk, &delta, &t1, &v1, Some(&kp), ridge);
        let theirs = edit_objective(&wk, &oracle, &t1, &v1, Some(&kp), ridge);
        let gap = rel_gap(ours, theirs, 1e-12);
        worst[2] = worst[2].max(gap);
        ensure(gap <= 1e-5, || format!("sequential trial {trial}: {ours} vs {theirs}"))?;

        // Two-sided against projected gradient on both sides.
        let vp = gaussian(&mut r, d, 3);
        let p_out = projector_from_gram(&set(vp.clone()).gram(), DEFAULT_TOL, None).unwrap();
        let p_in_ours = projector_from_gram(&set(t0.clone()).gram(), DEFAULT_TOL, None).unwrap();
        let ledger = absorb_edit(&KnowledgeLedger::new(d, d), &set(kp.clone()), &set(vp.clone())).unwrap();
        let v1 = gaussian(&mut r, d, n1);
        let two = two_sided_edit(&v, &set(t1.clone()), &v1, &p_out, &p_in_ours, &ledger, ridge).map_err(|e| e.to_string())?;
        let p1 = gs_null_projector(&vp, 1e-9);
        let oracle = projected_gradient(&wv, &t1, &v1, Some(&kp), ridge, Some(&p1), Some(&p_in), 20_000);
        let ours = edit_objective(&wv, &two, &t1, &v1, Some(&kp), ridge);
        let theirs = edit_objective(&wv, &oracle, &t1, &v1, Some(&kp), ridge);
        let gap = rel_gap(ours, theirs, 1e-12);
        worst[3] = worst[3].max(gap);
        ensure(gap <= 1e-5, || format!("two-sided trial {trial}: {ours} vs {theirs}"))?;
    }
    Ok(format!(
        "uce entrywise {:.1e}; relative objective gaps ace {:.1e}, sequential {:.1e}, two-sided {:.1e}",
        worst[0], worst[1], worst[2], worst[3]
    ))
}

fn output_constraint() -> Outcome {
    let mut r = rng(1005);
    let mut worst = 0.0f64;
    for i in 0..100 {
        let d = r.random_range(4..=24);
        let w = weight(gaussian(&mut r, d, d), WeightKind::Value);
        let n_vp = r.random_range(1..d);
        let vp = gaussian(&mut r, d, n_vp);
        let kp = gaussian(&mut r, d, vp.ncols());
        let n_retain = r.random_range(0..d);
        let retain = gaussian(&mut r, d, n_retain);
        let n1 = r.random_range(1..=4);
        let (k1, v1) = (gaussian(&mut r, d, n1), gaussian(&mut r, d, n1));
        let p_out = projector_from_gram(&set(vp.clone()).gram(), DEFAULT_TOL, None).unwrap();
        let p_in = projector_from_gram(&set(retain).gram(), DEFAULT_TOL, None).unwrap();
        let ledger = absorb_edit(&KnowledgeLedger::new(d, d), &set(kp), &set(vp.clone())).unwrap();
        let delta = two_sided_edit(&w, &set(k1), &v1, &p_out, &p_in, &ledger, 1.0).map_err(|e| format!("instance {i}: {e}"))?;
        let ratio = (delta.transpose() * &vp).norm() / (1.0 + vp.norm());
        worst = worst.max(ratio);
        ensure(ratio <= 1e-8, || format!("instance {i}: {ratio:e}"))?;
    }
    Ok(format!("worst ‖ΔᵀV_p‖/(1+‖V_p‖) {worst:.1e}"))
}

fn bias_metric() -> Outcome {
    let doctor = bias_delta(0.5, 0.11).map_err(|e| e.to_string())?;
    ensure((doctor - 0.78).abs() <= 0.005, || format!("bias_delta(0.5, 0.11) = {doctor}"))?;
    let mut r = rng(1006);
    for _ in 0..1000 {
        let p: f64 = r.random_range(1e-6..=1.0);
        ensure(bias_delta(p, p).ok() == Some(0.0), || format!("bias_delta({p}, {p}) nonzero"))?;
    }
    Ok(format!("bias_delta(0.5, 0.11) = {doctor:.4}"))
}

fn sequential_robustness() -> Outcome {
    let cfg = ScenarioConfig {
        d_in: 64,
        d_out: 64,
        n_edits: 100,
        strategies: vec![EditMode::Ace, EditMode::UceBaseline],
        conflict_angle_deg: Some(30.0),
        seed: 7,
        ..Default::default()
    };
    let report = run_sequential_scenario(&cfg).map_err(|e| e.to_string())?;
    let ace: Vec<_> = report.rows_for(EditMode::Ace).collect();
    let uce: Vec<_> = report.rows_for(EditMode::UceBaseline).collect();
    ensure(ace.len() == 100 && uce.len() == 100, || "missing rows".into())?;
    let ace_max = ace.iter().map(|r| r.cumulative_drift).fold(0.0, f64::max);
    for row in &ace {
        ensure(row.error.is_none() && row.cumulative_drift <= 1e-8, || format!("ace {row:?}"))?;
    }
    for pair in uce.windows(2) {
        ensure(pair[1].cumulative_drift > pair[0].cumulative_drift, || {
            format!("uce drift not increasing at edit {}", pair[1].edit_index)
        })?;
    }
    Ok(format!(
        "ace max cumulative drift {ace_max:.1e}; uce cumulative drift {:.2e} → {:.2e}",
        uce[0].cumulative_drift,
        uce[99].cumulative_drift
    ))
}

fn runtime_trend() -> Outcome {
    let sizes = [1_000, 10_000, 50_000];
    let report = run_timing_benchmark(&sizes, 320, 3).map_err(|e| e.to_string())?;
    let ace: Vec<f64> = sizes.iter().map(|&n| report.row(n, ACE).unwrap().per_edit_time_s).collect();
    let spread = ace.iter().copied().fold(0.0, f64::max) / ace.iter().copied().fold(f64::INFINITY, f64::min);
    let uce_growth = report.row(50_000, UCE_UNCACHED).unwrap().per_edit_time_s / report.row(1_000, UCE_UNCACHED).unwrap().per_edit_time_s;
    let reference = report.reference_ratio("SD v1.4").unwrap_or(f64::NAN);
    let detail = format!("ace per-edit max/min {spread:.2}; uce uncached 50k/1k {uce_growth:.1}; reference ratio {reference:.1} (not asserted)");
    ensure(spread <= 2.0 && uce_growth >= 10.0, || detail.clone())?;
    Ok(detail)
}

fn attention_probe() -> Outcome {
    let mut r = rng(1009);
    let mut worst_shift = 0.0f64;
    for i in 0..50 {
        let d = r.random_range(6..=16);
        let n_t0 = r.random_range(1..d / 2);
        let t0 = gaussian(&mut r, d, n_t0);
        let t1 = conflict_concepts(i, &set(t0.clone()), 2, 30.0).unwrap().into_data();
        let s = gaussian(&mut r, d, 2);
        let scale = 1.0 / (d as f64).sqrt();
        let inst = AttentionInstance {
            queries: gaussian(&mut r, 4, d),
            w_k: weight(gaussian(&mut r, d, d).scale(scale), WeightKind::Key),
            w_v: weight(gaussian(&mut r, d, d).scale(scale), WeightKind::Value),
            tokens: set(hstack(&t0, &t1).unwrap()),
            token_roles: [vec![TokenRole::Preserve; t0.ncols()], vec![TokenRole::Erase; 2]].concat(),
        };
        let edit = ace_edit(&inst.w_k, &inst.w_v, &request(EditMode::Ace, &t1, &s, &t0, 1.0)).map_err(|e| e.to_string())?;
        let shift = recoupling_probe(&inst, &edit).map_err(|e| e.to_string())?.preserve_shift;
        worst_shift = worst_shift.max(shift);
        ensure(shift <= 1e-8, || format!("instance {i}: preserve shift {shift:e}"))?;
    }

    let mut worst_sum = 0.0f64;
    for _ in 0..200 {
        let (m, n) = (r.random_range(1..8), r.random_range(1..16));
        let scale: f64 = r.random_range(0.1..50.0);
        let w = softmax_rows(&gaussian(&mut r, m, n).scale(scale));
        for i in 0..m {
            worst_sum = worst_sum.max((w.row(i).sum() - 1.0).abs());
        }
    }
    ensure(worst_sum <= 1e-12, || format!("softmax row sum off by {worst_sum:e}"))?;

    for i in 0..100 {
        let (d_in, d_out) = (r.random_range(1..10), r.random_range(1..10));
        let (m, n) = (r.random_range(1..6), r.random_range(1..8));
        let inst = AttentionInstance {
            queries: gaussian(&mut r, m, d_out),
            w_k: weight(gaussian(&mut r, d_out, d_in), WeightKind::Key),
            w_v: weight(gaussian(&mut r, d_out, d_in), WeightKind::Value),
            tokens: set(gaussian(&mut r, d_in, n)),
            token_roles: vec![TokenRole::Preserve; n],
        };
        let ours = cross_attention_forward(&inst).map_err(|e| e.to_string())?;
        ensure(ours == reference_forward(&inst), || format!("instance {i} differs from reference"))?;
    }
    Ok(format!("worst preserve shift {worst_shift:.1e}; worst softmax row error {worst_sum:.1e}; 100/100 exact"))
}

/// Textbook forward pass with scalar loops.
fn reference_forward(inst: &AttentionInstance) -> M {
    let (wk, wv, x, q) = (inst.w_k.data(), inst.w_v.data(), inst.tokens.data(), &inst.queries);
    let (d_out, d_in, n) = (wk.nrows(), wk.ncols(), x.ncols());
    let project = |w: &M| {
        M::from_fn(d_out, n, |r, j| {
            let mut s = 0.0;
            for l in 0..d_in {
                s += w[(r, l)] * x[(l, j)];
            }
            s
        })
    };
    let (keys, values) = (project(wk), project(wv));
    let root = (d_out as f64).sqrt();
    let mut out = M::zeros(q.nrows(), d_out);
    for i in 0..q.nrows() {
        let scores: Vec<f64> = (0..n)
            .map(|j| {
                let mut s = 0.0;
                for r in 0..d_out {
                    s += q[(i, r)] * keys[(r, j)];
                }
                s / root
            })
            .collect();
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
        let mut total = 0.0;
        for e in &exps {
            total += e;
        }
        for c in 0..d_out {
            let mut s = 0.0;
            for j in 0..n {
                s += exps[j] / total * values[(c, j)];
            }
            out[(i, c)] = s;
        }
    }
    out
}

fn persistence() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let golden = dir.path().join("golden");
    let one = M::from_element(1, 1, 1.0);
    write_bundle(&golden, &one, &MatrixManifest::for_matrix("one", "x", &one)).map_err(|e| e.to_string())?;
    let bytes = std::fs::read(dir.path().join("golden.bin")).map_err(|e| e.to_string())?;
    ensure(bytes == [0, 0, 0, 0, 0, 0, 0xF0, 0x3F], || format!("golden payload {bytes:02X?}"))?;

    let mut r = rng(1010);
    for i in 0..1000 {
        let (rows, cols) = (r.random_range(0..12), r.random_range(0..12));
        let m = M::from_fn(rows, cols, |_, _| loop {
            let v = f64::from_bits(r.random::<u64>());
            if v.is_finite() {
                break v;
            }
        });
        let stem = dir.path().join(format!("m{i}"));
        let manifest = MatrixManifest::for_matrix(format!("m{i}"), "delta", &m);
        write_bundle(&stem, &m, &manifest).map_err(|e| e.to_string())?;
        let (back_manifest, back) = read_bundle(&stem).map_err(|e| e.to_string())?;
        ensure(back_manifest == manifest && encode_payload(&back) == encode_payload(&m), || {
            format!("round trip {i} ({rows}x{cols}) not byte-identical")
        })?;
    }
    Ok("1000/1000 byte-identical; golden bytes match".into())
}

// ── Runner ──────────────────────────────────────────────────────────

type Criterion = (u32, &'static str, Option<Duration>, fn() -> Outcome);

#[test]
fn acceptance() {
    let minutes = |m: u64| Some(Duration::from_secs(60 * m));
    let criteria: [Criterion; 10] = [
        (1, "projector laws", Some(Duration::from_secs(30)), projector_laws),
        (2, "gram projector equals direct", Some(Duration::from_secs(30)), gram_equals_direct),
        (3, "exact preservation", None, exact_preservation),
        (4, "oracle optimality", minutes(5), oracle_optimality),
        (5, "debias output constraint", None, output_constraint),
        (6, "bias metric", None, bias_metric),
        (7, "sequential robustness", minutes(2), sequential_robustness),
        (8, "runtime trend", minutes(10), runtime_trend),
        (9, "attention probe", None, attention_probe),
        (10, "persistence", None, persistence),
    ];
    let mut failed = Vec::new();
    for (id, name, limit, run) in criteria {
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let elapsed = started.elapsed();
        let outcome = match (outcome, limit) {
            (Ok(_), Some(l)) if elapsed > l => Err(format!("took {elapsed:.1?}, limit {l:?}")),
            (o, _) => o,
        };
        match &outcome {
            Ok(detail) => println!("criterion {id:>2} {name:<30} PASS ({elapsed:.1?}): {detail}"),
            Err(detail) => {
                println!("criterion {id:>2} {name:<30} FAIL ({elapsed:.1?}): {detail}");
                failed.push(id);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
