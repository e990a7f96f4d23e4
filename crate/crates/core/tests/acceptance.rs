//! Acceptance suite. Prints one PASS/FAIL line per criterion and fails the
//! process if any criterion fails.

mod common;

use std::collections::BTreeMap;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use asr_router::datamodel::{SegmentRecord, SystemProfile, SystemSet};
use asr_router::ensemble::{select, OracleQe, RescoreMode, RouterModel, TrainingInfo};
use asr_router::features::{FeatureFamily, FeatureSchema, GroupToggles};
use asr_router::gbm::{train_binary, train_binary_traced, Hyperparams, Matrix};
use asr_router::hpo::{search, write_trial_log, Budget, CvConfig, SearchSpace};
use asr_router::labeling::{make_pair_labels, sample_weights, weight_factors, Weighting};
use asr_router::metrics::{segment_errors, weighted_f1, wer};
use asr_router::pipeline::{
    ablation_table, evaluation_table, rescore_all, route_records, standard_combos, Overhead, Policy,
    LABEL_AUTOMODE, LABEL_ORACLE, LABEL_PIVOT_ONLY, LABEL_RESCORING, LABEL_WEIGHTS,
};
use asr_router::synth::{synthesize_dataset, RuleTerm, SynthConfig, SynthSystem};
use asr_router::training::{add_system, train_router};
use common::{restrict, split_at};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

// ---------------------------------------------------------------- 1

/// Textbook Levenshtein over the full (m+1) x (n+1) table.
fn dp_distance(a: &[String], b: &[String]) -> usize {
    let mut t = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in t.iter_mut().enumerate() {
        row[0] = i;
    }
    for (j, cell) in t[0].iter_mut().enumerate() {
        *cell = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let sub = t[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
            t[i][j] = sub.min(t[i - 1][j] + 1).min(t[i][j - 1] + 1);
        }
    }
    t[a.len()][b.len()]
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let alphabet = ["a", "b", "c", "d"];
    let mut draw = |min: usize| -> Vec<String> {
        let len = rng.gen_range(min..=10);
        (0..len).map(|_| alphabet[rng.gen_range(0..4)].to_string()).collect()
    };
    let mut mismatches = 0;
    for _ in 0..1000 {
        let r = draw(1);
        let h = draw(0);
        let expected = dp_distance(&r, &h) as f64 / r.len() as f64;
        if wer(&r, &h).map_err(err)? != expected {
            mismatches += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(mismatches == 0, || format!("{mismatches} mismatches"))?;
    ensure(secs < 5.0, || format!("took {secs:.2}s"))?;
    Ok(format!("1000 pairs, 0 mismatches, {secs:.3}s"))
}

// ---------------------------------------------------------------- 2

fn xor(n: usize, seed: u64) -> (Matrix, Vec<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let a: f64 = rng.gen_range(-1.0..1.0);
        let b: f64 = rng.gen_range(-1.0..1.0);
        y.push((a > 0.0) != (b > 0.0));
        rows.push(vec![a, b]);
    }
    (Matrix::from_rows(&rows).unwrap(), y)
}

fn accuracy(x: &Matrix, y: &[bool], hp: &Hyperparams) -> Result<f64, String> {
    let b = train_binary(x, y, &vec![1.0; y.len()], hp, 0).map_err(err)?;
    let p = b.predict_batch(x).map_err(err)?;
    let hits = p.iter().zip(y).filter(|(p, y)| (**p > 0.5) == **y).count();
    Ok(hits as f64 / y.len() as f64)
}

/// Serialized models produced by criterion 2, for the determinism check.
fn criterion_2_artifacts() -> Result<(String, Vec<String>), String> {
    let start = Instant::now();
    let (x, y) = xor(2000, 5);
    let hp = |depth| Hyperparams {
        n_rounds: 100,
        max_depth: depth,
        learning_rate: 0.3,
        ..Default::default()
    };
    let deep = accuracy(&x, &y, &hp(2))?;
    let deeper = accuracy(&x, &y, &hp(4))?;
    let stump = accuracy(&x, &y, &hp(1))?;
    ensure(deep >= 0.95 && deeper >= 0.95, || {
        format!("xor accuracy depth 2 = {deep}, depth 4 = {deeper}")
    })?;
    ensure(stump <= 0.6, || format!("xor accuracy depth 1 = {stump}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let w: Vec<f64> = (0..2000).map(|_| rng.gen_range(0.2..2.0)).collect();
    let (model, trace) = train_binary_traced(&x, &y, &w, &hp(3), 1).map_err(err)?;
    ensure(trace.len() == 101, || format!("trace has {} entries", trace.len()))?;
    if let Some(i) = trace.windows(2).position(|p| p[1] > p[0]) {
        return Err(format!("loss rose at round {}: {} -> {}", i + 1, trace[i], trace[i + 1]));
    }

    let mut w0 = w.clone();
    let mut keep = Vec::new();
    for (i, wi) in w0.iter_mut().enumerate() {
        if i % 7 == 3 {
            *wi = 0.0;
        } else {
            keep.push(i);
        }
    }
    let small = hp(3);
    let with_zeros = train_binary(&x, &y, &w0, &small, 2).map_err(err)?;
    let yk: Vec<bool> = keep.iter().map(|&i| y[i]).collect();
    let wk: Vec<f64> = keep.iter().map(|&i| w0[i]).collect();
    let deleted = train_binary(&x.select_rows(&keep), &yk, &wk, &small, 2).map_err(err)?;
    let a = serde_json::to_string(&with_zeros).map_err(err)?;
    let b = serde_json::to_string(&deleted).map_err(err)?;
    ensure(a == b, || "zero-weight model differs from deleted-row model".into())?;
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 30.0, || format!("took {secs:.1}s"))?;
    Ok((
        format!(
            "xor acc depth1 {stump:.3} depth2 {deep:.3}; loss {:.4} -> {:.4} monotone; zero-weight identical; {secs:.1}s",
            trace[0], trace[100]
        ),
        vec![serde_json::to_string(&model).map_err(err)?, a],
    ))
}

// ---------------------------------------------------------------- 3

fn labeled(wer_c: f64, wer_p: f64, cost_c: f64, cost_p: f64) -> Result<bool, String> {
    let c = SystemProfile::new("c", cost_c, 0.1, false);
    let p = SystemProfile::new("p", cost_p, 0.1, true);
    let rec = two_outcome_record("s", wer_c, wer_p);
    Ok(make_pair_labels(&[rec], &c, &p).map_err(err)?.labels[0])
}

fn two_outcome_record(id: &str, wer_c: f64, wer_p: f64) -> SegmentRecord {
    let ds = synthesize_dataset(&SynthConfig::new(1, two_systems(), 0.0), 0).unwrap();
    let mut r = ds.records[0].clone();
    r.segment_id = id.into();
    let mut outcomes = BTreeMap::new();
    for (sys, w) in [("c", wer_c), ("p", wer_p)] {
        let mut o = r.outcomes.values().next().unwrap().clone();
        o.wer = w;
        outcomes.insert(sys.to_string(), o);
    }
    r.outcomes = outcomes;
    r
}

fn two_systems() -> Vec<SynthSystem> {
    vec![
        SynthSystem {
            profile: SystemProfile::new("p", 0.1, 0.1, true),
            base_wer: 0.2,
            terms: vec![],
        },
        SynthSystem {
            profile: SystemProfile::new("c", 1.0, 0.1, false),
            base_wer: 0.2,
            terms: vec![],
        },
    ]
}

fn criterion_3() -> Outcome {
    // (case, challenger wer, pivot wer, challenger cost, pivot cost, expected label)
    let table = [
        ("challenger wins", 0.10, 0.20, 1.0, 0.1, true),
        ("pivot wins", 0.30, 0.20, 0.1, 1.0, false),
        ("tie, pivot cheaper", 0.20, 0.20, 1.0, 0.1, false),
        ("tie, challenger cheaper", 0.20, 0.20, 0.1, 1.0, true),
        ("tie, equal cost", 0.20, 0.20, 0.5, 0.5, false),
    ];
    for (case, wc, wp, cc, cp, want) in table {
        let got = labeled(wc, wp, cc, cp)?;
        ensure(got == want, || format!("{case}: label {got}, expected {want}"))?;
    }

    let c = SystemProfile::new("c", 1.0, 0.1, false);
    let p = SystemProfile::new("p", 0.1, 0.1, true);
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12;
    let recs = [
        two_outcome_record("a", 0.2, 0.2),
        two_outcome_record("b", 0.1, 0.2),
        two_outcome_record("c", 0.6, 0.2),
    ];
    let l = make_pair_labels(&recs, &c, &p).map_err(err)?;
    let f = weight_factors(&l, 0.01).map_err(err)?;
    let diffs: Vec<f64> = f.iter().map(|x| x.0).collect();
    ensure(
        close(diffs[0], 0.01) && close(diffs[1], 0.25) && close(diffs[2], 1.0),
        || format!("diff factors {diffs:?}"),
    )?;

    let recs: Vec<SegmentRecord> = (0..100)
        .map(|i| {
            let wc = if i < 30 { 0.1 } else { 0.3 };
            two_outcome_record(&format!("r{i}"), wc, 0.2)
        })
        .collect();
    let l = make_pair_labels(&recs, &c, &p).map_err(err)?;
    let f = weight_factors(&l, 0.01).map_err(err)?;
    ensure(close(f[0].1, 100.0 / 60.0) && close(f[99].1, 100.0 / 140.0), || {
        format!("frequency factors {} {}", f[0].1, f[99].1)
    })?;
    let w = sample_weights(&l, Weighting::WerDiffInverseFreq { floor: 0.01 }).map_err(err)?;
    // All |diff| are 0.1, so the range is zero and the first factor is 1.
    ensure(close(w[0], 100.0 / 60.0) && close(w[50], 100.0 / 140.0), || {
        format!("weights {} {}", w[0], w[50])
    })?;
    let pos: f64 = f.iter().zip(&l.labels).filter(|(_, y)| **y).map(|(f, _)| f.1).sum();
    let neg: f64 = f.iter().zip(&l.labels).filter(|(_, y)| !**y).map(|(f, _)| f.1).sum();
    ensure(close(pos, neg), || format!("label mass {pos} vs {neg}"))?;
    Ok("5/5 truth-table cases; weight examples within 1e-12".into())
}

// ---------------------------------------------------------------- 4

fn reference_select(probs: &BTreeMap<String, f64>, systems: &SystemSet, t: f64) -> String {
    let mut fired: Vec<(&String, f64, f64)> = probs
        .iter()
        .filter(|(_, p)| **p > t)
        .map(|(id, p)| (id, *p, systems.get(id).unwrap().cost_rate))
        .collect();
    fired.sort_by(|a, b| {
        b.1.total_cmp(&a.1)
            .then(a.2.total_cmp(&b.2))
            .then(a.0.cmp(b.0))
    });
    fired
        .first()
        .map_or_else(|| systems.pivot().id.clone(), |f| f.0.clone())
}

fn criterion_4() -> Outcome {
    let systems = SystemSet::new(vec![
        SystemProfile::new("P", 0.1, 0.1, true),
        SystemProfile::new("A", 0.5, 0.1, false),
        SystemProfile::new("B", 0.7, 0.1, false),
        SystemProfile::new("C", 0.5, 0.1, false),
    ])
    .map_err(err)?;
    let map = |v: [f64; 3]| -> BTreeMap<String, f64> {
        ["A", "B", "C"].iter().map(|s| s.to_string()).zip(v).collect()
    };
    ensure(select(&map([0.62, 0.55, 0.71]), &systems, 0.5) == "C", || "example 1".into())?;
    ensure(select(&map([0.40, 0.49, 0.50]), &systems, 0.5) == "P", || "example 2".into())?;
    ensure(select(&map([0.70, 0.70, 0.1]), &systems, 0.5) == "A", || "example 3".into())?;

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    // Coarse grid so that exact probability ties occur often.
    let draw = |rng: &mut ChaCha8Rng| f64::from(rng.gen_range(0..=20u32)) / 20.0;
    let maps: Vec<BTreeMap<String, f64>> = (0..2000)
        .map(|_| map([draw(&mut rng), draw(&mut rng), draw(&mut rng)]))
        .collect();
    let mut all_low = 0;
    for m in &maps {
        let got = select(m, &systems, 0.5);
        if m.values().all(|&p| p <= 0.5) {
            all_low += 1;
            ensure(got == "P", || format!("{m:?} chose {got}"))?;
        }
        let want = reference_select(m, &systems, 0.5);
        ensure(got == want, || format!("{m:?}: chose {got}, expected {want}"))?;
    }
    let mut thresholds: Vec<f64> = (0..100).map(|_| rng.gen_range(0.5..1.0)).collect();
    thresholds.sort_by(f64::total_cmp);
    let mut last = 0;
    for t in &thresholds {
        let n = maps.iter().filter(|m| select(m, &systems, *t) == "P").count();
        ensure(n >= last, || format!("pivot count fell to {n} at threshold {t}"))?;
        last = n;
    }
    Ok(format!(
        "3 examples; 2000 random maps ({all_low} all <= 0.5) match reference; 100 thresholds monotone"
    ))
}

// ---------------------------------------------------------------- 5

fn quick_hp() -> Hyperparams {
    Hyperparams {
        n_rounds: 40,
        max_depth: 3,
        learning_rate: 0.2,
        ..Default::default()
    }
}

fn segment_wer(r: &SegmentRecord, id: &str) -> Result<f64, String> {
    let (e, n) = segment_errors(r, id).map_err(err)?;
    Ok(e / n as f64)
}

fn criterion_5() -> Outcome {
    let ds = synthesize_dataset(&SynthConfig::four_system(8000, 0.02), 55).map_err(err)?;
    let (train, test) = split_at(&ds, 3000);
    let schema = FeatureSchema::for_records(&train.schema, &train.records, GroupToggles::default());
    let info = TrainingInfo {
        hyperparams: quick_hp(),
        weighting: Weighting::default(),
        seed: 5,
    };
    let router = train_router(&train, &schema, &info).map_err(err)?;
    let qe = OracleQe::from_dataset(&test);
    let before = route_records(&router, &test.records, 0.5).map_err(err)?;
    let mut violations = 0;
    let mut changed = 0;
    for mode in [RescoreMode::PivotVsSelected, RescoreMode::AllFired] {
        let after = rescore_all(&router, &before, &test, &qe, mode).map_err(err)?;
        for ((b, a), r) in before.iter().zip(&after).zip(&test.records) {
            if segment_wer(r, &a.chosen_id)? > segment_wer(r, &b.chosen_id)? {
                violations += 1;
            }
            changed += usize::from(a.chosen_id != b.chosen_id);
        }
    }
    ensure(violations == 0, || format!("{violations} violations"))?;
    Ok(format!(
        "{} segments x 2 modes, 0 violations ({changed} choices changed)",
        test.len()
    ))
}

// ---------------------------------------------------------------- 6

struct Benchmark {
    summary: String,
    /// (name, bytes) of every model file and report written.
    artifacts: Vec<(String, Vec<u8>)>,
    best: Hyperparams,
}

const MARGIN: f64 = 0.3;

fn run_benchmark(dir: &Path) -> Result<Benchmark, String> {
    let start = Instant::now();
    let ds = synthesize_dataset(&SynthConfig::four_system(23_000, 0.02), 2024).map_err(err)?;
    let (train, test) = split_at(&ds, 20_000);
    let schema = FeatureSchema::for_records(&train.schema, &train.records, GroupToggles::default());
    let cv = CvConfig {
        k: 5,
        weighting: Weighting::default(),
        seed: 6,
        ..Default::default()
    };
    let hpo = search(&train, &SearchSpace::default(), &schema, &cv, Budget::Trials(20)).map_err(err)?;
    let info = |weighting| TrainingInfo {
        hyperparams: hpo.best,
        weighting,
        seed: 6,
    };
    let plain = train_router(&train, &schema, &info(Weighting::Uniform)).map_err(err)?;
    let weighted = train_router(&train, &schema, &info(Weighting::default())).map_err(err)?;
    let d_plain = route_records(&plain, &test.records, 0.5).map_err(err)?;
    let d_weighted = route_records(&weighted, &test.records, 0.5).map_err(err)?;
    let qe = OracleQe::from_dataset(&test);
    let d_rescored =
        rescore_all(&weighted, &d_weighted, &test, &qe, RescoreMode::PivotVsSelected).map_err(err)?;
    let table = evaluation_table(
        &test,
        &[
            Policy::from_decisions(LABEL_AUTOMODE, &d_plain, Overhead::default()),
            Policy::from_decisions(LABEL_WEIGHTS, &d_weighted, Overhead::default()),
            Policy::from_decisions(LABEL_RESCORING, &d_rescored, Overhead::default()),
        ],
    )
    .map_err(err)?;
    let secs = start.elapsed().as_secs_f64();

    plain.save(&dir.join("automode.json")).map_err(err)?;
    weighted.save(&dir.join("weighted.json")).map_err(err)?;
    std::fs::write(dir.join("evaluation.txt"), table.render()).map_err(err)?;
    std::fs::write(dir.join("evaluation.json"), table.to_json()).map_err(err)?;
    let mut log = Vec::new();
    write_trial_log(&hpo, &mut log).map_err(err)?;
    std::fs::write(dir.join("trial_log.jsonl"), &log).map_err(err)?;
    let mut artifacts = Vec::new();
    for name in ["automode.json", "weighted.json", "evaluation.txt", "evaluation.json"] {
        artifacts.push((name.to_string(), std::fs::read(dir.join(name)).map_err(err)?));
    }
    // Trial wall times are measurements; everything else in the log must repeat.
    let mut timeless = hpo.clone();
    for t in &mut timeless.trials {
        t.wall_seconds = 0.0;
    }
    let mut log = Vec::new();
    write_trial_log(&timeless, &mut log).map_err(err)?;
    artifacts.push(("trial_log.jsonl (wall times zeroed)".into(), log));
    print!("{}", table.render());

    let get = |label: &str| table.row(label).ok_or_else(|| format!("missing row {label}"));
    let single = &table.rows[0];
    let pivot = get(LABEL_PIVOT_ONLY)?;
    let auto = get(LABEL_AUTOMODE)?;
    let weights = get(LABEL_WEIGHTS)?;
    let rescored = get(LABEL_RESCORING)?;
    let oracle = get(LABEL_ORACLE)?;
    let floor = single.wer.min(pivot.wer);
    ensure(auto.wer + MARGIN <= floor, || {
        format!("AutoMode {:.2} not {MARGIN} below min(single-best, pivot) {floor:.2}", auto.wer)
    })?;
    ensure(weights.wer <= auto.wer, || {
        format!("+ sample weights {:.2} > AutoMode {:.2}", weights.wer, auto.wer)
    })?;
    ensure(rescored.wer <= weights.wer, || {
        format!("+ QE rescoring {:.2} > + sample weights {:.2}", rescored.wer, weights.wer)
    })?;
    if table.single_best != table.pivot {
        ensure(auto.cost < single.cost, || {
            format!("AutoMode cost {:.1}% not below single-best", auto.cost)
        })?;
    }
    ensure((oracle.f1 - 100.0).abs() < 1e-9, || format!("oracle F1 {}", oracle.f1))?;
    ensure(table.rows.iter().all(|r| oracle.wer <= r.wer), || {
        "oracle WER is not minimal".into()
    })?;
    ensure(secs < 600.0, || format!("run took {secs:.0}s"))?;
    Ok(Benchmark {
        summary: format!(
            "WER single-best({}) {:.2} pivot {:.2} AutoMode {:.2} +weights {:.2} +rescoring {:.2} oracle {:.2}; AutoMode cost {:.1}%; {secs:.0}s",
            table.single_best, single.wer, pivot.wer, auto.wer, weights.wer, rescored.wer, oracle.wer, auto.cost
        ),
        artifacts,
        best: hpo.best,
    })
}

fn recovery_at_zero_noise(hp: Hyperparams) -> Result<String, String> {
    let ds = synthesize_dataset(&SynthConfig::four_system(23_000, 0.0), 2025).map_err(err)?;
    let (train, test) = split_at(&ds, 20_000);
    let schema = FeatureSchema::for_records(&train.schema, &train.records, GroupToggles::default());
    let info = TrainingInfo {
        hyperparams: hp,
        weighting: Weighting::Uniform,
        seed: 6,
    };
    let router = train_router(&train, &schema, &info).map_err(err)?;
    let d = route_records(&router, &test.records, 0.5).map_err(err)?;
    let table = evaluation_table(&test, &[Policy::from_decisions(LABEL_AUTOMODE, &d, Overhead::default())])
        .map_err(err)?;
    let single = table.rows[0].wer;
    let auto = table.row(LABEL_AUTOMODE).unwrap().wer;
    let oracle = table.row(LABEL_ORACLE).unwrap().wer;
    let recovered = (single - auto) / (single - oracle);
    ensure(recovered >= 0.8, || {
        format!("noise 0: recovered {:.1}% of oracle gain", 100.0 * recovered)
    })?;
    Ok(format!(
        "noise 0: single-best {single:.2} AutoMode {auto:.2} oracle {oracle:.2}, recovered {:.1}%",
        100.0 * recovered
    ))
}

// ---------------------------------------------------------------- 7

fn criterion_7() -> Outcome {
    let f = weighted_f1(&["A", "B", "B", "B"], &["A", "A", "B", "B"], &["A", "B"]).map_err(err)?;
    ensure((f.score - 11.0 / 15.0).abs() <= 1e-12, || format!("F1 {}", f.score))?;
    let labels = ["A", "B", "C", "B", "A"];
    let p = weighted_f1(&labels, &labels, &["A", "B", "C"]).map_err(err)?;
    ensure(p.score == 1.0, || format!("perfect F1 {}", p.score))?;
    Ok(format!("F1 = {:.15} (11/15); perfect = 1", f.score))
}

// ---------------------------------------------------------------- 8

fn six_system(n: usize) -> SynthConfig {
    let mut cfg = SynthConfig::four_system(n, 0.02);
    cfg.systems.push(SynthSystem {
        profile: SystemProfile::new("sys_d", 0.8, 0.3, false),
        base_wer: 0.20,
        terms: vec![RuleTerm::hinge(3, -0.14, 0.6), RuleTerm::hinge(0, 0.10, 0.0)],
    });
    cfg.systems.push(SynthSystem {
        profile: SystemProfile::new("sys_lose", 0.5, 0.2, false),
        base_wer: 0.95,
        terms: vec![],
    });
    cfg
}

fn criterion_8() -> Outcome {
    let ds = synthesize_dataset(&six_system(6000), 88).map_err(err)?;
    let (train, test) = split_at(&ds, 5000);
    let base_ids = ["pivot", "sys_a", "sys_b", "sys_c"];
    let base_train = restrict(&train, &base_ids);
    let schema = FeatureSchema::for_records(&train.schema, &train.records, GroupToggles::default());
    let info = TrainingInfo {
        hyperparams: Hyperparams::default(),
        weighting: Weighting::default(),
        seed: 8,
    };
    let t0 = Instant::now();
    let base = train_router(&base_train, &schema, &info).map_err(err)?;
    let full_secs = t0.elapsed().as_secs_f64();

    let grow = |router: &RouterModel, id: &str, with: &[&str]| -> Result<(RouterModel, f64), String> {
        let data = restrict(&train, with);
        let profile = data.systems.get(id).unwrap().clone();
        let t = Instant::now();
        let r = add_system(router, profile, &data).map_err(err)?;
        Ok((r, t.elapsed().as_secs_f64()))
    };
    let (with_d, add_secs) = grow(&base, "sys_d", &["pivot", "sys_a", "sys_b", "sys_c", "sys_d"])?;
    ensure(with_d.classifiers.len() == 4, || "expected 4 classifiers".into())?;
    for c in &base.classifiers {
        let after = with_d
            .classifiers
            .iter()
            .find(|g| g.challenger_id == c.challenger_id)
            .ok_or("classifier lost")?;
        ensure(
            serde_json::to_string(c).map_err(err)? == serde_json::to_string(after).map_err(err)?,
            || format!("classifier {} changed", c.challenger_id),
        )?;
    }
    let before = route_records(&base, &test.records, 0.5).map_err(err)?;
    let after = route_records(&with_d, &test.records, 0.5).map_err(err)?;
    let mut changed = 0;
    for (b, a) in before.iter().zip(&after) {
        if b.chosen_id != a.chosen_id {
            changed += 1;
            ensure(a.probabilities["sys_d"] > 0.5 && a.chosen_id == "sys_d", || {
                format!("{} changed without sys_d firing", a.segment_id)
            })?;
        }
    }
    let restored = with_d.without_system("sys_d").map_err(err)?;
    let again = route_records(&restored, &test.records, 0.5).map_err(err)?;
    ensure(again == before, || "removing sys_d did not restore decisions".into())?;

    let (with_loser, _) = grow(&base, "sys_lose", &["pivot", "sys_a", "sys_b", "sys_c", "sys_lose"])?;
    let lose = route_records(&with_loser, &test.records, 0.5).map_err(err)?;
    let moved = before
        .iter()
        .zip(&lose)
        .filter(|(b, a)| b.chosen_id != a.chosen_id)
        .count();
    ensure(moved == 0, || format!("always-losing system changed {moved} decisions"))?;
    ensure(add_secs < 0.6 * full_secs, || {
        format!("add took {add_secs:.2}s vs full retrain {full_secs:.2}s")
    })?;
    Ok(format!(
        "others byte-identical; {changed} decisions moved, all to firing sys_d; loser moved 0; add {add_secs:.2}s vs retrain {full_secs:.2}s"
    ))
}

// ---------------------------------------------------------------- 9

fn criterion_9() -> Outcome {
    let mut cfg = SynthConfig::four_system(6000, 0.02);
    cfg.informative = vec![FeatureFamily::Qe];
    let ds = synthesize_dataset(&cfg, 99).map_err(err)?;
    let (train, test) = split_at(&ds, 4500);
    let info = TrainingInfo {
        hyperparams: quick_hp(),
        weighting: Weighting::default(),
        seed: 9,
    };
    let (table, _) =
        ablation_table(&train, &test, &standard_combos(true), &info, 0.5, None).map_err(err)?;
    let (with, without): (Vec<_>, Vec<_>) = table.rows.iter().partition(|r| r.toggles.qe);
    ensure(!with.is_empty() && !without.is_empty(), || "combos missing".into())?;
    let worst_with = with.iter().map(|r| r.wer).fold(f64::NEG_INFINITY, f64::max);
    let best_without = without.iter().map(|r| r.wer).fold(f64::INFINITY, f64::min);
    ensure(best_without > worst_with, || {
        format!("best without QE {best_without:.2} <= worst with QE {worst_with:.2}")
    })?;
    let rows: Vec<String> = table.rows.iter().map(|r| format!("{} {:.2}", r.label, r.wer)).collect();
    Ok(rows.join("; "))
}

// ---------------------------------------------------------------- 10

fn criterion_10(first: &Benchmark, first_models: &[String]) -> Outcome {
    let (_, again) = criterion_2_artifacts()?;
    ensure(again == first_models, || "criterion 2 models differ between runs".into())?;
    let dir = tempfile::tempdir().map_err(err)?;
    let second = run_benchmark(dir.path())?;
    for ((name, a), (_, b)) in first.artifacts.iter().zip(&second.artifacts) {
        ensure(a == b, || format!("{name} differs between runs"))?;
    }
    Ok(format!(
        "criterion 2 models and {} benchmark files byte-identical",
        first.artifacts.len()
    ))
}

fn main() -> ExitCode {
    let mut results: Vec<(u32, Outcome)> = Vec::new();
    let mut report = |n: u32, o: Outcome| {
        match &o {
            Ok(detail) => println!("criterion {n:>2}: PASS  {detail}"),
            Err(why) => println!("criterion {n:>2}: FAIL  {why}"),
        }
        results.push((n, o));
    };
    report(1, criterion_1());
    let c2 = criterion_2_artifacts();
    let c2_models = c2.as_ref().map(|c| c.1.clone()).ok();
    report(2, c2.map(|c| c.0));
    report(3, criterion_3());
    report(4, criterion_4());
    report(5, criterion_5());
    let dir = tempfile::tempdir().expect("temp dir");
    let bench = run_benchmark(dir.path());
    let c6 = match &bench {
        Ok(b) => recovery_at_zero_noise(b.best).map(|r| format!("{}; {r}", b.summary)),
        Err(e) => Err(e.clone()),
    };
    report(6, c6);
    report(7, criterion_7());
    report(8, criterion_8());
    report(9, criterion_9());
    let c10 = match (&bench, &c2_models) {
        (Ok(b), Some(m)) => criterion_10(b, m),
        _ => Err("criterion 2 or 6 did not produce artifacts".into()),
    };
    report(10, c10);
    let failed: Vec<u32> = results.iter().filter(|r| r.1.is_err()).map(|r| r.0).collect();
    if failed.is_empty() {
        println!("acceptance: all {} criteria passed", results.len());
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failed {failed:?}");
        ExitCode::FAILURE
    }
}
