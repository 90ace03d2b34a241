//! Acceptance suite. Runs every primary criterion at its stated tolerance and
//! prints one PASS/FAIL line each; exits nonzero if any criterion fails.

use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use aerovln::controller::scale_waypoint;
use aerovln::geometry::Vec2;
use aerovln::harness::{
    export_oracle_dataset, run_benchmark, run_episode, write_episode_jsonl, BenchOutcome, EpisodeConfig, ExportConfig,
    PlannerChoice, PlannerSpec, SuiteConfig,
};
use aerovln::instruction::{default_affordances, default_items, encode_instruction, Instruction};
use aerovln::planner::{
    tiny_gradient_check, train_planner, waypoint_mse, write_params, ImitationSample, ModelConfig, PlannerParams,
    TrainConfig,
};
use aerovln::retrieval::{
    decode_pool, encode_pool, read_pool, retrieve, score_pool, softmax, write_pool, Embedding, GoalPool, GoalPoolEntry,
    RetrievalConfig, RetrievalError,
};
use aerovln::world::{generate_scenario, EpisodeStatus, GenerationConfig, ScenarioKind};

type Check = fn(&mut Ctx) -> Result<String, String>;

struct Ctx {
    dir: tempfile::TempDir,
    trained: Option<PathBuf>,
    benches: Vec<BenchOutcome>,
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn retrieval_by_construction(_: &mut Ctx) -> Result<String, String> {
    let start = Instant::now();
    let items = default_items();
    let table = default_affordances();
    let gen = GenerationConfig::default();
    let cfg = RetrievalConfig::default();
    let mut hits = 0;
    for seed in 0..100u64 {
        let scenario = generate_scenario(ScenarioKind::Box, seed, &gen).map_err(|e| e.to_string())?;
        let goal = &scenario.goals[(seed % 3) as usize];
        let pool = GoalPool::from_scenario(&scenario, 64).map_err(|e| e.to_string())?;
        ensure(pool.len() == 3, || format!("pool size {}", pool.len()))?;
        let instr = Instruction::new(format!("fly to the {}", goal.descriptor)).map_err(|e| e.to_string())?;
        let prompt = encode_instruction(&instr, &items, &table);
        let r = retrieve(&prompt, &pool, &cfg).map_err(|e| e.to_string())?;
        if r.best_id == goal.id {
            hits += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(hits == 100, || format!("{hits}/100 correct"))?;
    ensure(secs < 1.0, || format!("took {secs:.3} s"))?;
    Ok(format!("100/100 correct in {secs:.3} s"))
}

fn unit_entry(id: &str, values: Vec<f32>) -> GoalPoolEntry {
    GoalPoolEntry {
        id: id.into(),
        descriptor: id.into(),
        embedding: Embedding::from_raw(values),
        goal_link: None,
    }
}

fn scoring_and_softmax(_: &mut Ctx) -> Result<String, String> {
    let cfg = RetrievalConfig::default();
    let mut e = vec![0.0f32; 8];
    e[0] = 1.0;
    let t = Embedding::from_raw(e.clone());
    let s = score_pool(&t, &[unit_entry("a", e)], &cfg).map_err(|e| e.to_string())?;
    ensure((s[0] - 100.0).abs() <= 1e-12, || format!("scaled dot {}", s[0]))?;

    let p = softmax(&[std::f64::consts::LN_2, 0.0]);
    ensure((p[0] - 2.0 / 3.0).abs() <= 1e-12 && (p[1] - 1.0 / 3.0).abs() <= 1e-12, || format!("softmax {p:?}"))?;
    for n in 1..=7 {
        let p = softmax(&vec![4.2; n]);
        ensure(p.iter().all(|v| (v - 1.0 / n as f64).abs() <= 1e-12), || format!("uniform {p:?}"))?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let mut worst: f64 = 0.0;
    for i in 0..1000 {
        let n = rng.random_range(1..20);
        let scores: Vec<f64> = (0..n)
            .map(|_| {
                let mag = if rng.random_bool(0.3) { 1e3 } else { 10.0 };
                rng.random_range(-mag..mag)
            })
            .collect();
        let p = softmax(&scores);
        ensure(p.iter().all(|v| v.is_finite() && *v >= 0.0), || format!("vector {i}: {p:?}"))?;
        worst = worst.max((p.iter().sum::<f64>() - 1.0).abs());
    }
    ensure(worst <= 1e-9, || format!("probability sum off by {worst:e}"))?;
    Ok(format!("closed forms exact to 1e-12; 1000 random vectors sum to 1 within {worst:.1e}"))
}

fn waypoint_scaling(_: &mut Ctx) -> Result<String, String> {
    let d = scale_waypoint(Vec2::new(1.0, 0.0), 1.0, 15.0);
    ensure(d.x == 1.0 / 15.0 && d.y == 0.0, || format!("(1,0) -> {d:?}"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..1000 {
        let w = Vec2::new(rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0));
        let v_max = rng.random_range(0.1..5.0);
        let f_c = rng.random_range(1.0..60.0);
        let k = v_max / f_c;
        let got = scale_waypoint(w, v_max, f_c);
        let again = scale_waypoint(w, v_max, f_c);
        ensure(
            got.x.to_bits() == (k * w.x).to_bits() && got.y.to_bits() == (k * w.y).to_bits() && got == again,
            || format!("{w:?} v_max={v_max} f_c={f_c}: {got:?}"),
        )?;
    }
    Ok("(1,0) -> (1/15, 0); 1000 random inputs bitwise equal".into())
}

fn gradient_check(_: &mut Ctx) -> Result<String, String> {
    let start = Instant::now();
    let r = tiny_gradient_check(0).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    ensure(r.passed(1e-4), || {
        format!("max rel error {:e} at {}[{}]", r.max_rel_error, r.worst_tensor, r.worst_index)
    })?;
    ensure(secs < 30.0, || format!("took {secs:.1} s"))?;
    Ok(format!("{} parameters, max rel error {:.2e}, {secs:.1} s", r.checked, r.max_rel_error))
}

fn box_export(seed: u64, episodes: usize, sample_every: usize) -> Result<Vec<ImitationSample>, String> {
    let cfg = ExportConfig {
        scenario: ScenarioKind::Box,
        episodes,
        seed,
        sample_every,
        ..Default::default()
    };
    export_oracle_dataset(&cfg).map_err(|e| e.to_string())
}

fn imitation_signal(ctx: &mut Ctx) -> Result<String, String> {
    let start = Instant::now();
    // Training draws every eighth step so 2000 samples span many layouts;
    // validation keeps every step of 20 held-out episodes.
    let mut train = box_export(1000, 300, 8)?;
    ensure(train.len() >= 2000, || format!("only {} training samples", train.len()))?;
    train.truncate(2000);
    let val = box_export(5000, 20, 1)?;
    let model = ModelConfig::default();
    let cfg = TrainConfig::default();
    ensure(cfg.epochs == 30, || format!("epochs {}", cfg.epochs))?;
    let untrained = waypoint_mse(&PlannerParams::init(model, cfg.seed), &val).map_err(|e| e.to_string())?;
    let (params, _) = train_planner(&train, model, &cfg).map_err(|e| e.to_string())?;
    let trained = waypoint_mse(&params, &val).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let path = ctx.dir.path().join("learned.bin");
    write_params(&params, &path).map_err(|e| e.to_string())?;
    ctx.trained = Some(path);
    let ratio = trained / untrained;
    ensure(ratio < 0.1, || format!("validation MSE {trained:.5} is {:.1}% of untrained {untrained:.5}", 100.0 * ratio))?;
    ensure(secs < 600.0, || format!("took {secs:.0} s"))?;
    Ok(format!(
        "validation MSE over {} held-out samples {untrained:.5} -> {trained:.5} ({:.1}% of untrained), {secs:.0} s",
        val.len(),
        100.0 * ratio
    ))
}

fn closed_loop(ctx: &mut Ctx) -> Result<String, String> {
    let params = match &ctx.trained {
        Some(p) => p.clone(),
        None => return Err("no trained planner (imitation criterion did not produce one)".into()),
    };
    let spec = |planner, params_path| PlannerSpec { planner, params_path };
    let main = run_benchmark(&SuiteConfig {
        planners: vec![spec(PlannerChoice::Oracle, None), spec(PlannerChoice::Apf, None)],
        episodes: 100,
        ..Default::default()
    })
    .map_err(|e| e.to_string())?;
    let learned = run_benchmark(&SuiteConfig {
        scenarios: vec![ScenarioKind::Box],
        planners: vec![spec(PlannerChoice::Learned, Some(params))],
        episodes: 100,
        ..Default::default()
    })
    .map_err(|e| e.to_string())?;

    let sr = |out: &BenchOutcome, k: ScenarioKind, p: PlannerChoice| {
        out.report.cells.iter().find(|c| c.scenario == k && c.planner == p).map(|c| c.metrics.sr).unwrap_or(0.0)
    };
    let oracle_box = sr(&main, ScenarioKind::Box, PlannerChoice::Oracle);
    let oracle_furn = sr(&main, ScenarioKind::Furniture, PlannerChoice::Oracle);
    let oracle_bar = sr(&main, ScenarioKind::Barrier, PlannerChoice::Oracle);
    let apf_bar = sr(&main, ScenarioKind::Barrier, PlannerChoice::Apf);
    let learned_box = sr(&learned, ScenarioKind::Box, PlannerChoice::Learned);

    let trap = |planner| {
        let mut cfg = EpisodeConfig::new(ScenarioKind::Box, 0, "fly to the blue backpack", planner);
        cfg.scenario_path = Some(fixture("u_trap.json"));
        run_episode(&cfg).map(|l| l.outcome).map_err(|e| e.to_string())
    };
    let apf_trap = trap(PlannerChoice::Apf)?;
    let oracle_trap = trap(PlannerChoice::Oracle)?;
    let summary = format!(
        "oracle SR box {oracle_box:.0} / furniture {oracle_furn:.0} / barrier {oracle_bar:.0}; learned box {learned_box:.0}; \
         APF barrier {apf_bar:.0}; U-trap APF {apf_trap:?}, oracle {oracle_trap:?}"
    );
    ctx.benches = vec![main, learned];
    let ok = oracle_box >= 90.0
        && oracle_furn >= 80.0
        && oracle_bar >= 70.0
        && learned_box >= 50.0
        && apf_bar < oracle_bar
        && apf_trap == EpisodeStatus::Timeout
        && oracle_trap == EpisodeStatus::Success;
    ensure(ok, || summary.clone())?;
    Ok(summary)
}

fn num(v: &Value, key: &str) -> f64 {
    v[key].as_f64().unwrap_or(f64::NAN)
}

/// Recomputes a cell's metrics from its JSONL trajectory logs, without using
/// any of the harness's derived per-episode fields except `shortest_path`.
fn recompute(lines: &[Vec<Value>], delta: f64) -> [f64; 4] {
    let n = lines.len() as f64;
    let (mut s, mut os, mut spl, mut ne) = (0.0, 0.0, 0.0, 0.0);
    for ep in lines {
        let header = &ep[0];
        let goal = (header["goal_position"][0].as_f64().unwrap(), header["goal_position"][1].as_f64().unwrap());
        let l = num(header, "shortest_path");
        let mut pts = vec![(num(&header["spawn"], "x"), num(&header["spawn"], "y"))];
        pts.extend(ep[1..].iter().map(|r| (num(&r["pose"], "x"), num(&r["pose"], "y"))));
        let dist = |p: &(f64, f64)| (p.0 - goal.0).hypot(p.1 - goal.1);
        let p: f64 = pts.windows(2).map(|w| (w[1].0 - w[0].0).hypot(w[1].1 - w[0].1)).sum();
        let success = ep.last().map(|r| r["status"] == "success").unwrap_or(false) && ep.len() > 1;
        if success {
            s += 1.0;
            spl += if p.max(l) > 0.0 { l / p.max(l) } else { 1.0 };
        }
        if pts.iter().map(dist).fold(f64::INFINITY, f64::min) <= delta {
            os += 1.0;
        }
        ne += dist(pts.last().unwrap());
    }
    [100.0 * s / n, 100.0 * os / n, spl / n, ne / n]
}

fn metric_equivalence(ctx: &mut Ctx) -> Result<String, String> {
    ensure(!ctx.benches.is_empty(), || "no benchmark logs (closed-loop criterion did not run)".into())?;
    let mut cells = 0;
    let mut worst: f64 = 0.0;
    for out in &ctx.benches {
        for (cell, logs) in out.report.cells.iter().zip(&out.logs) {
            let mut parsed = Vec::new();
            for log in logs {
                let mut buf = Vec::new();
                write_episode_jsonl(log, &mut buf).map_err(|e| e.to_string())?;
                let text = String::from_utf8(buf).map_err(|e| e.to_string())?;
                let ep: Vec<Value> = text.lines().map(serde_json::from_str).collect::<Result<_, _>>().map_err(|e| e.to_string())?;
                parsed.push(ep);
            }
            let m = &cell.metrics;
            let ours = recompute(&parsed, out.report.delta);
            for (a, b) in ours.iter().zip([m.sr, m.os, m.spl, m.ne]) {
                worst = worst.max((a - b).abs());
            }
            ensure(m.os >= m.sr, || format!("{:?}/{:?}: OS {} < SR {}", cell.scenario, cell.planner, m.os, m.sr))?;
            ensure(m.spl <= m.sr / 100.0 + 1e-12, || format!("{:?}/{:?}: SPL {} > SR/100", cell.scenario, cell.planner, m.spl))?;
            ensure(m.ne >= 0.0, || "negative NE".into())?;
            cells += 1;
        }
    }
    ensure(worst <= 1e-9, || format!("largest metric difference {worst:e}"))?;
    Ok(format!("{cells} cells match an independent recompute within {worst:.1e}; invariants hold"))
}

struct Run {
    stdout: Vec<u8>,
    files: Vec<Vec<u8>>,
}

fn cli(dir: &Path, args: &[&str], outputs: &[&str]) -> Result<Run, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_aerovln"))
        .args(args)
        .current_dir(dir)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!("aerovln {} failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr))
    })?;
    let files = outputs
        .iter()
        .map(|f| std::fs::read(dir.join(f)).map_err(|e| format!("{f}: {e}")))
        .collect::<Result<_, _>>()?;
    Ok(Run { stdout: out.stdout, files })
}

fn cli_determinism(_: &mut Ctx) -> Result<String, String> {
    let trap = fixture("u_trap.json");
    let trap = trap.to_str().unwrap();
    let suite = r#"{"episodes": 6, "base_seed": 3, "parallel": true,
        "planners": [{"planner": "oracle"}, {"planner": "apf"}, {"planner": "random"}],
        "settings": {"noise": {"sigma_v": 0.05, "sigma_omega": 0.1}}}"#;
    let invocations: Vec<(Vec<&str>, Vec<&str>)> = vec![
        (
            vec!["run", "--scenario", "furniture", "--seed", "4", "--planner", "apf", "--instruction", "fly to the apriltag", "--out", "ep.jsonl"],
            vec!["ep.jsonl"],
        ),
        (
            vec!["run", "--scenario", "box", "--planner", "oracle", "--instruction", "fly to the blue backpack", "--scenario-file", trap, "--out", "trap.jsonl"],
            vec!["trap.jsonl"],
        ),
        (
            vec!["bench", "--suite", "suite.json", "--out", "report.json", "--table", "table.txt", "--logs", "logs.jsonl"],
            vec!["report.json", "table.txt", "logs.jsonl"],
        ),
        (
            vec!["export-oracle", "--scenario", "box", "--episodes", "2", "--seed", "9", "--out", "data.jsonl"],
            vec!["data.jsonl"],
        ),
        (
            vec!["train", "--data", "data.jsonl", "--epochs", "1", "--seed", "2", "--out", "params.bin", "--report", "train.json"],
            vec!["params.bin", "train.json"],
        ),
        (vec!["retrieve", "--instruction", "fly where someone can keep textbooks"], vec![]),
        (vec!["gradcheck", "--seed", "1"], vec![]),
    ];
    let mut runs = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        std::fs::write(dir.path().join("suite.json"), suite).map_err(|e| e.to_string())?;
        let mut results = Vec::new();
        for (args, outputs) in &invocations {
            results.push(cli(dir.path(), args, outputs)?);
        }
        runs.push(results);
    }
    for ((a, b), (args, _)) in runs[0].iter().zip(&runs[1]).zip(&invocations) {
        ensure(a.stdout == b.stdout && a.files == b.files, || format!("`aerovln {}` differs between runs", args[0]))?;
    }
    Ok(format!("{} invocations byte-identical across two runs (bench in parallel)", invocations.len()))
}

fn error_kind(dir: &Path, pool: &Path) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_aerovln"))
        .args(["retrieve", "--instruction", "fly to the apriltag", "--pool"])
        .arg(pool)
        .current_dir(dir)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(!out.status.success(), || "corrupt pool accepted by the CLI".into())?;
    let v: Value = serde_json::from_slice(&out.stderr).map_err(|e| format!("stderr is not JSON: {e}"))?;
    Ok(v["error"].as_str().unwrap_or("").to_string())
}

fn pool_round_trip(ctx: &mut Ctx) -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let dim = 512;
    let entries = (0..40)
        .map(|i| {
            let raw: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            GoalPoolEntry {
                id: format!("img_{i:03}"),
                descriptor: format!("candidate view {i}"),
                embedding: Embedding::normalized(&raw).unwrap(),
                goal_link: None,
            }
        })
        .collect();
    let pool = GoalPool::new(dim, entries).map_err(|e| e.to_string())?;
    let path = ctx.dir.path().join("pool.vlfe");
    write_pool(&pool, &path).map_err(|e| e.to_string())?;
    let back = read_pool(&path).map_err(|e| e.to_string())?;
    ensure(back.dim == dim && back.len() == pool.len(), || "shape changed".into())?;
    for (a, b) in pool.entries.iter().zip(&back.entries) {
        let bits = |e: &Embedding| e.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        ensure(a.id == b.id && a.descriptor == b.descriptor && bits(&a.embedding) == bits(&b.embedding), || {
            format!("entry {} differs", a.id)
        })?;
    }
    let bytes = std::fs::read(&path).map_err(|e| e.to_string())?;
    ensure(encode_pool(&back).map_err(|e| e.to_string())? == bytes, || "re-encoding differs".into())?;

    let mut bad = bytes.clone();
    bad[..4].copy_from_slice(b"VLFX");
    ensure(matches!(decode_pool(&bad), Err(RetrievalError::BadMagic { .. })), || "bad magic not reported".into())?;
    let mut cut = 0;
    for len in (0..bytes.len()).step_by(97).chain([bytes.len() - 1]) {
        ensure(matches!(decode_pool(&bytes[..len]), Err(RetrievalError::Truncated { .. })), || {
            format!("truncation at {len} not reported")
        })?;
        cut += 1;
    }
    let mut skew = bytes.clone();
    let n = skew.len();
    skew[n - 4..].copy_from_slice(&2.0f32.to_le_bytes());
    ensure(matches!(decode_pool(&skew), Err(RetrievalError::NormViolation { .. })), || "norm violation not reported".into())?;

    let dir = ctx.dir.path();
    let mut kinds = Vec::new();
    for (name, data) in [("magic.vlfe", &bad), ("short.vlfe", &bytes[..bytes.len() / 2].to_vec()), ("norm.vlfe", &skew)] {
        std::fs::write(dir.join(name), data).map_err(|e| e.to_string())?;
        kinds.push(error_kind(dir, &dir.join(name))?);
    }
    ensure(kinds == ["bad_magic", "truncated_file", "norm_violation"], || format!("CLI error kinds {kinds:?}"))?;
    Ok(format!("40×512 pool bit-exact; bad magic, {cut} truncations and a norm violation rejected; CLI kinds {kinds:?}"))
}

fn main() -> ExitCode {
    let checks: [(&str, Check); 9] = [
        ("retrieval by construction", retrieval_by_construction),
        ("scaled dot product and softmax", scoring_and_softmax),
        ("waypoint scaling exactness", waypoint_scaling),
        ("gradient check", gradient_check),
        ("imitation learning signal", imitation_signal),
        ("closed-loop success", closed_loop),
        ("metric oracle equivalence", metric_equivalence),
        ("CLI determinism", cli_determinism),
        ("pool file round trip", pool_round_trip),
    ];
    let mut ctx = Ctx {
        dir: tempfile::tempdir().expect("temp dir"),
        trained: None,
        benches: Vec::new(),
    };
    let mut failed = 0;
    for (name, check) in checks {
        match check(&mut ctx) {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", checks.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
