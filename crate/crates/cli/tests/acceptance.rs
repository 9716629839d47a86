//! Acceptance suite: one PASS/FAIL line per criterion.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::type_complexity)]

mod oracles;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use micropack_cli::commands::run_strategy;
use micropack_cli::config::{GanttOptions, RunConfig, Workload, CONFIG_VERSION};
use micropack_core::baselines::{plan_from_sample_packs, Strategy};
use micropack_core::dagsim::{compute_timeline, critical_path, Dag, DataId, Edge, EdgeKind, Vertex};
use micropack_core::schedule::{backward_ready, build_program, validate_program};
use micropack_core::solver::*;
use micropack_core::stats::coefficient_of_variation;
use micropack_core::workload::{generate_synthetic, LengthDistributionSpec};
use micropack_core::*;
use oracles::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn llama_pipeline(pp: usize, schedule: ScheduleKind) -> Pipeline {
    Pipeline {
        model: ModelShape::llama_7b(),
        hw: HardwareProfile::reference(),
        mult: CostMultipliers::default(),
        pp,
        schedule,
        sim: SimOptions::default(),
    }
}

fn small_model(rng: &mut impl Rng) -> ModelShape {
    let heads = [1u64, 2, 4, 8, 32][rng.random_range(0..5)];
    let divisors: Vec<u64> = (1..=heads).filter(|g| heads.is_multiple_of(*g)).collect();
    ModelShape {
        hidden_dim: heads * rng.random_range(1..=128),
        num_layers: rng.random_range(1..=80),
        num_heads: heads,
        num_kv_groups: divisors[rng.random_range(0..divisors.len())],
        ffn_dim: rng.random_range(1..=16_384),
        vocab_size: rng.random_range(1..=65_536),
    }
}

fn reference_config(fixed_m: Option<usize>) -> RunConfig {
    RunConfig {
        version: CONFIG_VERSION,
        model: ModelShape::llama_7b(),
        cluster: ClusterConfig {
            dp: 4,
            pp: 4,
            cp_base: 1,
            mem_budget_bytes: u64::MAX,
        },
        hardware: HardwareProfile::reference(),
        multipliers: CostMultipliers::default(),
        solver: SolverOptions::default(),
        workload: Workload::Synthetic {
            spec: LengthDistributionSpec::reference(),
            seed: 42,
            count: 10_000,
        },
        schedule_kind: ScheduleKind::OneFOneB,
        strategy: Strategy::Slimpack,
        sim: SimOptions::default(),
        fixed_m,
        baseline_max_len: None,
        gantt: GanttOptions::default(),
    }
}

fn reference_batch() -> GlobalBatch {
    generate_synthetic(&LengthDistributionSpec::reference(), 42, 10_000).unwrap()
}

fn pooled_cv(plan: &PackPlan, bwd: bool) -> f64 {
    let xs: Vec<f64> = plan
        .ranks
        .iter()
        .flat_map(|r| {
            let packs = if bwd { &r.bwd_packs } else { &r.fwd_packs };
            packs
                .iter()
                .map(move |p| if bwd { p.bwd_cost.total() } else { p.fwd_cost.total() } as f64)
        })
        .collect();
    coefficient_of_variation(&xs)
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for case in 0..1000 {
        let model = small_model(&mut rng);
        let len = rng.random_range(1..=65_536u64);
        let k = rng.random_range(0..len.min(32));
        let mut cuts: Vec<u64> = (0..k).map(|_| rng.random_range(1..len)).collect();
        cuts.extend([0, len]);
        cuts.sort_unstable();
        cuts.dedup();
        let sample = Sample::new(0, len);
        let sum: Flops = cuts
            .windows(2)
            .map(|w| sample.slice_fwd_cost(&model, w[0], w[1]).total())
            .sum();
        let whole = sample.fwd_cost(&model).total();
        ensure!(sum == whole, "case {case}: slices {sum} != sample {whole}");
        let oracle = slice_flops_by_token(&model, 0, len);
        ensure!(
            whole == oracle,
            "case {case}: sample {whole} != token-by-token {oracle}"
        );
    }
    Ok("1000 cases, exact integer equality".into())
}

fn random_dag(rng: &mut impl Rng) -> Dag {
    let n = rng.random_range(1..=50);
    let vertices: Vec<Vertex> = (0..n)
        .map(|i| Vertex {
            stage: 0,
            action: Action::Forward,
            data: DataId { pack: i, slice: None },
            weight: rng.random_range(0..=1000) as f64 / 8.0,
        })
        .collect();
    let mut edges: Vec<Edge> = Vec::new();
    if n > 1 {
        for _ in 0..rng.random_range(0..=150) {
            let a = rng.random_range(0..n - 1);
            let b = rng.random_range(a + 1..n);
            if !edges.iter().any(|e| e.from == a && e.to == b) {
                edges.push(Edge::new(a, b, EdgeKind::Schedule));
            }
        }
    }
    // relabel so ids are not already a topological order
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        perm.swap(i, rng.random_range(0..=i));
    }
    let mut relabeled = vec![None; n];
    for (old, v) in vertices.into_iter().enumerate() {
        relabeled[perm[old]] = Some(v);
    }
    let edges = edges
        .into_iter()
        .map(|e| Edge::new(perm[e.from], perm[e.to], e.kind))
        .collect();
    Dag::from_parts(relabeled.into_iter().map(Option::unwrap).collect(), edges)
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for case in 0..500 {
        let dag = random_dag(&mut rng);
        let tl = compute_timeline(&dag).map_err(|e| e.to_string())?;
        let brute = longest_path_brute(&dag);
        ensure!(
            tl.t_total == brute,
            "case {case}: t_total {} != brute force {brute}",
            tl.t_total
        );
        for e in &dag.edges {
            ensure!(
                tl.start[e.to] >= tl.finish[e.from],
                "case {case}: edge {} -> {} violated",
                e.from,
                e.to
            );
        }
        let w: f64 = critical_path(&dag, &tl).iter().map(|&v| dag.vertices[v].weight).sum();
        ensure!(
            w == tl.t_total,
            "case {case}: critical path weight {w} != {}",
            tl.t_total
        );
    }
    Ok("500 DAGs match brute-force longest path".into())
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let opts = SolverOptions::default();
    let mut worst = 1.0f64;
    let mut done = 0;
    while done < 200 {
        let n = rng.random_range(1..=ORACLE_MAX_SAMPLES);
        let m = rng.random_range(1..=ORACLE_MAX_PACKS);
        let samples: Vec<Sample> = (0..n as u64)
            .map(|i| Sample::new(i, rng.random_range(1..=512)))
            .collect();
        let units: u64 = samples.iter().map(|s| sample_units(s, opts.alignment)).sum();
        if units as usize > ORACLE_MAX_UNITS || (units as usize) < m {
            continue;
        }
        let model = if rng.random_bool(0.5) {
            ModelShape::llama_7b()
        } else {
            small_model(&mut rng)
        };
        let greedy = phase2_partition(&samples, m, &model, &opts)
            .map_err(|e| e.to_string())?
            .iter()
            .map(|p| p.fwd_cost.total())
            .max()
            .unwrap();
        let exact = exact_partition_oracle(&samples, m, &model, &opts).map_err(|e| e.to_string())?;
        ensure!(
            greedy * 10 <= exact * 11,
            "instance {done}: greedy {greedy} > 1.1 x exact {exact}"
        );
        worst = worst.max(greedy as f64 / exact as f64);
        done += 1;
    }
    let model = ModelShape::llama_7b();
    for case in 0..200 {
        let n = rng.random_range(1..=12);
        let dp = rng.random_range(1..=3);
        let batch = GlobalBatch {
            samples: (0..n as u64)
                .map(|i| Sample::new(i, rng.random_range(1..=16_384)))
                .collect(),
            source: "random".into(),
        };
        let lpt = *phase1_assign(&batch, dp, &model)
            .per_rank_capacity
            .iter()
            .max()
            .unwrap();
        let costs: Vec<Flops> = batch.samples.iter().map(|s| s.fwd_cost(&model).total()).collect();
        let opt = best_makespan(&costs, dp);
        ensure!(3 * lpt <= 4 * opt, "LPT case {case}: {lpt} > 4/3 x {opt}");
    }
    Ok(format!("worst greedy/oracle {worst:.4}; LPT within 4/3 on 200 cases"))
}

fn criterion_4() -> Outcome {
    let batch = reference_batch();
    let cfg = reference_config(Some(32));
    let slim = run_strategy(&cfg, Strategy::Slimpack, &batch).map_err(|e| e.to_string())?;
    let cv = |xs: Vec<f64>| coefficient_of_variation(&xs);
    let (mut max_f, mut max_b) = (0.0f64, 0.0f64);
    for r in &slim.ranks {
        ensure!(r.m == 32, "rank {} has m = {}", r.dp_rank, r.m);
        let f = cv(r.fwd_packs.iter().map(|p| p.fwd_cost.total() as f64).collect());
        let b = cv(r.bwd_packs.iter().map(|p| p.bwd_cost.total() as f64).collect());
        let reused = cv(reuse_forward_for_backward(&r.fwd_packs)
            .iter()
            .map(|p| p.bwd_cost.total() as f64)
            .collect());
        ensure!(
            f <= 0.05 && b <= 0.05,
            "rank {}: fwd CV {f:.4}, bwd CV {b:.4}",
            r.dp_rank
        );
        ensure!(
            reused > b,
            "rank {}: reused-forward bwd CV {reused:.4} not above {b:.4}",
            r.dp_rank
        );
        max_f = max_f.max(f);
        max_b = max_b.max(b);
    }
    let best_fit = run_strategy(&cfg, Strategy::BestFit, &batch).map_err(|e| e.to_string())?;
    let (sf, bf) = (pooled_cv(&slim, false), pooled_cv(&best_fit, false));
    ensure!(bf >= 3.0 * sf, "best-fit CV {bf:.4} < 3 x SlimPack CV {sf:.4}");
    Ok(format!(
        "max fwd CV {max_f:.4}, max bwd CV {max_b:.4}; best-fit CV {bf:.3} vs {sf:.4}"
    ))
}

fn criterion_5() -> Outcome {
    let batch = reference_batch();
    let cfg = reference_config(None);
    let pipe = cfg.pipeline();
    let slim = run_strategy(&cfg, Strategy::Slimpack, &batch).map_err(|e| e.to_string())?;
    let best_fit = run_strategy(&cfg, Strategy::BestFit, &batch).map_err(|e| e.to_string())?;
    let ts = simulate_plan(&slim, &pipe).map_err(|e| e.to_string())?.t_total;
    let tb = simulate_plan(&best_fit, &pipe).map_err(|e| e.to_string())?.t_total;
    ensure!(ts <= 0.8 * tb, "SlimPack {ts:.3}s > 0.8 x best-fit {tb:.3}s");
    Ok(format!(
        "SlimPack {ts:.2}s vs best-fit {tb:.2}s, speedup {:.3}x",
        tb / ts
    ))
}

fn criterion_6() -> Outcome {
    // one sample of three units; three short samples with the same total FLOPs
    let pipe = llama_pipeline(2, ScheduleKind::OneFOneB);
    let unit = 8192;
    let long = Sample::new(0, 3 * unit);
    let target = long.fwd_cost(&pipe.model).total();
    let mut len = unit;
    while 3 * Sample::new(1, len).fwd_cost(&pipe.model).total() < target {
        len += 1;
    }
    let samples: Vec<Sample> = std::iter::once(long)
        .chain((1..=3).map(|i| Sample::new(i, len)))
        .collect();
    let cluster = ClusterConfig {
        dp: 1,
        pp: 2,
        cp_base: 1,
        mem_budget_bytes: u64::MAX,
    };
    let bins = vec![vec![samples[0]], samples[1..].to_vec()];
    let packed = plan_from_sample_packs(&bins, &cluster, &pipe.model, &pipe.mult).map_err(|e| e.to_string())?;
    let packed_sim = simulate_plan(&packed, &pipe).map_err(|e| e.to_string())?;
    let peaks = |s: &RankSimulation| -> Vec<u128> { s.memory.stages.iter().map(|m| m.peak_activation_bytes).collect() };
    let packed_peaks = peaks(&packed_sim.ranks[0]);
    let sliced = partition_rank(0, &samples, 8, &pipe.model, &pipe.mult, &SolverOptions::default())
        .map_err(|e| e.to_string())?;
    let sliced_peaks = peaks(&simulate_rank(&sliced, &pipe).map_err(|e| e.to_string())?);
    for (s, (a, b)) in sliced_peaks.iter().zip(&packed_peaks).enumerate() {
        ensure!(a <= b, "stage {s}: sliced peak {a} > packed peak {b}");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut done = 0;
    while done < 500 {
        let pp = rng.random_range(1..=4);
        let kind = if rng.random_bool(0.5) {
            ScheduleKind::OneFOneB
        } else {
            ScheduleKind::Gpipe
        };
        let mut pipe = llama_pipeline(pp, kind);
        pipe.hw.activation_bytes_per_token_per_layer = rng.random_range(0..=8192);
        pipe.hw.kv_bytes_per_token_per_layer = rng.random_range(0..=8192);
        let n = rng.random_range(1..=12);
        let batch = random_batch(&mut rng, n);
        let m = pp * rng.random_range(1..=4);
        let Ok(plan) = partition_rank(0, &batch.samples, m, &pipe.model, &pipe.mult, &SolverOptions::default()) else {
            continue;
        };
        let sim = simulate_rank(&plan, &pipe).map_err(|e| e.to_string())?;
        for (s, st) in sim.memory.stages.iter().enumerate() {
            let (lo, hi) = prefix_extremes(&st.events);
            ensure!(lo >= 0, "plan {done} stage {s}: running sum reaches {lo}");
            ensure!(
                hi as u128 == st.peak_bytes,
                "plan {done} stage {s}: peak {} != max prefix {hi}",
                st.peak_bytes
            );
            let act: Vec<_> = st.events.iter().filter(|e| !is_static(e)).cloned().collect();
            let (alo, ahi) = prefix_extremes(&act);
            ensure!(
                alo >= 0 && ahi as u128 == st.peak_activation_bytes,
                "plan {done} stage {s}: activation trace"
            );
        }
        done += 1;
    }
    let mb = |v: &[u128]| v.iter().map(|b| b / 1_000_000).collect::<Vec<_>>();
    Ok(format!(
        "peak activation MB sliced {:?} vs packed {:?}; 500 traces consistent",
        mb(&sliced_peaks),
        mb(&packed_peaks)
    ))
}

fn criterion_7() -> Outcome {
    // cost(l) = 8 l^2 + 328 l here, and cost(126) = 3 * 167 * cost(1): the outlier
    // is exactly three times the mean capacity of four ranks
    let model = ModelShape {
        hidden_dim: 4,
        num_layers: 1,
        num_heads: 1,
        num_kv_groups: 1,
        ffn_dim: 8,
        vocab_size: 16,
    };
    let batch = GlobalBatch {
        samples: std::iter::once(Sample::new(0, 126))
            .chain((1..=167).map(|i| Sample::new(i, 1)))
            .collect(),
        source: "constructed".into(),
    };
    let f = batch.samples[0].fwd_cost(&model).total();
    let a = phase1_assign(&batch, 4, &model);
    ensure!(4 * f == 3 * a.total(), "construction: f = {f}, total = {}", a.total());
    let g = plan_dp_merge(&a, 0, &model).map_err(|e| e.to_string())?;
    let min_outside = |members: &[usize]| {
        (0..4)
            .filter(|r| !members.contains(r))
            .map(|r| a.per_rank_capacity[r])
            .min()
            .unwrap_or(a.total() / 4)
    };
    let k = g.cp_degree as usize;
    ensure!(
        g.member_ranks.len() == k,
        "group lists {} ranks for g = {k}",
        g.member_ranks.len()
    );
    ensure!(
        f <= k as Flops * min_outside(&g.member_ranks),
        "g = {k} fails f/g <= min capacity"
    );
    ensure!(k >= 2, "g = {k} merges nothing");
    let home = a.home_rank(0).unwrap();
    let mut free: Vec<usize> = (0..4).filter(|&r| r != home).collect();
    free.sort_by_key(|&r| (a.per_rank_capacity[r], r));
    let mut smaller = free[..k - 2].to_vec();
    smaller.push(home);
    ensure!(
        f > (k as Flops - 1) * min_outside(&smaller),
        "g - 1 = {} also satisfies the bound",
        k - 1
    );
    Ok(format!("g = {k}, members {:?}", g.member_ranks))
}

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut emitted, mut refused) = (0, 0);
    for w in 0..100 {
        let dp = rng.random_range(1..=4);
        let pp = rng.random_range(1..=4);
        let n = rng.random_range(dp * pp * 2..=200);
        let batch = random_batch(&mut rng, n);
        let mut cfg = reference_config(None);
        cfg.cluster.dp = dp;
        cfg.cluster.pp = pp;
        cfg.solver.i_candidates = vec![1, 2, 4];
        cfg.schedule_kind = if rng.random_bool(0.5) {
            ScheduleKind::OneFOneB
        } else {
            ScheduleKind::Gpipe
        };
        for strategy in [
            Strategy::Slimpack,
            Strategy::BestFit,
            Strategy::Length,
            Strategy::Tflops,
        ] {
            let plan = match run_strategy(&cfg, strategy, &batch) {
                Ok(p) => p,
                Err(e) if e.exit_code() == 3 => {
                    refused += 1;
                    continue;
                }
                Err(e) => return Err(format!("workload {w} {}: {e}", strategy.name())),
            };
            emitted += 1;
            let tag = format!("workload {w} {}", strategy.name());
            check_token_conservation(&plan, &batch).map_err(|e| format!("{tag}: {e}"))?;
            for r in &plan.ranks {
                check_rank_streams(r).map_err(|e| format!("{tag}: {e}"))?;
                ensure!(r.m > 0 && r.m % pp == 0, "{tag}: m = {} with pp = {pp}", r.m);
                ensure!(
                    r.fwd_packs.len() == r.m && r.bwd_packs.len() == r.m,
                    "{tag}: pack counts differ from m"
                );
                for kind in [ScheduleKind::OneFOneB, ScheduleKind::Gpipe] {
                    let prog = build_program(r, pp, kind).map_err(|e| format!("{tag}: {e}"))?;
                    validate_program(&prog, r, pp).map_err(|e| format!("{tag}: {e}"))?;
                }
            }
            simulate_plan(&plan, &cfg.pipeline()).map_err(|e| format!("{tag}: {e}"))?;
        }
    }
    ensure!(emitted >= 350, "only {emitted} plans emitted");
    Ok(format!("{emitted} plans checked, {refused} refused as infeasible"))
}

#[derive(Deserialize)]
struct Fixture {
    pp: usize,
    samples: Vec<(u64, u64)>,
    fwd_packs: Vec<Vec<(u64, u64, u64)>>,
    bwd_packs: Vec<Vec<(u64, u64, u64)>>,
    expected: Expected,
}

#[derive(Deserialize)]
struct Expected {
    warmup: Vec<usize>,
    injections: Vec<micropack_core::schedule::Injection>,
}

fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures")
}

fn check_fixture(file: &str, kind: ScheduleKind) -> Result<String, String> {
    let text = std::fs::read_to_string(fixture_dir().join(file)).map_err(|e| format!("{file}: {e}"))?;
    let fx: Fixture = serde_json::from_str(&text).map_err(|e| format!("{file}: {e}"))?;
    let samples: Vec<Sample> = fx.samples.iter().map(|&(id, len)| Sample::new(id, len)).collect();
    let to_slices = |packs: &[Vec<(u64, u64, u64)>]| -> Vec<Vec<Slice>> {
        packs
            .iter()
            .map(|p| {
                p.iter()
                    .map(|&(id, start, end)| Slice {
                        sample_id: id,
                        start,
                        end,
                        sample_len: samples.iter().find(|s| s.id == id).unwrap().length,
                    })
                    .collect()
            })
            .collect()
    };
    let pipe = llama_pipeline(fx.pp, kind);
    let plan = RankPlan::from_slices(
        0,
        samples.clone(),
        to_slices(&fx.fwd_packs),
        to_slices(&fx.bwd_packs),
        &pipe.model,
        &pipe.mult,
    );
    plan.validate().map_err(|e| format!("{file}: {e}"))?;
    let prog = build_program(&plan, fx.pp, kind).map_err(|e| format!("{file}: {e}"))?;
    validate_program(&prog, &plan, fx.pp).map_err(|e| format!("{file}: {e}"))?;
    let warm: Vec<usize> = (0..fx.pp).map(|s| prog.warmup_forwards(s)).collect();
    ensure!(
        warm == fx.expected.warmup,
        "{file}: warm-up {warm:?} != {:?}",
        fx.expected.warmup
    );
    for (s, tasks) in prog.stages.iter().enumerate() {
        let f: Vec<usize> = tasks
            .iter()
            .filter(|t| t.action == Action::Forward)
            .map(|t| t.pack_index)
            .collect();
        ensure!(
            f == (0..plan.fwd_packs.len()).collect::<Vec<_>>(),
            "{file}: stage {s} forwards {f:?} not FIFO"
        );
    }
    ensure!(
        prog.injections == fx.expected.injections,
        "{file}: injections {:?}",
        prog.injections
    );
    let injected: usize = (0..fx.pp).map(|s| prog.injected_count(s)).sum();
    let expected: usize = fx.expected.injections.iter().map(|i| i.forwards.len()).sum();
    ensure!(
        injected == expected,
        "{file}: {injected} injected forwards, fixture says {expected}"
    );
    if kind == ScheduleKind::OneFOneB {
        let ready = backward_ready(&plan).map_err(|e| e.to_string())?;
        let minimal = minimal_last_stage_injections(&ready, plan.fwd_packs.len());
        let last = prog.injected_count(fx.pp - 1);
        ensure!(
            last == minimal,
            "{file}: last stage injects {last}, minimum is {minimal}"
        );
    }
    Ok(format!("{file}: warm-up {warm:?}, {injected} injected"))
}

fn criterion_9() -> Outcome {
    let mut notes = Vec::new();
    for (file, kind) in [
        ("schedule_ten_samples.json", ScheduleKind::OneFOneB),
        ("schedule_injection.json", ScheduleKind::OneFOneB),
        ("schedule_gpipe_eight.json", ScheduleKind::Gpipe),
    ] {
        notes.push(check_fixture(file, kind)?);
    }
    Ok(notes.join("; "))
}

fn run_cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_micropack"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    ensure!(
        out.status.success(),
        "micropack {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    Ok(())
}

fn criterion_10() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/reference.json");
    let config = config.to_str().unwrap();
    let path = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    let mut files = 0;
    for threads in ["1", "4"] {
        for run in ["a", "b"] {
            let tag = format!("{threads}{run}");
            run_cli(&[
                "--threads",
                threads,
                "plan",
                "--config",
                config,
                "--out",
                &path(&format!("plan{tag}.json")),
            ])?;
            run_cli(&[
                "--threads",
                threads,
                "simulate",
                "--config",
                config,
                "--out",
                &path(&format!("timeline{tag}.json")),
                "--csv-dir",
                &path(&format!("csv{tag}")),
            ])?;
            run_cli(&[
                "--threads",
                threads,
                "sweep",
                "--config",
                config,
                "--out",
                &path(&format!("sweep{tag}.json")),
            ])?;
        }
    }
    let read = |p: String| std::fs::read(&p).map_err(|e| format!("{p}: {e}"));
    for stem in ["plan", "timeline", "sweep"] {
        let first = read(path(&format!("{stem}1a.json")))?;
        for tag in ["1b", "4a", "4b"] {
            ensure!(
                read(path(&format!("{stem}{tag}.json")))? == first,
                "{stem} differs in run {tag}"
            );
            files += 1;
        }
    }
    for r in 0..4 {
        let first = read(path(&format!("csv1a/rank{r}.csv")))?;
        for tag in ["1b", "4a", "4b"] {
            ensure!(
                read(path(&format!("csv{tag}/rank{r}.csv")))? == first,
                "rank{r}.csv differs in run {tag}"
            );
            files += 1;
        }
    }
    Ok(format!(
        "{files} artifact comparisons byte-identical across runs and 1/4 threads"
    ))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome, Option<Duration>); 10] = [
        ("cost additivity", criterion_1, Some(Duration::from_secs(5))),
        (
            "timeline oracle equivalence",
            criterion_2,
            Some(Duration::from_secs(30)),
        ),
        ("partition quality", criterion_3, Some(Duration::from_secs(60))),
        ("balance", criterion_4, Some(Duration::from_secs(60))),
        ("simulated end-to-end gain", criterion_5, Some(Duration::from_secs(60))),
        ("memory", criterion_6, None),
        ("DP-Merge group size", criterion_7, None),
        ("conservation suite", criterion_8, None),
        ("schedule fixtures", criterion_9, None),
        ("determinism", criterion_10, None),
    ];
    let mut failed = 0;
    for (i, (name, check, limit)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let took = t.elapsed();
        let outcome = match outcome {
            Ok(_) if limit.is_some_and(|l| took > l) => Err(format!("took {took:.2?}, limit {:?}", limit.unwrap())),
            o => o,
        };
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS  {name} ({took:.2?}): {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name} ({took:.2?}): {why}", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
