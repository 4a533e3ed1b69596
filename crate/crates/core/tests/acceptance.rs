//! Acceptance suite: one line per criterion, nonzero exit if any fails.
//!
//! Runs as a plain binary (`harness = false`) so the report is always printed:
//! `cargo test --test acceptance`.

use std::fs;
use std::path::Path;
use std::time::Instant;

use cmlab::analysis::max_hessian_eig;
use cmlab::buffer::{CriticalBuffer, InsertOutcome};
use cmlab::convergence::{build_companion, optimal_rate, Method, RateGrids, TuneMode};
use cmlab::harness::cli_main;
use cmlab::harness::config::InitMode;
use cmlab::harness::config::SharpnessSettings;
use cmlab::harness::experiments::{run_diagnostics, run_escape_ratio, run_seed_table};
use cmlab::linalg::Matrix;
use cmlab::losses::{make_mlp_loss, sharp_flat_kinks, LossSurface};
use cmlab::optimizers::{adam_step, simple_cm_step, OptimizerConfig, OptimizerState, Schedule};
use cmlab::rng::{Seed, SplitMix64};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn seeds(n: u64) -> Vec<Seed> {
    (0..n).map(Seed).collect()
}

// 1 ------------------------------------------------------------------------

/// Central differences with step `1e-5 * max(1, |x|)`; error relative to `max(1, |analytic|)`.
fn fd_rel_error(surface: &LossSurface, theta: &[f64]) -> f64 {
    let analytic = surface.eval_grad(theta).unwrap();
    let mut worst: f64 = 0.0;
    for d in 0..theta.len() {
        let h = 1e-5 * theta[d].abs().max(1.0);
        let mut plus = theta.to_vec();
        let mut minus = theta.to_vec();
        plus[d] += h;
        minus[d] -= h;
        let fd = (surface.eval_loss(&plus).unwrap() - surface.eval_loss(&minus).unwrap()) / (2.0 * h);
        worst = worst.max((analytic[d] - fd).abs() / analytic[d].abs().max(1.0));
    }
    worst
}

fn gradient_correctness() -> Outcome {
    let h = Matrix::from_rows(&[vec![2.0, 0.5, 0.0], vec![0.5, 1.0, -0.3], vec![0.0, -0.3, 4.0]]);
    let surfaces = vec![
        ("ackley", LossSurface::Ackley),
        ("gp", LossSurface::GoldsteinPrice),
        ("levy", LossSurface::Levy2D),
        ("ackley_rosenbrock", LossSurface::AckleyRosenbrock),
        ("sharpflat", LossSurface::sharp_flat(10.0, 10).unwrap()),
        ("quadratic", LossSurface::quadratic(h).unwrap()),
        ("mlp", make_mlp_loss(Seed(0), 200, 16).unwrap()),
    ];
    let mut worst = (0.0, "");
    for (name, surface) in &surfaces {
        let mut rng = SplitMix64::new(Seed(1));
        let mut checked = 0;
        while checked < 100 {
            let theta = surface.sample_point(&mut rng);
            if let LossSurface::SharpFlat { s, .. } = surface {
                let (k1, k2) = sharp_flat_kinks(*s);
                if theta.iter().any(|x| (x - k1).abs() < 1e-3 || (x - k2).abs() < 1e-3) {
                    continue;
                }
            }
            let e = fd_rel_error(surface, &theta);
            if e > worst.0 {
                worst = (e, name);
            }
            checked += 1;
        }
    }
    outcome(
        worst.0 < 1e-5,
        format!(
            "7 surfaces x 100 points, max rel error {:.2e} ({}) < 1e-5",
            worst.0, worst.1
        ),
    )
}

// 2 ------------------------------------------------------------------------

fn adam_reference() -> Outcome {
    let diag = [1.0, 10.0];
    let (lr, b1, b2, eps) = (0.01, 0.9, 0.99, 1e-8);
    let mut theta = vec![1.0, -1.0];
    let (mut m, mut v) = ([0.0; 2], [0.0; 2]);
    let (mut b1t, mut b2t) = (1.0, 1.0);
    let config = OptimizerConfig::adam(lr).with_betas(b1, b2);
    let mut state = OptimizerState::new(&config, 2).unwrap();
    let mut lib = theta.clone();
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        b1t *= b1;
        b2t *= b2;
        for i in 0..2 {
            let g = diag[i] * theta[i];
            m[i] = b1 * m[i] + (1.0 - b1) * g;
            v[i] = b2 * v[i] + (1.0 - b2) * g * g;
            let m_hat = m[i] / (1.0 - b1t);
            let v_hat = v[i] / (1.0 - b2t);
            theta[i] -= lr * m_hat / (v_hat + eps).sqrt();
        }
        let g: Vec<f64> = lib.iter().zip(diag).map(|(x, d)| d * x).collect();
        lib = adam_step(&mut state, &config, &lib, &g).unwrap().into_inner();
        for i in 0..2 {
            worst = worst.max((lib[i] - theta[i]).abs());
        }
    }
    outcome(
        worst <= 1e-12,
        format!("1000 steps on diag(1,10), max deviation {worst:.2e} <= 1e-12"),
    )
}

// 3 ------------------------------------------------------------------------

fn linear_system_equivalence() -> Outcome {
    let mut rng = SplitMix64::new(Seed(3));
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let capacity = 1 + rng.below(8);
        let h = rng.uniform(0.1, 10.0);
        let alpha = rng.uniform(0.01, 0.99) / h;
        let beta = rng.uniform(0.0, 0.95);
        let theta0 = rng.uniform(-2.0, 2.0);
        let a = build_companion(alpha, beta, capacity, h).unwrap();
        let mut state_v = vec![0.0; capacity + 2];
        state_v[0] = theta0;
        state_v[1] = theta0;
        let config = OptimizerConfig::simple_cm(alpha, beta, capacity);
        let mut state = OptimizerState::new(&config, 1).unwrap();
        let mut theta = vec![theta0];
        for _ in 0..100 {
            theta = simple_cm_step(&mut state, &config, &theta, &[h * theta[0]])
                .unwrap()
                .into_inner();
            state_v = a.apply(&state_v);
            let scale = state_v[0].abs().max(1.0);
            worst = worst.max((theta[0] - state_v[0]).abs() / scale);
            worst = worst.max((state.m[0] - state_v[2]).abs() / state_v[2].abs().max(1.0));
        }
    }
    outcome(
        worst <= 1e-10,
        format!("50 tuples x 100 steps, max deviation {worst:.2e} <= 1e-10 (relative above magnitude 1)"),
    )
}

// 4, 5 ----------------------------------------------------------------------

fn heavy_ball_closed_form() -> Outcome {
    let grids = RateGrids::default();
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for kappa in [4.0_f64, 25.0, 100.0] {
        let r = optimal_rate(Method::HeavyBall, kappa, TuneMode::TuneBoth, &grids).unwrap();
        let closed = (kappa.sqrt() - 1.0) / (kappa.sqrt() + 1.0);
        worst = worst.max((r.rho - closed).abs());
        parts.push(format!("k={kappa}: {:.6} vs {closed:.6}", r.rho));
    }
    outcome(
        worst < 1e-3,
        format!("{}; max gap {worst:.1e} < 1e-3", parts.join(", ")),
    )
}

fn cm_converges() -> Outcome {
    let grids = RateGrids::default();
    let mut min_gap = f64::INFINITY;
    let mut parts = Vec::new();
    for mode in [TuneMode::TuneBoth, TuneMode::FixedBeta(0.9)] {
        for kappa in [1.0, 10.0, 100.0, 1000.0] {
            let r = optimal_rate(Method::CriticalMomenta { capacity: 5 }, kappa, mode, &grids).unwrap();
            min_gap = min_gap.min(1.0 - r.rho);
            parts.push(format!("{:.2e}", 1.0 - r.rho));
        }
    }
    outcome(
        min_gap > 0.0,
        format!(
            "C=5, 1-rho* over k in {{1,10,100,1000}} x {{tune_both, beta=0.9}}: [{}]",
            parts.join(", ")
        ),
    )
}

// 6 ------------------------------------------------------------------------

fn sharpness_exactness() -> Outcome {
    let mut worst: f64 = 0.0;
    for s in [5.0, 10.0, 100.0] {
        let surface = LossSurface::sharp_flat(s, 10).unwrap();
        let sharp = max_hessian_eig(&surface, &[1.0; 10], 1e-10, 1000, Seed(0)).unwrap();
        let flat = max_hessian_eig(&surface, &[0.0; 10], 1e-10, 1000, Seed(0)).unwrap();
        worst = worst.max((sharp.h_max - 2.0 * s).abs());
        worst = worst.max((flat.h_max - 2.0).abs());
    }
    outcome(
        worst <= 1e-6,
        format!("s in {{5,10,100}}, max error {worst:.1e} <= 1e-6"),
    )
}

// 7, 8 ----------------------------------------------------------------------

fn escape_ratios_10d() -> Outcome {
    let optimizers = [OptimizerConfig::adam(0.05), OptimizerConfig::adam_cm(0.05, 20, 0.99)];
    let mut pass = true;
    let mut parts = Vec::new();
    for s in [10.0, 25.0, 50.0, 100.0] {
        let r = run_escape_ratio(
            s,
            10,
            &optimizers,
            &seeds(50),
            500,
            Schedule::Constant,
            &InitMode::Uniform,
        )
        .unwrap();
        let (adam, cm) = (r.ratios[0].1, r.ratios[1].1);
        pass &= cm >= adam && (s < 50.0 || cm > adam);
        parts.push(format!("s={s}: cm {cm:.2} / adam {adam:.2}"));
    }
    outcome(pass, parts.join(", "))
}

fn escape_grid_1d() -> Outcome {
    // Same buffer settings as the other escape experiments.
    let optimizers = [
        OptimizerConfig::adam_cg(0.05, 20, 0.99),
        OptimizerConfig::adam_cm(0.05, 20, 0.99),
    ];
    let (mut cg, mut cm, mut cg100, mut cm100) = (0, 0, 0, 0);
    for s in [5.0, 10.0, 100.0] {
        for x in [-2.0, 2.0, 3.0] {
            let r = run_escape_ratio(
                s,
                1,
                &optimizers,
                &[Seed(0)],
                500,
                Schedule::Constant,
                &InitMode::Fixed { point: vec![x] },
            )
            .unwrap();
            let (e_cg, e_cm) = (r.rows[0].escaped as usize, r.rows[1].escaped as usize);
            cg += e_cg;
            cm += e_cm;
            if s == 100.0 {
                cg100 += e_cg;
                cm100 += e_cm;
            }
        }
    }
    outcome(
        cm >= cg && cg100 < cm100,
        format!("escaped cells: cm {cm}/9, cg {cg}/9; at s=100: cm {cm100}/3, cg {cg100}/3"),
    )
}

// 9 ------------------------------------------------------------------------

fn levy_table() -> Outcome {
    let optimizers = [OptimizerConfig::adam(0.1), OptimizerConfig::adam_cm(0.1, 20, 0.99)];
    let (_, summary) = run_seed_table(
        &[("levy".to_string(), LossSurface::Levy2D)],
        &optimizers,
        &seeds(20),
        500,
        Schedule::Constant,
        &InitMode::Uniform,
        SharpnessSettings::default(),
    )
    .unwrap();
    let (adam, cm) = (&summary[0], &summary[1]);
    outcome(
        cm.mean_loss < adam.mean_loss && cm.mean_h_max < adam.mean_h_max,
        format!(
            "loss/h_max: cm {:.2}/{:.2}, adam {:.2}/{:.2} (reference 12.50/62.53 vs 13.87/65.65); diverged cm {} adam {}",
            cm.mean_loss, cm.mean_h_max, adam.mean_loss, adam.mean_h_max, cm.diverged, adam.diverged
        ),
    )
}

// 10 -----------------------------------------------------------------------

fn ackley_diagnostics() -> Outcome {
    let optimizers = [
        OptimizerConfig::adam_cg(0.1, 20, 0.99),
        OptimizerConfig::adam_cm(0.1, 20, 0.99),
    ];
    let rows = run_diagnostics(
        &LossSurface::Ackley,
        &optimizers,
        &seeds(10),
        500,
        Schedule::HalfDecay,
        &InitMode::Uniform,
        SharpnessSettings::default(),
        None,
    )
    .unwrap();
    let avg = |label: &str, f: fn(&cmlab::harness::experiments::DiagnosticsRow) -> Option<f64>| {
        let v: Vec<f64> = rows.iter().filter(|r| r.optimizer == label).filter_map(f).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let (cos_cg, cos_cm) = (
        avg("adam_cg", |r| r.mean_buf_cosine),
        avg("adam_cm", |r| r.mean_buf_cosine),
    );
    let (var_cg, var_cm) = (
        avg("adam_cg", |r| r.mean_buf_variance),
        avg("adam_cm", |r| r.mean_buf_variance),
    );
    outcome(
        cos_cm > cos_cg && var_cm < var_cg,
        format!("cosine cm {cos_cm:.4} vs cg {cos_cg:.4}; variance cm {var_cm:.4} vs cg {var_cg:.4}"),
    )
}

// 11 -----------------------------------------------------------------------

#[derive(Debug, Clone)]
enum Op {
    Insert(f64, [f64; 3]),
    Decay,
}

fn op_strategy() -> impl Strategy<Value = Op> {
    // Priorities from a small lattice so ties with the minimum are common.
    let priority = prop_oneof![(0u8..6).prop_map(|k| k as f64 * 0.5), 0.0..3.0f64];
    prop_oneof![
        4 => (priority, prop::array::uniform3(-5.0..5.0f64)).prop_map(|(p, x)| Op::Insert(p, x)),
        1 => Just(Op::Decay),
    ]
}

/// Straightforward model: entries as (priority, payload, insertion index).
struct Model {
    capacity: usize,
    decay: f64,
    entries: Vec<(f64, [f64; 3], u64)>,
    next: u64,
}

impl Model {
    fn insert(&mut self, p: f64, x: [f64; 3]) -> InsertOutcome {
        if self.entries.len() < self.capacity {
            self.entries.push((p, x, self.next));
            self.next += 1;
            return InsertOutcome::Inserted;
        }
        let mut min = 0;
        for i in 1..self.entries.len() {
            let (a, b) = (&self.entries[i], &self.entries[min]);
            if a.0 < b.0 || (a.0 == b.0 && a.2 < b.2) {
                min = i;
            }
        }
        let old = self.entries[min].0;
        if p > old {
            self.entries[min] = (p, x, self.next);
            self.next += 1;
            InsertOutcome::Replaced(old)
        } else {
            InsertOutcome::Rejected
        }
    }
}

fn buffer_properties() -> Outcome {
    let strategy = (
        1usize..8,
        0.05..=1.0f64,
        prop::collection::vec(op_strategy(), 1..40),
        any::<u64>(),
    );
    let mut runner = TestRunner::new(Config {
        cases: 100_000,
        failure_persistence: None,
        ..Config::default()
    });
    let result = runner.run(&strategy, |(capacity, decay, ops, shuffle_seed)| {
        let mut buf = CriticalBuffer::new(capacity, decay).unwrap();
        let mut model = Model {
            capacity,
            decay,
            entries: Vec::new(),
            next: 0,
        };
        for op in &ops {
            match op {
                Op::Insert(p, x) => {
                    let got = buf.maybe_insert(*p, x).unwrap();
                    prop_assert_eq!(got, model.insert(*p, *x));
                }
                Op::Decay => {
                    buf.decay_priorities();
                    for e in &mut model.entries {
                        e.0 *= model.decay;
                    }
                }
            }
            prop_assert!(buf.occupancy() <= capacity);
            let mut got: Vec<(u64, f64, Vec<f64>)> = buf
                .entries()
                .iter()
                .map(|e| (e.insertion_index, e.priority, e.payload.to_vec()))
                .collect();
            got.sort_by_key(|e| e.0);
            let mut want: Vec<(u64, f64, Vec<f64>)> = model.entries.iter().map(|e| (e.2, e.0, e.1.to_vec())).collect();
            want.sort_by_key(|e| e.0);
            prop_assert_eq!(got, want);
        }
        // The mean does not depend on storage order.
        let mut shuffled: Vec<[f64; 3]> = model.entries.iter().map(|e| e.1).collect();
        SplitMix64::new(Seed(shuffle_seed)).shuffle(&mut shuffled);
        let mean = buf.mean(3);
        for k in 0..3 {
            let want = shuffled.iter().map(|x| x[k]).sum::<f64>() / shuffled.len().max(1) as f64;
            prop_assert!((mean[k] - want).abs() <= 1e-12 * want.abs().max(1.0));
        }
        Ok(())
    });
    match result {
        Ok(()) => outcome(true, "100000 random operation sequences against a reference model"),
        Err(e) => outcome(false, format!("counterexample: {e}")),
    }
}

// 12 -----------------------------------------------------------------------

fn read_dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

fn determinism() -> Outcome {
    let commands: Vec<Vec<&str>> = vec![
        vec![
            "trajectory",
            "--surface",
            "ackley",
            "--seeds",
            "6",
            "--steps",
            "200",
            "--record-theta",
        ],
        vec!["escape", "--s", "50", "--dim", "10", "--seeds", "12", "--steps", "300"],
        vec!["table", "--surfaces", "gp,levy", "--seeds", "6", "--steps", "200"],
        vec!["diagnose", "--surface", "ackley", "--seeds", "4", "--steps", "200"],
        vec![
            "converge",
            "--capacities",
            "3",
            "--kappas",
            "10",
            "--modes",
            "fixed_beta_0.9",
        ],
    ];
    let root = tempfile::tempdir().unwrap();
    let mut checked = 0;
    for (i, cmd) in commands.iter().enumerate() {
        let mut outputs = Vec::new();
        for (run, threads) in ["1", "4", "4"].iter().enumerate() {
            let out = root.path().join(format!("c{i}_r{run}"));
            let mut argv = vec!["cmlab".to_string()];
            argv.extend(cmd.iter().map(|s| s.to_string()));
            argv.extend(["--quiet".into(), "--threads".into(), threads.to_string()]);
            argv.extend(["--out".into(), out.display().to_string()]);
            let code = cli_main(argv);
            if code != 0 {
                return outcome(false, format!("`{}` exited with {code}", cmd.join(" ")));
            }
            outputs.push(read_dir_bytes(&out));
        }
        if outputs.iter().any(|o| o != &outputs[0]) {
            return outcome(false, format!("`{}` output differs between runs", cmd.join(" ")));
        }
        checked += outputs[0].len();
    }
    outcome(
        true,
        format!("5 experiment kinds, {checked} files byte-identical across reruns and 1 vs 4 threads"),
    )
}

fn main() {
    let criteria: Vec<(&str, fn() -> Outcome)> = vec![
        ("gradient correctness", gradient_correctness),
        ("adam reference equivalence", adam_reference),
        ("linear-system equivalence", linear_system_equivalence),
        ("heavy-ball closed form", heavy_ball_closed_form),
        ("cm converges across condition numbers", cm_converges),
        ("sharpness exactness", sharpness_exactness),
        ("escape ratio in 10-D", escape_ratios_10d),
        ("1-D escape grid", escape_grid_1d),
        ("levy loss and sharpness", levy_table),
        ("ackley buffer diagnostics", ackley_diagnostics),
        ("buffer property suite", buffer_properties),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let r = check();
        if !r.pass {
            failed += 1;
        }
        println!(
            "[{}] {:>2}. {name}: {} ({:.1}s)",
            if r.pass { "PASS" } else { "FAIL" },
            i + 1,
            r.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!(
        "acceptance: {}/{} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
