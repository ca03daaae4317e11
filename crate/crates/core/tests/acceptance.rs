//! Acceptance criteria 1–11.
//!
//! Each test prints one `criterion N: PASS|FAIL (...)` line straight to the
//! process stderr (so it shows even when output is captured), then asserts.
//! Tests hold a shared lock so the runtime limits are measured without
//! competing for the CPU.

#![allow(clippy::needless_range_loop)]

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::{Duration, Instant};

use ndarray::{array, Array2};
use rand::Rng;

use lfr_pino::analysis::{
    continuity_study, predict_field, relative_l2, run_ablation, theorem2_sweep, window_means,
    write_ablation_csv, ContinuityConfig,
};
use lfr_pino::autodiff::Tape;
use lfr_pino::hypernet::{
    codec::dft, codec_roundtrip_error, hermitian_weights, parameter_count, weights_to_spectrum,
    HyperMode, HyperNetParams, ParameterSample, SpectralCodecConfig,
};
use lfr_pino::nets::{
    forward_dual, Activation, Architecture, JetRequest, LayerWeights, MainNetWeights, TapedNet,
};
use lfr_pino::par::Execution;
use lfr_pino::physics::{
    bc_ic_terms, residual_advection, residual_antiderivative, residual_burgers, residual_diffusion,
    residuals, Benchmark, CollocationBatch, CollocationCounts, PdeProblem, DIFFUSIVITY, NU,
    REACTION,
};
use lfr_pino::problems::{
    solve_advection_reference, solve_antiderivative_reference, solve_burgers_reference,
    solve_diffusion_reference, Dataset, EtaGenerator, Lattice, OdeOptions, SolverSettings,
};
use lfr_pino::rng::SeedTree;
use lfr_pino::training::{desk_config, finetune, pretrain, HistoryRow, TrainConfig};

static LOCK: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    LOCK.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(n: u32, pass: bool, detail: impl std::fmt::Display) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let line = format!("criterion {n}: {verdict} ({detail})\n");
    let _ = std::io::stderr().write_all(line.as_bytes());
}

fn rel_l2(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    relative_l2(a.as_slice().unwrap(), b.as_slice().unwrap()).unwrap()
}

// ---------------------------------------------------------------- 1

#[test]
fn criterion_01_codec_exactness() {
    const ROUNDTRIP_TOL: f64 = 1e-10;
    const PARSEVAL_TOL: f64 = 1e-9;
    const LIMIT: Duration = Duration::from_secs(5);
    let _g = serial();
    let start = Instant::now();
    let seeds = SeedTree::new(1);
    let mut worst_roundtrip: f64 = 0.0;
    let mut worst_parseval: f64 = 0.0;
    let mut monotone = true;
    for i in 0..100 {
        let n = [65, 128, 4160][i % 3];
        let mut rng = seeds.stream("codec", i as u64);
        let w: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let full = hermitian_weights(&weights_to_spectrum(&w, n).unwrap()).unwrap();
        for (a, b) in w.iter().zip(&full) {
            worst_roundtrip = worst_roundtrip.max((a - b).abs());
        }
        // Parseval: dropped DFT power (1/N)Σ|Ŵ_k|² summed directly here.
        let power: Vec<f64> = dft(&w).iter().map(|c| c.norm_sqr() / n as f64).collect();
        let energy: f64 = w.iter().map(|v| v * v).sum();
        let stride = if n > 1000 { 13 } else { 1 };
        let ps: Vec<usize> = (1..=n)
            .step_by(stride)
            .chain([n / 2, n / 2 + 1, n])
            .collect();
        let mut ps = ps;
        ps.sort_unstable();
        ps.dedup();
        let mut prev = f64::INFINITY;
        for p in ps {
            let err = codec_roundtrip_error(&w, p).unwrap();
            let tail: f64 = (0..n)
                .filter(|&k| !(k < p || (k > 0 && n - k < p)))
                .map(|k| power[k])
                .sum();
            worst_parseval = worst_parseval.max((err * err - tail).abs() / energy);
            if err > prev + 1e-12 * energy.sqrt() {
                monotone = false;
            }
            prev = err;
        }
    }
    let elapsed = start.elapsed();
    let pass = worst_roundtrip < ROUNDTRIP_TOL
        && worst_parseval < PARSEVAL_TOL
        && monotone
        && elapsed < LIMIT;
    report(
        1,
        pass,
        format!(
            "max round-trip error {worst_roundtrip:.2e} < {ROUNDTRIP_TOL:.0e}, \
             Parseval mismatch {worst_parseval:.2e} < {PARSEVAL_TOL:.0e} of ‖w‖², \
             monotone {monotone}, {:.2}s < {}s",
            elapsed.as_secs_f64(),
            LIMIT.as_secs()
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 2

fn random_net(act_idx: usize, i: usize) -> MainNetWeights {
    let arch = Architecture::new(2, 8, 3);
    let seeds = SeedTree::new(2);
    let mut rng = seeds.stream("autodiff", (act_idx * 1000 + i) as u64);
    let mut w = MainNetWeights::init(&arch, &mut rng);
    for l in &mut w.layers {
        if let Some(b) = &mut l.b {
            b.mapv_inplace(|_| rng.gen_range(-0.5..0.5));
        }
    }
    w
}

/// Independent scalar forward pass.
fn oracle_forward(w: &MainNetWeights, act: Activation, x: &[f64]) -> f64 {
    let mut h = x.to_vec();
    let last = w.layers.len() - 1;
    for (li, l) in w.layers.iter().enumerate() {
        let mut z = vec![0.0; l.w.nrows()];
        for r in 0..l.w.nrows() {
            let mut acc = 0.0;
            for c in 0..l.w.ncols() {
                acc += l.w[[r, c]] * h[c];
            }
            if let Some(b) = &l.b {
                acc += b[r];
            }
            z[r] = if li == last { acc } else { act.apply(acc) };
        }
        h = z;
    }
    h[0]
}

fn jet_loss_f64(w: &MainNetWeights, act: Activation, pts: &Array2<f64>) -> f64 {
    let mut total = 0.0;
    for c in pts.columns() {
        let x = [c[0], c[1]];
        let dx = forward_dual(&x, 0, w, act).unwrap()[0];
        let dt = forward_dual(&x, 1, w, act).unwrap()[0];
        let v = dx.primal + 0.5 * dx.tangent1 + 0.25 * dx.tangent2 + 0.3 * dt.tangent1;
        total += v * v;
    }
    total / pts.ncols() as f64
}

fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / b.abs().max(floor)
}

#[test]
fn criterion_02_autodiff_fidelity() {
    const GRAD_TOL: f64 = 1e-5;
    const DERIV_TOL: f64 = 1e-4;
    const LIMIT: Duration = Duration::from_secs(30);
    let _g = serial();
    let start = Instant::now();
    let mut worst_grad: f64 = 0.0;
    let mut worst_first: f64 = 0.0;
    let mut worst_second: f64 = 0.0;
    for (ai, act) in Activation::ALL.into_iter().enumerate() {
        for i in 0..100 {
            let w = random_net(ai, i);
            let mut rng = SeedTree::new(2).stream("points", (ai * 1000 + i) as u64);
            let pts = Array2::from_shape_simple_fn((2, 4), || rng.gen_range(0.0..1.0));

            // Parameter gradient of a loss built from value and jets.
            let tape = Tape::new();
            let net = TapedNet::from_weights(&tape, &w, act, true);
            let jets = net.forward(&pts, &JetRequest::new(&[0, 1], &[0])).unwrap();
            let combo = jets.value
                + jets.d(0).unwrap().scale(0.5)
                + jets.dd(0).unwrap().scale(0.25)
                + jets.d(1).unwrap().scale(0.3);
            let loss = combo.mean_square();
            let grads = tape.gradient(loss, &net.vars()).unwrap();
            let h = 1e-5;
            let mut fd_all = Vec::new();
            let mut ad_all = Vec::new();
            for (li, l) in w.layers.iter().enumerate() {
                let gw = &grads[net
                    .vars()
                    .iter()
                    .position(|v| v.index() == net.layers[li].w.index())
                    .unwrap()];
                for r in 0..l.w.nrows() {
                    for c in 0..l.w.ncols() {
                        let mut p = w.clone();
                        p.layers[li].w[[r, c]] += h;
                        let up = jet_loss_f64(&p, act, &pts);
                        p.layers[li].w[[r, c]] -= 2.0 * h;
                        let dn = jet_loss_f64(&p, act, &pts);
                        fd_all.push((up - dn) / (2.0 * h));
                        ad_all.push(gw[[r, c]]);
                    }
                }
                if let (Some(b), Some(bv)) = (&l.b, net.layers[li].b) {
                    let gb = &grads[net
                        .vars()
                        .iter()
                        .position(|v| v.index() == bv.index())
                        .unwrap()];
                    for r in 0..b.len() {
                        let mut p = w.clone();
                        p.layers[li].b.as_mut().unwrap()[r] += h;
                        let up = jet_loss_f64(&p, act, &pts);
                        p.layers[li].b.as_mut().unwrap()[r] -= 2.0 * h;
                        let dn = jet_loss_f64(&p, act, &pts);
                        fd_all.push((up - dn) / (2.0 * h));
                        ad_all.push(gb[[r, 0]]);
                    }
                }
            }
            let scale = fd_all.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for (a, f) in ad_all.iter().zip(&fd_all) {
                worst_grad = worst_grad.max(rel_err(*a, *f, 1e-3 * scale));
            }

            // Input derivatives against differences of the scalar oracle.
            let value = jets.value.value().clone();
            let d0 = jets.d(0).unwrap().value().clone();
            let d1 = jets.d(1).unwrap().value().clone();
            let dd0 = jets.dd(0).unwrap().value().clone();
            for (j, c) in pts.columns().into_iter().enumerate() {
                let x = [c[0], c[1]];
                let f = |dx: f64, dt: f64| oracle_forward(&w, act, &[x[0] + dx, x[1] + dt]);
                assert!((value[[0, j]] - f(0.0, 0.0)).abs() < 1e-12);
                let (h1, h2) = (1e-5, 2e-4);
                let fd_x = (f(h1, 0.0) - f(-h1, 0.0)) / (2.0 * h1);
                let fd_t = (f(0.0, h1) - f(0.0, -h1)) / (2.0 * h1);
                let fd_xx = (f(h2, 0.0) - 2.0 * f(0.0, 0.0) + f(-h2, 0.0)) / (h2 * h2);
                worst_first = worst_first
                    .max(rel_err(d0[[0, j]], fd_x, 1e-3))
                    .max(rel_err(d1[[0, j]], fd_t, 1e-3));
                worst_second = worst_second.max(rel_err(dd0[[0, j]], fd_xx, 1e-3));
            }
        }
    }
    let elapsed = start.elapsed();
    let pass = worst_grad < GRAD_TOL
        && worst_first < DERIV_TOL
        && worst_second < DERIV_TOL
        && elapsed < LIMIT;
    report(
        2,
        pass,
        format!(
            "400 nets: parameter gradient rel. error {worst_grad:.2e} < {GRAD_TOL:.0e}, \
             first derivative {worst_first:.2e} and second derivative {worst_second:.2e} \
             < {DERIV_TOL:.0e} (relative, floor 1e-3), {:.1}s < {}s",
            elapsed.as_secs_f64(),
            LIMIT.as_secs()
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 3

#[test]
fn criterion_03_theorem2_harness() {
    const LIMIT: Duration = Duration::from_secs(10);
    let _g = serial();
    let start = Instant::now();
    let exec = Execution::available();
    let at_bound = theorem2_sweep(1000, 64, 8, 1e-6, 1.0, 3, exec).unwrap();
    let inflated = theorem2_sweep(1000, 64, 8, 1e-6, 10.0, 3, exec).unwrap();
    let elapsed = start.elapsed();
    let pass = at_bound.holds == 1000
        && inflated.fails >= 1
        && !inflated.counterexamples.is_empty()
        && elapsed < LIMIT;
    report(
        3,
        pass,
        format!(
            "bound α: {}/1000 hold; α×10: {} counterexamples; {:.2}s < {}s",
            at_bound.holds,
            inflated.fails,
            elapsed.as_secs_f64(),
            LIMIT.as_secs()
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 4

fn flat_eta(value: f64) -> ParameterSample {
    let sensors: Vec<f64> = (0..101).map(|i| i as f64 / 100.0).collect();
    ParameterSample::new(vec![value; 101], sensors).unwrap()
}

/// One hidden unit with zero input weights: output `c`, all derivatives zero.
fn constant_net(dim: usize, c: f64) -> MainNetWeights {
    let h = 1.0f64.tanh();
    MainNetWeights {
        layers: vec![
            LayerWeights {
                w: Array2::zeros((1, dim)),
                b: Some(array![1.0]),
            },
            LayerWeights {
                w: array![[c / h]],
                b: None,
            },
        ],
    }
}

#[test]
fn criterion_04_manufactured_solutions() {
    const TOL: f64 = 1e-8;
    const LIMIT: Duration = Duration::from_secs(5);
    let _g = serial();
    let start = Instant::now();
    let mut rng = SeedTree::new(4).stream("points", 0);
    let pts1 = Array2::from_shape_simple_fn((1, 50), || rng.gen_range(0.0..1.0));
    let pts2 = Array2::from_shape_simple_fn((2, 50), || rng.gen_range(0.0..1.0));
    let mut worst: BTreeMap<&str, f64> = BTreeMap::new();
    let mut note = |name, rs: &[f64]| {
        let m = rs.iter().fold(0.0f64, |a, r| a.max(r.abs()));
        let e = worst.entry(name).or_insert(0.0);
        *e = e.max(m);
    };

    // s = x with u ≡ 1, realised as (1/ε) sin(εx).
    let eps = 1e-5;
    let linear = MainNetWeights {
        layers: vec![
            LayerWeights {
                w: array![[eps]],
                b: Some(array![0.0]),
            },
            LayerWeights {
                w: array![[1.0 / eps]],
                b: None,
            },
        ],
    };
    let anti = PdeProblem::new(Benchmark::Antiderivative);
    note(
        "antiderivative",
        &residuals(&anti, &linear, Activation::Sine, &flat_eta(1.0), &pts1).unwrap(),
    );
    note("antiderivative", &[residual_antiderivative(1.0, 1.0)]);

    // Constant fields for advection and Burgers; s ≡ 0 with u ≡ 0 for diffusion.
    let adv = PdeProblem::new(Benchmark::Advection);
    let eta_a = ParameterSample::new(
        (0..101)
            .map(|i| 1.0 + 0.2 * (i as f64 / 30.0).sin())
            .collect(),
        (0..101).map(|i| i as f64 / 100.0).collect(),
    )
    .unwrap();
    note(
        "advection",
        &residuals(&adv, &constant_net(2, 0.7), Activation::Tanh, &eta_a, &pts2).unwrap(),
    );
    let burgers = PdeProblem::new(Benchmark::Burgers);
    for c in [0.0, -1.3, 0.75] {
        note(
            "burgers",
            &residuals(
                &burgers,
                &constant_net(2, c),
                Activation::Tanh,
                &flat_eta(c),
                &pts2,
            )
            .unwrap(),
        );
    }
    let diff = PdeProblem::new(Benchmark::Diffusion);
    note(
        "diffusion",
        &residuals(
            &diff,
            &constant_net(2, 0.0),
            Activation::Gelu,
            &flat_eta(0.0),
            &pts2,
        )
        .unwrap(),
    );
    // s = x t with u = x − k x² t², exact derivatives.
    let manufactured: Vec<f64> = pts2
        .columns()
        .into_iter()
        .map(|c| {
            let (x, t) = (c[0], c[1]);
            residual_diffusion(
                x * t,
                x,
                0.0,
                x - REACTION * x * x * t * t,
                DIFFUSIVITY,
                REACTION,
            )
        })
        .collect();
    note("diffusion", &manufactured);
    note("advection", &[residual_advection(0.0, 0.0, 1.1)]);
    note("burgers", &[residual_burgers(2.0, 0.0, 0.0, 0.0, NU)]);

    // Initial data sin(πx) realised exactly by one sine unit.
    let ic_net = MainNetWeights {
        layers: vec![
            LayerWeights {
                w: array![[PI, 0.0]],
                b: Some(array![0.0]),
            },
            LayerWeights {
                w: array![[1.0]],
                b: None,
            },
        ],
    };
    let batch = CollocationBatch::sample(
        Benchmark::Advection,
        CollocationCounts {
            m_r: 1,
            m_bc: 1,
            m_ic: 50,
        },
        1.0,
        1.0,
        &mut rng,
    )
    .unwrap();
    let (_, ic) = bc_ic_terms(&adv, &ic_net, Activation::Sine, &eta_a, &batch).unwrap();
    note("advection initial data", &ic);

    let elapsed = start.elapsed();
    let pass = worst.values().all(|&m| m < TOL) && elapsed < LIMIT;
    let detail: Vec<String> = worst.iter().map(|(k, v)| format!("{k} {v:.1e}")).collect();
    report(
        4,
        pass,
        format!(
            "max |r| < {TOL:.0e}: {}; {:.2}s < {}s",
            detail.join(", "),
            elapsed.as_secs_f64(),
            LIMIT.as_secs()
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 5

fn eigen_series(x: f64, t: f64, d: f64) -> f64 {
    (0..2000)
        .map(|i| {
            let n = (2 * i + 1) as f64;
            let lam = d * (n * PI).powi(2);
            4.0 / (n * PI) * (1.0 - (-lam * t).exp()) / lam * (n * PI * x).sin()
        })
        .sum()
}

#[test]
fn criterion_05_reference_solvers() {
    const ANTI_TOL: f64 = 1e-6;
    const ADV_TOL: f64 = 2e-2;
    const DIFF_TOL: f64 = 1e-3;
    const LIMIT: Duration = Duration::from_secs(120);
    let _g = serial();
    let start = Instant::now();
    let settings = SolverSettings::default();

    let lat1 = Lattice::new(100, 1);
    let anti =
        solve_antiderivative_reference(|x| (PI * x).cos(), &lat1, OdeOptions::default()).unwrap();
    let anti_err = anti
        .values
        .iter()
        .zip(&lat1.x)
        .map(|(s, x)| (s - (PI * x).sin() / PI).abs())
        .fold(0.0, f64::max);

    let lat = Lattice::new(100, 100);
    let adv = solve_advection_reference(|_| 1.0, 512, settings.advection_cfl, &lat).unwrap();
    let exact = Array2::from_shape_fn((100, 100), |(i, j)| {
        let (x, t) = (lat.x[j], lat.t[i]);
        if x > t {
            (PI * (x - t)).sin()
        } else {
            (0.5 * PI * (t - x)).sin()
        }
    });
    let adv_err = rel_l2(&adv.values, &exact);

    let c = 0.625;
    let burgers = solve_burgers_reference(|_| c, NU, settings.burgers_modes, &lat).unwrap();
    let burgers_exact = burgers.values.iter().all(|&v| v == c);

    let diff = solve_diffusion_reference(
        |_| 1.0,
        DIFFUSIVITY,
        0.0,
        settings.diffusion_intervals,
        settings.diffusion_steps,
        &lat,
    )
    .unwrap();
    let series = Array2::from_shape_fn((100, 100), |(i, j)| {
        eigen_series(lat.x[j], lat.t[i], DIFFUSIVITY)
    });
    // t = 0 is identically zero in both.
    let diff_err = rel_l2(
        &diff.values.slice(ndarray::s![1.., ..]).to_owned(),
        &series.slice(ndarray::s![1.., ..]).to_owned(),
    );

    let elapsed = start.elapsed();
    let pass = anti_err < ANTI_TOL
        && adv_err < ADV_TOL
        && burgers_exact
        && diff_err < DIFF_TOL
        && elapsed < LIMIT;
    report(
        5,
        pass,
        format!(
            "anti-derivative {anti_err:.1e} < {ANTI_TOL:.0e}, advection rel. L2 {adv_err:.2e} < {ADV_TOL:.0e}, \
             Burgers constant exact {burgers_exact}, diffusion rel. L2 {diff_err:.1e} < {DIFF_TOL:.0e}, \
             {:.1}s < {}s",
            elapsed.as_secs_f64(),
            LIMIT.as_secs()
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 6

#[test]
fn criterion_06_parameter_accounting() {
    const TARGET: f64 = 0.31;
    const TOL: f64 = 0.10;
    let _g = serial();
    let cfg = TrainConfig::preset(Benchmark::Antiderivative);
    assert_eq!(cfg.arch.width, 64);
    assert_eq!(cfg.arch.hidden_layers, 4);
    assert_eq!(
        cfg.codec,
        SpectralCodecConfig {
            p_input: 32,
            p_hidden: 2048,
            p_output: 16
        }
    );
    let m = 100;
    let reduced = parameter_count(
        &cfg.arch,
        &cfg.codec,
        &cfg.hyper,
        m,
        HyperMode::FourierReduced,
    )
    .unwrap();
    let full = parameter_count(
        &cfg.arch,
        &cfg.codec,
        &cfg.hyper,
        m,
        HyperMode::FullSpectrum,
    )
    .unwrap();
    // The count must be what training actually optimises.
    let params = HyperNetParams::init(
        HyperMode::FourierReduced,
        cfg.arch,
        cfg.codec,
        cfg.hyper,
        m,
        &mut SeedTree::new(6).stream("init", 0),
    )
    .unwrap();
    assert_eq!(params.n_params(), reduced.hypernet_params);
    let ratio = reduced.hypernet_params as f64 / full.hypernet_params as f64;
    let pass = (ratio - TARGET).abs() <= TOL;
    report(
        6,
        pass,
        format!(
            "fourier_reduced {} / full_spectrum {} = {ratio:.3}, expected {TARGET} ± {TOL}",
            reduced.hypernet_params, full.hypernet_params
        ),
    );
    assert!(pass, "ratio {ratio}");
}

// ---------------------------------------------------------------- 7 and 8

struct DeskRun {
    cfg: TrainConfig,
    data: Dataset,
    params: HyperNetParams,
    history: Vec<HistoryRow>,
    train_time: Duration,
}

const DESK_TRAIN: usize = 100;
const DESK_HELD_OUT: usize = 10;

/// Anti-derivative, 100 GRF samples, width 32, truncations 16/256/8, 100 epochs.
fn desk_run() -> &'static DeskRun {
    static RUN: OnceLock<DeskRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let start = Instant::now();
        let (data, _) = Dataset::generate(
            Benchmark::Antiderivative,
            DESK_TRAIN + DESK_HELD_OUT,
            7,
            &SolverSettings::default(),
            Execution::available(),
        )
        .unwrap();
        let mut cfg = desk_config(
            Benchmark::Antiderivative,
            32,
            SpectralCodecConfig {
                p_input: 16,
                p_hidden: 256,
                p_output: 8,
            },
            100,
            7,
        );
        cfg.collocation = CollocationCounts::default();
        let etas: Vec<_> = (0..DESK_TRAIN).map(|i| data.eta(i)).collect();
        let out = pretrain(&cfg, &etas, None, &mut ()).unwrap();
        DeskRun {
            cfg,
            data,
            params: out.checkpoint.params,
            history: out.history,
            train_time: start.elapsed(),
        }
    })
}

fn held_out_l2(run: &DeskRun, i: usize, w: &MainNetWeights) -> f64 {
    let pred = predict_field(w, run.cfg.activation, &run.data.lattice).unwrap();
    rel_l2(&pred, &run.data.samples[i].field)
}

#[test]
fn criterion_07_desk_pretraining() {
    const L2_TOL: f64 = 0.05;
    const LIMIT: Duration = Duration::from_secs(15 * 60);
    let _g = serial();
    let run = desk_run();
    let start = Instant::now();
    let errs: Vec<f64> = (DESK_TRAIN..DESK_TRAIN + DESK_HELD_OUT)
        .map(|i| {
            let w = run.params.generate_weights(&run.data.eta(i)).unwrap();
            held_out_l2(run, i, &w)
        })
        .collect();
    let mean = errs.iter().sum::<f64>() / errs.len() as f64;
    let windows = window_means(&run.history, 10 * DESK_TRAIN);
    let monotone = windows.windows(2).all(|p| p[1] < p[0]);
    let elapsed = run.train_time + start.elapsed();
    let pass = mean <= L2_TOL && monotone && elapsed < LIMIT;
    let w: Vec<String> = windows.iter().map(|v| format!("{v:.3}")).collect();
    report(
        7,
        pass,
        format!(
            "held-out mean rel. L2 {mean:.3} (≤ {L2_TOL}), 10-epoch loss means [{}] monotone {monotone}, {:.0}s < {}s",
            w.join(", "),
            elapsed.as_secs_f64(),
            LIMIT.as_secs()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_08_finetuning_trend() {
    let _g = serial();
    let run = desk_run();
    let i = DESK_TRAIN;
    let eta = run.data.eta(i);
    let zero_shot_w = run.params.generate_weights(&eta).unwrap();
    let (zero_epoch, hist0) = finetune(&run.cfg, &run.params, &eta, 0).unwrap();
    let identical = hist0.is_empty() && zero_epoch == zero_shot_w;
    let (tuned, _) = finetune(&run.cfg, &run.params, &eta, 300).unwrap();
    let before = held_out_l2(run, i, &zero_shot_w);
    let after = held_out_l2(run, i, &tuned);
    let pass = identical && after <= before;
    report(
        8,
        pass,
        format!(
            "held-out sample {i}: zero-shot rel. L2 {before:.4}, after 300 epochs {after:.4}; \
             zero-epoch reconstruction bit-exact {identical}"
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 9

#[test]
fn criterion_09_ablation_harness() {
    const RATIO: f64 = 0.5;
    let _g = serial();
    let gen = EtaGenerator::new(Benchmark::Diffusion, 100).unwrap();
    let seeds = SeedTree::new(9);
    let etas: Vec<_> = (0..10)
        .map(|i| gen.sample(&mut seeds.stream("data", i)))
        .collect();
    let mut base = desk_config(
        Benchmark::Diffusion,
        16,
        SpectralCodecConfig {
            p_input: 16,
            p_hidden: 128,
            p_output: 8,
        },
        50,
        9,
    );
    base.collocation = CollocationCounts {
        m_r: 256,
        m_bc: 128,
        m_ic: 128,
    };
    let variants: Vec<(String, TrainConfig)> = [HyperMode::FourierReduced, HyperMode::SingleHyper]
        .into_iter()
        .map(|mode| {
            (
                mode.name().to_string(),
                TrainConfig {
                    mode,
                    ..base.clone()
                },
            )
        })
        .collect();
    let runs = run_ablation(&variants, &etas, Execution::available()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("ablation.csv");
    write_ablation_csv(std::fs::File::create(&csv).unwrap(), &runs).unwrap();
    let text = std::fs::read_to_string(&csv).unwrap();
    let csv_ok = text.starts_with("label,step,loss,loss_r,loss_bc,loss_ic\n")
        && text.lines().count() == 1 + 2 * 10 * 50;
    let ratios: Vec<f64> = runs.iter().map(|r| r.final_loss / r.initial_loss).collect();
    let pass = csv_ok && ratios.iter().all(|&r| r <= RATIO);
    let detail: Vec<String> = runs
        .iter()
        .zip(&ratios)
        .map(|(r, q)| format!("{} final/initial {q:.3}", r.label))
        .collect();
    let trend = if runs[0].final_loss <= runs[1].final_loss {
        "layered ≤ single"
    } else {
        "single < layered"
    };
    report(
        9,
        pass,
        format!(
            "{} (each ≤ {RATIO}); CSV emitted {csv_ok}; trend (not gated): {trend}",
            detail.join(", ")
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 10

#[test]
fn criterion_10_continuity_study() {
    const LIMIT: Duration = Duration::from_secs(20 * 60);
    let _g = serial();
    let start = Instant::now();
    let cfg = ContinuityConfig::default();
    assert_eq!(cfg.x0, vec![0.4, 0.5, 2.0]);
    let report_ = continuity_study(&cfg, Execution::available()).unwrap();
    let mut csv = Vec::new();
    report_.write_csv(&mut csv).unwrap();
    let csv = String::from_utf8(csv).unwrap();
    let layers = report_.distances[0].len();
    let produced = csv.starts_with("layer,d12,d23\n") && csv.lines().count() == layers + 1;
    let elapsed = start.elapsed();
    let pass = produced && report_.majority_ordered && elapsed < LIMIT;
    report(
        10,
        pass,
        format!(
            "‖W1−W2‖₁ < ‖W2−W3‖₁ on {} of {layers} layers, report produced {produced}, {:.0}s < {}s",
            report_.ordered_layers,
            elapsed.as_secs_f64(),
            LIMIT.as_secs()
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 11

fn lfr(dir: &Path, args: &[&str], threads: Option<&str>) {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_lfr"));
    cmd.current_dir(dir).arg("--quiet").args(args);
    if let Some(t) = threads {
        cmd.env("LFR_THREADS", t);
    }
    let out = cmd.output().unwrap();
    assert!(
        out.status.success(),
        "lfr {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn run_pipeline(dir: &Path, threads: Option<&str>) {
    std::fs::write(
        dir.join("run.json"),
        r#"{"version": 1, "benchmark": "antiderivative", "dataset": "data/antiderivative.lfrd",
            "n_train": 6, "out_dir": "out",
            "train": {"epochs_pretrain": 2, "checkpoint_every": 1, "arch": {"width": 8},
                      "codec": {"p_input": 4, "p_hidden": 16, "p_output": 3},
                      "collocation": {"m_r": 32, "m_bc": 1, "m_ic": 1}},
            "reports": {"freq_error": true, "freq_error_every": 2, "spectrum": true}}"#,
    )
    .unwrap();
    lfr(
        dir,
        &[
            "generate",
            "--benchmark",
            "antiderivative",
            "-n",
            "8",
            "--seed",
            "11",
            "--out",
            "data",
        ],
        threads,
    );
    lfr(
        dir,
        &["pretrain", "--config", "run.json", "--seed", "11"],
        threads,
    );
    lfr(
        dir,
        &[
            "finetune",
            "--config",
            "run.json",
            "--checkpoint",
            "out/checkpoint.lfrp",
            "--eta-index",
            "7",
            "--epochs",
            "4",
            "--out",
            "ft",
        ],
        threads,
    );
    lfr(
        dir,
        &[
            "evaluate",
            "--config",
            "run.json",
            "--checkpoint",
            "out/checkpoint.lfrp",
            "--split",
            "6..8",
            "--out",
            "ev",
        ],
        threads,
    );
    lfr(
        dir,
        &[
            "analyze",
            "theorem2",
            "--instances",
            "50",
            "--seed",
            "11",
            "--out",
            "an",
        ],
        threads,
    );
    lfr(
        dir,
        &["analyze", "params", "--config", "run.json", "--out", "an"],
        threads,
    );
    lfr(
        dir,
        &["analyze", "theorem1", "--config", "run.json", "--out", "an"],
        threads,
    );
    lfr(
        dir,
        &[
            "analyze",
            "spectrum",
            "--config",
            "run.json",
            "--checkpoint",
            "out/checkpoint.lfrp",
            "--eta-index",
            "1",
            "--out",
            "an",
        ],
        threads,
    );
    lfr(
        dir,
        &[
            "analyze",
            "freq-error",
            "--config",
            "run.json",
            "--out",
            "fe",
        ],
        threads,
    );
    lfr(
        dir,
        &[
            "analyze", "ablation", "--config", "run.json", "--epochs", "1", "--out", "ab",
        ],
        threads,
    );
    lfr(
        dir,
        &[
            "analyze",
            "continuity",
            "--epochs",
            "3",
            "--seed",
            "11",
            "--out",
            "co",
        ],
        threads,
    );
}

fn files(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn criterion_11_determinism() {
    let _g = serial();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_pipeline(a.path(), Some("4"));
    run_pipeline(b.path(), Some("1"));
    let (fa, fb) = (files(a.path()), files(b.path()));
    let same_names = fa.keys().eq(fb.keys());
    let mut compared = 0;
    let mut differing = Vec::new();
    for (name, bytes) in &fa {
        let Some(other) = fb.get(name) else { continue };
        compared += 1;
        let equal = if name.ends_with(".manifest.json") {
            let pa: serde_json::Value = serde_json::from_slice(bytes).unwrap();
            let pb: serde_json::Value = serde_json::from_slice(other).unwrap();
            assert!(pa["timestamps"].is_object());
            pa["run"] == pb["run"]
        } else {
            bytes == other
        };
        if !equal {
            differing.push(name.clone());
        }
    }
    let kinds = ["lfrd", "lfrp", "history.csv"]
        .iter()
        .all(|k| fa.keys().any(|n| n.ends_with(k)));
    let pass = same_names && kinds && differing.is_empty();
    report(
        11,
        pass,
        format!(
            "{compared} files from two runs (LFR_THREADS=4 vs 1): \
             identical names {same_names}, differing {differing:?}"
        ),
    );
    assert!(pass);
}
