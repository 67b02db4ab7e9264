use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fsdh::biqp::Solver;
use fsdh::codes::{expand_codes, pick_class_codes, sylvester};
use fsdh::dataset::write_csv;
use fsdh::eval::{bias_term_diagnostics, evaluate, loss_row, loss_table_csv, method_losses, BiasDiagnostics, EvalReport};
use fsdh::fsdh::{load_model, optimal_weights, save_model, train_fsdh, Fingerprint, KernelConfig};
use fsdh::index::CodeIndex;
use fsdh::sdh::{
    classification_loss, default_jitter, magnitude_report, train_sdh, trajectory_csv, ProjectionSolver, SdhConfig,
};
use fsdh::{linalg, HashModel, KernelMap, LabelArray, Method, RawDataset};

use crate::config::RunConfig;
use crate::data::{self, fail, Stage, StageError};

type CmdResult = Result<(), StageError>;

fn secs(d: Duration) -> String {
    format!("{:.3}", d.as_secs_f64())
}

fn median(mut v: Vec<Duration>) -> Duration {
    v.sort();
    v[v.len() / 2]
}

/// Creates the output directory and stores the effective config in it.
fn prepare_output(cfg: &RunConfig) -> Result<PathBuf, StageError> {
    fs::create_dir_all(&cfg.output)
        .map_err(|e| format!("{}: {e}", cfg.output.display()))
        .stage("output")?;
    write(&cfg.output.join("config.txt"), &cfg.to_text())?;
    Ok(cfg.output.clone())
}

fn write(path: &Path, contents: &str) -> CmdResult {
    fs::write(path, contents)
        .map_err(|e| format!("{}: {e}", path.display()))
        .stage("output")
}

fn kernel_config(cfg: &RunConfig) -> KernelConfig {
    KernelConfig {
        anchors: cfg.anchors,
        sigma: cfg.sigma,
        seed: cfg.seed,
    }
}

fn sdh_config(cfg: &RunConfig, bits: usize) -> SdhConfig {
    SdhConfig {
        bits,
        lambda: cfg.lambda,
        nu: cfg.nu,
        max_iters: cfg.iters,
        seed: cfg.seed,
        solver: cfg.solver.clone(),
        jitter: cfg.jitter,
    }
}

fn fingerprint(train: &RawDataset, seed: u64) -> Fingerprint {
    Fingerprint {
        samples: train.len() as u64,
        dim: train.dim() as u64,
        classes: train.class_count as u64,
        seed,
    }
}

/// Kernel map fitted on `train` and the mapped training features.
fn kernel_features(cfg: &RunConfig, train: &RawDataset) -> Result<(KernelMap, DMatrix<f64>), StageError> {
    let map = kernel_config(cfg).fit(train).stage("kernel")?;
    let x = map.transform(&train.features).stage("kernel")?;
    Ok((map, x))
}

struct Trained {
    model: HashModel,
    log: Vec<(String, String)>,
    trajectory: Option<String>,
}

fn train_method(
    cfg: &RunConfig,
    method: Method,
    bits: usize,
    train: &RawDataset,
    map: &KernelMap,
    x: &DMatrix<f64>,
) -> Result<Trained, StageError> {
    let mut log = Vec::new();
    let model = match method {
        Method::Fsdh => {
            let (projection, class_codes) =
                train_fsdh(x, &train.labels, train.class_count, bits, cfg.jitter).stage("train")?;
            let model = HashModel {
                kernel: map.clone(),
                projection,
                class_codes: Some(class_codes),
                lambda: cfg.lambda,
                method,
                fingerprint: fingerprint(train, cfg.seed),
            };
            let target = model.target_codes(&train.labels).stage("train")?;
            let got = model.encode_transformed(x).stage("train")?.unpack();
            let mismatched = target.iter().zip(got.iter()).filter(|(a, b)| a != b).count();
            log.push((
                "target_bit_mismatch_rate".into(),
                format!("{:.6}", mismatched as f64 / target.len().max(1) as f64),
            ));
            model
        }
        Method::Sdh => {
            let sdh_cfg = sdh_config(cfg, bits);
            let (state, trajectory) = train_sdh(x, &train.labels, train.class_count, &sdh_cfg).stage("train")?;
            let (cm, bm) = magnitude_report(&state, x, &train.labels, train.class_count).stage("train")?;
            if let Some(last) = trajectory.last() {
                log.push(("final_objective".into(), format!("{:.9}", last.total)));
                log.push(("final_classification_term".into(), format!("{:.9}", last.classification_term)));
                log.push(("final_bias_term".into(), format!("{:.9}", last.bias_term)));
            }
            log.push(("classification_magnitude".into(), format!("{cm:.9}")));
            log.push(("bias_magnitude".into(), format!("{bm:.9e}")));
            let model = HashModel {
                kernel: map.clone(),
                projection: state.projection,
                class_codes: None,
                lambda: cfg.lambda,
                method,
                fingerprint: fingerprint(train, cfg.seed),
            };
            return Ok(Trained {
                model,
                log,
                trajectory: Some(trajectory_csv(&trajectory)),
            });
        }
    };
    Ok(Trained {
        model,
        log,
        trajectory: None,
    })
}

pub fn train(cfg: &RunConfig) -> CmdResult {
    cfg.validate().stage("config")?;
    let out = prepare_output(cfg)?;
    let (train, _) = data::load(cfg, false)?;

    let t0 = Instant::now();
    let (map, x) = kernel_features(cfg, &train)?;
    let kernel_time = t0.elapsed();
    let t1 = Instant::now();
    let trained = train_method(cfg, cfg.method, cfg.bits, &train, &map, &x)?;
    let train_time = t1.elapsed();

    let model_path = out.join("model.fsdh");
    save_model(&trained.model, &model_path).stage("output")?;
    if let Some(csv) = &trained.trajectory {
        write(&out.join("trajectory.csv"), csv)?;
    }
    let mut log = vec![
        ("method".to_string(), cfg.method.to_string()),
        ("bits".into(), cfg.bits.to_string()),
        ("samples".into(), train.len().to_string()),
        ("dim".into(), train.dim().to_string()),
        ("classes".into(), train.class_count.to_string()),
        ("anchors".into(), cfg.anchors.to_string()),
        ("kernel_seconds".into(), secs(kernel_time)),
        ("train_seconds".into(), secs(train_time)),
        ("learning_seconds".into(), secs(kernel_time + train_time)),
    ];
    log.extend(trained.log);
    let text: String = log.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
    write(&out.join("train_log.txt"), &text)?;
    println!(
        "trained {} (L={}, N={}, M={}): learning time {} s",
        cfg.method,
        cfg.bits,
        train.len(),
        cfg.anchors,
        secs(kernel_time + train_time)
    );
    println!("model written to {}", model_path.display());
    Ok(())
}

fn check_compatible(model: &HashModel, ds: &RawDataset, what: &str) -> CmdResult {
    if model.kernel.source_dim() != ds.dim() {
        return fail(
            "eval",
            format!(
                "dimension mismatch: model expects {} features, {what} has {}",
                model.kernel.source_dim(),
                ds.dim()
            ),
        );
    }
    if model.classes() != ds.class_count {
        return fail(
            "eval",
            format!(
                "fingerprint mismatch: model was trained on {} classes, {what} has {}",
                model.classes(),
                ds.class_count
            ),
        );
    }
    Ok(())
}

pub fn eval(cfg: &RunConfig, model_path: &Path) -> CmdResult {
    let model = load_model(model_path)
        .map_err(|e| format!("{}: {e}", model_path.display()))
        .stage("model")?;
    let (database, queries) = data::load(cfg, true)?;
    let queries = queries.expect("load returns queries when asked");
    check_compatible(&model, &database, "the database set")?;
    check_compatible(&model, &queries, "the query set")?;
    let out = prepare_output(cfg)?;

    let t0 = Instant::now();
    let db_codes = model.encode(&database.features).stage("eval")?;
    let q_codes = model.encode(&queries.features).stage("eval")?;
    let encode_time = t0.elapsed();
    let index = CodeIndex::new(db_codes, database.labels.clone()).stage("eval")?;
    let report = evaluate(&index, &q_codes, &queries.labels, cfg.radius, cfg.zero_retrieval, cfg.per_query)
        .stage("eval")?;

    let header = format!(
        "model={}\nmethod={}\nanchors={}\n",
        model_path.display(),
        model.method,
        model.kernel.anchor_count()
    );
    let summary = header + &report.summary();
    write(&out.join("summary.txt"), &summary)?;
    write(&out.join("pr_curve.csv"), &report.pr_curve_csv())?;
    if cfg.per_query {
        write(&out.join("per_query.csv"), &report.per_query_csv())?;
    }
    print!("{summary}");
    println!("encode time {} s", secs(encode_time));
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Figure {
    /// SDH objective trajectories from random starts vs the closed-form optimum
    Fig1,
    /// Training time and retrieval quality vs code length
    Bitscale,
    /// W-loss and P-loss of both trainers vs code length
    Losses,
    /// Heatmap grids of K and B^T B with trace diagnostics
    Biasmap,
}

pub fn figures(cfg: &RunConfig, figure: Figure) -> CmdResult {
    match figure {
        Figure::Fig1 => fig1(cfg),
        Figure::Bitscale => bitscale(cfg),
        Figure::Losses => losses(cfg),
        Figure::Biasmap => biasmap(cfg),
    }
}

/// One sample per class at (L, C, N) = (16, 10, 10), `nu = 0`, random features.
fn fig1(cfg: &RunConfig) -> CmdResult {
    let (bits, classes) = (16usize, 10usize);
    if cfg.fig1_seeds == 0 {
        return fail("config", "fig1_seeds must be at least 1");
    }
    let out = prepare_output(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let x = DMatrix::from_fn(classes, classes, |_, _| rng.random_range(-1.0..1.0));
    let labels = LabelArray::new((0..classes).collect());

    let mut report = vec![
        format!("bits={bits}"),
        format!("classes={classes}"),
        "samples=10".into(),
        "nu=0".into(),
        format!("lambda={}", cfg.lambda),
        format!("iters={}", cfg.iters),
        format!("features=uniform[-1,1] {classes}x{classes}, seed {}", cfg.seed),
    ];
    for solver in [Solver::Dcc { max_sweeps: 3 }, Solver::Exhaustive] {
        let tag = match solver {
            Solver::Exhaustive => "exhaustive",
            _ => "dcc",
        };
        let mut finals = Vec::new();
        for seed in 0..cfg.fig1_seeds as u64 {
            let sdh_cfg = SdhConfig {
                bits,
                lambda: cfg.lambda,
                nu: 0.0,
                max_iters: cfg.iters,
                seed,
                solver: solver.clone(),
                jitter: cfg.jitter,
            };
            let (_, trajectory) = train_sdh(&x, &labels, classes, &sdh_cfg).stage("train")?;
            finals.push(trajectory.last().map(|o| o.total).unwrap_or(f64::NAN));
            write(&out.join(format!("fig1_{tag}_seed{seed}.csv")), &trajectory_csv(&trajectory))?;
        }
        let lo = finals.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = finals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        report.push(format!("{tag}_final_min={lo:.9}"));
        report.push(format!("{tag}_final_max={hi:.9}"));
    }

    let cc = pick_class_codes(&sylvester(bits).stage("train")?, classes).stage("train")?;
    let w = optimal_weights(&cc, cfg.lambda).stage("train")?;
    let b = expand_codes(&cc, &labels).stage("train")?.map(f64::from);
    let closed_form = classification_loss(&w, &b, &labels).stage("train")? + cfg.lambda * w.norm_squared();
    let l = bits as f64;
    report.push(format!("fsdh_objective={closed_form:.9}"));
    report.push(format!("formula_c_lambda_over_l_plus_lambda={:.9}", classes as f64 * cfg.lambda / (l + cfg.lambda)));
    report.push(format!("formula_l_over_l_plus_lambda={:.9}", l / (l + cfg.lambda)));
    let text = report.join("\n") + "\n";
    write(&out.join("fig1_reference.txt"), &text)?;
    print!("{text}");
    Ok(())
}

fn evaluate_model(model: &HashModel, x: &DMatrix<f64>, train: &RawDataset, test: &RawDataset, cfg: &RunConfig) -> Result<EvalReport, StageError> {
    let db = model.encode_transformed(x).stage("eval")?;
    let q = model.encode(&test.features).stage("eval")?;
    let index = CodeIndex::new(db, train.labels.clone()).stage("eval")?;
    evaluate(&index, &q, &test.labels, cfg.radius, cfg.zero_retrieval, false).stage("eval")
}

fn bitscale(cfg: &RunConfig) -> CmdResult {
    let (train, test) = data::load(cfg, true)?;
    let test = test.expect("queries requested");
    let out = prepare_output(cfg)?;
    let mut csv = String::from("method,bits,train_seconds,precision,recall,map\n");
    let mut methods = vec![Method::Fsdh];
    if cfg.include_sdh {
        methods.push(Method::Sdh);
    }
    for &bits in &cfg.bits_list.0 {
        for &method in &methods {
            let mut times = Vec::new();
            let mut last = None;
            for _ in 0..cfg.repeats {
                let t0 = Instant::now();
                let (map, x) = kernel_features(cfg, &train)?;
                let trained = train_method(cfg, method, bits, &train, &map, &x)?;
                times.push(t0.elapsed());
                last = Some((trained.model, x));
            }
            let (model, x) = last.expect("repeats >= 1");
            let report = evaluate_model(&model, &x, &train, &test, cfg)?;
            let t = secs(median(times));
            csv.push_str(&format!(
                "{method},{bits},{t},{:.6},{:.6},{:.6}\n",
                report.precision_at_radius, report.recall_at_radius, report.map
            ));
            println!(
                "{method} L={bits}: {t} s, precision {:.4}, map {:.4}",
                report.precision_at_radius, report.map
            );
        }
    }
    write(&out.join("bitscale.csv"), &csv)
}

fn losses(cfg: &RunConfig) -> CmdResult {
    let (train, _) = data::load(cfg, false)?;
    let out = prepare_output(cfg)?;
    let (_, x) = kernel_features(cfg, &train)?;
    let mut rows = Vec::new();
    for &bits in &cfg.bits_list.0 {
        let (p, cc) = train_fsdh(&x, &train.labels, train.class_count, bits, cfg.jitter).stage("train")?;
        let b = expand_codes(&cc, &train.labels).stage("train")?;
        let fsdh = method_losses(&b, &p, &x, &train.labels, train.class_count, cfg.lambda).stage("train")?;
        let (state, _) = train_sdh(&x, &train.labels, train.class_count, &sdh_config(cfg, bits)).stage("train")?;
        let sdh = method_losses(&state.codes, &state.projection, &x, &train.labels, train.class_count, cfg.lambda)
            .stage("train")?;
        println!(
            "L={bits}: W-loss sdh {:.6e} fsdh {:.6e}; P-loss sdh {:.4} fsdh {:.4}",
            sdh.w_loss, fsdh.w_loss, sdh.p_loss, fsdh.p_loss
        );
        rows.push(loss_row(bits, sdh, fsdh));
    }
    write(&out.join("losses.csv"), &loss_table_csv(&rows))
}

fn biasmap(cfg: &RunConfig) -> CmdResult {
    cfg.validate().stage("config")?;
    let (train, _) = data::load(cfg, false)?;
    let out = prepare_output(cfg)?;
    let (_, x) = kernel_features(cfg, &train)?;
    let jitter = cfg.jitter.unwrap_or_else(|| default_jitter(&linalg::gram(&x)));

    let (_, cc) = train_fsdh(&x, &train.labels, train.class_count, cfg.bits, cfg.jitter).stage("train")?;
    let fsdh_codes = expand_codes(&cc, &train.labels).stage("train")?;
    let (state, _) = train_sdh(&x, &train.labels, train.class_count, &sdh_config(cfg, cfg.bits)).stage("train")?;

    let fsdh = bias_term_diagnostics(&x, &fsdh_codes, &train.labels, jitter).stage("figures")?;
    let sdh = bias_term_diagnostics(&x, &state.codes, &train.labels, jitter).stage("figures")?;
    write(&out.join("k_matrix.csv"), &BiasDiagnostics::grid_csv(&fsdh.k_matrix))?;
    write(&out.join("btb_fsdh.csv"), &BiasDiagnostics::grid_csv(&fsdh.btb))?;
    write(&out.join("btb_sdh.csv"), &BiasDiagnostics::grid_csv(&sdh.btb))?;
    let order: Vec<String> = fsdh.order.iter().map(|i| i.to_string()).collect();
    write(&out.join("order.csv"), &(order.join("\n") + "\n"))?;
    let fmt_opt = |v: Option<f64>| v.map_or("none".to_string(), |g| format!("{g:.9}"));
    let text = format!(
        "samples={}\nbits={}\njitter={jitter:e}\ntrace_btb={:.9}\nfsdh_trace_bkb={:.9}\nfsdh_trace_grouped={}\nfsdh_bias_from_traces={:.9}\nsdh_trace_bkb={:.9}\nsdh_trace_grouped={}\nsdh_bias_from_traces={:.9}\n",
        train.len(),
        cfg.bits,
        fsdh.trace_btb,
        fsdh.trace_bkb,
        fmt_opt(fsdh.trace_grouped),
        fsdh.bias_from_traces(),
        sdh.trace_bkb,
        fmt_opt(sdh.trace_grouped),
        sdh.bias_from_traces(),
    );
    write(&out.join("biasmap.txt"), &text)?;
    print!("{text}");
    Ok(())
}

pub fn bench(cfg: &RunConfig) -> CmdResult {
    cfg.validate().stage("config")?;
    let (train, _) = data::load(cfg, false)?;
    let out = prepare_output(cfg)?;
    let anchors = cfg.anchors_list.as_ref().map_or(vec![cfg.anchors], |l| l.0.clone());
    let mut csv = String::from("method,anchors,bits,stage,median_seconds,repeats\n");
    let mut row = |method: &str, m: usize, bits: usize, stage: &str, times: Vec<Duration>| {
        let t = secs(median(times));
        println!("{method} M={m} L={bits} {stage}: {t} s");
        csv.push_str(&format!("{method},{m},{bits},{stage},{t},{}\n", cfg.repeats));
    };
    for &m in &anchors {
        let run_cfg = RunConfig { anchors: m, ..cfg.clone() };
        for &bits in &cfg.bits_list.0 {
            let (mut kernel, mut codes, mut solve, mut total) = (vec![], vec![], vec![], vec![]);
            for _ in 0..cfg.repeats {
                let t0 = Instant::now();
                let (_, x) = kernel_features(&run_cfg, &train)?;
                let t1 = Instant::now();
                let cc = pick_class_codes(&sylvester(bits).stage("train")?, train.class_count).stage("train")?;
                let mut sums = DMatrix::<f64>::zeros(x.nrows(), train.class_count);
                for (i, &y) in train.labels.as_slice().iter().enumerate() {
                    let mut col = sums.column_mut(y);
                    col += x.column(i);
                }
                let rhs = linalg::mul_transpose(&sums, &cc.to_f64());
                let t2 = Instant::now();
                let p = ProjectionSolver::new(&x, cfg.jitter).stage("train")?.solve(&rhs);
                let t3 = Instant::now();
                std::hint::black_box(p);
                kernel.push(t1 - t0);
                codes.push(t2 - t1);
                solve.push(t3 - t2);
                total.push(t3 - t0);
            }
            row("fsdh", m, bits, "kernel_transform", kernel);
            row("fsdh", m, bits, "code_construction", codes);
            row("fsdh", m, bits, "linear_solve", solve);
            row("fsdh", m, bits, "total", total);

            if cfg.include_sdh {
                let (mut kernel, mut training, mut total) = (vec![], vec![], vec![]);
                for _ in 0..cfg.repeats {
                    let t0 = Instant::now();
                    let (_, x) = kernel_features(&run_cfg, &train)?;
                    let t1 = Instant::now();
                    train_sdh(&x, &train.labels, train.class_count, &sdh_config(cfg, bits)).stage("train")?;
                    let t2 = Instant::now();
                    kernel.push(t1 - t0);
                    training.push(t2 - t1);
                    total.push(t2 - t0);
                }
                row("sdh", m, bits, "kernel_transform", kernel);
                row("sdh", m, bits, "alternating_optimization", training);
                row("sdh", m, bits, "total", total);
            }
        }
    }
    write(&out.join("bench.csv"), &csv)
}

pub fn synth(cfg: &RunConfig) -> CmdResult {
    let (train, test) = data::synth_split(cfg)?;
    let out = prepare_output(cfg)?;
    let paths = [
        ("train_features.csv", "train_labels.csv", &train),
        ("test_features.csv", "test_labels.csv", &test),
    ];
    for (f, l, ds) in paths {
        write_csv(ds, out.join(f), out.join(l))
            .map_err(|e| e.to_string())
            .stage("output")?;
    }
    println!(
        "wrote {} training and {} query samples ({} classes, dim {}) to {}",
        train.len(),
        test.len(),
        train.class_count,
        train.dim(),
        out.display()
    );
    println!(
        "use with: --set source=csv --set train_images={0}/train_features.csv --set train_labels={0}/train_labels.csv --set test_images={0}/test_features.csv --set test_labels={0}/test_labels.csv",
        out.display()
    );
    Ok(())
}
