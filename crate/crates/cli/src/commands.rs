use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use nai_core::data::{generate_sbm, load_dataset_dir, write_dataset, DatasetBundle, SbmPreset};
use nai_core::distill::{read_bank, write_bank, ClassifierBank, DistillConfig};
use nai_core::engine::{
    pareto_front, select_within, sweep_orders, Budget, Candidate, Engine, ExecutionMode,
    InferenceOutcome, NapConfig, DEFAULT_TS_QUANTILES,
};
use nai_core::graph::NormKind;
use nai_core::metering::{benchmark, comparison_table, MacsBreakdown, MethodResult, VANILLA};
use nai_core::pipeline::{
    build_views, calibrate, prepare, GraphView, InductiveViews, PropagationSettings,
};
use nai_core::propagation::{Backend, DistanceMode};
use nai_core::train::{read_classifier, write_classifier, Classifier, ClassifierSpec, TrainConfig};
use nai_core::{NaiError, Result};

use crate::config::{lookup, parse_kv};
use crate::{
    BenchArgs, DistanceArg, DistillArgs, EvalArgs, GenArgs, InferArgs, SplitArg, SweepArgs,
    TrainArgs,
};

const TEACHER_FILE: &str = "teacher.naic";
const TEACHER_MANIFEST: &str = "manifest.txt";
const TEACHER_FORMAT: &str = "nai-teacher/1";

fn cfg_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(NaiError::Config(msg.into()))
}

fn fmt_acc(a: Option<f64>) -> String {
    a.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"))
}

pub fn gen(a: GenArgs) -> Result<()> {
    let mut cfg = SbmPreset::from_name(&a.preset)?.config();
    macro_rules! set {
        ($($field:ident).+ = $value:expr) => {
            if let Some(v) = $value {
                cfg.$($field).+ = v;
            }
        };
    }
    set!(n = a.n);
    set!(blocks = a.blocks);
    set!(p_in = a.p_in);
    set!(p_out = a.p_out);
    set!(dim = a.dim);
    set!(mu = a.mu);
    set!(sigma = a.sigma);
    set!(fractions.labeled_train = a.labeled_frac);
    set!(fractions.unlabeled_train = a.unlabeled_frac);
    set!(fractions.validation = a.val_frac);
    set!(fractions.test = a.test_frac);
    cfg.validate()?;
    for w in cfg.warnings() {
        eprintln!("warning: {w}");
    }
    let bundle = generate_sbm(&cfg, a.seed)?;
    write_dataset(&bundle, &a.out)?;
    println!(
        "wrote {} to {}: n={} m={} f={} c={}",
        bundle.name,
        a.out.display(),
        bundle.graph.n(),
        bundle.graph.m(),
        bundle.features.cols(),
        bundle.num_classes
    );
    if a.calibrate {
        let report = calibrate(&bundle, &TrainConfig::default())?;
        let status = if report.ok {
            "calibration ok"
        } else {
            "calibration failed"
        };
        let text = format!(
            "raw_linear_val = {:.4}\npropagated_val = {:.4}\norder = {}\nstatus = {status}\n",
            report.raw_linear_val, report.propagated_val, report.order
        );
        fs::write(a.out.join("calibration.txt"), &text)?;
        print!("{text}");
    }
    Ok(())
}

fn spec_of(hidden: &[usize]) -> ClassifierSpec {
    if hidden.is_empty() {
        ClassifierSpec::linear()
    } else {
        ClassifierSpec::mlp(hidden)
    }
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

pub fn train(a: TrainArgs) -> Result<()> {
    let norm = NormKind::new(a.prop.r_coef)?;
    if a.prop.k == 0 {
        return cfg_err("k must be at least 1");
    }
    let cfg = TrainConfig {
        epochs: a.epochs,
        lr: a.optim.lr,
        weight_decay: a.optim.weight_decay,
        dropout: a.optim.dropout,
        batch_size: None,
        seed: a.seed,
    };
    cfg.validate()?;
    let bundle = load_dataset_dir(&a.data)?;
    let settings = PropagationSettings {
        norm,
        k: a.prop.k,
        backend: a.prop.backend,
    };
    let data = prepare(&bundle, settings)?;
    let spec = spec_of(&a.hidden);
    let trained = data.train_base(&spec, &cfg)?;

    fs::create_dir_all(&a.out)?;
    let mut w = BufWriter::new(File::create(a.out.join(TEACHER_FILE))?);
    write_classifier(&mut w, &trained.classifier, a.prop.k, a.prop.backend)?;
    w.flush()?;
    let manifest = format!(
        "format = {TEACHER_FORMAT}\nbackend = {}\nr_coef = {}\nk = {}\nhidden = {}\nseed = {}\ndataset = {}\nval_acc = {}\nbest_epoch = {}\n",
        a.prop.backend,
        norm.r(),
        a.prop.k,
        join(&a.hidden),
        a.seed,
        bundle.name,
        fmt_acc(trained.best_val_acc),
        trained.best_epoch
    );
    fs::write(a.out.join(TEACHER_MANIFEST), manifest)?;
    println!(
        "order {} validation accuracy {} (epoch {})",
        a.prop.k,
        fmt_acc(trained.best_val_acc),
        trained.best_epoch
    );
    Ok(())
}

struct Teacher {
    classifier: Classifier,
    backend: Backend,
    norm: NormKind,
    k: usize,
    hidden: Vec<usize>,
}

fn read_teacher(dir: &Path) -> Result<Teacher> {
    let path = dir.join(TEACHER_MANIFEST);
    let origin = path.display().to_string();
    let kv = parse_kv(&fs::read_to_string(&path)?, &origin)?;
    let bad = |key: &str| NaiError::Input(format!("{origin}: bad value for {key:?}"));
    if lookup(&kv, "format", &origin)? != TEACHER_FORMAT {
        return Err(NaiError::Input(format!(
            "{origin}: not a teacher checkpoint"
        )));
    }
    let backend: Backend = lookup(&kv, "backend", &origin)?.parse()?;
    let r: f64 = lookup(&kv, "r_coef", &origin)?
        .parse()
        .map_err(|_| bad("r_coef"))?;
    let k: usize = lookup(&kv, "k", &origin)?.parse().map_err(|_| bad("k"))?;
    let hidden_text = lookup(&kv, "hidden", &origin)?;
    let hidden = if hidden_text.is_empty() {
        Vec::new()
    } else {
        hidden_text
            .split(',')
            .map(|s| s.trim().parse().map_err(|_| bad("hidden")))
            .collect::<Result<_>>()?
    };
    let ck = read_classifier(BufReader::new(File::open(dir.join(TEACHER_FILE))?))?;
    if ck.order != k || ck.backend != backend {
        return Err(NaiError::Input(format!(
            "{origin}: checkpoint holds order {} / {}, manifest says {k} / {backend}",
            ck.order, ck.backend
        )));
    }
    Ok(Teacher {
        classifier: ck.classifier,
        backend,
        norm: NormKind::new(r)?,
        k,
        hidden,
    })
}

pub fn distill(a: DistillArgs) -> Result<()> {
    let teacher = read_teacher(&a.teacher)?;
    if let Some(b) = a.backend {
        if b != teacher.backend {
            return cfg_err(format!(
                "--backend {b} does not match the checkpoint backend {}",
                teacher.backend
            ));
        }
    }
    if let Some(k) = a.k {
        if k != teacher.k {
            return cfg_err(format!(
                "--k {k} does not match the checkpoint order {}",
                teacher.k
            ));
        }
    }
    if let Some(r) = a.r_coef {
        if r != teacher.norm.r() {
            return cfg_err(format!(
                "--r-coef {r} does not match the checkpoint r={}",
                teacher.norm.r()
            ));
        }
    }
    let cfg = DistillConfig {
        temperature: a.temp,
        lambda: a.lambda,
        ensemble_size: a.r_ens,
        offline_epochs: a.offline_epochs,
        online_epochs: a.online_epochs,
        lr: a.optim.lr,
        weight_decay: a.optim.weight_decay,
        dropout: a.optim.dropout,
        seed: a.seed,
        activation: a.activation.into(),
        teacher_mix: a.teacher_mix.into(),
        stop_teacher_grad: a.stop_teacher_grad,
    };
    cfg.validate(teacher.k)?;
    let bundle = load_dataset_dir(&a.data)?;
    let settings = PropagationSettings {
        norm: teacher.norm,
        k: teacher.k,
        backend: teacher.backend,
    };
    let data = prepare(&bundle, settings)?;
    let spec = spec_of(&teacher.hidden);
    let task = data.task(&spec);
    let mut bank = nai_core::distill::offline_distill(&teacher.classifier, &task, &cfg)?;
    if !a.offline_only {
        bank = nai_core::distill::online_distill(&bank, &task, &cfg)?;
    }
    let extra: BTreeMap<String, String> = [
        ("dataset", bundle.name.clone()),
        ("hidden", join(&teacher.hidden)),
        ("temperature", cfg.temperature.to_string()),
        ("lambda", cfg.lambda.to_string()),
        ("r_ens", cfg.ensemble_size.to_string()),
        ("online", (!a.offline_only).to_string()),
        ("teacher_mix", cfg.teacher_mix.to_string()),
        ("stop_teacher_grad", cfg.stop_teacher_grad.to_string()),
        ("seed", cfg.seed.to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    write_bank(&a.out, &bank, &extra)?;
    for (i, acc) in bank.val_acc.iter().enumerate() {
        println!("order {} validation accuracy {}", i + 1, fmt_acc(*acc));
    }
    Ok(())
}

struct Loaded {
    bundle: DatasetBundle,
    bank: ClassifierBank,
    views: InductiveViews,
}

fn load_eval(e: &EvalArgs) -> Result<Loaded> {
    let (bank, _) = read_bank(&e.bank)?;
    let bundle = load_dataset_dir(&e.data)?;
    if bundle.num_classes != bank.classes() {
        return cfg_err(format!(
            "bank predicts {} classes, dataset has {}",
            bank.classes(),
            bundle.num_classes
        ));
    }
    let views = build_views(&bundle, bank.norm)?;
    Ok(Loaded {
        bundle,
        bank,
        views,
    })
}

/// View, local node ids and labels of one evaluation split.
fn split_nodes(l: &Loaded, split: SplitArg) -> Result<(&GraphView, Vec<usize>, Vec<usize>)> {
    let (view, nodes) = match split {
        SplitArg::Test => (&l.views.test, &l.bundle.split.test),
        SplitArg::Validation => (&l.views.val, &l.bundle.split.validation),
    };
    if nodes.is_empty() {
        return cfg_err("the requested split has no nodes");
    }
    Ok((view, view.local(nodes)?, l.bundle.labels_of(nodes)?))
}

fn macs_line(m: &MacsBreakdown) -> String {
    let per = |v: u64| v as f64 / m.nodes.max(1) as f64;
    format!(
        "total={:.1} fp={:.1} stationary={:.1} propagation={:.1} distance={:.1} classification={:.1}",
        m.total_per_node(),
        m.feature_processing_per_node(),
        per(m.stationary),
        per(m.propagation),
        per(m.distance),
        per(m.classification)
    )
}

fn report(
    name: &str,
    split: SplitArg,
    cfg: &NapConfig,
    k: usize,
    acc: f64,
    out: &InferenceOutcome,
) -> String {
    let nodes = out.records.len();
    let mut s = String::new();
    let _ = writeln!(s, "dataset {name}");
    let _ = writeln!(
        s,
        "nodes {nodes} ({})",
        if split == SplitArg::Test {
            "test"
        } else {
            "validation"
        }
    );
    let _ = writeln!(
        s,
        "config ts={} tmin={} tmax={} batch_size={} distance={}",
        cfg.ts,
        cfg.t_min,
        cfg.t_max,
        cfg.batch_size,
        if cfg.distance == DistanceMode::Raw {
            "raw"
        } else {
            "normalized"
        }
    );
    let _ = writeln!(s, "accuracy {acc:.4}");
    let _ = writeln!(s, "exits {}", join(&out.histogram(k)));
    let _ = writeln!(s, "macs_per_node {}", macs_line(&out.macs));
    let _ = writeln!(s, "summary_macs {}", out.macs.summary);
    let per_node = |d: std::time::Duration| d.as_secs_f64() * 1e3 / nodes.max(1) as f64;
    let _ = writeln!(
        s,
        "time_ms_per_node total={:.6} fp={:.6}",
        per_node(out.timings.total),
        per_node(out.timings.feature_processing)
    );
    s
}

pub fn infer(a: InferArgs) -> Result<()> {
    let l = load_eval(&a.eval)?;
    let k = l.bank.order();
    let cfg = NapConfig {
        ts: a.ts,
        t_min: a.tmin,
        t_max: a.tmax.unwrap_or(k),
        batch_size: a.eval.batch_size,
        distance: match a.distance {
            DistanceArg::Raw => DistanceMode::Raw,
            DistanceArg::Normalized => DistanceMode::RowNormalized,
        },
    };
    cfg.validate(k)?;
    let (view, nodes, labels) = split_nodes(&l, a.split)?;
    let engine = view.engine(&l.bank)?;
    let mode = if a.parallel {
        ExecutionMode::Parallel
    } else {
        ExecutionMode::Sequential
    };
    let out = engine.infer(&cfg, &nodes, mode)?;
    let acc = out.accuracy(&labels)?;
    let text = report(&l.bundle.name, a.split, &cfg, k, acc, &out);
    print!("{text}");
    if let Some(dir) = &a.out {
        fs::create_dir_all(dir)?;
        let mut w = BufWriter::new(File::create(dir.join("predictions.csv"))?);
        writeln!(w, "id,exit_order,distance,predicted_class")?;
        for r in &out.records {
            let d = r.distance.map_or_else(String::new, |d| format!("{d:e}"));
            writeln!(
                w,
                "{},{},{},{}",
                view.ids.to_old(r.node),
                r.order,
                d,
                r.predicted
            )?;
        }
        w.flush()?;
        fs::write(dir.join("report.txt"), text)?;
    }
    Ok(())
}

fn parse_nai(spec: &str) -> Result<(f64, usize, usize)> {
    let parts: Vec<&str> = spec.split(':').collect();
    let bad = || NaiError::Config(format!("--nai {spec:?}: expected ts:tmin:tmax"));
    if parts.len() != 3 {
        return Err(bad());
    }
    Ok((
        parts[0].trim().parse().map_err(|_| bad())?,
        parts[1].trim().parse().map_err(|_| bad())?,
        parts[2].trim().parse().map_err(|_| bad())?,
    ))
}

fn measure(
    engine: &Engine<'_>,
    name: String,
    cfg: &NapConfig,
    nodes: &[usize],
    labels: &[usize],
    a: &BenchArgs,
) -> Result<MethodResult> {
    let once = engine.infer(cfg, nodes, ExecutionMode::Sequential)?;
    let acc = once.accuracy(labels)?;
    let timing = benchmark(a.reps, a.warmup, cfg.batch_size, nodes.len(), || {
        Ok(engine
            .infer(cfg, nodes, ExecutionMode::Sequential)?
            .timings
            .feature_processing)
    })?;
    Ok(MethodResult::new(name, acc, &once.macs, &timing))
}

pub fn bench(a: BenchArgs) -> Result<()> {
    let configs: Vec<(f64, usize, usize)> =
        a.nai.iter().map(|s| parse_nai(s)).collect::<Result<_>>()?;
    let l = load_eval(&a.eval)?;
    let k = l.bank.order();
    let nap: Vec<NapConfig> = configs
        .iter()
        .map(|&(ts, t_min, t_max)| NapConfig {
            batch_size: a.eval.batch_size,
            ..NapConfig::new(ts, t_min, t_max)
        })
        .collect();
    for c in &nap {
        c.validate(k)?;
    }
    let (view, nodes, labels) = split_nodes(&l, SplitArg::Test)?;
    let engine = view.engine(&l.bank)?;
    let vanilla = NapConfig {
        batch_size: a.eval.batch_size,
        ..NapConfig::vanilla(k)
    };
    let mut results = vec![measure(
        &engine,
        VANILLA.to_string(),
        &vanilla,
        &nodes,
        &labels,
        &a,
    )?];
    for c in &nap {
        let name = format!("nai:{}:{}:{}", c.ts, c.t_min, c.t_max);
        results.push(measure(&engine, name, c, &nodes, &labels, &a)?);
    }
    let table = comparison_table(&results)?;
    print!("{}", table.render());
    if let Some(dir) = &a.out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("comparison.csv"), table.to_csv())?;
    }
    Ok(())
}

fn candidate_row(c: &Candidate) -> String {
    format!(
        "{},{},{},{:.6},{:.1},{:.1},{:.6},{}",
        c.config.ts,
        c.config.t_min,
        c.config.t_max,
        c.accuracy,
        c.macs.total_per_node(),
        c.macs.feature_processing_per_node(),
        c.time.as_secs_f64() * 1e3 / c.macs.nodes.max(1) as f64,
        c.histogram
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join(";")
    )
}

const CANDIDATE_HEADER: &str =
    "ts,tmin,tmax,accuracy,macs_per_node,fp_macs_per_node,time_ms_per_node,exits";

pub fn sweep(a: SweepArgs) -> Result<()> {
    let l = load_eval(&a.eval)?;
    let k = l.bank.order();
    let all: Vec<usize> = (1..=k).collect();
    let t_min = if a.tmin.is_empty() {
        all.clone()
    } else {
        a.tmin.clone()
    };
    let t_max = if a.tmax.is_empty() {
        all
    } else {
        a.tmax.clone()
    };
    if let Some(&bad) = t_max.iter().find(|&&t| t > k || t == 0) {
        return cfg_err(format!("T_max={bad} outside 1..={k}"));
    }
    if t_min.contains(&0) {
        return cfg_err("T_min must be at least 1");
    }
    if a.ts.iter().any(|&t| t.is_nan() || t < 0.0) {
        return cfg_err("thresholds must be nonnegative");
    }
    let budget = a.max_fp_mmacs.map(|m| Budget {
        max_fp_macs_per_node: Some(m * 1e6),
        ..Budget::default()
    });
    let (val_view, val_nodes, val_labels) = split_nodes(&l, SplitArg::Validation)?;
    let val_engine = val_view.engine(&l.bank)?;
    let ts = (!a.ts.is_empty()).then_some(a.ts.as_slice());
    let ranked = sweep_orders(
        &val_engine,
        &t_min,
        &t_max,
        ts,
        &DEFAULT_TS_QUANTILES,
        &val_nodes,
        &val_labels,
        budget.as_ref(),
        a.eval.batch_size,
    )?;
    let front = pareto_front(&ranked);
    let vanilla_val = val_engine
        .infer_vanilla(k, &val_nodes, a.eval.batch_size, ExecutionMode::Sequential)?
        .accuracy(&val_labels)?;

    println!(
        "{} candidates on {} validation nodes",
        ranked.len(),
        val_nodes.len()
    );
    println!("vanilla order {k} validation accuracy {vanilla_val:.4}");
    println!("top candidates\n{CANDIDATE_HEADER}");
    for c in ranked.iter().take(10) {
        println!("{}", candidate_row(c));
    }
    println!("pareto front\n{CANDIDATE_HEADER}");
    for c in &front {
        println!("{}", candidate_row(c));
    }
    if let Some(pick) = select_within(&ranked, vanilla_val, a.tolerance / 100.0) {
        let (test_view, test_nodes, test_labels) = split_nodes(&l, SplitArg::Test)?;
        let engine = test_view.engine(&l.bank)?;
        let van =
            engine.infer_vanilla(k, &test_nodes, a.eval.batch_size, ExecutionMode::Sequential)?;
        let nai = engine.infer(&pick.config, &test_nodes, ExecutionMode::Sequential)?;
        let c = &pick.config;
        println!(
            "selected ts={} tmin={} tmax={}: test accuracy {:.4} vs vanilla {:.4}, fp macs per node {:.1} vs {:.1}",
            c.ts,
            c.t_min,
            c.t_max,
            nai.accuracy(&test_labels)?,
            van.accuracy(&test_labels)?,
            nai.macs.feature_processing_per_node(),
            van.macs.feature_processing_per_node()
        );
    } else {
        println!("no candidate within {} points of vanilla", a.tolerance);
    }
    if let Some(dir) = &a.out {
        fs::create_dir_all(dir)?;
        let mut text = format!("rank,{CANDIDATE_HEADER}\n");
        for (i, c) in ranked.iter().enumerate() {
            let _ = writeln!(text, "{},{}", i + 1, candidate_row(c));
        }
        fs::write(dir.join("candidates.csv"), text)?;
        let mut text = format!("{CANDIDATE_HEADER}\n");
        for c in &front {
            let _ = writeln!(text, "{}", candidate_row(c));
        }
        fs::write(dir.join("pareto.csv"), text)?;
    }
    Ok(())
}
