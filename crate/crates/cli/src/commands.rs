//! Subcommand implementations.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{anyhow, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use bppm::evaluation::{
    adjusted_rand_index, deviation_experiment, predict_discrete_baseline, predict_rolling, DeviationConfig, ParamsRule,
    PredictionProtocol, PredictionReport,
};
use bppm::events::{load_events, write_events, AdjacencyMatrix, ClassAssignment, EventStream, LoadOptions, NodeMap};
use bppm::generator::{sample_classes, sample_network, BlockHawkesModel};
use bppm::hawkes::MleConfig;
use bppm::inference::{local_search, variational_em, FitResult, HorizonMode, LocalSearchConfig, VariationalState, VemConfig};
use bppm::spectral::{singular_value_profile, spectral_cluster, SpectralConfig as ClusterConfig};

use crate::config::{
    resolve, AggregateConfig, CheckTheoremConfig, EvalAriConfig, FitConfig, Method, PredictConfig, SimulateConfig,
    SpectralConfig,
};
use crate::formats::{assignment_for, cell, read_labels, read_model, write_labels, write_table, ModelFile};
use crate::output::{write_atomic, write_json, Run};
use crate::{
    AggregateFlags, CheckTheoremFlags, EvalAriFlags, Failure, FitFlags, PredictFlags, SimulateFlags, SpectralFlags,
};

type Outcome = std::result::Result<(), Failure>;

fn usage<T>(r: Result<T>) -> std::result::Result<T, Failure> {
    r.map_err(Failure::Usage)
}

/// Uses the configured seed or draws a fresh one, which is then recorded.
fn settle_seed(seed: &mut Option<u64>) -> u64 {
    *seed.get_or_insert_with(rand::random)
}

/// Generator for the `index`-th independent task of a run.
fn sub_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn load(path: &Path, horizon: Option<f64>) -> Result<(EventStream, NodeMap)> {
    load_events(path, LoadOptions { num_nodes: None, horizon })
        .with_context(|| format!("loading events from {}", path.display()))
}

pub fn simulate(file: Option<&Path>, flags: &SimulateFlags) -> Outcome {
    let mut cfg: SimulateConfig = usage(resolve("simulate", file, flags))?;
    usage(cfg.validate())?;
    let seed = settle_seed(&mut cfg.seed);
    let model = match &cfg.model {
        Some(path) => read_model(path)?,
        None => {
            let k = cfg.classes;
            let planted = BlockHawkesModel::planted(k, cfg.diagonal.params()?, cfg.off_diagonal.params()?)?;
            let probs = cfg.class_probs.clone().unwrap_or_else(|| vec![1.0 / k as f64; k]);
            BlockHawkesModel::new(probs, planted.params)?
        }
    };
    let (stream, truth) = sample_network(&model, cfg.nodes, cfg.horizon, &mut sub_rng(seed, 0))?;

    let dir = &cfg.out_dir;
    let mut run = Run::new("simulate", &cfg, Some(seed))?;
    let events = dir.join("events.csv");
    write_atomic(&events, |w| Ok(write_events(&stream, None, w)?))?;
    run.record(&events);
    let labels = dir.join("truth.csv");
    write_labels(&labels, &truth, &NodeMap::dense(cfg.nodes))?;
    run.record(&labels);
    let model_path = dir.join("model.json");
    write_json(&model_path, &ModelFile::from_model(&model))?;
    run.record(&model_path);
    run.finish_in(dir)?;
    println!(
        "simulated {} events among {} nodes over [0, {}] (seed {seed})",
        stream.len(),
        cfg.nodes,
        cfg.horizon
    );
    Ok(())
}

fn best_of(fits: Vec<FitResult>) -> FitResult {
    // first maximum wins ties
    fits.into_iter()
        .reduce(|best, f| if f.objective > best.objective { f } else { best })
        .expect("at least one restart")
}

pub fn fit(file: Option<&Path>, flags: &FitFlags) -> Outcome {
    let mut cfg: FitConfig = usage(resolve("fit", file, flags))?;
    let events = usage(cfg.validate())?.clone();
    let seed = settle_seed(&mut cfg.seed);
    let (stream, map) = load(&events, cfg.horizon)?;
    let k = cfg.classes;
    let n = stream.num_nodes();

    let cluster = ClusterConfig {
        tau: cfg.tau,
        scaled: cfg.scaled,
        ..ClusterConfig::default()
    };
    let ls = LocalSearchConfig {
        max_iterations: cfg.max_iterations,
        horizon: cfg.horizon_mode.map_or(HorizonMode::Window, Into::into),
        ..LocalSearchConfig::default()
    };
    let vem = VemConfig {
        max_iterations: cfg.max_iterations.unwrap_or(VemConfig::default().max_iterations),
        tol: cfg.tolerance,
        horizon: cfg.horizon_mode.map_or(HorizonMode::LastEvent, Into::into),
        ..VemConfig::default()
    };
    let spectral = |rng: &mut ChaCha8Rng| spectral_cluster(&AdjacencyMatrix::from_stream(&stream), k, &cluster, rng);

    let mut rng = sub_rng(seed, 0);
    let result = match cfg.method {
        Method::Spectral => {
            let (c, _) = spectral(&mut rng)?;
            // zero swaps: parameters fitted to the spectral labels
            let fixed = LocalSearchConfig {
                max_iterations: Some(0),
                ..ls.clone()
            };
            local_search(&stream, &c, k, &fixed)?
        }
        Method::SpectralLs => {
            let (c, _) = spectral(&mut rng)?;
            local_search(&stream, &c, k, &ls)?
        }
        Method::SpectralVem => {
            let (_, emb) = spectral(&mut rng)?;
            variational_em(&stream, &VariationalState::from_embedding(&emb, k), k, &vem)?
        }
        Method::RandomLs => {
            let uniform = vec![1.0 / k as f64; k];
            let fits = (0..cfg.restarts)
                .map(|r| {
                    let c0 = sample_classes(&uniform, n, &mut sub_rng(seed, 1 + r as u64))?;
                    local_search(&stream, &c0, k, &ls)
                })
                .collect::<bppm::Result<Vec<_>>>()?;
            best_of(fits)
        }
        Method::RandomVem => {
            let fits = (0..cfg.restarts)
                .map(|r| {
                    let tau0 = VariationalState::random(n, k, &mut sub_rng(seed, 1 + r as u64));
                    variational_em(&stream, &tau0, k, &vem)
                })
                .collect::<bppm::Result<Vec<_>>>()?;
            best_of(fits)
        }
    };
    for w in &result.warnings {
        log::warn!("{w}");
    }

    let dir = &cfg.out_dir;
    let mut run = Run::new("fit", &cfg, Some(seed))?;
    let labels = dir.join("labels.csv");
    write_labels(&labels, &result.assignment, &map)?;
    run.record(&labels);
    let model = dir.join("model.json");
    write_json(&model, &ModelFile::from_model(&result.model))?;
    run.record(&model);
    let trace = dir.join("trace.csv");
    write_table(
        &trace,
        &["iteration", "objective"],
        result.trace.iter().enumerate().map(|(i, v)| vec![i.to_string(), cell(Some(*v))]),
    )?;
    run.record(&trace);
    if let Some(tau) = &result.tau {
        let path = dir.join("tau.csv");
        let mut header = vec!["node".to_string()];
        header.extend((0..k).map(|q| format!("tau_{q}")));
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        write_table(
            &path,
            &header,
            (0..n).map(|i| {
                let mut row = vec![map.id_of(i)];
                row.extend(tau.row(i).iter().map(|&x| cell(Some(x))));
                row
            }),
        )?;
        run.record(&path);
    }
    let summary = dir.join("summary.json");
    write_json(
        &summary,
        &json!({
            "method": cfg.method,
            "num_classes": k,
            "num_nodes": n,
            "num_events": stream.len(),
            "objective": result.objective,
            "iterations": result.iterations,
            "converged": result.converged,
            "warnings": result.warnings,
        }),
    )?;
    run.record(&summary);
    run.finish_in(dir)?;
    println!(
        "objective {} after {} iterations; class sizes {:?}",
        result.objective,
        result.iterations,
        result.assignment.class_sizes()
    );
    Ok(())
}

pub fn spectral(file: Option<&Path>, flags: &SpectralFlags) -> Outcome {
    let mut cfg: SpectralConfig = usage(resolve("spectral", file, flags))?;
    let events = usage(crate::config::events_path(&cfg.events))?.clone();
    let seed = settle_seed(&mut cfg.seed);
    let (stream, map) = load(&events, cfg.horizon)?;
    let a = AdjacencyMatrix::from_stream(&stream);
    let cluster = ClusterConfig {
        tau: cfg.tau,
        scaled: cfg.scaled,
        ..ClusterConfig::default()
    };
    let (labels, emb) = spectral_cluster(&a, cfg.classes, &cluster, &mut sub_rng(seed, 0))?;
    let values = singular_value_profile(&a, cfg.top.min(a.num_nodes()), cfg.tau)?;
    for &i in &emb.zero_rows {
        log::warn!("node `{}` has an all-zero embedding row", map.id_of(i));
    }

    let dir = &cfg.out_dir;
    let mut run = Run::new("spectral", &cfg, Some(seed))?;
    let path = dir.join("labels.csv");
    write_labels(&path, &labels, &map)?;
    run.record(&path);
    let path = dir.join("embedding.csv");
    let k = cfg.classes;
    let mut header = vec!["node".to_string()];
    header.extend((0..k).map(|c| format!("u_{c}")));
    header.extend((0..k).map(|c| format!("v_{c}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    write_table(
        &path,
        &header,
        (0..a.num_nodes()).map(|i| {
            let mut row = vec![map.id_of(i)];
            row.extend(emb.rows.row(i).iter().map(|&x| cell(Some(x))));
            row
        }),
    )?;
    run.record(&path);
    let path = dir.join("singular_values.csv");
    write_table(
        &path,
        &["rank", "singular_value"],
        values.iter().enumerate().map(|(i, v)| vec![(i + 1).to_string(), cell(Some(*v))]),
    )?;
    run.record(&path);
    run.finish_in(dir)?;
    println!("tau {}; class sizes {:?}", emb.tau, labels.class_sizes());
    Ok(())
}

pub fn predict(file: Option<&Path>, flags: &PredictFlags) -> Outcome {
    let cfg: PredictConfig = usage(resolve("predict", file, flags))?;
    let (events, labels) = usage(cfg.validate())?;
    let (stream, map) = load(events, cfg.horizon)?;
    let classes = assignment_for(&read_labels(labels)?, &map, stream.num_nodes())?;
    let protocol = PredictionProtocol::from_fraction(&stream, classes, cfg.train_fraction, cfg.windows)?;
    let hours = cfg.time_unit_hours;

    let mut arms: Vec<(String, Option<f64>, PredictionReport)> = Vec::new();
    let bhm = predict_rolling(&stream, &protocol, cfg.horizon_mode.into(), &MleConfig::default())?;
    arms.push(("bhm".into(), None, bhm));
    for &snap in &cfg.snapshots {
        let report = predict_discrete_baseline(&stream, &protocol, snap / hours)?;
        arms.push(("discrete".into(), Some(snap), report));
    }

    let dir = &cfg.out_dir;
    let mut run = Run::new("predict", &cfg, None)?;
    let in_hours = |x: Option<f64>| cell(x.map(|v| v * hours));
    let path = dir.join("predictions.csv");
    let rows = arms.iter().flat_map(|(method, snap, report)| {
        report.records.iter().map(move |r| {
            vec![
                method.clone(),
                cell(*snap),
                r.window.to_string(),
                r.from_class.to_string(),
                r.to_class.to_string(),
                in_hours(r.predicted),
                in_hours(r.actual),
                r.flagged.to_string(),
            ]
        })
    });
    write_table(
        &path,
        &[
            "method",
            "snapshot_hours",
            "window",
            "from_class",
            "to_class",
            "predicted_hours",
            "actual_hours",
            "flagged",
        ],
        rows,
    )?;
    run.record(&path);
    let path = dir.join("rmse.csv");
    write_table(
        &path,
        &["method", "snapshot_hours", "within_rmse_hours", "between_rmse_hours", "total_rmse_hours"],
        arms.iter().map(|(method, snap, r)| {
            vec![
                method.clone(),
                cell(*snap),
                in_hours(r.within_rmse),
                in_hours(r.between_rmse),
                in_hours(r.total_rmse),
            ]
        }),
    )?;
    run.record(&path);
    run.finish_in(dir)?;
    for (method, snap, r) in &arms {
        let label = snap.map_or_else(|| method.clone(), |s| format!("{method} {s}h"));
        println!(
            "{label}: within {} between {} total {}",
            in_hours(r.within_rmse),
            in_hours(r.between_rmse),
            in_hours(r.total_rmse)
        );
    }
    Ok(())
}

pub fn check_theorem(file: Option<&Path>, flags: &CheckTheoremFlags) -> Outcome {
    let mut cfg: CheckTheoremConfig = usage(resolve("check-theorem", file, flags))?;
    if cfg.sims == 0 || cfg.sizes.is_empty() {
        return Err(Failure::Usage(anyhow!("need at least one size and one simulation")));
    }
    let seed = settle_seed(&mut cfg.seed);
    let experiment = DeviationConfig {
        sizes: cfg.sizes.clone(),
        rule: ParamsRule {
            alpha_per_node: cfg.alpha_per_node,
            beta_per_node: cfg.beta_per_node,
            lambda_per_node: cfg.lambda_per_node,
        },
        horizon: cfg.horizon,
        num_sims: cfg.sims,
    };
    let report = deviation_experiment(&experiment, &mut sub_rng(seed, 0))?;

    let dir = &cfg.out_dir;
    let mut run = Run::new("check-theorem", &cfg, Some(seed))?;
    let path = dir.join("deviation.csv");
    let header = [
        "num_nodes",
        "num_sims",
        "block_size",
        "mu",
        "mu_theory",
        "bound",
        "p_zero",
        "delta0",
        "delta1",
        "se0",
        "se1",
        "delta0_alt",
        "delta1_alt",
        "within_bound",
    ];
    write_table(
        &path,
        &header,
        report.points.iter().map(|p| {
            vec![
                p.num_nodes.to_string(),
                p.num_sims.to_string(),
                p.block_size.to_string(),
                cell(Some(p.mu)),
                cell(p.mu_theory),
                cell(Some(p.bound)),
                cell(Some(p.p_zero)),
                cell(p.delta0),
                cell(p.delta1),
                cell(p.se0),
                cell(p.se1),
                cell(p.delta0_alt),
                cell(p.delta1_alt),
                p.within_bound().to_string(),
            ]
        }),
    )?;
    run.record(&path);
    run.finish_in(dir)?;
    for p in &report.points {
        println!(
            "N={}: bound {:.3e} delta0 {} delta1 {} {}",
            p.num_nodes,
            p.bound,
            cell(p.delta0),
            cell(p.delta1),
            if p.within_bound() { "within" } else { "EXCEEDS" }
        );
    }
    Ok(())
}

pub fn eval_ari(file: Option<&Path>, flags: &EvalAriFlags) -> Outcome {
    let cfg: EvalAriConfig = usage(resolve("eval-ari", file, flags))?;
    let (Some(truth), Some(estimate)) = (&cfg.truth, &cfg.estimate) else {
        return Err(Failure::Usage(anyhow!("both `truth` and `estimate` are required")));
    };
    let truth_labels: BTreeMap<String, usize> = read_labels(truth)?.into_iter().collect();
    let estimate_labels = read_labels(estimate)?;
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for (node, l) in &estimate_labels {
        if let Some(&t) = truth_labels.get(node) {
            a.push(t);
            b.push(*l);
        }
    }
    if a.is_empty() {
        return Err(Failure::Runtime(anyhow!("the two labelings share no nodes")));
    }
    let skipped = estimate_labels.len() - a.len();
    if skipped > 0 {
        log::warn!("{skipped} estimated nodes have no true label and are ignored");
    }
    let ari = adjusted_rand_index(&ClassAssignment::from_labels(a.clone())?, &ClassAssignment::from_labels(b)?)?;
    if let Some(out) = &cfg.out {
        let mut run = Run::new("eval-ari", &cfg, None)?;
        write_json(out, &json!({"ari": ari, "nodes": a.len(), "unmatched": skipped}))?;
        run.record(out);
        run.finish_beside(out)?;
    }
    println!("{ari}");
    Ok(())
}

pub fn aggregate(file: Option<&Path>, flags: &AggregateFlags) -> Outcome {
    let cfg: AggregateConfig = usage(resolve("aggregate", file, flags))?;
    let events = usage(crate::config::events_path(&cfg.events))?.clone();
    let (stream, map) = load(&events, cfg.horizon)?;
    let t1 = cfg.t1.unwrap_or(0.0);
    let selected = match cfg.t2 {
        Some(t2) => {
            if !(t1 < t2) {
                return Err(Failure::Usage(anyhow!("aggregation window needs t1 < t2")));
            }
            stream.window(t1, t2)
        }
        None => stream.window(t1, f64::INFINITY),
    };
    let mut counts: BTreeMap<(usize, usize), u64> = BTreeMap::new();
    for e in selected {
        *counts.entry((e.sender, e.receiver)).or_default() += 1;
    }
    let mut run = Run::new("aggregate", &cfg, None)?;
    let value = |c: u64| if cfg.weighted { c } else { 1 };
    write_table(
        &cfg.out,
        &["sender", "receiver", if cfg.weighted { "count" } else { "edge" }],
        counts
            .iter()
            .map(|(&(i, j), &c)| vec![map.id_of(i), map.id_of(j), value(c).to_string()]),
    )?;
    run.record(&cfg.out);
    run.finish_beside(&cfg.out)?;
    println!("{} directed edges among {} nodes", counts.len(), stream.num_nodes());
    Ok(())
}
