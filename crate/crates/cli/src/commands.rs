//! Subcommand implementations.
//!
//! Every command is reproducible from (config, seed): all randomness
//! derives from the root seed through fixed stage tags, outputs are
//! written in deterministic order, and nothing time-dependent lands in
//! an artifact.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use latentctl::classifier::{train, AttributeClassifier, AttributeSpec, LabeledLatent};
use latentctl::control::{
    manipulate, DisentangleSpec, StepPolicy, StopReason, TrajectoryRecord,
};
use latentctl::eval::{
    attribute_dependency, logit_scatter, manipulation_accuracy, AdCurve, EvalRun, MetricsReport,
    Scorer,
};
use latentctl::numeric::{RngState, Vector};
use latentctl::synthworld::{boundary_sample, LatentBank, WorldSpec};
use rayon::prelude::*;

use crate::config::{parse_exclusions, pick, EditSection, FileConfig};
use crate::{EditArgs, EvalArgs, SweepArgs, SynthArgs, TrainArgs};

/// Seed-stage tags: every pipeline stage derives its stream from the
/// root seed through one of these, so stages never share draws.
const STAGE_BANK: u64 = 1;
const STAGE_TRAIN: u64 = 2;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;
pub const EXIT_MAX_STEPS: i32 = 5;

fn stop_reason_exit(reason: StopReason) -> i32 {
    match reason {
        StopReason::BoundaryCrossed => EXIT_OK,
        StopReason::MaxSteps => EXIT_MAX_STEPS,
        StopReason::VanishingGradient => EXIT_NUMERIC,
    }
}

fn labels_path(bank_path: &Path) -> PathBuf {
    let stem = bank_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "bank".into());
    bank_path.with_file_name(format!("{stem}.labels.jsonl"))
}

fn read_world(path: &Path) -> Result<WorldSpec> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading world {}", path.display()))?;
    Ok(WorldSpec::from_json(&text)?)
}

fn read_bank(path: &Path) -> Result<LatentBank> {
    let bytes = fs::read(path).with_context(|| format!("reading bank {}", path.display()))?;
    let labels = fs::read_to_string(labels_path(path))
        .with_context(|| format!("reading labels for {}", path.display()))?;
    Ok(LatentBank::from_bytes(&bytes, &labels)?)
}

fn load_classifiers(dir: &Path) -> Result<Vec<AttributeClassifier>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading classifier dir {}", dir.display()))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "gclf"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        bail!(latentctl::Error::MissingData(format!(
            "no .gclf files in {}",
            dir.display()
        )));
    }
    paths
        .iter()
        .map(|p| {
            let bytes = fs::read(p).with_context(|| format!("reading {}", p.display()))?;
            Ok(AttributeClassifier::load(&bytes)?)
        })
        .collect()
}

fn find_clf<'a>(clfs: &'a [AttributeClassifier], attr: &str) -> Result<&'a AttributeClassifier> {
    clfs.iter()
        .find(|c| c.attr.id == attr)
        .ok_or_else(|| latentctl::Error::UnknownAttribute(attr.to_string()).into())
}

pub fn cmd_synth(args: &SynthArgs) -> Result<i32> {
    let cfg = FileConfig::load(args.common.config.as_deref())?;
    let seed = pick(args.common.seed, cfg.seed, 0);
    let out_dir = pick(args.common.out_dir.clone(), cfg.out_dir, PathBuf::from("out"));
    let n = pick(args.bank_size, cfg.bank_size, 100_000);
    if n == 0 {
        bail!(latentctl::Error::InvalidArgument(
            "bank size must be >= 1".into()
        ));
    }
    fs::create_dir_all(&out_dir)?;

    println!("synth: seed {seed}, bank size {n}");
    let world = WorldSpec::default_world(seed);
    let world_path = out_dir.join("world.json");
    fs::write(&world_path, world.to_json()?)?;

    let bank = world.sample_bank(n, &RngState::new(seed).child(STAGE_BANK))?;
    let bank_path = out_dir.join("bank.gclb");
    fs::write(&bank_path, bank.to_bytes())?;
    fs::write(labels_path(&bank_path), bank.labels_to_jsonl())?;

    for attr in bank.attr_ids() {
        let classes = world.attribute(attr)?.label_classes();
        let mut counts = vec![0usize; classes];
        for i in 0..bank.len() {
            counts[bank.label(i, attr)?] += 1;
        }
        let balance: Vec<String> = counts
            .iter()
            .map(|&c| format!("{:.3}", c as f64 / bank.len() as f64))
            .collect();
        println!("  {attr}: class balance [{}]", balance.join(", "));
    }
    println!(
        "  wrote {}, {}, {}",
        world_path.display(),
        bank_path.display(),
        labels_path(&bank_path).display()
    );
    Ok(EXIT_OK)
}

/// Picks `per_class` bank entries per class for one attribute, in bank
/// order, mirroring a curated labeled subset.
fn training_set_from_bank(
    bank: &LatentBank,
    attr: &str,
    classes: usize,
    per_class: usize,
) -> Result<Vec<LabeledLatent>> {
    let mut counts = vec![0usize; classes];
    let mut out = Vec::with_capacity(classes * per_class);
    for i in 0..bank.len() {
        let label = bank.label(i, attr)?;
        if label < classes && counts[label] < per_class {
            counts[label] += 1;
            out.push(LabeledLatent {
                z: bank.latent(i)?,
                label,
            });
            if out.len() == classes * per_class {
                break;
            }
        }
    }
    if let Some(class) = counts.iter().position(|&c| c < per_class) {
        bail!(latentctl::Error::ClassCoverage {
            attr: attr.to_string(),
            class,
        });
    }
    Ok(out)
}

pub fn cmd_train(args: &TrainArgs) -> Result<i32> {
    let cfg = FileConfig::load(args.common.config.as_deref())?;
    let seed = pick(args.common.seed, cfg.seed, 0);
    let out_dir = pick(args.common.out_dir.clone(), cfg.out_dir, PathBuf::from("out"));
    let world_path = pick(args.world.clone(), cfg.world, out_dir.join("world.json"));
    let bank_path = pick(args.bank.clone(), cfg.bank, out_dir.join("bank.gclb"));

    let world = read_world(&world_path)?;
    let bank = read_bank(&bank_path)?;

    let mut train_cfg = cfg.train.unwrap_or_default();
    if let Some(per_class) = args.per_class {
        train_cfg.examples_per_class = per_class;
    }
    if let Some(epochs) = args.epochs {
        train_cfg.epochs = epochs;
    }
    if let Some(lr) = args.learning_rate {
        train_cfg.learning_rate = lr;
    }
    if let Some(wd) = args.weight_decay {
        train_cfg.weight_decay = wd;
    }
    if let Some(h) = args.hidden_width {
        train_cfg.hidden_width = h;
    }

    let attrs: Vec<String> = match args.attrs.clone().or(cfg.attributes) {
        Some(list) => list,
        None => bank.attr_ids().to_vec(),
    };
    for attr in &attrs {
        world.attribute(attr)?;
    }

    let clf_dir = out_dir.join("classifiers");
    fs::create_dir_all(&clf_dir)?;
    let holdout = bank.len().min(1000.max(bank.len() / 5));
    let holdout_start = bank.len() - holdout;
    println!(
        "train: seed {seed}, {} examples/class, epochs {}, holdout {holdout}",
        train_cfg.examples_per_class, train_cfg.epochs
    );

    let results: Vec<Result<(String, PathBuf, f64, f64)>> = attrs
        .par_iter()
        .enumerate()
        .map(|(idx, attr)| {
            let oracle_attr = world.attribute(attr)?;
            let spec = if oracle_attr.is_binary() {
                AttributeSpec::binary(attr.clone())
            } else {
                AttributeSpec::new(
                    attr.clone(),
                    oracle_attr.num_classes,
                    oracle_attr.class_names.clone(),
                )?
            };
            let data = training_set_from_bank(
                &bank,
                attr,
                spec.label_classes(),
                train_cfg.examples_per_class,
            )?;
            let mut cfg = train_cfg.clone();
            cfg.seed = RngState::new(seed).child(STAGE_TRAIN).child(idx as u64).seed();
            let outcome = train(&data, &spec, &cfg)?;

            let mut correct = 0usize;
            for i in holdout_start..bank.len() {
                if outcome.classifier.predict_label(&bank.latent(i)?)? == bank.label(i, attr)? {
                    correct += 1;
                }
            }
            let path = clf_dir.join(format!("clf_{attr}.gclf"));
            fs::write(&path, outcome.classifier.save())?;
            Ok((
                attr.clone(),
                path,
                outcome.train_accuracy,
                correct as f64 / holdout as f64,
            ))
        })
        .collect();

    for result in results {
        let (attr, path, train_acc, held_acc) = result?;
        println!(
            "  {attr}: train_acc {train_acc:.3} heldout_acc {held_acc:.3} -> {}",
            path.display()
        );
    }
    Ok(EXIT_OK)
}

struct EditSetup {
    world: WorldSpec,
    bank: LatentBank,
    classifiers: Vec<AttributeClassifier>,
    target: String,
    target_class: usize,
    spec: DisentangleSpec,
    policy: StepPolicy,
    out_dir: PathBuf,
    edit_cfg: EditSection,
}

fn edit_setup(args: &EditArgs) -> Result<EditSetup> {
    let cfg = FileConfig::load(args.common.config.as_deref())?;
    let out_dir = pick(args.common.out_dir.clone(), cfg.out_dir, PathBuf::from("out"));
    let world_path = pick(args.world.clone(), cfg.world, out_dir.join("world.json"));
    let bank_path = pick(args.bank.clone(), cfg.bank, out_dir.join("bank.gclb"));
    let clf_dir = pick(args.clf_dir.clone(), cfg.clf_dir, out_dir.join("classifiers"));

    let world = read_world(&world_path)?;
    let bank = read_bank(&bank_path)?;
    let classifiers = load_classifiers(&clf_dir)?;

    let edit_cfg = cfg.edit.unwrap_or_default();
    let target = args
        .target
        .clone()
        .or(edit_cfg.target.clone())
        .ok_or_else(|| {
            latentctl::Error::InvalidArgument("--target is required for edits".into())
        })?;
    find_clf(&classifiers, &target)?;
    let target_class = pick(args.target_class, edit_cfg.target_class, 0);

    let exclude_specs = args
        .exclude
        .clone()
        .or(edit_cfg.exclude.clone())
        .unwrap_or_default();
    let mut spec = DisentangleSpec::raw(target.clone(), target_class);
    for (attr, count) in parse_exclusions(&exclude_specs)? {
        find_clf(&classifiers, &attr)?;
        spec = spec.exclude(attr, count);
    }
    spec.validate()?;

    let mut policy = cfg.policy.unwrap_or_default();
    if let Some(alpha) = args.alpha {
        policy.alpha = alpha;
    }
    if let Some(max_steps) = args.max_steps {
        policy.max_steps = max_steps;
    }
    if args.no_normalize {
        policy.normalize = false;
    }
    if args.no_stop_on_boundary {
        policy.stop_on_boundary = false;
    }
    if let Some(mask) = &args.dim_mask {
        policy.dim_mask = Some(crate::config::parse_dim_mask(mask)?);
    }
    if let Some(mode) = args.mask_mode {
        policy.mask_mode = mode.into();
    }
    policy.validate()?;

    Ok(EditSetup {
        world,
        bank,
        classifiers,
        target,
        target_class,
        spec,
        policy,
        out_dir,
        edit_cfg,
    })
}

/// Flips alpha's sign so the step pushes the trained logit across zero
/// (binary targets only).
fn auto_signed(policy: &StepPolicy, clf: &AttributeClassifier, z: &Vector) -> Result<StepPolicy> {
    let mut policy = policy.clone();
    if clf.attr.is_binary() {
        let logit = clf.forward(z)?[0];
        policy.alpha = if logit > 0.0 {
            -policy.alpha.abs()
        } else {
            policy.alpha.abs()
        };
    }
    Ok(policy)
}

fn run_one_edit(
    setup: &EditSetup,
    z: &Vector,
    auto_sign: bool,
) -> Result<TrajectoryRecord> {
    let target_clf = find_clf(&setup.classifiers, &setup.target)?;
    let pool: Vec<&AttributeClassifier> = setup.classifiers.iter().collect();
    let policy = if auto_sign {
        auto_signed(&setup.policy, target_clf, z)?
    } else {
        setup.policy.clone()
    };
    let trajectory = manipulate(
        z,
        target_clf,
        setup.target_class,
        &pool,
        &setup.spec,
        &policy,
        &pool,
    )?;
    Ok(TrajectoryRecord {
        target_attr: setup.target.clone(),
        target_class: setup.target_class,
        trajectory,
    })
}

pub fn cmd_edit(args: &EditArgs) -> Result<i32> {
    let setup = edit_setup(args)?;
    fs::create_dir_all(&setup.out_dir)?;

    let boundary_count = args.boundary_count.or(setup.edit_cfg.boundary_count);
    let sources = [
        args.bank_index.is_some() || setup.edit_cfg.bank_index.is_some(),
        args.z_file.is_some(),
        boundary_count.is_some(),
    ];
    if sources.iter().filter(|&&s| s).count() != 1 {
        bail!(latentctl::Error::InvalidArgument(
            "give exactly one latent source: --bank-index, --z-file, or --boundary-count".into()
        ));
    }

    if let Some(count) = boundary_count {
        // Batch mode over boundary-sampled latents.
        let margin = pick(args.margin, setup.edit_cfg.margin, 0.5);
        let sel = boundary_sample(&setup.world, &setup.bank, &setup.target, margin, count)?;
        if sel.shortfall {
            println!(
                "warning: only {} of {count} boundary latents available",
                sel.indices.len()
            );
        }
        let traj_dir = setup.out_dir.join("trajectories");
        fs::create_dir_all(&traj_dir)?;
        let records: Vec<Result<TrajectoryRecord>> = sel
            .indices
            .par_iter()
            .map(|&i| run_one_edit(&setup, &setup.bank.latent(i)?, true))
            .collect();
        let mut reason_counts: BTreeMap<&'static str, usize> = BTreeMap::new();
        for (pos, record) in records.into_iter().enumerate() {
            let record = record?;
            *reason_counts
                .entry(record.trajectory.stop_reason.as_str())
                .or_default() += 1;
            fs::write(traj_dir.join(format!("traj_{pos:04}.jsonl")), record.to_jsonl())?;
        }
        println!(
            "edit: {} trajectories -> {} ({})",
            sel.indices.len(),
            traj_dir.display(),
            reason_counts
                .iter()
                .map(|(r, c)| format!("{r}: {c}"))
                .collect::<Vec<_>>()
                .join(", ")
        );
        return Ok(EXIT_OK);
    }

    // Single-latent mode.
    let z = if let Some(path) = &args.z_file {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading latent {}", path.display()))?;
        let values: Vec<f64> = serde_json::from_str(&text)?;
        Vector::new(values)?
    } else {
        let index = args.bank_index.or(setup.edit_cfg.bank_index).unwrap();
        setup.bank.latent(index)?
    };

    let record = run_one_edit(&setup, &z, args.auto_sign)?;
    let path = setup.out_dir.join("trajectory.jsonl");
    fs::write(&path, record.to_jsonl())?;
    println!(
        "edit: {} steps, stop_reason {} -> {}",
        record.trajectory.len(),
        record.trajectory.stop_reason.as_str(),
        path.display()
    );
    Ok(stop_reason_exit(record.trajectory.stop_reason))
}

pub fn cmd_sweep(args: &SweepArgs) -> Result<i32> {
    let setup = edit_setup(&args.edit)?;
    if setup.spec.entangled.is_empty() {
        bail!(latentctl::Error::InvalidArgument(
            "sweep needs at least one --exclude attribute".into()
        ));
    }
    let grid: Vec<usize> = match args.grid.clone().or(setup.edit_cfg.grid.clone()) {
        Some(grid) if !grid.is_empty() => grid,
        _ => vec![0, 50, 100, 150, 200, 250],
    };
    let count = pick(
        args.edit.boundary_count,
        setup.edit_cfg.boundary_count,
        40,
    );
    let margin = pick(args.edit.margin, setup.edit_cfg.margin, 0.5);
    let sel = boundary_sample(&setup.world, &setup.bank, &setup.target, margin, count)?;
    if sel.indices.is_empty() {
        bail!(latentctl::Error::MissingData(
            "no boundary latents for sweep".into()
        ));
    }

    let sweep_dir = setup.out_dir.join("sweep");
    let sorted_grid: BTreeSet<usize> = grid.iter().copied().collect();
    for &c in &sorted_grid {
        fs::create_dir_all(sweep_dir.join(format!("count_{c:03}")))?;
    }

    let per_latent: Vec<Result<BTreeMap<usize, TrajectoryRecord>>> = sel
        .indices
        .par_iter()
        .map(|&i| {
            let z = setup.bank.latent(i)?;
            let target_clf = find_clf(&setup.classifiers, &setup.target)?;
            let pool: Vec<&AttributeClassifier> = setup.classifiers.iter().collect();
            let policy = auto_signed(&setup.policy, target_clf, &z)?;
            let by_count = latentctl::control::sweep_exclusion_counts(
                &z,
                target_clf,
                setup.target_class,
                &pool,
                &setup.spec,
                &grid,
                &policy,
                &pool,
            )?;
            Ok(by_count
                .into_iter()
                .map(|(c, trajectory)| {
                    (
                        c,
                        TrajectoryRecord {
                            target_attr: setup.target.clone(),
                            target_class: setup.target_class,
                            trajectory,
                        },
                    )
                })
                .collect())
        })
        .collect();

    // drift per count: mean absolute oracle logit change of the excluded
    // attributes between trajectory endpoints.
    let excluded_attrs: Vec<String> = setup
        .spec
        .entangled
        .iter()
        .map(|r| r.attr.clone())
        .collect();
    let mut drift_sums: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for (pos, result) in per_latent.into_iter().enumerate() {
        for (c, record) in result? {
            let first = &record.trajectory.first().z;
            let last = &record.trajectory.last().z;
            let mut drift = 0.0;
            for attr in &excluded_attrs {
                drift += (setup.world.oracle_score(attr, last)?[0]
                    - setup.world.oracle_score(attr, first)?[0])
                    .abs();
            }
            drift /= excluded_attrs.len() as f64;
            let entry = drift_sums.entry(c).or_default();
            entry.0 += drift;
            entry.1 += 1;
            fs::write(
                sweep_dir.join(format!("count_{c:03}/traj_{pos:04}.jsonl")),
                record.to_jsonl(),
            )?;
        }
    }

    let summary: BTreeMap<String, f64> = drift_sums
        .iter()
        .map(|(c, (sum, n))| (format!("{c}"), sum / *n as f64))
        .collect();
    fs::write(
        setup.out_dir.join("sweep_summary.json"),
        serde_json::to_string_pretty(&serde_json::json!({
            "target": setup.target,
            "excluded": excluded_attrs,
            "latents": sel.indices.len(),
            "mean_confound_drift_by_count": summary,
        }))?,
    )?;
    println!("sweep: target {} over counts {sorted_grid:?}", setup.target);
    for (c, (sum, n)) in &drift_sums {
        println!("  count {c:3}: mean confound drift {:.4}", sum / *n as f64);
    }
    Ok(EXIT_OK)
}

fn collect_groups(dir: &Path) -> Result<BTreeMap<String, Vec<PathBuf>>> {
    let mut groups: BTreeMap<String, Vec<PathBuf>> = BTreeMap::new();
    let mut top_level = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let path = entry?.path();
        if path.is_dir() {
            let mut files: Vec<PathBuf> = fs::read_dir(&path)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|e| e == "jsonl"))
                .collect();
            files.sort();
            if !files.is_empty() {
                groups.insert(
                    path.file_name().unwrap().to_string_lossy().into_owned(),
                    files,
                );
            }
        } else if path.extension().is_some_and(|e| e == "jsonl") {
            top_level.push(path);
        }
    }
    if !top_level.is_empty() {
        top_level.sort();
        groups.insert("all".into(), top_level);
    }
    if groups.is_empty() {
        bail!(latentctl::Error::MissingData(format!(
            "no trajectory files under {}",
            dir.display()
        )));
    }
    Ok(groups)
}

pub fn cmd_eval(args: &EvalArgs) -> Result<i32> {
    let cfg = FileConfig::load(args.common.config.as_deref())?;
    let out_dir = pick(args.common.out_dir.clone(), cfg.out_dir, PathBuf::from("out"));
    let world_path = pick(args.world.clone(), cfg.world, out_dir.join("world.json"));
    let bank_path = pick(args.bank.clone(), cfg.bank, out_dir.join("bank.gclb"));
    let traj_dir = pick(
        args.trajectories.clone(),
        None,
        out_dir.join("trajectories"),
    );
    let eval_cfg = cfg.eval.unwrap_or_default();

    let world = read_world(&world_path)?;
    let bank = read_bank(&bank_path)?;
    let groups = collect_groups(&traj_dir)?;

    let measured: Vec<String> = match args.attrs.clone().or(cfg.attributes) {
        Some(list) => list,
        None => {
            let mut ids = world.attribute_ids();
            ids.sort();
            ids
        }
    };
    for attr in &measured {
        world.attribute(attr)?;
    }

    // Shared explicit bins keep AD curves comparable across groups;
    // without explicit edges, pool the observed target range.
    let scorer = Scorer::Oracle(world.clone());
    let mut loaded: BTreeMap<String, Vec<TrajectoryRecord>> = BTreeMap::new();
    for (group, files) in &groups {
        let mut records = Vec::with_capacity(files.len());
        for file in files {
            let text = fs::read_to_string(file)?;
            records.push(TrajectoryRecord::from_jsonl(&text)?);
        }
        loaded.insert(group.clone(), records);
    }

    let bin_edges: Option<Vec<f64>> = match args
        .bin_edges
        .clone()
        .or(eval_cfg.bin_edges.clone())
    {
        Some(edges) => Some(edges),
        None if groups.len() > 1 => Some(pooled_edges(&loaded, &scorer, &bank)?),
        None => None,
    };

    let mut all_reports: BTreeMap<String, MetricsReport> = BTreeMap::new();
    for (group, records) in &loaded {
        let run = EvalRun::from_bank(records.clone(), scorer.clone(), &bank)?;
        let accuracy = manipulation_accuracy(&run, &measured)?;

        let mut ad_curves: BTreeMap<String, AdCurve> = BTreeMap::new();
        let mut targets: BTreeSet<String> =
            records.iter().map(|r| r.target_attr.clone()).collect();
        targets.retain(|t| run.scorer.is_binary(t).unwrap_or(false));
        for target in &targets {
            let curve = attribute_dependency(&run, target, bin_edges.as_deref())?;
            let csv_name = if group == "all" {
                format!("ad_{target}.csv")
            } else {
                format!("ad_{target}_{group}.csv")
            };
            fs::write(out_dir.join(csv_name), curve.to_csv())?;
            ad_curves.insert(target.clone(), curve);
        }

        let scatter = match (
            args.scatter_x.clone().or(eval_cfg.scatter_x.clone()),
            args.scatter_y.clone().or(eval_cfg.scatter_y.clone()),
        ) {
            (Some(x), Some(y)) => logit_scatter(&run, &x, &y)?,
            _ => Vec::new(),
        };

        let report = MetricsReport {
            scorer: run.scorer.kind().to_string(),
            accuracy,
            ad_curves,
            scatter,
        };
        let metrics_name = if group == "all" {
            "metrics.json".to_string()
        } else {
            format!("metrics_{group}.json")
        };
        fs::write(
            out_dir.join(&metrics_name),
            serde_json::to_string_pretty(&report)?,
        )?;
        all_reports.insert(group.clone(), report);
    }

    println!("eval: {} group(s) from {}", all_reports.len(), traj_dir.display());
    for (group, report) in &all_reports {
        let acc: Vec<String> = report
            .accuracy
            .iter()
            .map(|(attr, v)| format!("{attr} {v:.3}"))
            .collect();
        println!("  [{group}] accuracy: {}", acc.join(", "));
        for (target, curve) in &report.ad_curves {
            let mean_ad: f64 = curve
                .bins
                .iter()
                .map(|b| b.mean_ad * b.count as f64)
                .sum::<f64>()
                / curve.bins.iter().map(|b| b.count).sum::<usize>().max(1) as f64;
            println!(
                "  [{group}] AD {target}: {} bins, weighted mean {mean_ad:.4}",
                curve.bins.len()
            );
        }
    }
    Ok(EXIT_OK)
}

/// Eight uniform bins over the pooled observed x range of every group.
fn pooled_edges(
    loaded: &BTreeMap<String, Vec<TrajectoryRecord>>,
    scorer: &Scorer,
    bank: &LatentBank,
) -> Result<Vec<f64>> {
    let stats = latentctl::eval::bank_logit_stats(scorer, bank)?;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for records in loaded.values() {
        for record in records {
            if !scorer.is_binary(&record.target_attr).unwrap_or(false) {
                continue;
            }
            let sigma = match stats.get(&record.target_attr) {
                Some(s) if s.std > 0.0 => s.std,
                _ => continue,
            };
            let first = &record.trajectory.first().z;
            let last = &record.trajectory.last().z;
            let x = (scorer.logits(&record.target_attr, last)?[0]
                - scorer.logits(&record.target_attr, first)?[0])
                / sigma;
            lo = lo.min(x);
            hi = hi.max(x);
        }
    }
    if !lo.is_finite() || !hi.is_finite() {
        // No binary targets anywhere; edges will not be used.
        return Ok(vec![0.0, 1.0]);
    }
    let (lo, hi) = if lo == hi { (lo - 0.5, hi + 0.5) } else { (lo, hi) };
    let width = (hi - lo) / 8.0;
    Ok((0..=8).map(|i| lo + width * i as f64).collect())
}
