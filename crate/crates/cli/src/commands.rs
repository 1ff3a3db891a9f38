//! Subcommand implementations. Every command reads and writes only the
//! documented file formats, so stages can be re-run independently.

use std::fs;
use std::path::{Path, PathBuf};

use spritetree_core::adversarial::{measure_action_change, DEFAULT_PAIR_CAP};
use spritetree_core::envharness::{sample_suite, write_trajectory};
use spritetree_core::error::{Error, Result};
use spritetree_core::features::{FeatureSchema, LabeledDataset, FEATURES_PER_SLOT};
use spritetree_core::pixelgrid::{write_image, Color, Frame};
use spritetree_core::shap::{encode_attribution, ensemble_shap, rank_sprites};
use spritetree_core::trees::{
    evaluate, export_tree, fit_ensemble, fit_tree, kfold_evaluate, Metrics, TreeEnsemble,
    TreeParams,
};

use crate::config::RunConfig;
use crate::pipeline::{corpus_dataset, load_corpus, trajectory_pairs, vectorize_step};

/// Output paths under `<workdir>/<out_dir>`; every subcommand defaults to
/// these so stages chain without flag plumbing.
pub struct OutPaths {
    pub root: PathBuf,
}

impl OutPaths {
    pub fn new(workdir: &Path, cfg: &RunConfig) -> OutPaths {
        OutPaths {
            root: workdir.join(&cfg.out_dir),
        }
    }

    pub fn trajectories(&self) -> PathBuf {
        self.root.join("trajectories")
    }
    pub fn schema(&self) -> PathBuf {
        self.root.join("schema.txt")
    }
    pub fn dataset(&self) -> PathBuf {
        self.root.join("dataset.tsv")
    }
    pub fn tree_model(&self) -> PathBuf {
        self.root.join("tree.txt")
    }
    pub fn ensemble_model(&self) -> PathBuf {
        self.root.join("ensemble.txt")
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        ensure_dir(parent)?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn cmd_record(cfg: &RunConfig, out_dir: &Path) -> Result<()> {
    let policy = cfg.target_policy()?;
    let suite = sample_suite(
        cfg.game,
        &policy,
        cfg.k_from,
        cfg.k_to,
        cfg.sticky,
        cfg.zeta,
        cfg.seed,
        cfg.max_steps,
    )?;
    ensure_dir(out_dir)?;
    // Snapshot the effective configuration next to the recorded data so a
    // later run can reproduce it exactly.
    write_text(&out_dir.join("config.txt"), &cfg.encode())?;
    for traj in &suite {
        let dir = out_dir.join(format!("traj_k{:02}", traj.k));
        write_trajectory(&dir, traj, cfg.game, policy.kind.name())?;
        println!(
            "recorded k={:02}: {} steps, total reward {}",
            traj.k,
            traj.len(),
            traj.rewards.iter().sum::<f64>()
        );
    }
    println!(
        "wrote {} trajectories to {}",
        suite.len(),
        out_dir.display()
    );
    Ok(())
}

pub fn cmd_dataset(traj_dir: &Path, schema_out: &Path, dataset_out: &Path) -> Result<()> {
    let corpus = load_corpus(traj_dir)?;
    let (schema, data) = corpus_dataset(&corpus)?;
    if let Some(parent) = schema_out.parent() {
        ensure_dir(parent)?;
    }
    schema.write(schema_out)?;
    data.write(dataset_out)?;
    println!(
        "dataset: {} rows x {} features ({} slots) from {} trajectories",
        data.rows.len(),
        schema.feature_count(),
        schema.slots.len(),
        corpus.trajectories.len()
    );
    Ok(())
}

fn fidelity_row(label: &str, accuracy: (f64, Option<f64>), ce: (f64, Option<f64>)) -> String {
    let fmt = |(mean, stderr): (f64, Option<f64>), scale: f64, digits: usize| match stderr {
        Some(s) => format!("{:.digits$} +- {:.digits$}", mean * scale, s * scale),
        None => format!("{:.digits$}", mean * scale),
    };
    format!(
        "{label:<24}{:<20}{}\n",
        fmt(accuracy, 100.0, 2),
        fmt(ce, 1.0, 4)
    )
}

pub fn cmd_train_eval(
    cfg: &RunConfig,
    schema_path: &Path,
    dataset_path: &Path,
    report_out: &Path,
    tree_out: &Path,
    ensemble_out: &Path,
) -> Result<()> {
    let schema = FeatureSchema::read(schema_path)?;
    let data = LabeledDataset::read(dataset_path, &schema)?;
    let mut train = LabeledDataset {
        schema: schema.clone(),
        rows: Vec::new(),
    };
    let mut held = train.clone();
    for row in &data.rows {
        if (row.trajectory as usize) < cfg.held_from {
            train.rows.push(row.clone());
        } else {
            held.rows.push(row.clone());
        }
    }
    if train.rows.is_empty() {
        return Err(Error::Data("no training rows below the held-out range".into()));
    }

    let kfold = kfold_evaluate(&train, cfg.folds, cfg.seed, |d, s| {
        fit_tree(d, TreeParams::default(), s)
    })?;
    let tree = fit_tree(&train, TreeParams::default(), cfg.seed)?;
    let held_metrics: Option<Metrics> =
        (!held.rows.is_empty()).then(|| evaluate(&tree, &held));
    let ensemble = fit_ensemble(&train, cfg.trees, cfg.seed)?;

    TreeEnsemble::single(tree).write(tree_out)?;
    ensemble.write(ensemble_out)?;

    let label = if cfg.sticky {
        format!("{} (sticky)", cfg.game.name())
    } else {
        cfg.game.name().to_string()
    };
    let header = format!("{:<24}{:<20}{}\n", "game", "accuracy (%)", "cross entropy");
    let mut report = String::new();
    report.push_str(&format!(
        "Surrogate fidelity: {}-fold cross-validation ({} rows)\n",
        cfg.folds,
        train.rows.len()
    ));
    report.push_str(&header);
    report.push_str(&fidelity_row(
        &label,
        (kfold.mean_accuracy, Some(kfold.stderr_accuracy)),
        (kfold.mean_cross_entropy, Some(kfold.stderr_cross_entropy)),
    ));
    report.push('\n');
    report.push_str(&format!(
        "Surrogate fidelity: held-out trajectories (k >= {})\n",
        cfg.held_from
    ));
    match &held_metrics {
        Some(m) => {
            report.push_str(&header);
            report.push_str(&fidelity_row(
                &label,
                (m.accuracy, None),
                (m.cross_entropy, None),
            ));
        }
        None => report.push_str("no held-out trajectories in dataset\n"),
    }
    write_text(report_out, &report)?;

    let mut tsv = String::from("section\tmetric\tvalue\tstderr\n");
    tsv.push_str(&format!(
        "kfold\taccuracy\t{}\t{}\n",
        kfold.mean_accuracy, kfold.stderr_accuracy
    ));
    tsv.push_str(&format!(
        "kfold\tcross_entropy\t{}\t{}\n",
        kfold.mean_cross_entropy, kfold.stderr_cross_entropy
    ));
    if let Some(m) = &held_metrics {
        tsv.push_str(&format!("held_out\taccuracy\t{}\t\n", m.accuracy));
        tsv.push_str(&format!("held_out\tcross_entropy\t{}\t\n", m.cross_entropy));
    }
    write_text(&report_out.with_extension("tsv"), &tsv)?;
    print!("{report}");
    Ok(())
}

/// Dim factor applied to non-highlighted pixels in explain overlays.
fn dim(c: Color) -> Color {
    Color([c.r() / 3, c.g() / 3, c.b() / 3])
}

pub fn cmd_explain(
    model_path: &Path,
    schema_path: &Path,
    traj_path: &Path,
    timestep: usize,
    report_out: &Path,
    overlay_out: &Path,
) -> Result<()> {
    let schema = FeatureSchema::read(schema_path)?;
    let ensemble = TreeEnsemble::read(model_path, Some(&schema))?;
    let (traj, _, _) = spritetree_core::envharness::read_trajectory(traj_path)?;
    let (decomp, state) = vectorize_step(&traj, &schema, timestep)?;
    let attr = ensemble_shap(&ensemble, &state)?;
    let ranked = rank_sprites(&attr, &schema, &state);

    let mut report = format!(
        "Attribution for step {timestep} (predicted action {})\n{:<6}{:<22}{:<16}{:<14}{}\n",
        attr.predicted_class, "rank", "sprite", "feature", "shapley", "max |shapley|"
    );
    for entry in ranked.slots.iter().take(5) {
        let base = entry.slot * FEATURES_PER_SLOT;
        // The slot feature whose attribution attains the slot maximum.
        let feature = (base..base + FEATURES_PER_SLOT)
            .max_by(|&a, &b| {
                attr.values[a][attr.predicted_class]
                    .abs()
                    .total_cmp(&attr.values[b][attr.predicted_class].abs())
            })
            .unwrap();
        report.push_str(&format!(
            "{:<6}{:<22}{:<16}{:<14.6}{:.6}\n",
            entry.rank,
            schema.slot_name(entry.slot),
            schema.friendly_name(feature).split(' ').next_back().unwrap_or("?"),
            attr.values[feature][attr.predicted_class],
            entry.max_abs_shap,
        ));
    }
    write_text(report_out, &report)?;
    write_text(
        &report_out.with_extension("tsv"),
        &encode_attribution(&attr, &schema),
    )?;

    // Overlay: dim everything, then restore the top-ranked sprites' pixels.
    let src = &traj.frames[timestep];
    let mut overlay = Frame::from_pixels(
        src.width(),
        src.height(),
        src.iter().map(|(_, _, c)| dim(c)).collect(),
    )?;
    for entry in ranked.slots.iter().take(5) {
        let slot = &schema.slots[entry.slot];
        let mut instance = 0usize;
        for sprite in &decomp.sprites {
            if sprite.signature.hash64() != slot.sig_hash {
                continue;
            }
            if instance == slot.instance {
                for &(x, y) in &sprite.pixels {
                    overlay.set(x, y, sprite.color);
                }
                break;
            }
            instance += 1;
        }
    }
    if let Some(parent) = overlay_out.parent() {
        ensure_dir(parent)?;
    }
    write_image(&overlay, overlay_out)?;
    print!("{report}");
    Ok(())
}

pub fn cmd_adversarial(
    cfg: &RunConfig,
    model_path: &Path,
    schema_path: &Path,
    dataset_path: &Path,
    traj_dir: &Path,
    report_out: &Path,
) -> Result<()> {
    let schema = FeatureSchema::read(schema_path)?;
    let data = LabeledDataset::read(dataset_path, &schema)?;
    let ensemble = TreeEnsemble::read(model_path, Some(&schema))?;
    let corpus = load_corpus(traj_dir)?;
    let traj = corpus
        .trajectories
        .iter()
        .find(|t| t.k == 24)
        .ok_or_else(|| Error::Data("no k=24 trajectory recorded".into()))?;
    let pairs = trajectory_pairs(traj, &schema)?;
    let policy = cfg.target_policy()?;
    let report = measure_action_change(
        &policy,
        &pairs,
        &ensemble,
        &data,
        &schema,
        cfg.seed,
        DEFAULT_PAIR_CAP,
    )?;

    let text = format!(
        "Adversarial permutations: k=24 trajectory, {} pairs\n{:<24}{}\n{:<24}{:.1}\n\n{}",
        report.pairs_evaluated,
        "game",
        "agent action changed (%)",
        cfg.game.name(),
        report.change_rate * 100.0,
        report.encode()
    );
    write_text(report_out, &text)?;
    print!("{text}");
    Ok(())
}

pub fn cmd_export_tree(
    model_path: &Path,
    schema_path: &Path,
    depth: usize,
    out: &Path,
) -> Result<()> {
    let schema = FeatureSchema::read(schema_path)?;
    let ensemble = TreeEnsemble::read(model_path, Some(&schema))?;
    let dot = export_tree(&ensemble.trees[0], &schema, depth);
    write_text(out, &dot)?;
    println!("wrote {}", out.display());
    Ok(())
}

