//! End-to-end acceptance suite. Each criterion prints exactly one
//! `criterion N (...): PASS|FAIL` line; the process exits nonzero if any
//! criterion fails. Criteria share expensive intermediates (datasets,
//! ensembles), so they run in order inside one process.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spritetree_core::adversarial::{
    ensemble_subsets, enumerate_candidates, generate_adversarial_with_subsets,
    measure_action_change,
};
use spritetree_core::envharness::{
    sample_suite, GameId, MiniEnv, PolicyKind, TargetPolicy, ACTION_COUNT,
};
use spritetree_core::features::{
    assemble_dataset, build_schema, DatasetRow, FeatureSchema, LabeledDataset, SchemaSlot,
    SymbolicState, FEATURES_PER_SLOT,
};
use spritetree_core::pixelgrid::{Color, Frame};
use spritetree_core::shap::{brute_force_shap, ensemble_shap, tree_shap};
use spritetree_core::sprites::{identify_sprites, reconstruct, ShapeSignature};
use spritetree_core::trees::{
    evaluate, fit_ensemble, fit_tree, kfold_evaluate, Predictor, TreeParams,
};

const SEED: u64 = 7;

type CriterionResult = Result<String, String>;

fn report(n: usize, name: &str, result: &CriterionResult, failures: &mut usize) {
    match result {
        Ok(detail) => println!("criterion {n} ({name}): PASS [{detail}]"),
        Err(why) => {
            println!("criterion {n} ({name}): FAIL [{why}]");
            *failures += 1;
        }
    }
}

// ---------------------------------------------------------------- criterion 1

/// Randomized frame: a dominant background plus uniform-color rectangular
/// blobs capped at 40% of the pixel area.
fn random_frame(rng: &mut ChaCha8Rng) -> Frame {
    let w = rng.gen_range(16..64);
    let h = rng.gen_range(16..64);
    let palette: Vec<Color> = (0..6)
        .map(|_| Color([rng.gen(), rng.gen(), rng.gen()]))
        .collect();
    let background = palette[0];
    let mut pixels = vec![background; w * h];
    let budget = (w * h) * 2 / 5;
    let mut painted = 0usize;
    for _ in 0..rng.gen_range(1..12) {
        let bw = rng.gen_range(1..=w / 2);
        let bh = rng.gen_range(1..=h / 2);
        if painted + bw * bh > budget {
            break;
        }
        painted += bw * bh;
        let x0 = rng.gen_range(0..=w - bw);
        let y0 = rng.gen_range(0..=h - bh);
        let color = palette[rng.gen_range(1..palette.len())];
        for y in y0..y0 + bh {
            for x in x0..x0 + bw {
                pixels[y * w + x] = color;
            }
        }
    }
    Frame::from_pixels(w, h, pixels).unwrap()
}

fn criterion_1() -> CriterionResult {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let n_frames = 1000;
    for i in 0..n_frames {
        let frame = random_frame(&mut rng);
        let d = identify_sprites(&frame);
        // Pairwise disjoint and unions to exactly the non-background set.
        let mut seen = vec![false; frame.width() * frame.height()];
        for sprite in &d.sprites {
            for &(x, y) in &sprite.pixels {
                if seen[y * frame.width() + x] {
                    return Err(format!("frame {i}: pixel ({x},{y}) in two sprites"));
                }
                seen[y * frame.width() + x] = true;
            }
        }
        for (x, y, c) in frame.iter() {
            let in_sprite = seen[y * frame.width() + x];
            if in_sprite == (c == d.background) {
                return Err(format!("frame {i}: partition violated at ({x},{y})"));
            }
        }
        let rebuilt = reconstruct(&d).map_err(|e| format!("frame {i}: {e}"))?;
        if rebuilt != frame {
            return Err(format!("frame {i}: reconstruction differs"));
        }
    }
    let elapsed = started.elapsed();
    if elapsed.as_secs_f64() >= 10.0 {
        return Err(format!("{n_frames} frames took {elapsed:.2?}, budget 10 s"));
    }
    Ok(format!("{n_frames} frames, {elapsed:.2?}"))
}

// ---------------------------------------------------------------- criterion 2

fn criterion_2() -> CriterionResult {
    let mut total = 0usize;
    for game in [GameId::MiniPong, GameId::MiniBreakout] {
        let policy = TargetPolicy::new(game, PolicyKind::ScriptedTracker).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(SEED);
        let mut env = MiniEnv::new(game, SEED);
        for step in 0..1000 {
            let action = policy.act(&identify_sprites(env.observation()), &mut rng);
            let (obs, _, done) = env.step(action).map_err(|e| e.to_string())?;
            let found = identify_sprites(&obs).sprites.len();
            let expected = env.expected_sprite_count();
            if found != expected {
                return Err(format!(
                    "{} step {step}: {found} sprites, expected {expected}",
                    game.name()
                ));
            }
            total += 1;
            if done {
                break;
            }
        }
    }
    Ok(format!("{total} observations, zero mismatches"))
}

// ------------------------------------------------------------ criteria 3 + 4

struct Fidelity {
    kfold_accuracy: f64,
    held_accuracy: f64,
    train: LabeledDataset,
}

/// Record k = 0..24 (train) and k = 25..29 (held-out) trajectories, build
/// one schema over the whole corpus, and evaluate a surrogate tree.
fn fidelity(game: GameId, sticky: bool) -> Result<Fidelity, String> {
    let policy = TargetPolicy::new(game, PolicyKind::ScriptedTracker).unwrap();
    let zeta = if sticky { 0.25 } else { 0.0 };
    let mut records = Vec::new();
    for (k_from, k_to) in [(0, 24), (25, 29)] {
        let suite = sample_suite(game, &policy, k_from, k_to, sticky, zeta, SEED, 1000)
            .map_err(|e| e.to_string())?;
        records.extend(suite.iter().map(|t| t.to_record()));
    }
    let decomps: Vec<_> = records
        .iter()
        .flat_map(|r| r.frames.iter().map(identify_sprites))
        .collect();
    let schema = build_schema(&decomps, true, ACTION_COUNT).map_err(|e| e.to_string())?;
    let data = assemble_dataset(&records, &schema).map_err(|e| e.to_string())?;
    let mut train = LabeledDataset {
        schema: schema.clone(),
        rows: Vec::new(),
    };
    let mut held = train.clone();
    for row in data.rows {
        if row.trajectory < 25 {
            train.rows.push(row);
        } else {
            held.rows.push(row);
        }
    }
    let kfold = kfold_evaluate(&train, 5, SEED, |d, s| fit_tree(d, TreeParams::default(), s))
        .map_err(|e| e.to_string())?;
    let tree = fit_tree(&train, TreeParams::default(), SEED).map_err(|e| e.to_string())?;
    let held_metrics = evaluate(&tree, &held);
    Ok(Fidelity {
        kfold_accuracy: kfold.mean_accuracy,
        held_accuracy: held_metrics.accuracy,
        train,
    })
}

fn criterion_3(out: &mut BTreeMap<GameId, Fidelity>) -> CriterionResult {
    let started = Instant::now();
    let mut detail = String::new();
    for game in [GameId::MiniPong, GameId::MiniBreakout] {
        let f = fidelity(game, false)?;
        if f.kfold_accuracy < 0.95 {
            return Err(format!(
                "{} 5-fold accuracy {:.4} < 0.95",
                game.name(),
                f.kfold_accuracy
            ));
        }
        if f.held_accuracy < 0.90 {
            return Err(format!(
                "{} held-out accuracy {:.4} < 0.90",
                game.name(),
                f.held_accuracy
            ));
        }
        detail.push_str(&format!(
            "{} kfold {:.2}% held {:.2}%; ",
            game.name(),
            f.kfold_accuracy * 100.0,
            f.held_accuracy * 100.0
        ));
        out.insert(game, f);
    }
    let elapsed = started.elapsed();
    if elapsed.as_secs_f64() >= 120.0 {
        return Err(format!("took {elapsed:.1?}, budget 2 min"));
    }
    detail.push_str(&format!("{elapsed:.1?}"));
    Ok(detail)
}

fn criterion_4(baseline: &BTreeMap<GameId, Fidelity>) -> CriterionResult {
    let mut detail = String::new();
    for game in [GameId::MiniPong, GameId::MiniBreakout] {
        let sticky = fidelity(game, true)?;
        let base = baseline
            .get(&game)
            .ok_or("criterion 3 did not run".to_string())?;
        if sticky.held_accuracy >= base.held_accuracy {
            return Err(format!(
                "{} sticky held-out {:.4} did not degrade from {:.4}",
                game.name(),
                sticky.held_accuracy,
                base.held_accuracy
            ));
        }
        if sticky.held_accuracy <= 0.60 {
            return Err(format!(
                "{} sticky held-out {:.4} <= 0.60",
                game.name(),
                sticky.held_accuracy
            ));
        }
        detail.push_str(&format!(
            "{} held {:.2}% (from {:.2}%); ",
            game.name(),
            sticky.held_accuracy * 100.0,
            base.held_accuracy * 100.0
        ));
    }
    detail.pop();
    detail.pop();
    Ok(detail)
}

// ---------------------------------------------------------------- criterion 5

/// Minimal one-slot schema so randomly generated rows form a valid dataset.
fn toy_schema() -> FeatureSchema {
    let signature = ShapeSignature {
        color: Color([9, 9, 9]),
        offsets: vec![(0, 0)],
    };
    let sig_hash = signature.hash64();
    FeatureSchema {
        slots: vec![SchemaSlot {
            signature,
            sig_hash,
            instance: 0,
        }],
        include_last_action: false,
        action_count: 3,
        names: BTreeMap::new(),
    }
}

fn criterion_5(pong: &Fidelity) -> CriterionResult {
    // Exactness: fast path-dependent Shapley equals brute-force enumeration
    // on trees fit to random small datasets (4 informative features).
    let schema = toy_schema();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let n_trees = 200;
    let mut max_err = 0.0f64;
    for t in 0..n_trees {
        let rows: Vec<DatasetRow> = (0..30)
            .map(|i| {
                let mut values = vec![0.0; FEATURES_PER_SLOT];
                for v in values.iter_mut().take(4) {
                    *v = (rng.gen_range(0..8) as f64) / 4.0;
                }
                DatasetRow {
                    state: SymbolicState { values },
                    label: rng.gen_range(0..3),
                    trajectory: 0,
                    timestep: i,
                }
            })
            .collect();
        let data = LabeledDataset {
            schema: schema.clone(),
            rows,
        };
        let tree = fit_tree(&data, TreeParams::default(), SEED + t).map_err(|e| e.to_string())?;
        for _ in 0..5 {
            let mut values = vec![0.0; FEATURES_PER_SLOT];
            for v in values.iter_mut().take(4) {
                *v = (rng.gen_range(0..8) as f64) / 4.0;
            }
            let state = SymbolicState { values };
            let fast = tree_shap(&tree, &state).map_err(|e| e.to_string())?;
            let brute = brute_force_shap(&tree, &state).map_err(|e| e.to_string())?;
            for (a, b) in fast
                .values
                .iter()
                .flatten()
                .zip(brute.values.iter().flatten())
            {
                max_err = max_err.max((a - b).abs());
            }
            for (a, b) in fast.base_values.iter().zip(&brute.base_values) {
                max_err = max_err.max((a - b).abs());
            }
        }
    }
    if max_err > 1e-9 {
        return Err(format!("tree_shap vs brute force deviation {max_err:.3e}"));
    }

    // Local accuracy on ensemble attributions over real game states.
    let ensemble = fit_ensemble(&pong.train, 20, SEED).map_err(|e| e.to_string())?;
    let n_states = 1000.min(pong.train.rows.len());
    let mut max_local = 0.0f64;
    for row in &pong.train.rows[..n_states] {
        let attr = ensemble_shap(&ensemble, &row.state).map_err(|e| e.to_string())?;
        let output = ensemble.predict_proba(&row.state);
        max_local = max_local.max(attr.local_accuracy_error(&output));
    }
    if max_local > 1e-9 {
        return Err(format!("local accuracy error {max_local:.3e} on {n_states} states"));
    }
    Ok(format!(
        "{n_trees} trees exact to {max_err:.1e}; local accuracy {max_local:.1e} on {n_states} states"
    ))
}

// ---------------------------------------------------------------- criterion 6

struct UniformPredictor;
impl Predictor for UniformPredictor {
    fn predict_proba(&self, _: &SymbolicState) -> Vec<f64> {
        vec![1.0 / 3.0; 3]
    }
    fn n_classes(&self) -> usize {
        3
    }
}

/// Reads the label the dataset encodes into feature 1 and returns it one-hot.
struct PerfectPredictor;
impl Predictor for PerfectPredictor {
    fn predict_proba(&self, state: &SymbolicState) -> Vec<f64> {
        let mut p = vec![0.0; 3];
        p[state.values[1] as usize] = 1.0;
        p
    }
    fn n_classes(&self) -> usize {
        3
    }
}

fn criterion_6() -> CriterionResult {
    let schema = toy_schema();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let rows: Vec<DatasetRow> = (0..300)
        .map(|i| {
            let label = rng.gen_range(0..3);
            let mut values = vec![0.0; FEATURES_PER_SLOT];
            values[1] = label as f64;
            DatasetRow {
                state: SymbolicState { values },
                label,
                trajectory: 0,
                timestep: i,
            }
        })
        .collect();
    let data = LabeledDataset { schema, rows };
    let uniform = evaluate(&UniformPredictor, &data).cross_entropy;
    let ln3 = 3.0f64.ln();
    if (uniform - ln3).abs() > 1e-12 {
        return Err(format!("uniform cross entropy {uniform} != ln 3 = {ln3}"));
    }
    let perfect = evaluate(&PerfectPredictor, &data).cross_entropy;
    if perfect > 1e-12 {
        return Err(format!("perfect cross entropy {perfect} > 1e-12"));
    }
    Ok(format!(
        "uniform |ce - ln 3| = {:.1e}, perfect ce = {perfect:.1e}",
        (uniform - ln3).abs()
    ))
}

// ---------------------------------------------------------------- criterion 7

fn criterion_7(pong: &Fidelity) -> CriterionResult {
    let started = Instant::now();
    let data = &pong.train;
    let ensemble = fit_ensemble(data, 100, SEED).map_err(|e| e.to_string())?;
    let pairs: Vec<(SymbolicState, usize)> = data
        .rows
        .iter()
        .filter(|r| r.trajectory == 24)
        .map(|r| (r.state.clone(), r.label))
        .collect();
    if pairs.len() < 200 {
        return Err(format!("k=24 trajectory has only {} pairs", pairs.len()));
    }
    let policy = TargetPolicy::new(GameId::MiniPong, PolicyKind::ScriptedTracker).unwrap();
    let report = measure_action_change(&policy, &pairs, &ensemble, data, &data.schema, SEED, 200)
        .map_err(|e| e.to_string())?;
    if report.change_rate <= 0.5 {
        return Err(format!(
            "action change rate {:.3} <= 0.5 over {} pairs",
            report.change_rate, report.pairs_evaluated
        ));
    }

    // Candidate pool bound and exhaustive argmin check on a 20-pair
    // subsample, using each pair's exact per-pair seed.
    let subsets = ensemble_subsets(&ensemble, data);
    let mut max_candidates = 0usize;
    for (i, (state, _)) in pairs.iter().take(20).enumerate() {
        let pair_seed = SEED.wrapping_add(1 + i as u64);
        let candidates = enumerate_candidates(state, &ensemble, data, &data.schema, &subsets, pair_seed)
            .map_err(|e| e.to_string())?;
        if candidates.len() > 800 {
            return Err(format!("pair {i}: {} candidates > 800", candidates.len()));
        }
        max_candidates = max_candidates.max(candidates.len());
        let best =
            generate_adversarial_with_subsets(state, &ensemble, data, &data.schema, &subsets, pair_seed)
                .map_err(|e| e.to_string())?;
        let true_min = candidates
            .iter()
            .map(|c| c.original_action_prob)
            .fold(f64::INFINITY, f64::min);
        if best.original_action_prob != true_min {
            return Err(format!(
                "pair {i}: selected prob {} != minimum {true_min}",
                best.original_action_prob
            ));
        }
        let first_min = candidates
            .iter()
            .find(|c| c.original_action_prob == true_min)
            .unwrap();
        if best.source != first_min.source {
            return Err(format!("pair {i}: tie not broken by (tree, subset) order"));
        }
    }
    Ok(format!(
        "change rate {:.1}% over {} pairs, <= {max_candidates} candidates, argmin exact on 20 pairs, {:.1?}",
        report.change_rate * 100.0,
        report.pairs_evaluated,
        started.elapsed()
    ))
}

// ---------------------------------------------------------------- criterion 8

fn run_pipeline(workdir: &Path) -> Result<(), String> {
    let bin = env!("CARGO_BIN_EXE_spritetree");
    let overrides = [
        "k_from=22",
        "k_to=24",
        "held_from=24",
        "max_steps=120",
        "trees=5",
        "folds=3",
    ];
    for sub in ["record", "dataset", "train-eval", "adversarial", "export-tree"] {
        let mut cmd = Command::new(bin);
        cmd.arg("--workdir").arg(workdir);
        for o in overrides {
            cmd.arg("--set").arg(o);
        }
        let out = cmd.arg(sub).output().map_err(|e| e.to_string())?;
        if !out.status.success() {
            return Err(format!(
                "`{sub}` failed: {}",
                String::from_utf8_lossy(&out.stderr)
            ));
        }
    }
    Ok(())
}

fn collect_files(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) -> Result<(), String> {
    for entry in std::fs::read_dir(dir).map_err(|e| e.to_string())? {
        let path = entry.map_err(|e| e.to_string())?.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else {
            let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
            out.insert(rel, std::fs::read(&path).map_err(|e| e.to_string())?);
        }
    }
    Ok(())
}

fn criterion_8() -> CriterionResult {
    let dir_a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir_b = tempfile::tempdir().map_err(|e| e.to_string())?;
    run_pipeline(dir_a.path())?;
    run_pipeline(dir_b.path())?;
    let mut files_a = BTreeMap::new();
    let mut files_b = BTreeMap::new();
    collect_files(dir_a.path(), dir_a.path(), &mut files_a)?;
    collect_files(dir_b.path(), dir_b.path(), &mut files_b)?;
    if files_a.keys().ne(files_b.keys()) {
        return Err("the two runs produced different file sets".into());
    }
    for (rel, bytes) in &files_a {
        if files_b[rel] != *bytes {
            return Err(format!("{rel} differs between runs"));
        }
    }
    Ok(format!("{} files byte-identical across two runs", files_a.len()))
}

// -------------------------------------------------------------------- driver

fn main() {
    let mut failures = 0usize;

    report(1, "sprite partition and reconstruction", &criterion_1(), &mut failures);
    report(2, "ground-truth sprite count", &criterion_2(), &mut failures);

    let mut baselines = BTreeMap::new();
    let c3 = criterion_3(&mut baselines);
    report(3, "surrogate fidelity", &c3, &mut failures);
    let c4 = match baselines.len() {
        2 => criterion_4(&baselines),
        _ => Err("skipped: criterion 3 incomplete".into()),
    };
    report(4, "sticky-actions degradation", &c4, &mut failures);

    let pong = baselines.get(&GameId::MiniPong);
    let c5 = match pong {
        Some(p) => criterion_5(p),
        None => Err("skipped: criterion 3 incomplete".into()),
    };
    report(5, "Shapley exactness and local accuracy", &c5, &mut failures);
    report(6, "cross-entropy closed forms", &criterion_6(), &mut failures);
    let c7 = match pong {
        Some(p) => criterion_7(p),
        None => Err("skipped: criterion 3 incomplete".into()),
    };
    report(7, "adversarial action change", &c7, &mut failures);
    report(8, "end-to-end determinism", &criterion_8(), &mut failures);

    if failures > 0 {
        eprintln!("{failures} criteria failed");
        std::process::exit(1);
    }
}
