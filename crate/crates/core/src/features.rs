//! Fixed-schema symbolic feature vectors built from sprite decompositions,
//! and labeled behavioral-cloning datasets mapping states to actions.
//!
//! A schema has one slot per (shape signature, instance index); each slot
//! contributes five features: presence flag, anchor x, anchor y, and the
//! per-step anchor velocity (vx, vy). An optional last-action feature is
//! appended for sticky-action runs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::pixelgrid::{Color, Frame};
use crate::sprites::{identify_sprites, ShapeSignature, SpriteDecomposition};

pub const FEATURES_PER_SLOT: usize = 5;
pub const FEATURE_KINDS: [&str; FEATURES_PER_SLOT] = ["present", "x", "y", "vx", "vy"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SchemaSlot {
    pub signature: ShapeSignature,
    pub sig_hash: u64,
    pub instance: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureSchema {
    /// Deduplicated, ordered by (signature hash, instance index).
    pub slots: Vec<SchemaSlot>,
    pub include_last_action: bool,
    pub action_count: usize,
    /// Optional friendly names per signature hash, used in reports and tree
    /// exports; absent hashes fall back to the hex hash.
    pub names: BTreeMap<u64, String>,
}

impl FeatureSchema {
    pub fn feature_count(&self) -> usize {
        self.slots.len() * FEATURES_PER_SLOT + usize::from(self.include_last_action)
    }

    /// Column name as written in dataset files: `<sigHash>_<idx>_<kind>`.
    pub fn column_name(&self, feature: usize) -> String {
        if self.include_last_action && feature == self.feature_count() - 1 {
            return "last_action".to_string();
        }
        let slot = &self.slots[feature / FEATURES_PER_SLOT];
        format!(
            "{:016x}_{}_{}",
            slot.sig_hash,
            slot.instance,
            FEATURE_KINDS[feature % FEATURES_PER_SLOT]
        )
    }

    /// Human-readable feature name for reports, e.g. "paddle #0 x".
    pub fn friendly_name(&self, feature: usize) -> String {
        if self.include_last_action && feature == self.feature_count() - 1 {
            return "last action".to_string();
        }
        let slot = &self.slots[feature / FEATURES_PER_SLOT];
        let base = self
            .names
            .get(&slot.sig_hash)
            .cloned()
            .unwrap_or_else(|| format!("{:016x}", slot.sig_hash));
        format!(
            "{base} #{} {}",
            slot.instance,
            FEATURE_KINDS[feature % FEATURES_PER_SLOT]
        )
    }

    pub fn slot_name(&self, slot_index: usize) -> String {
        let slot = &self.slots[slot_index];
        let base = self
            .names
            .get(&slot.sig_hash)
            .cloned()
            .unwrap_or_else(|| format!("{:016x}", slot.sig_hash));
        format!("{base} #{}", slot.instance)
    }

    /// Stable content hash; model files and datasets carry it so mismatched
    /// pairings are rejected at load time.
    pub fn schema_hash(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        let mut eat = |v: u64| {
            for b in v.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        };
        for slot in &self.slots {
            eat(slot.sig_hash);
            eat(slot.instance as u64);
        }
        eat(u64::from(self.include_last_action));
        eat(self.action_count as u64);
        h
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn encode(&self) -> String {
        let mut out = String::new();
        writeln!(out, "schema v1").unwrap();
        writeln!(out, "action_count {}", self.action_count).unwrap();
        writeln!(
            out,
            "include_last_action {}",
            u8::from(self.include_last_action)
        )
        .unwrap();
        let mut seen = BTreeMap::new();
        for slot in &self.slots {
            seen.entry(slot.sig_hash).or_insert(&slot.signature);
        }
        for (hash, sig) in &seen {
            let offsets = sig
                .offsets
                .iter()
                .map(|(dy, dx)| format!("{dy},{dx}"))
                .collect::<Vec<_>>()
                .join(";");
            let name = self.names.get(hash).map(String::as_str).unwrap_or("-");
            writeln!(
                out,
                "signature {hash:016x} color {} {} {} name {name} offsets {offsets}",
                sig.color.r(),
                sig.color.g(),
                sig.color.b()
            )
            .unwrap();
        }
        for slot in &self.slots {
            writeln!(out, "slot {:016x} {}", slot.sig_hash, slot.instance).unwrap();
        }
        out
    }

    pub fn read(path: &Path) -> Result<FeatureSchema> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&text).map_err(|message| Error::Parse {
            path: path.to_path_buf(),
            offset: 0,
            message,
        })
    }

    pub fn decode(text: &str) -> std::result::Result<FeatureSchema, String> {
        let mut lines = text.lines();
        if lines.next() != Some("schema v1") {
            return Err("expected header \"schema v1\"".into());
        }
        let mut action_count = None;
        let mut include_last_action = None;
        let mut signatures: BTreeMap<u64, ShapeSignature> = BTreeMap::new();
        let mut names = BTreeMap::new();
        let mut slots = Vec::new();
        for line in lines {
            let mut it = line.split_whitespace();
            match it.next() {
                Some("action_count") => {
                    action_count =
                        Some(it.next().ok_or("missing value")?.parse().map_err(|e| {
                            format!("bad action_count: {e}")
                        })?)
                }
                Some("include_last_action") => {
                    include_last_action = Some(it.next() == Some("1"));
                }
                Some("signature") => {
                    let hash = u64::from_str_radix(it.next().ok_or("missing hash")?, 16)
                        .map_err(|e| format!("bad signature hash: {e}"))?;
                    if it.next() != Some("color") {
                        return Err("expected \"color\"".into());
                    }
                    let mut chan = || -> std::result::Result<u8, String> {
                        it.next()
                            .ok_or("missing channel".to_string())?
                            .parse()
                            .map_err(|e| format!("bad channel: {e}"))
                    };
                    let color = Color([chan()?, chan()?, chan()?]);
                    if it.next() != Some("name") {
                        return Err("expected \"name\"".into());
                    }
                    let name = it.next().ok_or("missing name")?;
                    if name != "-" {
                        names.insert(hash, name.to_string());
                    }
                    if it.next() != Some("offsets") {
                        return Err("expected \"offsets\"".into());
                    }
                    let mut offsets = Vec::new();
                    for pair in it.next().ok_or("missing offsets")?.split(';') {
                        let (dy, dx) = pair.split_once(',').ok_or("bad offset pair")?;
                        offsets.push((
                            dy.parse().map_err(|e| format!("bad dy: {e}"))?,
                            dx.parse().map_err(|e| format!("bad dx: {e}"))?,
                        ));
                    }
                    signatures.insert(hash, ShapeSignature { color, offsets });
                }
                Some("slot") => {
                    let hash = u64::from_str_radix(it.next().ok_or("missing hash")?, 16)
                        .map_err(|e| format!("bad slot hash: {e}"))?;
                    let instance = it
                        .next()
                        .ok_or("missing instance")?
                        .parse()
                        .map_err(|e| format!("bad instance: {e}"))?;
                    let signature = signatures
                        .get(&hash)
                        .ok_or(format!("slot references unknown signature {hash:016x}"))?
                        .clone();
                    slots.push(SchemaSlot {
                        signature,
                        sig_hash: hash,
                        instance,
                    });
                }
                Some(other) => return Err(format!("unknown record \"{other}\"")),
                None => {}
            }
        }
        Ok(FeatureSchema {
            slots,
            include_last_action: include_last_action.ok_or("missing include_last_action")?,
            action_count: action_count.ok_or("missing action_count")?,
            names,
        })
    }
}

/// One fixed-length feature vector conforming to a schema.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolicState {
    pub values: Vec<f64>,
}

impl SymbolicState {
    pub fn present(&self, slot: usize) -> bool {
        self.values[slot * FEATURES_PER_SLOT] != 0.0
    }

    pub fn slot_xy(&self, slot: usize) -> (f64, f64) {
        (
            self.values[slot * FEATURES_PER_SLOT + 1],
            self.values[slot * FEATURES_PER_SLOT + 2],
        )
    }
}

/// One slot per (signature, instance index up to the maximum simultaneous
/// count of that signature in any single decomposition of the corpus).
pub fn build_schema(
    decompositions: &[SpriteDecomposition],
    include_last_action: bool,
    action_count: usize,
) -> Result<FeatureSchema> {
    if decompositions.is_empty() {
        return Err(Error::Data("schema corpus is empty".into()));
    }
    let mut max_counts: BTreeMap<u64, (ShapeSignature, usize)> = BTreeMap::new();
    for d in decompositions {
        let mut counts: BTreeMap<u64, usize> = BTreeMap::new();
        for s in &d.sprites {
            *counts.entry(s.signature.hash64()).or_insert(0) += 1;
        }
        for s in &d.sprites {
            let hash = s.signature.hash64();
            let count = counts[&hash];
            let entry = max_counts
                .entry(hash)
                .or_insert_with(|| (s.signature.clone(), 0));
            entry.1 = entry.1.max(count);
        }
    }
    let mut slots = Vec::new();
    for (hash, (signature, max_count)) in &max_counts {
        for instance in 0..*max_count {
            slots.push(SchemaSlot {
                signature: signature.clone(),
                sig_hash: *hash,
                instance,
            });
        }
    }
    Ok(FeatureSchema {
        slots,
        include_last_action,
        action_count,
        names: BTreeMap::new(),
    })
}

/// Anchors of each signature's instances in ascending (x, y) order.
fn instances_by_signature(d: &SpriteDecomposition) -> BTreeMap<u64, Vec<(usize, usize)>> {
    let mut map: BTreeMap<u64, Vec<(usize, usize)>> = BTreeMap::new();
    for s in &d.sprites {
        map.entry(s.signature.hash64()).or_default().push(s.anchor);
    }
    for anchors in map.values_mut() {
        anchors.sort();
    }
    map
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorizeOutcome {
    pub state: SymbolicState,
    /// Sprites whose signature has no schema slot (or that overflow the
    /// schema's instance capacity); they are not representable and dropped.
    pub dropped_sprites: usize,
}

/// Fill schema slots from a decomposition, computing per-slot velocities
/// against the previous decomposition by positional pairing after sorting.
/// Absent slots carry the zero sentinel in all five features.
pub fn vectorize(
    d: &SpriteDecomposition,
    prev: Option<&SpriteDecomposition>,
    schema: &FeatureSchema,
    last_action: Option<usize>,
) -> Result<VectorizeOutcome> {
    if schema.include_last_action && last_action.is_none() {
        return Err(Error::Schema(
            "schema includes last-action feature but none was supplied".into(),
        ));
    }
    let now = instances_by_signature(d);
    let before = prev.map(instances_by_signature);
    let mut values = vec![0.0; schema.feature_count()];
    let mut used: BTreeMap<u64, usize> = BTreeMap::new();
    for (i, slot) in schema.slots.iter().enumerate() {
        let base = i * FEATURES_PER_SLOT;
        let Some(anchors) = now.get(&slot.sig_hash) else {
            continue;
        };
        if slot.instance >= anchors.len() {
            continue;
        }
        *used.entry(slot.sig_hash).or_insert(0) += 1;
        let (x, y) = anchors[slot.instance];
        values[base] = 1.0;
        values[base + 1] = x as f64;
        values[base + 2] = y as f64;
        if let Some(before) = &before {
            if let Some(prev_anchors) = before.get(&slot.sig_hash) {
                if slot.instance < prev_anchors.len() {
                    let (px, py) = prev_anchors[slot.instance];
                    values[base + 3] = x as f64 - px as f64;
                    values[base + 4] = y as f64 - py as f64;
                }
            }
        }
    }
    if schema.include_last_action {
        let n = values.len();
        values[n - 1] = last_action.unwrap() as f64;
    }
    let representable: usize = now
        .iter()
        .map(|(hash, anchors)| anchors.len().min(used.get(hash).copied().unwrap_or(0)))
        .sum();
    let dropped_sprites = d.sprites.len() - representable;
    Ok(VectorizeOutcome {
        state: SymbolicState { values },
        dropped_sprites,
    })
}

/// The recorded inputs to dataset assembly: one trajectory's aligned frames
/// and executed actions, plus its provenance id (the noop-start k).
#[derive(Debug, Clone)]
pub struct TrajectoryRecord {
    pub id: u32,
    pub frames: Vec<Frame>,
    pub actions: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRow {
    pub state: SymbolicState,
    pub label: usize,
    pub trajectory: u32,
    pub timestep: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub schema: FeatureSchema,
    pub rows: Vec<DatasetRow>,
}

/// One row per timestep; velocities use the per-trajectory previous timestep
/// and never cross trajectory boundaries. The last-action feature at step t
/// is the executed action at t-1 (action 0 for the first step).
pub fn assemble_dataset(
    trajectories: &[TrajectoryRecord],
    schema: &FeatureSchema,
) -> Result<LabeledDataset> {
    let mut rows = Vec::new();
    for traj in trajectories {
        if traj.frames.len() != traj.actions.len() {
            return Err(Error::Data(format!(
                "trajectory {}: {} frames vs {} actions",
                traj.id,
                traj.frames.len(),
                traj.actions.len()
            )));
        }
        let mut prev: Option<SpriteDecomposition> = None;
        for (t, (frame, &action)) in traj.frames.iter().zip(&traj.actions).enumerate() {
            let d = identify_sprites(frame);
            let last_action = if schema.include_last_action {
                Some(if t == 0 { 0 } else { traj.actions[t - 1] })
            } else {
                None
            };
            let outcome = vectorize(&d, prev.as_ref(), schema, last_action)?;
            if action >= schema.action_count {
                return Err(Error::Data(format!(
                    "trajectory {}: action {action} out of range {}",
                    traj.id, schema.action_count
                )));
            }
            rows.push(DatasetRow {
                state: outcome.state,
                label: action,
                trajectory: traj.id,
                timestep: t as u32,
            });
            prev = Some(d);
        }
    }
    Ok(LabeledDataset {
        schema: schema.clone(),
        rows,
    })
}

impl LabeledDataset {
    /// Tab-separated table with a header row; the contract between the
    /// recording and training stages.
    pub fn encode(&self) -> String {
        let mut out = String::new();
        for f in 0..self.schema.feature_count() {
            out.push_str(&self.schema.column_name(f));
            out.push('\t');
        }
        out.push_str("label\ttraj\tt\n");
        for row in &self.rows {
            for v in &row.state.values {
                write!(out, "{v}\t").unwrap();
            }
            writeln!(out, "{}\t{}\t{}", row.label, row.trajectory, row.timestep).unwrap();
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path, schema: &FeatureSchema) -> Result<LabeledDataset> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&text, schema).map_err(|message| Error::Parse {
            path: path.to_path_buf(),
            offset: 0,
            message,
        })
    }

    pub fn decode(text: &str, schema: &FeatureSchema) -> std::result::Result<LabeledDataset, String> {
        let mut lines = text.lines();
        let header = lines.next().ok_or("empty dataset file")?;
        let mut expected: Vec<String> = (0..schema.feature_count())
            .map(|f| schema.column_name(f))
            .collect();
        expected.extend(["label".into(), "traj".into(), "t".into()]);
        let actual: Vec<&str> = header.split('\t').collect();
        if actual != expected.iter().map(String::as_str).collect::<Vec<_>>() {
            return Err("dataset header does not match schema columns".into());
        }
        let n = schema.feature_count();
        let mut rows = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != n + 3 {
                return Err(format!(
                    "row {}: expected {} fields, got {}",
                    lineno + 2,
                    n + 3,
                    fields.len()
                ));
            }
            let mut values = Vec::with_capacity(n);
            for v in &fields[..n] {
                values.push(v.parse().map_err(|e| format!("row {}: {e}", lineno + 2))?);
            }
            let parse_int = |s: &str| -> std::result::Result<u64, String> {
                s.parse().map_err(|e| format!("row {}: {e}", lineno + 2))
            };
            rows.push(DatasetRow {
                state: SymbolicState { values },
                label: parse_int(fields[n])? as usize,
                trajectory: parse_int(fields[n + 1])? as u32,
                timestep: parse_int(fields[n + 2])? as u32,
            });
        }
        Ok(LabeledDataset {
            schema: schema.clone(),
            rows,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BG: Color = Color([0, 0, 0]);
    const S: Color = Color([200, 50, 50]);
    const T: Color = Color([50, 200, 50]);

    fn frame_with_dots(dots: &[(usize, usize, Color)]) -> Frame {
        let mut f = Frame::filled(32, 32, BG).unwrap();
        for &(x, y, c) in dots {
            f.set(x, y, c);
        }
        f
    }

    fn decompose(dots: &[(usize, usize, Color)]) -> SpriteDecomposition {
        identify_sprites(&frame_with_dots(dots))
    }

    #[test]
    fn schema_max_count_rule() {
        // Signature S appears at most 3 times in one frame.
        let d1 = decompose(&[(1, 1, S), (5, 1, S), (9, 1, S)]);
        let d2 = decompose(&[(1, 1, S)]);
        let schema = build_schema(&[d1, d2], false, 3).unwrap();
        assert_eq!(schema.slots.len(), 3);
        assert!(schema.slots.iter().all(|s| s.signature.color == S));
        assert_eq!(
            schema.slots.iter().map(|s| s.instance).collect::<Vec<_>>(),
            vec![0, 1, 2]
        );
    }

    #[test]
    fn schema_empty_corpus_is_error() {
        assert!(build_schema(&[], false, 3).is_err());
    }

    #[test]
    fn schema_empty_decompositions_yield_no_slots() {
        let d = identify_sprites(&Frame::filled(8, 8, BG).unwrap());
        let schema = build_schema(&[d], false, 3).unwrap();
        assert!(schema.slots.is_empty());
    }

    #[test]
    fn schema_two_signatures_feature_count() {
        let d = decompose(&[(1, 1, S), (5, 1, T), (9, 1, T)]);
        let schema = build_schema(&[d], false, 3).unwrap();
        assert_eq!(schema.slots.len(), 3);
        assert_eq!(schema.feature_count(), 15);
        let with_action = FeatureSchema {
            include_last_action: true,
            ..schema
        };
        assert_eq!(with_action.feature_count(), 16);
    }

    #[test]
    fn vectorize_velocity_difference_rule() {
        let prev = decompose(&[(5, 10, S)]);
        let now = decompose(&[(7, 10, S)]);
        let schema = build_schema(&[prev.clone()], false, 3).unwrap();
        let out = vectorize(&now, Some(&prev), &schema, None).unwrap();
        assert_eq!(out.state.values, vec![1.0, 7.0, 10.0, 2.0, 0.0]);
    }

    #[test]
    fn vectorize_first_frame_zero_velocity() {
        let now = decompose(&[(7, 10, S)]);
        let schema = build_schema(&[now.clone()], false, 3).unwrap();
        let out = vectorize(&now, None, &schema, None).unwrap();
        assert_eq!(out.state.values[3], 0.0);
        assert_eq!(out.state.values[4], 0.0);
    }

    #[test]
    fn vectorize_sorts_instances_by_anchor() {
        // Three identical sprites at x = 40, 20, 60 on the same row fill
        // slots in anchor order 20, 40, 60.
        let mut f = Frame::filled(80, 16, BG).unwrap();
        for x in [40, 20, 60] {
            f.set(x, 8, S);
        }
        let d = identify_sprites(&f);
        let schema = build_schema(&[d.clone()], false, 3).unwrap();
        let out = vectorize(&d, None, &schema, None).unwrap();
        let xs: Vec<f64> = (0..3).map(|i| out.state.values[i * 5 + 1]).collect();
        assert_eq!(xs, vec![20.0, 40.0, 60.0]);
    }

    #[test]
    fn vectorize_absent_slot_is_zero_sentinel() {
        let corpus = decompose(&[(1, 1, S), (5, 5, T)]);
        let schema = build_schema(&[corpus], false, 3).unwrap();
        let now = decompose(&[(1, 1, S)]);
        let out = vectorize(&now, None, &schema, None).unwrap();
        // One slot present, one absent; absent slot all zeros.
        let absent: Vec<&[f64]> = out
            .state
            .values
            .chunks(5)
            .filter(|c| c[0] == 0.0)
            .collect();
        assert_eq!(absent.len(), 1);
        assert!(absent[0].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn vectorize_drops_unknown_signatures() {
        let corpus = decompose(&[(1, 1, S)]);
        let schema = build_schema(&[corpus], false, 3).unwrap();
        let now = decompose(&[(1, 1, S), (5, 5, T)]);
        let out = vectorize(&now, None, &schema, None).unwrap();
        assert_eq!(out.dropped_sprites, 1);
    }

    #[test]
    fn vectorize_velocity_antisymmetry() {
        let a = decompose(&[(5, 10, S)]);
        let b = decompose(&[(9, 13, S)]);
        let schema = build_schema(&[a.clone()], false, 3).unwrap();
        let fwd = vectorize(&b, Some(&a), &schema, None).unwrap();
        let back = vectorize(&a, Some(&b), &schema, None).unwrap();
        assert_eq!(fwd.state.values[3], -back.state.values[3]);
        assert_eq!(fwd.state.values[4], -back.state.values[4]);
    }

    #[test]
    fn vectorize_missing_last_action_is_schema_error() {
        let d = decompose(&[(1, 1, S)]);
        let mut schema = build_schema(&[d.clone()], false, 3).unwrap();
        schema.include_last_action = true;
        assert!(matches!(
            vectorize(&d, None, &schema, None),
            Err(Error::Schema(_))
        ));
    }

    fn tiny_trajectories() -> Vec<TrajectoryRecord> {
        let frames_a: Vec<Frame> = (0..10)
            .map(|t| frame_with_dots(&[(1 + t, 1, S)]))
            .collect();
        let frames_b: Vec<Frame> = (0..5).map(|t| frame_with_dots(&[(1, 1 + t, S)])).collect();
        vec![
            TrajectoryRecord {
                id: 0,
                frames: frames_a,
                actions: vec![1; 10],
            },
            TrajectoryRecord {
                id: 24,
                frames: frames_b,
                actions: vec![0; 5],
            },
        ]
    }

    #[test]
    fn assemble_counts_rows() {
        let trajs = tiny_trajectories();
        let d = identify_sprites(&trajs[0].frames[0]);
        let schema = build_schema(&[d], false, 2).unwrap();
        let ds = assemble_dataset(&trajs, &schema).unwrap();
        assert_eq!(ds.rows.len(), 15);
    }

    #[test]
    fn assemble_velocities_reset_at_trajectory_start() {
        let trajs = tiny_trajectories();
        let d = identify_sprites(&trajs[0].frames[0]);
        let schema = build_schema(&[d], false, 2).unwrap();
        let ds = assemble_dataset(&trajs, &schema).unwrap();
        for row in ds.rows.iter().filter(|r| r.timestep == 0) {
            assert_eq!(row.state.values[3], 0.0);
            assert_eq!(row.state.values[4], 0.0);
        }
        // Non-boundary steps in trajectory 0 move +1 in x.
        assert_eq!(ds.rows[1].state.values[3], 1.0);
    }

    #[test]
    fn assemble_misaligned_lengths_names_trajectory() {
        let mut trajs = tiny_trajectories();
        trajs[1].actions.pop();
        let d = identify_sprites(&trajs[0].frames[0]);
        let schema = build_schema(&[d], false, 2).unwrap();
        let err = assemble_dataset(&trajs, &schema).unwrap_err();
        assert!(err.to_string().contains("trajectory 24"));
    }

    #[test]
    fn dataset_union_keeps_trajectory_ids() {
        let trajs: Vec<TrajectoryRecord> = (0..25)
            .map(|k| TrajectoryRecord {
                id: k,
                frames: vec![frame_with_dots(&[(1, 1, S)])],
                actions: vec![0],
            })
            .collect();
        let d = identify_sprites(&trajs[0].frames[0]);
        let schema = build_schema(&[d], false, 2).unwrap();
        let ds = assemble_dataset(&trajs, &schema).unwrap();
        let ids: std::collections::BTreeSet<u32> =
            ds.rows.iter().map(|r| r.trajectory).collect();
        assert_eq!(ids.len(), 25);
    }

    #[test]
    fn dataset_round_trip_through_file() {
        let trajs = tiny_trajectories();
        let d = identify_sprites(&trajs[0].frames[0]);
        let mut schema = build_schema(&[d], true, 2).unwrap();
        schema.names.insert(schema.slots[0].sig_hash, "dot".into());
        let ds = assemble_dataset(&trajs, &schema).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dataset.tsv");
        ds.write(&path).unwrap();
        let loaded = LabeledDataset::read(&path, &schema).unwrap();
        assert_eq!(loaded, ds);
    }

    #[test]
    fn schema_round_trip_through_file() {
        let d = decompose(&[(1, 1, S), (4, 4, S), (9, 9, T)]);
        let mut schema = build_schema(&[d], true, 3).unwrap();
        schema.names.insert(schema.slots[0].sig_hash, "ball".into());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("schema.txt");
        schema.write(&path).unwrap();
        let loaded = FeatureSchema::read(&path).unwrap();
        assert_eq!(loaded, schema);
        assert_eq!(loaded.schema_hash(), schema.schema_hash());
    }

    #[test]
    fn vectorize_is_invariant_to_sprite_list_order() {
        let d = decompose(&[(10, 3, S), (2, 3, S), (20, 3, S)]);
        let schema = build_schema(&[d.clone()], false, 3).unwrap();
        let mut shuffled = d.clone();
        shuffled.sprites.reverse();
        assert_eq!(
            vectorize(&d, None, &schema, None).unwrap(),
            vectorize(&shuffled, None, &schema, None).unwrap()
        );
    }
}
