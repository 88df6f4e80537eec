//! Synthetic sequence-labelling tasks and their JSON-lines cache format.
//!
//! Two generators are provided. The latent-feature task samples the
//! persistent-feature process the oracle solves exactly, so every dataset
//! carries its own Bayes ceiling. The delayed-cue task labels each step with
//! the value of the next upcoming cue, which no causal model can know.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::{bayes_filter, forward_backward, OracleModel};
use crate::tensor::{Rng, Tensor};

/// One labelled sequence; `targets` is `None` where nothing is scored.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    /// `T x I`
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<Option<usize>>,
    pub mask: Vec<bool>,
    /// Positions whose label depends on the future.
    pub affected: Option<Vec<bool>>,
}

impl Sequence {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Right-padded batch; every per-position vector is t-major (`t * B + b`).
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceBatch {
    /// `T x B x I`
    pub inputs: Tensor,
    pub targets: Vec<Option<usize>>,
    pub mask: Vec<bool>,
    pub affected: Option<Vec<bool>>,
    pub seed: u64,
}

impl SequenceBatch {
    pub fn steps(&self) -> usize {
        self.inputs.shape()[0]
    }

    pub fn batch_size(&self) -> usize {
        self.inputs.shape()[1]
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.shape()[2]
    }

    pub fn from_sequences(seqs: &[&Sequence], seed: u64) -> Result<SequenceBatch> {
        let Some(first) = seqs.first() else {
            return Err(Error::Data("empty batch".into()));
        };
        let input_dim = first.inputs.first().map(Vec::len).unwrap_or(0);
        let steps = seqs.iter().map(|s| s.len()).max().unwrap_or(0);
        if steps == 0 || input_dim == 0 {
            return Err(Error::Data("sequences must have at least one step and one feature".into()));
        }
        let b = seqs.len();
        let mut inputs = vec![0.0; steps * b * input_dim];
        let mut targets = vec![None; steps * b];
        let mut mask = vec![false; steps * b];
        let any_affected = seqs.iter().any(|s| s.affected.is_some());
        let mut affected = vec![false; steps * b];
        for (j, s) in seqs.iter().enumerate() {
            if s.targets.len() != s.len() || s.mask.len() != s.len() {
                return Err(Error::Data("targets and mask must match the number of steps".into()));
            }
            for t in 0..s.len() {
                if s.inputs[t].len() != input_dim {
                    return Err(Error::Data(format!("step {t} has {} features, expected {input_dim}", s.inputs[t].len())));
                }
                let k = t * b + j;
                inputs[k * input_dim..(k + 1) * input_dim].copy_from_slice(&s.inputs[t]);
                mask[k] = s.mask[t];
                targets[k] = if s.mask[t] { s.targets[t] } else { None };
                if let Some(a) = &s.affected {
                    affected[k] = a.get(t).copied().unwrap_or(false) && s.mask[t];
                }
            }
        }
        Ok(SequenceBatch {
            inputs: Tensor::new([steps, b, input_dim], inputs)?,
            targets,
            mask,
            affected: any_affected.then_some(affected),
            seed,
        })
    }
}

/// Gaussian inputs and uniform random targets. With `ragged`, sequence `b`
/// is `b` steps shorter than the first (never below one step).
pub fn random_batch(
    rng: &mut Rng,
    steps: usize,
    batch: usize,
    input_dim: usize,
    num_classes: usize,
    ragged: bool,
) -> Result<SequenceBatch> {
    let seqs: Vec<Sequence> = (0..batch)
        .map(|b| {
            let len = if ragged { steps.saturating_sub(b).max(1) } else { steps };
            Sequence {
                inputs: (0..len).map(|_| (0..input_dim).map(|_| rng.normal(0.0, 1.0)).collect()).collect(),
                targets: (0..len).map(|_| Some(rng.below(num_classes))).collect(),
                mask: vec![true; len],
                affected: None,
            }
        })
        .collect();
    let refs: Vec<&Sequence> = seqs.iter().collect();
    SequenceBatch::from_sequences(&refs, rng.seed())
}

/// Bayes-optimal per-step accuracies measured on the dataset itself.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ceiling {
    pub smoothed: f64,
    pub filtered: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub input_dim: usize,
    pub num_classes: usize,
    pub sequences: Vec<Sequence>,
    pub ceiling: Option<Ceiling>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn batch(&self, indices: &[usize], seed: u64) -> Result<SequenceBatch> {
        let seqs: Vec<&Sequence> = indices.iter().map(|&i| &self.sequences[i]).collect();
        SequenceBatch::from_sequences(&seqs, seed)
    }

    /// Consecutive batches of at most `size` sequences.
    pub fn batches(&self, size: usize) -> Result<Vec<SequenceBatch>> {
        let idx: Vec<usize> = (0..self.len()).collect();
        idx.chunks(size.max(1)).map(|c| self.batch(c, 0)).collect()
    }

    /// Number of scored positions.
    pub fn scored(&self) -> usize {
        self.sequences
            .iter()
            .map(|s| s.targets.iter().zip(&s.mask).filter(|(t, &m)| m && t.is_some()).count())
            .sum()
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let io = |e: std::io::Error| Error::Data(format!("{}: {e}", path.display()));
        let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
        for s in &self.sequences {
            let row = JsonRow {
                inputs: s.inputs.clone(),
                targets: s.targets.iter().map(|t| t.map_or(-1, |v| v as i64)).collect(),
                mask: s.mask.clone(),
                affected: s.affected.clone(),
            };
            let line = serde_json::to_string(&row).map_err(|e| Error::Data(e.to_string()))?;
            writeln!(out, "{line}").map_err(io)?;
        }
        out.flush().map_err(io)
    }

    /// Loads rows written by [`Dataset::write_jsonl`]. The class count is
    /// one past the largest target unless given.
    pub fn read_jsonl(path: &Path, num_classes: Option<usize>) -> Result<Dataset> {
        let io = |e: std::io::Error| Error::Data(format!("{}: {e}", path.display()));
        let file = std::io::BufReader::new(std::fs::File::open(path).map_err(io)?);
        let mut sequences = Vec::new();
        for (n, line) in file.lines().enumerate() {
            let line = line.map_err(io)?;
            if line.trim().is_empty() {
                continue;
            }
            let row: JsonRow =
                serde_json::from_str(&line).map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), n + 1)))?;
            let targets = row
                .targets
                .iter()
                .map(|&t| match t {
                    -1 => Ok(None),
                    t if t >= 0 => Ok(Some(t as usize)),
                    t => Err(Error::Data(format!("line {}: invalid target {t}", n + 1))),
                })
                .collect::<Result<_>>()?;
            sequences.push(Sequence {
                inputs: row.inputs,
                targets,
                mask: row.mask,
                affected: row.affected,
            });
        }
        let input_dim = sequences
            .first()
            .and_then(|s| s.inputs.first())
            .map(Vec::len)
            .ok_or_else(|| Error::Data(format!("{}: no sequences", path.display())))?;
        let largest = sequences.iter().flat_map(|s| s.targets.iter().flatten()).max().copied();
        let num_classes = num_classes.unwrap_or(largest.map_or(1, |m| m + 1));
        if largest.is_some_and(|m| m >= num_classes) {
            return Err(Error::Data(format!("target {} out of range for {num_classes} classes", largest.unwrap())));
        }
        Ok(Dataset {
            input_dim,
            num_classes,
            sequences,
            ceiling: None,
        })
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonRow {
    inputs: Vec<Vec<f64>>,
    targets: Vec<i64>,
    mask: Vec<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    affected: Option<Vec<bool>>,
}

fn def_z() -> f64 {
    0.9
}

fn def_p() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatentTaskSpec {
    pub steps: usize,
    pub features: usize,
    pub noise: f64,
    /// Probability that each feature persists from one step to the next.
    #[serde(default = "def_z")]
    pub z: f64,
    /// Probability a freshly drawn feature is present.
    #[serde(default = "def_p")]
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DelayedCueSpec {
    pub steps: usize,
    pub gap: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskSpec {
    LatentFeature(LatentTaskSpec),
    DelayedCue(DelayedCueSpec),
}

impl TaskSpec {
    pub fn generate(&self, rng: &mut Rng, size: usize) -> Result<Dataset> {
        match self {
            TaskSpec::LatentFeature(s) => gen_latent_feature_task(rng, s, size),
            TaskSpec::DelayedCue(s) => gen_delayed_cue_task(rng, s.steps, s.gap, size),
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            TaskSpec::LatentFeature(s) => s.features,
            TaskSpec::DelayedCue(_) => 2,
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            TaskSpec::LatentFeature(s) => 1 << s.features,
            TaskSpec::DelayedCue(_) => 2,
        }
    }
}

/// `ln λ` is clipped here so near-noiseless observations stay finite.
const MAX_LOG_RATIO: f64 = 300.0;

fn decode(bits: impl Iterator<Item = bool>) -> usize {
    bits.enumerate().map(|(i, b)| (b as usize) << i).sum()
}

/// Latent binary features with random context resets observed in Gaussian
/// noise; class `Σ φ_i 2^i`.
pub fn gen_latent_feature_task(rng: &mut Rng, spec: &LatentTaskSpec, size: usize) -> Result<Dataset> {
    let LatentTaskSpec {
        steps,
        features,
        noise,
        z,
        p,
    } = *spec;
    if !(1..=3).contains(&features) {
        return Err(Error::Config(format!("features must be 1..=3, got {features}")));
    }
    if !(noise.is_finite() && noise > 0.0) {
        return Err(Error::Config(format!("noise must be positive and finite, got {noise}")));
    }
    if steps == 0 || size == 0 {
        return Err(Error::Config("steps and size must be positive".into()));
    }
    if !(0.0..=1.0).contains(&z) || !(p > 0.0 && p < 1.0) {
        return Err(Error::Config(format!("need z in [0, 1] and p in (0, 1), got z={z}, p={p}")));
    }
    let two_var = 2.0 * noise * noise;
    let mut sequences = Vec::with_capacity(size);
    let (mut smoothed_hits, mut filtered_hits) = (0usize, 0usize);
    for _ in 0..size {
        let mut phi = vec![vec![false; features]; steps];
        let mut inputs = vec![vec![0.0; features]; steps];
        for f in 0..features {
            for t in 0..steps {
                let carry = t > 0 && rng.bernoulli(z);
                phi[t][f] = if carry { phi[t - 1][f] } else { rng.bernoulli(p) };
                inputs[t][f] = phi[t][f] as u8 as f64 + rng.normal(0.0, noise);
            }
        }
        let mut smoothed_ok = vec![true; steps];
        let mut filtered_ok = vec![true; steps];
        for f in 0..features {
            let lambda: Vec<f64> = (0..steps)
                .map(|t| ((1.0 - 2.0 * inputs[t][f]) / two_var).clamp(-MAX_LOG_RATIO, MAX_LOG_RATIO).exp())
                .collect();
            let model = OracleModel::new(p, vec![z; steps - 1], lambda)?;
            let smoothed = forward_backward(&model)?.smoothed;
            let filtered = bayes_filter(&model)?;
            for t in 0..steps {
                smoothed_ok[t] &= (smoothed[t] > 0.5) == phi[t][f];
                filtered_ok[t] &= (filtered[t] > 0.5) == phi[t][f];
            }
        }
        smoothed_hits += smoothed_ok.iter().filter(|&&b| b).count();
        filtered_hits += filtered_ok.iter().filter(|&&b| b).count();
        sequences.push(Sequence {
            inputs,
            targets: phi.iter().map(|row| Some(decode(row.iter().copied()))).collect(),
            mask: vec![true; steps],
            affected: None,
        });
    }
    let total = (size * steps) as f64;
    Ok(Dataset {
        input_dim: features,
        num_classes: 1 << features,
        sequences,
        ceiling: Some(Ceiling {
            smoothed: smoothed_hits as f64 / total,
            filtered: filtered_hits as f64 / total,
        }),
    })
}

/// Inputs are `[cue flag, cue value ±1]`. The final step always holds a cue
/// and consecutive cues are 1 to `gap + 1` steps apart, so every step is
/// labelled with a cue at most `gap` steps ahead: class 1 for +1, class 0
/// for -1. Non-cue steps are the affected positions.
pub fn gen_delayed_cue_task(rng: &mut Rng, steps: usize, gap: usize, size: usize) -> Result<Dataset> {
    if steps == 0 || size == 0 {
        return Err(Error::Config("steps and size must be positive".into()));
    }
    if gap >= steps {
        return Err(Error::Config(format!("gap {gap} must be below the sequence length {steps}")));
    }
    let mut sequences = Vec::with_capacity(size);
    for _ in 0..size {
        let mut is_cue = vec![false; steps];
        let mut pos = steps as isize - 1;
        while pos >= 0 {
            is_cue[pos as usize] = true;
            pos -= 1 + rng.below(gap + 1) as isize;
        }
        let mut inputs = vec![vec![0.0; 2]; steps];
        let mut targets = vec![None; steps];
        let mut next = 0;
        for t in (0..steps).rev() {
            if is_cue[t] {
                next = rng.below(2);
                inputs[t] = vec![1.0, if next == 1 { 1.0 } else { -1.0 }];
            }
            targets[t] = Some(next);
        }
        sequences.push(Sequence {
            inputs,
            targets,
            mask: vec![true; steps],
            affected: Some(is_cue.iter().map(|&c| !c).collect()),
        });
    }
    Ok(Dataset {
        input_dim: 2,
        num_classes: 2,
        sequences,
        ceiling: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn latent(noise: f64, z: f64, features: usize, steps: usize) -> LatentTaskSpec {
        LatentTaskSpec {
            steps,
            features,
            noise,
            z,
            p: 0.5,
        }
    }

    #[test]
    fn noiseless_ceiling_is_perfect() {
        let d = gen_latent_feature_task(&mut Rng::new(1), &latent(1e-3, 0.9, 2, 20), 50).unwrap();
        let c = d.ceiling.unwrap();
        assert_eq!(c.smoothed, 1.0);
        assert_eq!(c.filtered, 1.0);
    }

    #[test]
    fn no_coupling_means_no_smoothing_gain() {
        let d = gen_latent_feature_task(&mut Rng::new(2), &latent(2.0, 0.0, 1, 20), 200).unwrap();
        let c = d.ceiling.unwrap();
        assert_eq!(c.smoothed, c.filtered);
    }

    #[test]
    fn persistence_makes_smoothing_strictly_better() {
        let d = gen_latent_feature_task(&mut Rng::new(3), &latent(1.0, 0.9, 1, 20), 10_000).unwrap();
        let c = d.ceiling.unwrap();
        assert!(c.smoothed > c.filtered + 0.01, "{c:?}");
    }

    #[test]
    fn latent_validation() {
        let mut rng = Rng::new(0);
        assert!(matches!(gen_latent_feature_task(&mut rng, &latent(0.0, 0.9, 1, 5), 2), Err(Error::Config(_))));
        assert!(matches!(gen_latent_feature_task(&mut rng, &latent(f64::NAN, 0.9, 1, 5), 2), Err(Error::Config(_))));
        assert!(matches!(gen_latent_feature_task(&mut rng, &latent(1.0, 0.9, 4, 5), 2), Err(Error::Config(_))));
    }

    #[test]
    fn classes_encode_feature_bits() {
        let d = gen_latent_feature_task(&mut Rng::new(4), &latent(1e-3, 0.5, 3, 10), 20).unwrap();
        assert_eq!(d.num_classes, 8);
        for s in &d.sequences {
            for t in 0..10 {
                let bits: Vec<bool> = s.inputs[t].iter().map(|&x| x > 0.5).collect();
                assert_eq!(s.targets[t], Some(decode(bits.into_iter())));
            }
        }
    }

    #[test]
    fn cue_labels_look_ahead_at_most_gap() {
        let d = gen_delayed_cue_task(&mut Rng::new(5), 20, 3, 100).unwrap();
        for s in &d.sequences {
            assert_eq!(s.inputs[19][0], 1.0);
            let mut since_cue = 0;
            for t in (0..20).rev() {
                if s.inputs[t][0] == 1.0 {
                    since_cue = 0;
                    assert_eq!(s.targets[t], Some((s.inputs[t][1] > 0.0) as usize));
                } else {
                    since_cue += 1;
                    assert!(since_cue <= 3);
                    assert_eq!(s.targets[t], s.targets[t + 1]);
                }
                assert_eq!(s.affected.as_ref().unwrap()[t], s.inputs[t][0] == 0.0);
            }
        }
    }

    #[test]
    fn zero_gap_has_cue_everywhere() {
        let d = gen_delayed_cue_task(&mut Rng::new(6), 8, 0, 10).unwrap();
        assert!(d.sequences.iter().all(|s| s.affected.as_ref().unwrap().iter().all(|a| !a)));
        assert!(gen_delayed_cue_task(&mut Rng::new(6), 8, 8, 10).is_err());
    }

    #[test]
    fn batches_pad_on_the_right() {
        let a = Sequence {
            inputs: vec![vec![1.0], vec![2.0], vec![3.0]],
            targets: vec![Some(0), Some(1), Some(0)],
            mask: vec![true; 3],
            affected: None,
        };
        let b = Sequence {
            inputs: vec![vec![4.0]],
            targets: vec![Some(1)],
            mask: vec![true],
            affected: None,
        };
        let batch = SequenceBatch::from_sequences(&[&a, &b], 9).unwrap();
        assert_eq!(batch.inputs.shape(), &[3, 2, 1]);
        assert_eq!(batch.inputs.data(), &[1.0, 4.0, 2.0, 0.0, 3.0, 0.0]);
        assert_eq!(batch.mask, vec![true, true, true, false, true, false]);
        assert_eq!(batch.targets[3], None);
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = std::env::temp_dir().join(format!("bru-tasks-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("cue.jsonl");
        let d = gen_delayed_cue_task(&mut Rng::new(7), 6, 2, 5).unwrap();
        d.write_jsonl(&path).unwrap();
        let back = Dataset::read_jsonl(&path, Some(2)).unwrap();
        assert_eq!(back.sequences, d.sequences);
        std::fs::write(&path, "{\"inputs\": [[1.0]], \"targets\": [5], \"mask\": [true]}\n").unwrap();
        assert!(Dataset::read_jsonl(&path, Some(2)).is_err());
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
