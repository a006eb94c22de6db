//! Voting-based ensemble prediction over the selected layers, plus the
//! exponential error-bound diagnostic.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{extract_representation, LayeredModel, Strategy};
use crate::numerics::{softmax, Tensor};
use crate::probe::{argmax, ProbeClassifier};

/// One layer's vote: predicted class and its probability vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerVote {
    pub layer: usize,
    pub class: usize,
    pub probs: Vec<f64>,
}

/// The aggregated prediction for one input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleVote {
    pub votes: Vec<LayerVote>,
    pub class: usize,
    pub tie: bool,
}

/// Predict from a single selected layer: softmax over the classifier logits
/// on that layer's representation, argmax ties broken toward the lowest
/// class index.
///
/// Layers outside the trained set are rejected — their representations were
/// not fine-tuned for prediction.
pub fn predict_layer(
    model: &LayeredModel,
    classifier: &ProbeClassifier,
    tokens: &[u32],
    layer: usize,
    strategy: Strategy,
) -> Result<(usize, Vec<f64>)> {
    if layer == 0 || layer > model.num_layers() || !model.trainable_mask()[layer - 1] {
        return Err(Error::InvalidArgument(format!(
            "layer {layer} is not part of the trained layer set"
        )));
    }
    let reps = model.forward_all_layers(tokens)?;
    let rep = extract_representation(&reps, layer, strategy)?;
    let logits = classifier.forward(&Tensor::unchecked(vec![1, rep.len()], rep));
    let probs = softmax(logits.row(0))?;
    Ok((argmax(&probs), probs))
}

/// Majority vote with a two-stage tie-break: tied classes are resolved by
/// summed probability mass, then by lowest class index. The tie flag records
/// whether the first-round count was tied.
pub fn majority_vote(votes: &[(usize, Vec<f64>)]) -> Result<(usize, bool)> {
    if votes.is_empty() {
        return Err(Error::ContractViolation("no votes to aggregate".into()));
    }
    let k = votes
        .iter()
        .map(|(c, p)| (*c + 1).max(p.len()))
        .max()
        .unwrap();
    let mut counts = vec![0usize; k];
    let mut mass = vec![0.0f64; k];
    for (class, probs) in votes {
        counts[*class] += 1;
        for (m, p) in mass.iter_mut().zip(probs) {
            *m += p;
        }
    }
    let top = *counts.iter().max().unwrap();
    let tied: Vec<usize> = (0..k).filter(|&c| counts[c] == top).collect();
    if tied.len() == 1 {
        return Ok((tied[0], false));
    }
    let mut winner = tied[0];
    for &c in &tied[1..] {
        if mass[c] > mass[winner] {
            winner = c;
        }
    }
    Ok((winner, true))
}

/// Ensemble prediction for one input: per-layer votes over the trained
/// layers, aggregated by majority vote. One forward pass serves all layers.
pub fn predict_ensemble(
    model: &LayeredModel,
    classifier: &ProbeClassifier,
    tokens: &[u32],
    layers: &[usize],
    strategy: Strategy,
) -> Result<EnsembleVote> {
    if layers.is_empty() {
        return Err(Error::ContractViolation("empty ensemble layer set".into()));
    }
    let reps = model.forward_all_layers(tokens)?;
    let mut votes = Vec::with_capacity(layers.len());
    for &layer in layers {
        if layer == 0 || layer > model.num_layers() || !model.trainable_mask()[layer - 1] {
            return Err(Error::InvalidArgument(format!(
                "layer {layer} is not part of the trained layer set"
            )));
        }
        let rep = extract_representation(&reps, layer, strategy)?;
        let logits = classifier.forward(&Tensor::unchecked(vec![1, rep.len()], rep));
        let probs = softmax(logits.row(0))?;
        votes.push(LayerVote {
            layer,
            class: argmax(&probs),
            probs,
        });
    }
    let pairs: Vec<(usize, Vec<f64>)> = votes
        .iter()
        .map(|v| (v.class, v.probs.clone()))
        .collect();
    let (class, tie) = majority_vote(&pairs)?;
    Ok(EnsembleVote { votes, class, tie })
}

/// Regression analogue of the vote: the mean of the per-layer scalars.
pub fn predict_ensemble_scalar(
    model: &LayeredModel,
    classifier: &ProbeClassifier,
    tokens: &[u32],
    layers: &[usize],
    strategy: Strategy,
) -> Result<(f64, Vec<(usize, f64)>)> {
    if layers.is_empty() {
        return Err(Error::ContractViolation("empty ensemble layer set".into()));
    }
    let reps = model.forward_all_layers(tokens)?;
    let mut per_layer = Vec::with_capacity(layers.len());
    for &layer in layers {
        if layer == 0 || layer > model.num_layers() || !model.trainable_mask()[layer - 1] {
            return Err(Error::InvalidArgument(format!(
                "layer {layer} is not part of the trained layer set"
            )));
        }
        let rep = extract_representation(&reps, layer, strategy)?;
        let out = classifier.forward(&Tensor::unchecked(vec![1, rep.len()], rep));
        per_layer.push((layer, out.scalar_value()));
    }
    let mean = per_layer.iter().map(|(_, v)| v).sum::<f64>() / per_layer.len() as f64;
    Ok((mean, per_layer))
}

/// Hoeffding-style bound on majority-vote error for conditionally
/// independent voters with average error rate below one half:
/// `exp(-2 |B| (0.5 - avg_error)^2)`.
///
/// A diagnostic, never a gate: the independence assumption is not
/// verifiable for real layer predictors.
pub fn ensemble_error_bound(avg_error: f64, ensemble_size: usize) -> Result<f64> {
    if ensemble_size == 0 {
        return Err(Error::InvalidArgument("ensemble size must be positive".into()));
    }
    if !(0.0..0.5).contains(&avg_error) {
        return Err(Error::InvalidArgument(format!(
            "average error {avg_error} outside [0, 0.5)"
        )));
    }
    let gap = 0.5 - avg_error;
    Ok((-2.0 * ensemble_size as f64 * gap * gap).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{LayeredModel, ModelConfig};
    use crate::probe::{HeadKind, ProbeClassifier};
    use proptest::prelude::*;

    #[test]
    fn predict_layer_matches_manual_recomputation() {
        let mut model = LayeredModel::new(
            ModelConfig {
                layers: 3,
                dim: 16,
                heads: 2,
                context: 32,
            },
            15,
        )
        .unwrap();
        model.set_trainable(&[2, 3]).unwrap();
        let clf = ProbeClassifier::new(16, HeadKind::Classes(4), 15);
        let tokens = model.tokenize("check me Answer:");

        let (class, probs) =
            predict_layer(&model, &clf, &tokens, 2, crate::model::Strategy::Lt).unwrap();
        // Manual recomputation through the same public pieces.
        let reps = model.forward_all_layers(&tokens).unwrap();
        let rep = extract_representation(&reps, 2, crate::model::Strategy::Lt).unwrap();
        let logits = clf.forward(&Tensor::unchecked(vec![1, rep.len()], rep));
        let manual = softmax(logits.row(0)).unwrap();
        assert_eq!(probs, manual);
        let manual_class = manual
            .iter()
            .enumerate()
            .fold(0usize, |best, (i, &v)| if v > manual[best] { i } else { best });
        assert_eq!(class, manual_class);

        // Layers outside the trained set are rejected.
        assert!(predict_layer(&model, &clf, &tokens, 1, crate::model::Strategy::Lt).is_err());
        assert!(predict_layer(&model, &clf, &tokens, 9, crate::model::Strategy::Lt).is_err());
    }

    fn vote(class: usize, probs: &[f64]) -> (usize, Vec<f64>) {
        (class, probs.to_vec())
    }

    #[test]
    fn unanimous_vote_is_not_a_tie() {
        let votes = vec![
            vote(1, &[0.1, 0.9]),
            vote(1, &[0.2, 0.8]),
            vote(1, &[0.4, 0.6]),
        ];
        assert_eq!(majority_vote(&votes).unwrap(), (1, false));
    }

    #[test]
    fn strict_majority_wins() {
        let votes = vec![
            vote(0, &[0.9, 0.1]),
            vote(0, &[0.6, 0.4]),
            vote(1, &[0.2, 0.8]),
        ];
        assert_eq!(majority_vote(&votes).unwrap(), (0, false));
    }

    #[test]
    fn probability_mass_breaks_count_ties() {
        let votes = vec![vote(0, &[0.6, 0.4]), vote(1, &[0.5, 0.5])];
        // class 0 mass 1.1, class 1 mass 0.9
        assert_eq!(majority_vote(&votes).unwrap(), (0, true));

        let reversed = vec![vote(0, &[0.51, 0.49]), vote(1, &[0.1, 0.9])];
        // class 1 mass 1.39 wins despite equal counts
        assert_eq!(majority_vote(&reversed).unwrap(), (1, true));
    }

    #[test]
    fn lowest_index_breaks_exact_mass_ties() {
        let votes = vec![vote(0, &[0.5, 0.5]), vote(1, &[0.5, 0.5])];
        assert_eq!(majority_vote(&votes).unwrap(), (0, true));
    }

    #[test]
    fn empty_votes_are_rejected() {
        assert!(majority_vote(&[]).is_err());
    }

    #[test]
    fn bound_examples() {
        let b = ensemble_error_bound(0.3, 5).unwrap();
        assert!((b - (-0.4f64).exp()).abs() < 1e-12);

        // Doubling the ensemble squares the bound exactly (in exact
        // arithmetic; allow float slack).
        let b10 = ensemble_error_bound(0.3, 10).unwrap();
        assert!((b10 - b * b).abs() < 1e-12);

        // As the average error approaches one half the bound approaches 1.
        let near = ensemble_error_bound(0.4999999, 3).unwrap();
        assert!(near > 0.999999);

        assert!(ensemble_error_bound(0.5, 3).is_err());
        assert!(ensemble_error_bound(-0.01, 3).is_err());
        assert!(ensemble_error_bound(0.3, 0).is_err());
    }

    #[test]
    fn bound_is_monotone() {
        let mut prev = 1.0;
        for size in [1, 2, 4, 8, 16] {
            let b = ensemble_error_bound(0.3, size).unwrap();
            assert!(b < prev);
            prev = b;
        }
        let mut prev = 0.0;
        for err in [0.05, 0.15, 0.25, 0.35, 0.45] {
            let b = ensemble_error_bound(err, 5).unwrap();
            assert!(b > prev);
            prev = b;
        }
    }

    proptest! {
        #[test]
        fn vote_is_permutation_invariant(
            votes in proptest::collection::vec((0usize..4, proptest::collection::vec(0.0f64..1.0, 4)), 1..12),
            rotation in 0usize..12,
        ) {
            let base = majority_vote(&votes).unwrap();
            let mut rotated = votes.clone();
            rotated.rotate_left(rotation % votes.len().max(1));
            prop_assert_eq!(majority_vote(&rotated).unwrap(), base);
        }

        #[test]
        fn winner_received_at_least_one_vote(
            votes in proptest::collection::vec((0usize..5, proptest::collection::vec(0.0f64..1.0, 5)), 1..15),
        ) {
            let (winner, _) = majority_vote(&votes).unwrap();
            prop_assert!(votes.iter().any(|(c, _)| *c == winner));
        }
    }
}
