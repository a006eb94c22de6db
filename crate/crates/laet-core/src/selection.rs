//! Best-layer selection from a per-layer metrics table using dynamic
//! standard-deviation margins.
//!
//! Two inequivalent selection rules ship side by side: pairwise dominance
//! with margins (the default) and a threshold from the per-metric maxima.
//! The first-standard-deviation baseline is the threshold rule with both
//! coefficients fixed at 1.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::probe::LayerMetricsTable;

/// Which rule turns a metrics table into the selected layer set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionStrategy {
    /// Exclude a layer only if a single other layer beats it on both
    /// metrics by the margins (with a strict-inequality tie guard).
    Dominance,
    /// Keep layers within a margin of each metric's maximum.
    Threshold,
    /// Threshold rule with both coefficients fixed at 1.
    FirstStd,
}

impl SelectionStrategy {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dominance" => Ok(SelectionStrategy::Dominance),
            "threshold" => Ok(SelectionStrategy::Threshold),
            "first-std" | "first_std" | "firststd" => Ok(SelectionStrategy::FirstStd),
            other => Err(Error::InvalidArgument(format!(
                "unknown selection strategy '{other}' (expected dominance|threshold|first-std)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SelectionStrategy::Dominance => "dominance",
            SelectionStrategy::Threshold => "threshold",
            SelectionStrategy::FirstStd => "first-std",
        }
    }
}

/// Margin coefficients and strategy choice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub alpha: f64,
    pub beta: f64,
    pub strategy: SelectionStrategy,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            alpha: 0.5,
            beta: 0.5,
            strategy: SelectionStrategy::Dominance,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha < 0.0 || self.beta < 0.0 {
            return Err(Error::InvalidArgument(
                "margin coefficients must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// The chosen layer set plus the margins that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    /// 1-based ascending layer indices; never empty.
    pub selected: Vec<usize>,
    pub sigma_m1: f64,
    pub sigma_m2: f64,
    pub delta_m1: f64,
    pub delta_m2: f64,
    pub strategy: SelectionStrategy,
    /// True when the raw threshold rule selected nothing and the single
    /// best m1+m2 layer was used instead.
    pub fallback: bool,
}

impl SelectionResult {
    pub fn len(&self) -> usize {
        self.selected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }

    pub fn contains(&self, layer: usize) -> bool {
        self.selected.contains(&layer)
    }
}

fn population_std(values: &[f64]) -> f64 {
    // A constant column has zero deviation by definition; computing it
    // through the mean would leave rounding dust.
    if values.windows(2).all(|w| w[0] == w[1]) {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

/// Population standard deviations over the metric columns and the resulting
/// margins `delta = alpha * sigma`.
pub fn compute_margins(table: &LayerMetricsTable, alpha: f64, beta: f64) -> (f64, f64, f64, f64) {
    let sigma_m1 = population_std(&table.m1_values());
    let sigma_m2 = population_std(&table.m2_values());
    (sigma_m1, sigma_m2, alpha * sigma_m1, beta * sigma_m2)
}

/// Apply the configured strategy.
pub fn select(table: &LayerMetricsTable, config: &SelectionConfig) -> Result<SelectionResult> {
    config.validate()?;
    if table.rows.is_empty() {
        return Err(Error::InvalidArgument("empty metrics table".into()));
    }
    match config.strategy {
        SelectionStrategy::Dominance => Ok(select_dominance(table, config)),
        SelectionStrategy::Threshold => Ok(select_threshold(table, config)),
        SelectionStrategy::FirstStd => Ok(select_first_std(table)),
    }
}

/// Pairwise dominance with margins: layer `l` is excluded iff some other
/// layer beats it by the margin on both metrics, at least one strictly. The
/// strict-inequality tie guard keeps identical layers from excluding each
/// other, so the result is never empty.
pub fn select_dominance(table: &LayerMetricsTable, config: &SelectionConfig) -> SelectionResult {
    let (sigma_m1, sigma_m2, delta_m1, delta_m2) =
        compute_margins(table, config.alpha, config.beta);
    let m1 = table.m1_values();
    let m2 = table.m2_values();
    let l = m1.len();
    let mut selected = Vec::new();
    for i in 0..l {
        let dominated = (0..l).any(|j| {
            j != i
                && m1[j] >= m1[i] + delta_m1
                && m2[j] >= m2[i] + delta_m2
                && (m1[j] > m1[i] || m2[j] > m2[i])
        });
        if !dominated {
            selected.push(table.rows[i].layer);
        }
    }
    SelectionResult {
        selected,
        sigma_m1,
        sigma_m2,
        delta_m1,
        delta_m2,
        strategy: SelectionStrategy::Dominance,
        fallback: false,
    }
}

fn threshold_set(table: &LayerMetricsTable, delta_m1: f64, delta_m2: f64) -> Vec<usize> {
    let m1 = table.m1_values();
    let m2 = table.m2_values();
    let max1 = m1.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let max2 = m2.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (0..m1.len())
        .filter(|&i| m1[i] >= max1 - delta_m1 && m2[i] >= max2 - delta_m2)
        .map(|i| table.rows[i].layer)
        .collect()
}

fn threshold_with_fallback(
    table: &LayerMetricsTable,
    config_alpha: f64,
    config_beta: f64,
    strategy: SelectionStrategy,
) -> SelectionResult {
    let (sigma_m1, sigma_m2, delta_m1, delta_m2) =
        compute_margins(table, config_alpha, config_beta);
    let mut selected = threshold_set(table, delta_m1, delta_m2);
    let mut fallback = false;
    if selected.is_empty() {
        // No layer clears both thresholds; keep the single best layer by
        // m1 + m2 so the pipeline stays total.
        let m1 = table.m1_values();
        let m2 = table.m2_values();
        let best = (0..m1.len())
            .max_by(|&a, &b| {
                (m1[a] + m2[a])
                    .partial_cmp(&(m1[b] + m2[b]))
                    .unwrap()
                    .then(b.cmp(&a))
            })
            .unwrap();
        selected = vec![table.rows[best].layer];
        fallback = true;
        log::warn!(
            "threshold selection was empty; falling back to layer {}",
            table.rows[best].layer
        );
    }
    SelectionResult {
        selected,
        sigma_m1,
        sigma_m2,
        delta_m1,
        delta_m2,
        strategy,
        fallback,
    }
}

/// Threshold from the column maxima: keep layers with
/// `m1 >= max m1 - delta_m1` and `m2 >= max m2 - delta_m2`.
pub fn select_threshold(table: &LayerMetricsTable, config: &SelectionConfig) -> SelectionResult {
    threshold_with_fallback(table, config.alpha, config.beta, SelectionStrategy::Threshold)
}

/// The first-standard-deviation baseline: the threshold rule with
/// `alpha = beta = 1`.
pub fn select_first_std(table: &LayerMetricsTable) -> SelectionResult {
    threshold_with_fallback(table, 1.0, 1.0, SelectionStrategy::FirstStd)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probe::LayerMetricsRow;
    use proptest::prelude::*;

    fn table(m1: &[f64], m2: &[f64]) -> LayerMetricsTable {
        LayerMetricsTable {
            rows: m1
                .iter()
                .zip(m2)
                .enumerate()
                .map(|(i, (&m1, &m2))| LayerMetricsRow {
                    layer: i + 1,
                    m1,
                    m2,
                })
                .collect(),
        }
    }

    #[test]
    fn margins_match_direct_computation() {
        let t = table(&[0.5, 0.7, 0.9, 0.88], &[0.5, 0.7, 0.9, 0.88]);
        let (s1, _, d1, _) = compute_margins(&t, 0.5, 0.5);
        // Population std of [0.5, 0.7, 0.9, 0.88], computed independently.
        assert!((s1 - 0.16147755261955143).abs() < 1e-12);
        assert!((d1 - 0.08073877630977572).abs() < 1e-12);

        let constant = table(&[0.4; 5], &[0.4; 5]);
        let flat = compute_margins(&constant, 0.5, 0.7);
        assert_eq!(flat, (0.0, 0.0, 0.0, 0.0));

        // Doubling alpha doubles the margin exactly.
        let (_, _, d1a, _) = compute_margins(&t, 1.0, 0.5);
        assert_eq!(d1a, 2.0 * d1);
    }

    #[test]
    fn dominance_spec_example() {
        let t = table(&[0.5, 0.7, 0.9, 0.88], &[0.4, 0.6, 0.85, 0.86]);
        let cfg = SelectionConfig {
            alpha: 0.5,
            beta: 0.5,
            strategy: SelectionStrategy::Dominance,
        };
        let result = select(&t, &cfg).unwrap();
        assert_eq!(result.selected, vec![3, 4]);
        assert!(!result.fallback);
    }

    #[test]
    fn dominance_single_layer_and_ties() {
        let single = table(&[0.3], &[0.2]);
        let cfg = SelectionConfig::default();
        assert_eq!(select(&single, &cfg).unwrap().selected, vec![1]);

        let tied = table(&[0.6; 4], &[0.6; 4]);
        let result = select(&tied, &cfg).unwrap();
        assert_eq!(result.selected, vec![1, 2, 3, 4]);
    }

    #[test]
    fn threshold_examples() {
        let cfg = SelectionConfig {
            alpha: 0.0,
            beta: 0.0,
            strategy: SelectionStrategy::Threshold,
        };
        // Unique joint maximizer with zero margin: a singleton.
        let t = table(&[0.1, 0.9, 0.5], &[0.2, 0.8, 0.4]);
        assert_eq!(select(&t, &cfg).unwrap().selected, vec![2]);

        // No layer attains both maxima with zero margin: falls back.
        let conflicted = table(&[0.9, 0.1], &[0.1, 0.9]);
        let result = select(&conflicted, &cfg).unwrap();
        assert!(result.fallback);
        assert_eq!(result.selected.len(), 1);
    }

    #[test]
    fn first_std_selects_everything_on_constant_tables() {
        let t = table(&[0.5; 6], &[0.5; 6]);
        let result = select_first_std(&t);
        assert_eq!(result.selected.len(), 6);
        assert!(!result.fallback);
    }

    #[test]
    fn first_std_is_superset_of_tighter_threshold() {
        let t = table(&[0.5, 0.7, 0.9, 0.88, 0.3], &[0.4, 0.6, 0.85, 0.86, 0.5]);
        let tight = select_threshold(
            &t,
            &SelectionConfig {
                alpha: 0.5,
                beta: 0.5,
                strategy: SelectionStrategy::Threshold,
            },
        );
        let wide = select_first_std(&t);
        assert!(wide.selected.len() >= tight.selected.len());
        for l in &tight.selected {
            assert!(wide.selected.contains(l));
        }
    }

    proptest! {
        #[test]
        fn selection_is_never_empty(
            metrics in proptest::collection::vec((0.0f64..1.0, 0.0f64..1.0), 1..24),
            alpha in 0.0f64..2.0,
            beta in 0.0f64..2.0,
            which in 0usize..3,
        ) {
            let m1: Vec<f64> = metrics.iter().map(|(a, _)| *a).collect();
            let m2: Vec<f64> = metrics.iter().map(|(_, b)| *b).collect();
            let t = table(&m1, &m2);
            let strategy = [SelectionStrategy::Dominance,
                            SelectionStrategy::Threshold,
                            SelectionStrategy::FirstStd][which];
            let cfg = SelectionConfig { alpha, beta, strategy };
            let result = select(&t, &cfg).unwrap();
            prop_assert!(!result.selected.is_empty());
            prop_assert!(result.selected.iter().all(|&l| l >= 1 && l <= m1.len()));
        }

        #[test]
        fn threshold_is_monotone_in_margins(
            metrics in proptest::collection::vec((0.0f64..1.0, 0.0f64..1.0), 2..24),
            alpha in 0.0f64..1.5,
            beta in 0.0f64..1.5,
            bump in 0.01f64..1.0,
        ) {
            let m1: Vec<f64> = metrics.iter().map(|(a, _)| *a).collect();
            let m2: Vec<f64> = metrics.iter().map(|(_, b)| *b).collect();
            let t = table(&m1, &m2);
            let small = select_threshold(&t, &SelectionConfig {
                alpha, beta, strategy: SelectionStrategy::Threshold });
            let large = select_threshold(&t, &SelectionConfig {
                alpha: alpha + bump, beta: beta + bump,
                strategy: SelectionStrategy::Threshold });
            if !small.fallback {
                for l in &small.selected {
                    prop_assert!(large.selected.contains(l),
                        "layer {} dropped when margins grew", l);
                }
            }
        }

        #[test]
        fn dominance_is_permutation_equivariant(
            metrics in proptest::collection::vec((0.0f64..1.0, 0.0f64..1.0), 2..12),
        ) {
            let m1: Vec<f64> = metrics.iter().map(|(a, _)| *a).collect();
            let m2: Vec<f64> = metrics.iter().map(|(_, b)| *b).collect();
            let t = table(&m1, &m2);
            let cfg = SelectionConfig::default();
            let base = select(&t, &cfg).unwrap();

            // Reverse the rows; layer numbering travels with the rows.
            let reversed = LayerMetricsTable {
                rows: t.rows.iter().rev().cloned().collect(),
            };
            let rev = select(&reversed, &cfg).unwrap();
            let mut rev_sorted = rev.selected.clone();
            rev_sorted.sort_unstable();
            let mut base_sorted = base.selected.clone();
            base_sorted.sort_unstable();
            prop_assert_eq!(base_sorted, rev_sorted);
        }

        #[test]
        fn selection_is_invariant_under_constant_shifts(
            metrics in proptest::collection::vec((0.0f64..1.0, 0.0f64..1.0), 2..12),
            shift1 in -0.25f64..0.25,
            shift2 in -0.25f64..0.25,
            which in 0usize..3,
        ) {
            let m1: Vec<f64> = metrics.iter().map(|(a, _)| *a).collect();
            let m2: Vec<f64> = metrics.iter().map(|(_, b)| *b).collect();
            let strategy = [SelectionStrategy::Dominance,
                            SelectionStrategy::Threshold,
                            SelectionStrategy::FirstStd][which];
            let cfg = SelectionConfig { alpha: 0.5, beta: 0.5, strategy };
            let base = select(&table(&m1, &m2), &cfg).unwrap();

            let m1s: Vec<f64> = m1.iter().map(|v| v + shift1).collect();
            let m2s: Vec<f64> = m2.iter().map(|v| v + shift2).collect();
            let shifted = select(&table(&m1s, &m2s), &cfg).unwrap();
            prop_assert_eq!(base.selected, shifted.selected);
        }
    }
}
