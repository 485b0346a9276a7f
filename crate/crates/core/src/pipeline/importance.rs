use std::collections::BTreeMap;

use log::warn;

use super::model::LerModel;
use crate::rules::Variable;

/// Importance and interaction scores of a fitted model. PC scores are
/// reported apart from markers: every region can split on the PCs, so
/// their scores accumulate over as many regions as there are.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceReport {
    /// `|α̂_j|` per retained rule.
    pub rule_scores: Vec<f64>,
    pub marker_scores: Vec<f64>,
    pub pc_scores: Vec<f64>,
    pub region_scores: Vec<f64>,
    /// Upper triangle (`a < b`) of the symmetric pairwise matrix; absent
    /// pairs score zero.
    pub pairwise: BTreeMap<(Variable, Variable), f64>,
    /// Variable sets of size `order` (≥ 3) with positive score.
    pub higher_order: Vec<(Vec<Variable>, f64)>,
    pub order: usize,
}

impl ImportanceReport {
    pub fn variable_score(&self, v: Variable) -> f64 {
        match v {
            Variable::Marker(j) => self.marker_scores[j],
            Variable::Pc(k) => self.pc_scores[k],
        }
    }

    /// Pairwise score, symmetric in its arguments.
    pub fn pair(&self, a: Variable, b: Variable) -> f64 {
        let key = if a <= b { (a, b) } else { (b, a) };
        self.pairwise.get(&key).copied().unwrap_or(0.0)
    }
}

/// Score rules, variables, regions and variable combinations up to
/// `order` (pairs are always scored; `order` ≥ 3 adds sets of that size).
pub fn importance(model: &LerModel, order: usize) -> ImportanceReport {
    let m = model.marker_ids.len();
    let mut marker_scores = vec![0.0; m];
    let mut pc_scores = vec![0.0; model.n_pcs()];
    let mut region_scores = vec![0.0; model.partition.regions.len()];
    let mut pairwise: BTreeMap<(Variable, Variable), f64> = BTreeMap::new();
    let mut higher: BTreeMap<Vec<Variable>, f64> = BTreeMap::new();
    let rule_scores: Vec<f64> = model.alpha.iter().map(|a| a.abs()).collect();
    let max_depth = model.rules.iter().map(|r| r.rule.depth()).max().unwrap_or(0);
    if order > 2 && order > max_depth {
        warn!("interaction order {order} exceeds the deepest rule ({max_depth}); no sets scored");
    }

    for (stored, &score) in model.rules.iter().zip(&rule_scores) {
        region_scores[stored.rule.origin.region] += score;
        let vars: Vec<Variable> = stored.rule.variables().collect();
        for &v in &vars {
            match v {
                Variable::Marker(j) => marker_scores[j] += score,
                Variable::Pc(k) => pc_scores[k] += score,
            }
        }
        let mut sorted = vars.clone();
        sorted.sort();
        sorted.dedup();
        for a in 0..sorted.len() {
            for b in a + 1..sorted.len() {
                *pairwise.entry((sorted[a], sorted[b])).or_insert(0.0) += score;
            }
        }
        if order > 2 && sorted.len() >= order {
            for_each_subset(&sorted, order, &mut |set| {
                *higher.entry(set.to_vec()).or_insert(0.0) += score;
            });
        }
    }
    pairwise.retain(|_, s| *s > 0.0);
    ImportanceReport {
        rule_scores,
        marker_scores,
        pc_scores,
        region_scores,
        pairwise,
        higher_order: higher.into_iter().filter(|(_, s)| *s > 0.0).collect(),
        order,
    }
}

fn for_each_subset(items: &[Variable], k: usize, f: &mut dyn FnMut(&[Variable])) {
    fn rec(items: &[Variable], k: usize, start: usize, cur: &mut Vec<Variable>, f: &mut dyn FnMut(&[Variable])) {
        if cur.len() == k {
            f(cur);
            return;
        }
        for i in start..items.len() {
            if items.len() - i < k - cur.len() {
                break;
            }
            cur.push(items[i]);
            rec(items, k, i + 1, cur, f);
            cur.pop();
        }
    }
    rec(items, k, 0, &mut Vec::with_capacity(k), f);
}

/// Marker indices by descending score, ties by index; PCs never appear.
pub fn rank_markers(report: &ImportanceReport, top: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..report.marker_scores.len()).collect();
    idx.sort_by(|&a, &b| {
        report.marker_scores[b]
            .total_cmp(&report.marker_scores[a])
            .then(a.cmp(&b))
    });
    idx.truncate(top);
    idx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genotype::{MarkerPosition, PartitionProvenance, Region, RegionPartition};
    use crate::mixed::VarianceComponents;
    use crate::pipeline::model::{StoredRule, MODEL_FORMAT, MODEL_VERSION};
    use crate::pipeline::HyperParams;
    use crate::rules::{ConditionKind, MissingDirection, Rule, RuleOrigin, SplitCondition};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cond(v: Variable) -> SplitCondition {
        SplitCondition {
            variable: v,
            kind: ConditionKind::Interval {
                lower: None,
                upper: Some(0.5),
            },
            missing: MissingDirection::Out,
        }
    }

    fn model_with(rules: Vec<(usize, Vec<Variable>)>, alpha: Vec<f64>, m: usize, pcs: usize) -> LerModel {
        let half = m / 2;
        LerModel {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            hyper: HyperParams::default(),
            marker_ids: (0..m).map(|j| format!("m{}", j + 1)).collect(),
            marker_map: (0..m)
                .map(|j| MarkerPosition {
                    chromosome: "1".into(),
                    position: j as u64 + 1,
                })
                .collect(),
            partition: RegionPartition {
                regions: vec![
                    Region {
                        chromosome: "1".into(),
                        start: 0,
                        end: half,
                    },
                    Region {
                        chromosome: "1".into(),
                        start: half,
                        end: m,
                    },
                ],
                provenance: PartitionProvenance::EqualCount,
            },
            pcs: (pcs > 0).then(|| crate::pipeline::model::PcProjection {
                freqs: vec![0.5; m],
                loadings: vec![vec![0.0; m]; pcs],
            }),
            covariate_names: vec![],
            rules: rules
                .into_iter()
                .enumerate()
                .map(|(t, (region, vars))| StoredRule {
                    rule: Rule {
                        conditions: vars.into_iter().map(cond).collect(),
                        origin: RuleOrigin {
                            region,
                            tree: t,
                            node: 1,
                        },
                    },
                    mean: 0.5,
                    sd: 0.5,
                })
                .collect(),
            alpha,
            beta: vec![0.0],
            vc: VarianceComponents {
                sigma2_g: 1.0,
                sigma2_e: 1.0,
            },
            reml_at_bound: false,
        }
    }

    #[test]
    fn marker_in_two_rules_sums_absolute_effects() {
        let mk = Variable::Marker;
        let model = model_with(vec![(0, vec![mk(0), mk(1)]), (0, vec![mk(0)])], vec![0.5, -0.3], 4, 0);
        let rep = importance(&model, 2);
        assert!((rep.marker_scores[0] - 0.8).abs() < 1e-15);
        assert_eq!(rep.marker_scores[3], 0.0);
        assert!((rep.pair(mk(1), mk(0)) - 0.5).abs() < 1e-15);
        assert_eq!(rep.region_scores, vec![0.8, 0.0]);
    }

    #[test]
    fn ranking_breaks_ties_by_index() {
        let rep = ImportanceReport {
            rule_scores: vec![],
            marker_scores: vec![0.1, 0.9, 0.9],
            pc_scores: vec![5.0],
            region_scores: vec![],
            pairwise: BTreeMap::new(),
            higher_order: vec![],
            order: 2,
        };
        assert_eq!(rank_markers(&rep, 2), vec![1, 2]);
        assert!(rank_markers(&rep, 0).is_empty());
    }

    #[test]
    fn pairwise_matches_double_loop_and_sets_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = 12;
        let mut rules = Vec::new();
        let mut alpha = Vec::new();
        for _ in 0..50 {
            let region = rng.random_range(0..2usize);
            let (lo, hi) = if region == 0 { (0, 6) } else { (6, 12) };
            let depth = rng.random_range(1..=4usize);
            let mut vars: Vec<Variable> = (0..depth)
                .map(|_| {
                    if rng.random_bool(0.2) {
                        Variable::Pc(rng.random_range(0..2))
                    } else {
                        Variable::Marker(rng.random_range(lo..hi))
                    }
                })
                .collect();
            vars.sort();
            vars.dedup();
            rules.push((region, vars));
            alpha.push(rng.random_range(-1.0..1.0));
        }
        let model = model_with(rules, alpha, m, 2);
        let rep = importance(&model, 3);
        let all: Vec<Variable> = (0..m).map(Variable::Marker).chain((0..2).map(Variable::Pc)).collect();
        for &a in &all {
            for &b in &all {
                if a == b {
                    continue;
                }
                let mut s = 0.0;
                for (r, al) in model.rules.iter().zip(&model.alpha) {
                    let vs: Vec<Variable> = r.rule.variables().collect();
                    if vs.contains(&a) && vs.contains(&b) {
                        s += al.abs();
                    }
                }
                assert!((rep.pair(a, b) - s).abs() < 1e-12);
                assert!(rep.pair(a, b) <= rep.variable_score(a).min(rep.variable_score(b)) + 1e-12);
            }
        }
        for (set, score) in &rep.higher_order {
            assert_eq!(set.len(), 3);
            let s: f64 = model
                .rules
                .iter()
                .zip(&model.alpha)
                .filter(|(r, _)| {
                    let vs: Vec<Variable> = r.rule.variables().collect();
                    set.iter().all(|v| vs.contains(v))
                })
                .map(|(_, a)| a.abs())
                .sum();
            assert!((score - s).abs() < 1e-12);
        }
        let total: f64 = rep.rule_scores.iter().sum();
        let regions: f64 = rep.region_scores.iter().sum();
        assert!((total - regions).abs() < 1e-12);
    }

    #[test]
    fn order_beyond_rule_depth_gives_no_sets() {
        let model = model_with(
            vec![(0, vec![Variable::Marker(0), Variable::Marker(1)])],
            vec![1.0],
            4,
            0,
        );
        assert!(importance(&model, 5).higher_order.is_empty());
    }
}
