//! Split conditions, conjunctive rules and their line-oriented text form.

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{LerError, Result};
use crate::genotype::{MarkerMatrix, MISSING};

/// A candidate split variable: a marker column or a principal component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variable {
    Marker(usize),
    Pc(usize),
}

impl fmt::Display for Variable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variable::Marker(j) => write!(f, "m{}", j + 1),
            Variable::Pc(k) => write!(f, "pc{}", k + 1),
        }
    }
}

impl std::str::FromStr for Variable {
    type Err = LerError;

    fn from_str(s: &str) -> Result<Self> {
        let parse_idx = |digits: &str| -> Result<usize> {
            match digits.parse::<usize>() {
                Ok(k) if k >= 1 => Ok(k - 1),
                _ => Err(LerError::Validation(format!("bad variable name {s:?}"))),
            }
        };
        if let Some(rest) = s.strip_prefix("pc") {
            Ok(Variable::Pc(parse_idx(rest)?))
        } else if let Some(rest) = s.strip_prefix('m') {
            Ok(Variable::Marker(parse_idx(rest)?))
        } else {
            Err(LerError::Validation(format!("bad variable name {s:?}")))
        }
    }
}

/// Raw genotype codes plus PC scores for a set of samples: everything a rule
/// or a tree can split on.
#[derive(Debug, Clone, Copy)]
pub struct Features<'a> {
    pub markers: &'a MarkerMatrix,
    /// n x c principal component scores (c may be 0).
    pub pcs: &'a DMatrix<f64>,
}

impl<'a> Features<'a> {
    pub fn new(markers: &'a MarkerMatrix, pcs: &'a DMatrix<f64>) -> Self {
        debug_assert_eq!(markers.n_samples(), pcs.nrows());
        Self { markers, pcs }
    }

    pub fn n_samples(&self) -> usize {
        self.markers.n_samples()
    }

    /// Value of `var` for `row`; NaN encodes a missing call.
    #[inline]
    pub fn value(&self, row: usize, var: Variable) -> f64 {
        match var {
            Variable::Marker(j) => {
                let v = self.markers.get(row, j);
                if v == MISSING {
                    f64::NAN
                } else {
                    v as f64
                }
            }
            Variable::Pc(k) => self.pcs[(row, k)],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingDirection {
    In,
    Out,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionKind {
    /// `lower < x <= upper`, either side open when `None`.
    Interval { lower: Option<f64>, upper: Option<f64> },
    /// `x` is one of the listed genotype codes.
    Subset { values: Vec<u8> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitCondition {
    pub variable: Variable,
    pub kind: ConditionKind,
    pub missing: MissingDirection,
}

impl SplitCondition {
    #[inline]
    pub fn contains(&self, value: f64) -> bool {
        if value.is_nan() {
            return self.missing == MissingDirection::In;
        }
        match &self.kind {
            ConditionKind::Interval { lower, upper } => {
                lower.is_none_or(|l| value > l) && upper.is_none_or(|u| value <= u)
            }
            ConditionKind::Subset { values } => values.iter().any(|&c| c as f64 == value),
        }
    }

    fn validate(&self) -> Result<()> {
        match &self.kind {
            ConditionKind::Interval {
                lower: None,
                upper: None,
            } => Err(LerError::Validation(format!(
                "condition on {} is unbounded on both sides",
                self.variable
            ))),
            ConditionKind::Subset { values } if values.is_empty() => Err(LerError::Validation(format!(
                "condition on {} has an empty subset",
                self.variable
            ))),
            _ => Ok(()),
        }
    }
}

/// Where a rule came from: region, tree within the region, node within the
/// tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RuleOrigin {
    pub region: usize,
    pub tree: usize,
    pub node: usize,
}

/// Conjunction of split conditions, at most one per variable, sorted by
/// variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    pub conditions: Vec<SplitCondition>,
    pub origin: RuleOrigin,
}

/// One step on a root-to-node path.
#[derive(Debug, Clone, Copy)]
pub(crate) struct PathStep {
    pub variable: Variable,
    pub threshold: f64,
    pub went_left: bool,
    pub missing_left: bool,
}

impl Rule {
    /// Merge a root-to-node path into one interval per variable. Missing
    /// values stay inside the rule only if every split on that variable sent
    /// them along the path.
    pub(crate) fn from_path(path: &[PathStep], origin: RuleOrigin) -> Rule {
        let mut conditions: Vec<SplitCondition> = Vec::new();
        for step in path {
            let missing_in = step.went_left == step.missing_left;
            let cond = match conditions.iter_mut().find(|c| c.variable == step.variable) {
                Some(c) => c,
                None => {
                    conditions.push(SplitCondition {
                        variable: step.variable,
                        kind: ConditionKind::Interval {
                            lower: None,
                            upper: None,
                        },
                        missing: MissingDirection::In,
                    });
                    conditions.last_mut().unwrap()
                }
            };
            if let ConditionKind::Interval { lower, upper } = &mut cond.kind {
                if step.went_left {
                    *upper = Some(upper.map_or(step.threshold, |u| u.min(step.threshold)));
                } else {
                    *lower = Some(lower.map_or(step.threshold, |l| l.max(step.threshold)));
                }
            }
            if !missing_in {
                cond.missing = MissingDirection::Out;
            }
        }
        conditions.sort_by_key(|c| c.variable);
        Rule { conditions, origin }
    }

    pub fn depth(&self) -> usize {
        self.conditions.len()
    }

    pub fn variables(&self) -> impl Iterator<Item = Variable> + '_ {
        self.conditions.iter().map(|c| c.variable)
    }

    pub fn evaluate(&self, features: &Features<'_>, row: usize) -> bool {
        self.conditions
            .iter()
            .all(|c| c.contains(features.value(row, c.variable)))
    }

    /// Evaluate on every sample at once.
    pub fn evaluate_all(&self, features: &Features<'_>) -> Vec<bool> {
        let n = features.n_samples();
        let mut active = vec![true; n];
        for c in &self.conditions {
            match c.variable {
                Variable::Marker(j) => {
                    // resolve the three codes and MISSING once
                    let table = [c.contains(0.0), c.contains(1.0), c.contains(2.0), c.contains(f64::NAN)];
                    for (a, &g) in active.iter_mut().zip(features.markers.column(j)) {
                        let idx = if g == MISSING { 3 } else { g as usize };
                        *a &= table[idx];
                    }
                }
                Variable::Pc(k) => {
                    for (i, a) in active.iter_mut().enumerate() {
                        *a &= c.contains(features.pcs[(i, k)]);
                    }
                }
            }
        }
        active
    }

    pub fn validate(&self) -> Result<()> {
        for c in &self.conditions {
            c.validate()?;
        }
        for w in self.conditions.windows(2) {
            if w[0].variable >= w[1].variable {
                return Err(LerError::Validation(
                    "rule conditions must be sorted with one per variable".into(),
                ));
            }
        }
        Ok(())
    }
}

fn write_term(out: &mut String, var: Variable, op: &str, value: &str, missing_in: bool) {
    if !out.is_empty() {
        out.push_str(" & ");
    }
    out.push_str(&format!("{var} {op} {value}"));
    if missing_in {
        out.push_str(" +na");
    }
}

/// `region:tree:node | var op value [& ...] | mean | sd`
///
/// Interval conditions with two finite bounds are written as two terms on the
/// same variable. A trailing `+na` on a term marks that missing calls satisfy
/// the condition.
pub fn format_rule_line(rule: &Rule, mean: f64, sd: f64) -> String {
    let mut terms = String::new();
    for c in &rule.conditions {
        let missing_in = c.missing == MissingDirection::In;
        match &c.kind {
            ConditionKind::Interval { lower, upper } => {
                if let Some(l) = lower {
                    write_term(&mut terms, c.variable, ">", &l.to_string(), missing_in);
                }
                if let Some(u) = upper {
                    write_term(&mut terms, c.variable, "<=", &u.to_string(), missing_in);
                }
            }
            ConditionKind::Subset { values } => {
                let list: Vec<String> = values.iter().map(u8::to_string).collect();
                write_term(&mut terms, c.variable, "in", &list.join(","), missing_in);
            }
        }
    }
    let o = rule.origin;
    format!("{}:{}:{} | {} | {} | {}", o.region, o.tree, o.node, terms, mean, sd)
}

pub fn parse_rule_line(line: &str) -> Result<(Rule, f64, f64)> {
    let bad = |msg: &str| LerError::Validation(format!("{msg}: {line:?}"));
    let fields: Vec<&str> = line.split('|').map(str::trim).collect();
    if fields.len() != 4 {
        return Err(bad("expected four '|'-separated fields"));
    }
    let origin: Vec<usize> = fields[0]
        .split(':')
        .map(|s| s.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| bad("bad origin"))?;
    if origin.len() != 3 {
        return Err(bad("origin must be region:tree:node"));
    }
    let mut conditions: Vec<SplitCondition> = Vec::new();
    for term in fields[1].split('&').map(str::trim).filter(|t| !t.is_empty()) {
        let parts: Vec<&str> = term.split_whitespace().collect();
        let (core, missing_in) = match parts.as_slice() {
            [v, op, val, "+na"] => ([*v, *op, *val], true),
            [v, op, val] => ([*v, *op, *val], false),
            _ => return Err(bad("malformed term")),
        };
        let variable: Variable = core[0].parse()?;
        let missing = if missing_in {
            MissingDirection::In
        } else {
            MissingDirection::Out
        };
        let idx = match conditions.iter().position(|c| c.variable == variable) {
            Some(i) => i,
            None => {
                let kind = if core[1] == "in" {
                    ConditionKind::Subset { values: Vec::new() }
                } else {
                    ConditionKind::Interval {
                        lower: None,
                        upper: None,
                    }
                };
                conditions.push(SplitCondition {
                    variable,
                    kind,
                    missing,
                });
                conditions.len() - 1
            }
        };
        let cond = &mut conditions[idx];
        match (core[1], &mut cond.kind) {
            (">", ConditionKind::Interval { lower, .. }) => {
                *lower = Some(core[2].parse().map_err(|_| bad("bad bound"))?)
            }
            ("<=", ConditionKind::Interval { upper, .. }) => {
                *upper = Some(core[2].parse().map_err(|_| bad("bad bound"))?)
            }
            ("in", ConditionKind::Subset { values }) => {
                for v in core[2].split(',') {
                    values.push(v.parse().map_err(|_| bad("bad subset value"))?);
                }
            }
            _ => return Err(bad("unknown operator")),
        }
    }
    conditions.sort_by_key(|c| c.variable);
    let rule = Rule {
        conditions,
        origin: RuleOrigin {
            region: origin[0],
            tree: origin[1],
            node: origin[2],
        },
    };
    rule.validate()?;
    let mean = fields[2].parse().map_err(|_| bad("bad mean"))?;
    let sd = fields[3].parse().map_err(|_| bad("bad sd"))?;
    Ok((rule, mean, sd))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table1_rule() -> Rule {
        Rule {
            conditions: vec![
                SplitCondition {
                    variable: Variable::Marker(0),
                    kind: ConditionKind::Interval {
                        lower: None,
                        upper: Some(1.5),
                    },
                    missing: MissingDirection::Out,
                },
                SplitCondition {
                    variable: Variable::Marker(1),
                    kind: ConditionKind::Interval {
                        lower: Some(1.5),
                        upper: None,
                    },
                    missing: MissingDirection::In,
                },
            ],
            origin: RuleOrigin {
                region: 0,
                tree: 3,
                node: 4,
            },
        }
    }

    #[test]
    fn interaction_cell_evaluation() {
        let m = MarkerMatrix::from_rows(&[vec![1, 2], vec![2, 2], vec![0, MISSING], vec![MISSING, 2]]).unwrap();
        let pcs = DMatrix::zeros(4, 0);
        let f = Features::new(&m, &pcs);
        let r = table1_rule();
        assert!(r.evaluate(&f, 0));
        assert!(!r.evaluate(&f, 1));
        // missing m2 routes in, missing m1 routes out
        assert!(r.evaluate(&f, 2));
        assert!(!r.evaluate(&f, 3));
        assert_eq!(r.evaluate_all(&f), vec![true, false, true, false]);
    }

    #[test]
    fn path_merging_keeps_one_condition_per_variable() {
        let path = [
            PathStep {
                variable: Variable::Marker(3),
                threshold: 1.5,
                went_left: true,
                missing_left: true,
            },
            PathStep {
                variable: Variable::Pc(0),
                threshold: -0.2,
                went_left: false,
                missing_left: true,
            },
            PathStep {
                variable: Variable::Marker(3),
                threshold: 0.5,
                went_left: false,
                missing_left: true,
            },
        ];
        let r = Rule::from_path(
            &path,
            RuleOrigin {
                region: 0,
                tree: 0,
                node: 5,
            },
        );
        assert_eq!(r.depth(), 2);
        assert_eq!(r.conditions[0].variable, Variable::Marker(3));
        assert_eq!(
            r.conditions[0].kind,
            ConditionKind::Interval {
                lower: Some(0.5),
                upper: Some(1.5)
            }
        );
        // went right at 0.5 while missing goes left: missing is out
        assert_eq!(r.conditions[0].missing, MissingDirection::Out);
        assert_eq!(r.conditions[1].missing, MissingDirection::Out);
    }

    #[test]
    fn text_round_trip() {
        let r = table1_rule();
        let line = format_rule_line(&r, 0.25, 0.4330127018922193);
        assert_eq!(line, "0:3:4 | m1 <= 1.5 & m2 > 1.5 +na | 0.25 | 0.4330127018922193");
        let (back, mean, sd) = parse_rule_line(&line).unwrap();
        assert_eq!(back, r);
        assert_eq!((mean, sd), (0.25, 0.4330127018922193));

        let mut s = r.clone();
        s.conditions[0].kind = ConditionKind::Subset { values: vec![0, 2] };
        let line = format_rule_line(&s, 0.5, 0.5);
        assert_eq!(parse_rule_line(&line).unwrap().0, s);
    }

    #[test]
    fn rejects_malformed_lines() {
        assert!(parse_rule_line("0:0:1 | m1 <= 1.5 | 0.5").is_err());
        assert!(parse_rule_line("0:0 | m1 <= 1.5 | 0.5 | 0.5").is_err());
        assert!(parse_rule_line("0:0:1 | q1 <= 1.5 | 0.5 | 0.5").is_err());
        assert!(parse_rule_line("0:0:1 | m0 <= 1.5 | 0.5 | 0.5").is_err());
    }
}
