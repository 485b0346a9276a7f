//! Tree growing, rule extraction and rule-set filtering.

pub mod elastic_net;
pub mod isle;
pub mod matrix;
pub mod rule;
pub mod tree;

pub use elastic_net::{filter_rules_elastic_net, ElasticNetFilter, ElasticNetParams};
pub use isle::{isle_extract, isle_extract_observed, sample_depth, IsleParams, TreeFit};
pub use matrix::{standardize_rules, RuleMatrix};
pub use rule::{
    format_rule_line, parse_rule_line, ConditionKind, Features, MissingDirection, Rule, RuleOrigin, SplitCondition,
    Variable,
};
pub use tree::{grow_tree, Pruning, RegressionTree, Split, TreeNode, TreeParams};
