//! Built-in synthetic objectives on the shipped tree specs.

use crate::tree_space::{parse_spec, StructuredPoint, TreeSpec};

use super::{BlackBox, Evaluator, ObjectiveError};

pub(crate) const JENATTON_SPEC: &str = include_str!("../../specs/jenatton.json");
pub(crate) const EXAMPLE_SPEC: &str = include_str!("../../specs/example.json");

/// The four-leaf synthetic benchmark: a binary choice at the root selects a
/// shared variable (`r8` or `r9`), a second binary choice selects a leaf
/// quadratic. Leaf formulas, by path:
///
/// ```text
/// ("0","0") -> x4^2 + 0.1 + r8        ("1","0") -> x6^2 + 0.3 + r9
/// ("0","1") -> x5^2 + 0.2 + r8        ("1","1") -> x7^2 + 0.4 + r9
/// ```
///
/// Global minimum 0.1 at x4 = 0, r8 = 0. The point must fit the shipped
/// `jenatton.json` spec.
pub fn jenatton_eval(p: &StructuredPoint) -> f64 {
    let first = p.choices().get(&0).expect("choice at the root");
    let mid = if first == "0" { 1 } else { 2 };
    let second = p.choices().get(&mid).expect("choice at the mid vertex");
    let r = p.values_at(mid).expect("shared variable present")[0];
    let leaf = match (first.as_str(), second.as_str()) {
        ("0", "0") => 3,
        ("0", "1") => 4,
        ("1", "0") => 5,
        ("1", "1") => 6,
        _ => panic!("point does not fit the synthetic tree"),
    };
    let x = p.values_at(leaf).expect("leaf variable present")[0];
    let constant = [0.1, 0.2, 0.3, 0.4][leaf - 3];
    x * x + constant + r
}

/// The two-leaf example objective: squared norm of the shared root block
/// plus squared norm of the selected leaf block. Minimum 0 at the origin.
/// The point must fit the shipped `example.json` spec.
pub fn example_tree_eval(p: &StructuredPoint) -> f64 {
    let t = p.choices().get(&0).expect("choice at the root");
    let leaf = match t.as_str() {
        "1" => 1,
        "2" => 2,
        _ => panic!("point does not fit the example tree"),
    };
    let sq = |xs: &[f64]| xs.iter().map(|x| x * x).sum::<f64>();
    sq(p.values_at(0).expect("root block present")) + sq(p.values_at(leaf).expect("leaf block"))
}

/// Built-in objectives selectable by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BuiltinObjective {
    Jenatton,
    ExampleTree,
}

impl BuiltinObjective {
    pub const NAMES: [&'static str; 2] = ["jenatton", "example"];

    pub fn parse(name: &str) -> Result<Self, ObjectiveError> {
        match name {
            "jenatton" => Ok(Self::Jenatton),
            "example" => Ok(Self::ExampleTree),
            other => Err(ObjectiveError::UnknownBuiltin {
                name: other.to_string(),
                valid: Self::NAMES.join(", "),
            }),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Jenatton => "jenatton",
            Self::ExampleTree => "example",
        }
    }

    /// The canonical tree spec this objective is defined on.
    pub fn spec(&self) -> TreeSpec {
        let src = match self {
            Self::Jenatton => JENATTON_SPEC,
            Self::ExampleTree => EXAMPLE_SPEC,
        };
        parse_spec(src).expect("shipped specs parse")
    }

    pub fn known_minimum(&self) -> f64 {
        match self {
            Self::Jenatton => 0.1,
            Self::ExampleTree => 0.0,
        }
    }

    pub fn eval(&self, p: &StructuredPoint) -> f64 {
        match self {
            Self::Jenatton => jenatton_eval(p),
            Self::ExampleTree => example_tree_eval(p),
        }
    }
}

impl BlackBox for BuiltinObjective {
    fn spawn(&self) -> Result<Box<dyn Evaluator>, ObjectiveError> {
        let me = *self;
        Ok(Box::new(move |p: &StructuredPoint| me.eval(p)))
    }

    fn minimum(&self) -> Option<f64> {
        Some(self.known_minimum())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree_space::{dimensions, sample_uniform};
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn jenatton_known_values() {
        let spec = BuiltinObjective::Jenatton.spec();
        // Global minimum.
        let p = StructuredPoint::on_path(&spec, 0, &[vec![0.0], vec![0.0]]).unwrap();
        assert_relative_eq!(jenatton_eval(&p), 0.1);
        // ("1","1") leaf: 0.25 + 0.4 + 0.5.
        let p = StructuredPoint::on_path(&spec, 3, &[vec![0.5], vec![0.5]]).unwrap();
        assert_relative_eq!(jenatton_eval(&p), 1.15);
        // ("0","1") leaf: 1 + 0.2 + 1.
        let p = StructuredPoint::on_path(&spec, 1, &[vec![1.0], vec![-1.0]]).unwrap();
        assert_relative_eq!(jenatton_eval(&p), 2.2);
    }

    #[test]
    fn jenatton_lower_bounded_by_minimum() {
        let spec = BuiltinObjective::Jenatton.spec().into_shared();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100_000 {
            let p = sample_uniform(&spec, &mut rng);
            assert!(jenatton_eval(&p) >= 0.1);
        }
    }

    #[test]
    fn example_tree_known_values() {
        let spec = BuiltinObjective::ExampleTree.spec();
        let p = StructuredPoint::on_path(&spec, 0, &[vec![0.0, 0.0], vec![0.0, 0.0]]).unwrap();
        assert_relative_eq!(example_tree_eval(&p), 0.0);
        let p = StructuredPoint::on_path(&spec, 1, &[vec![1.0, 0.0], vec![1.0, 1.0, 1.0]]).unwrap();
        assert_relative_eq!(example_tree_eval(&p), 4.0);
        assert_eq!(dimensions(&spec).0, 8);
    }

    #[test]
    fn builtin_names_parse() {
        assert_eq!(
            BuiltinObjective::parse("jenatton").unwrap(),
            BuiltinObjective::Jenatton
        );
        let err = BuiltinObjective::parse("nope").unwrap_err();
        assert!(err.to_string().contains("jenatton"));
    }
}
