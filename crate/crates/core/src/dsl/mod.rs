//! The costmap program language.
//!
//! A program declares classes, binds derived masks, records subset
//! relations between classes and assigns non-negative weights to masks:
//!
//! ```text
//! class "road" linear;
//! class "grass" areal;
//! class "baseball field" areal;
//! hierarchy "baseball field" subset_of "grass";
//! mask road_core = CENTER(M("road"));
//! cost road_core: 0.2;
//! cost M("grass"): 2;
//! cost M("baseball field"): 3;   # avoid
//! ```
//!
//! Grammar:
//!
//! ```text
//! program   := stmt+
//! stmt      := classdecl | maskdecl | hierdecl | costdecl
//! classdecl := "class" STRING ("linear" | "areal") ";"
//! maskdecl  := "mask" IDENT "=" expr ";"
//! hierdecl  := "hierarchy" STRING "subset_of" STRING ";"
//! costdecl  := "cost" target ":" NUMBER ";"
//! target    := IDENT | "M(" STRING ")"
//! expr      := "M(" STRING ")" | IDENT
//!            | "AND(" expr "," expr ")" | "OR(" expr "," expr ")"
//!            | "NOT(" expr ")"          | "REMOVE(" expr "," expr ")"
//!            | "NEAR(" expr "," NUMBER ")" | "DILATE(" expr "," NUMBER ")"
//!            | "ERODE(" expr "," NUMBER ")" | "CENTER(" expr ")"
//!            | "EDGE(" expr "," NUMBER ")"
//!            | "BAND(" expr "," NUMBER "," NUMBER ")"
//! ```
//!
//! `#` starts a comment running to the end of the line. Strings are
//! double-quoted with `\"`, `\\`, `\n` and `\t` escapes; numbers are
//! unsigned decimals; identifiers match `[a-z_][a-z0-9_]*` and may not be a
//! keyword.

mod ast;
mod eval;
mod format;
mod lexer;
mod parser;
mod validate;

use std::fmt;

pub use ast::{CostProgram, CostTarget, MaskExpr, Statement};
pub use eval::{evaluate, evaluate_detailed, EvalError, EvalInputs, Evaluation};
pub use format::format;
pub use lexer::is_reserved;
pub use parser::parse;
pub use validate::{validate, ValidatedProgram, ValidationError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Lexical,
    Syntax,
    DuplicateBinding,
}

/// A parse failure, positioned at a 1-based line and column (in characters).
#[derive(Debug, Clone, PartialEq)]
pub struct DslError {
    pub kind: ErrorKind,
    pub line: usize,
    pub column: usize,
    /// Tokens that would have been accepted at the error position.
    pub expected: Vec<String>,
    pub message: String,
}

impl fmt::Display for DslError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            ErrorKind::Lexical => "lexical error",
            ErrorKind::Syntax => "syntax error",
            ErrorKind::DuplicateBinding => "duplicate binding",
        };
        write!(f, "{kind} at {}:{}: {}", self.line, self.column, self.message)?;
        if !self.expected.is_empty() {
            write!(f, "; expected one of {}", self.expected.join(", "))?;
        }
        Ok(())
    }
}

impl std::error::Error for DslError {}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classes::{ClassSet, Provenance};
    use crate::mask::{GeometricCue, HierarchyEdge};
    use crate::raster::{BinaryMask, ClassSpec, Geometry, GridShape, ProbabilityMap};

    fn classes(names: &[&str]) -> ClassSet {
        let mut set = ClassSet::new();
        for n in names {
            set.insert(n, Geometry::Areal, Provenance::Prompt);
        }
        set
    }

    #[test]
    fn smallest_program() {
        let p = parse("class \"road\" linear; cost M(\"road\"): 0.1;").unwrap();
        assert_eq!(p.classes().count(), 1);
        assert_eq!(p.cost_rules().count(), 1);
        assert_eq!(
            p.statements[0],
            Statement::Class(ClassSpec::new("road", Geometry::Linear))
        );
    }

    #[test]
    fn remove_over_class_refs() {
        let p = parse("mask g = REMOVE(M(\"grass\"), M(\"baseball field\"));").unwrap();
        assert_eq!(
            p.statements,
            vec![Statement::Mask {
                name: "g".into(),
                expr: MaskExpr::remove(MaskExpr::class("grass"), MaskExpr::class("baseball field")),
            }]
        );
    }

    #[test]
    fn all_cues_parse() {
        let p = parse(
            "mask a = NEAR(M(\"r\"), 3); mask b = DILATE(a, 1.5); mask c = ERODE(b, 0);\n\
             mask d = CENTER(c); mask e = EDGE(d, 2); mask f = BAND(e, 1, 4);",
        )
        .unwrap();
        let cues: Vec<GeometricCue> = p
            .mask_bindings()
            .map(|(_, e)| match e {
                MaskExpr::Cue(_, c) => *c,
                other => panic!("{other:?}"),
            })
            .collect();
        assert_eq!(
            cues,
            vec![
                GeometricCue::Near { radius: 3.0 },
                GeometricCue::Dilate { radius: 1.5 },
                GeometricCue::Erode { radius: 0.0 },
                GeometricCue::Center,
                GeometricCue::Edge { width: 2.0 },
                GeometricCue::WithinBand { inner: 1.0, outer: 4.0 },
            ]
        );
    }

    #[test]
    fn unbalanced_paren_reports_column() {
        let e = parse("mask g = NOT(M(\"grass\");").unwrap_err();
        assert_eq!(e.kind, ErrorKind::Syntax);
        assert_eq!((e.line, e.column), (1, 24));
        assert_eq!(e.expected, vec!["`)`".to_string()]);
    }

    #[test]
    fn syntax_error_positions() {
        let cases = [
            ("", 1, 1),
            ("cost M(\"a\") 1;", 1, 13),
            ("class \"a\" wide;", 1, 11),
            ("\n\nmask = M(\"a\");", 3, 6),
            ("cost x: 1", 1, 10),
            ("mask a = AND(M(\"a\"));", 1, 20),
            ("hierarchy \"a\" \"b\";", 1, 15),
        ];
        for (src, line, col) in cases {
            let e = parse(src).unwrap_err();
            assert_eq!((e.line, e.column), (line, col), "{src:?}: {e}");
        }
    }

    #[test]
    fn duplicate_bindings() {
        let e = parse("mask a = M(\"x\");\nmask a = M(\"y\");").unwrap_err();
        assert_eq!((e.kind, e.line, e.column), (ErrorKind::DuplicateBinding, 2, 6));
        let e = parse("class \"Road\" linear; class \"road\" areal;").unwrap_err();
        assert_eq!(e.kind, ErrorKind::DuplicateBinding);
    }

    #[test]
    fn keywords_are_not_identifiers() {
        assert!(parse("mask cost = M(\"a\");").is_err());
        assert!(is_reserved("subset_of"));
    }

    #[test]
    fn validation_cases() {
        let p = parse("cost M(\"road\"): 1;").unwrap();
        assert!(validate(&p, &classes(&["road", "grass"])).is_ok());
        let p = parse("cost M(\"lava\"): 1;").unwrap();
        assert_eq!(
            validate(&p, &classes(&["road"])),
            Err(ValidationError::UnknownClass("lava".into()))
        );
        let p = parse("hierarchy \"a\" subset_of \"b\"; hierarchy \"b\" subset_of \"a\"; cost M(\"a\"): 1;").unwrap();
        assert!(matches!(
            validate(&p, &classes(&["a", "b"])),
            Err(ValidationError::HierarchyCycle(_))
        ));
        let p = parse("cost x: 1; mask x = M(\"a\");").unwrap();
        assert_eq!(
            validate(&p, &classes(&["a"])),
            Err(ValidationError::UnresolvedIdent("x".into()))
        );
        let p = parse("mask x = NEAR(M(\"a\"), 1); mask y = AND(x, z); cost y: 1;").unwrap();
        assert_eq!(
            validate(&p, &classes(&["a"])),
            Err(ValidationError::UnresolvedIdent("z".into()))
        );
        let p = CostProgram::new(vec![Statement::Cost {
            target: CostTarget::Class("a".into()),
            weight: f64::NAN,
        }]);
        assert!(matches!(
            validate(&p, &classes(&["a"])),
            Err(ValidationError::InvalidWeight { .. })
        ));
        let p = parse("mask x = BAND(M(\"a\"), 3, 1); cost x: 1;").unwrap();
        assert!(matches!(validate(&p, &classes(&["a"])), Err(ValidationError::InvalidCue(_))));
        // class names resolve case-insensitively
        let p = parse("cost M(\"Road\"): 1;").unwrap();
        assert!(validate(&p, &classes(&["road"])).is_ok());
    }

    #[test]
    fn format_is_deterministic_and_roundtrips() {
        let src = "class \"road\" linear; class \"grass\" areal; class \"baseball \\\"field\\\"\" areal;\n\
                   hierarchy \"baseball \\\"field\\\"\" subset_of \"grass\";\n\
                   mask a = OR(AND(M(\"road\"), NOT(M(\"grass\"))), REMOVE(M(\"grass\"), M(\"road\")));\n\
                   mask b = BAND(CENTER(EDGE(ERODE(DILATE(NEAR(a, 2.5), 1), 0.5), 3)), 0, 7);\n\
                   cost a: 0.125; cost M(\"grass\"): 10; cost b: 0;";
        let p = parse(src).unwrap();
        let once = format(&p);
        assert_eq!(once, format(&p));
        assert_eq!(parse(&once).unwrap(), p);
        let minimal = parse("class \"road\" linear; cost M(\"road\"): 0.1;").unwrap();
        assert_eq!(format(&minimal), "class \"road\" linear;\ncost M(\"road\"): 0.1;\n");
    }

    fn grid4() -> GridShape {
        GridShape::new(4, 4).unwrap()
    }

    fn inputs(pairs: &[(&str, BinaryMask)]) -> EvalInputs {
        let mut inp = EvalInputs::default();
        for (name, m) in pairs {
            inp.insert(name, m.clone(), ProbabilityMap::from(m));
        }
        inp
    }

    fn run(src: &str, inp: &EvalInputs) -> Vec<f64> {
        let names: Vec<&str> = inp.masks.keys().map(String::as_str).collect();
        let p = validate(&parse(src).unwrap(), &classes(&names)).unwrap();
        evaluate(&p, inp).unwrap().values().to_vec()
    }

    #[test]
    fn constant_cover_normalizes_to_zero() {
        let inp = inputs(&[("ground", BinaryMask::ones(grid4()))]);
        assert_eq!(run("cost M(\"ground\"): 0.3;", &inp), vec![0.0; 16]);
    }

    #[test]
    fn disjoint_halves() {
        let low = BinaryMask::from_fn(grid4(), |r, _| r < 2);
        let high = BinaryMask::from_fn(grid4(), |r, _| r >= 2);
        let inp = inputs(&[("low", low), ("high", high)]);
        let out = run("cost M(\"low\"): 0.2; cost M(\"high\"): 0.8;", &inp);
        // accumulated 0.2 / 0.8, no unassigned pixels: (c - 0.2) / 0.6
        let expect: Vec<f64> = (0..16).map(|i| if i < 8 { 0.0 } else { 1.0 }).collect();
        assert_eq!(out, expect);
    }

    #[test]
    fn unassigned_right_half_gets_max() {
        let left = BinaryMask::from_fn(grid4(), |_, c| c < 2);
        let inp = inputs(&[("left", left)]);
        let out = run("cost M(\"left\"): 0.5;", &inp);
        let expect: Vec<f64> = (0..16).map(|i| if i % 4 < 2 { 0.0 } else { 1.0 }).collect();
        assert_eq!(out, expect);
    }

    #[test]
    fn hierarchy_then_cue_then_accumulate() {
        let s = GridShape::new(1, 6).unwrap();
        let grass = BinaryMask::ones(s);
        let field = BinaryMask::from_fn(s, |_, c| c == 5);
        let mut inp = EvalInputs::default();
        inp.insert("grass", grass.clone(), ProbabilityMap::constant(s, 0.5).unwrap());
        inp.insert("field", field.clone(), ProbabilityMap::from(&field));
        let src = "hierarchy \"field\" subset_of \"grass\";\n\
                   mask near_field = NEAR(M(\"field\"), 1);\n\
                   cost M(\"grass\"): 1; cost M(\"field\"): 4; cost near_field: 1;";
        let p = validate(&parse(src).unwrap(), &classes(&["grass", "field"])).unwrap();
        let ev = evaluate_detailed(&p, &inp).unwrap();
        // grass 0.5 on cols 0..5, field 4 on col 5, +1 near the field at col 4
        assert_eq!(ev.accumulated.values(), &[0.5, 0.5, 0.5, 0.5, 1.5, 4.0]);
        assert!(ev.unassigned.is_empty());
        let expect = [0.0, 0.0, 0.0, 0.0, 1.0 / 3.5, 1.0];
        for (v, e) in ev.costmap.values().iter().zip(expect) {
            assert!((v - e).abs() < 1e-15);
        }
        let _ = HierarchyEdge::new("a", "b");
    }

    #[test]
    fn evaluate_rejects_mismatched_inputs() {
        let mut inp = inputs(&[("a", BinaryMask::ones(grid4()))]);
        inp.insert("b", BinaryMask::ones(GridShape::new(2, 2).unwrap()), ProbabilityMap::zeros(GridShape::new(2, 2).unwrap()));
        let p = validate(&parse("cost M(\"a\"): 1; cost M(\"b\"): 1;").unwrap(), &classes(&["a", "b"])).unwrap();
        assert!(matches!(evaluate(&p, &inp), Err(EvalError::Raster(_))));
        let p = validate(&parse("cost M(\"c\"): 1;").unwrap(), &classes(&["c"])).unwrap();
        assert_eq!(evaluate(&p, &inp).unwrap_err(), EvalError::MissingMask("c".into()));
    }
}
