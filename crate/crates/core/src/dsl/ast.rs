use crate::mask::{GeometricCue, HierarchyEdge};
use crate::raster::ClassSpec;

/// A mask-valued expression.
#[derive(Debug, Clone, PartialEq)]
pub enum MaskExpr {
    /// `M("name")`: the refined mask of a class.
    Class(String),
    /// A previously bound `mask` name.
    Ident(String),
    And(Box<MaskExpr>, Box<MaskExpr>),
    Or(Box<MaskExpr>, Box<MaskExpr>),
    Not(Box<MaskExpr>),
    Remove(Box<MaskExpr>, Box<MaskExpr>),
    Cue(Box<MaskExpr>, GeometricCue),
}

impl MaskExpr {
    pub fn class(name: impl Into<String>) -> Self {
        MaskExpr::Class(name.into())
    }

    pub fn ident(name: impl Into<String>) -> Self {
        MaskExpr::Ident(name.into())
    }

    pub fn and(a: MaskExpr, b: MaskExpr) -> Self {
        MaskExpr::And(Box::new(a), Box::new(b))
    }

    pub fn or(a: MaskExpr, b: MaskExpr) -> Self {
        MaskExpr::Or(Box::new(a), Box::new(b))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(a: MaskExpr) -> Self {
        MaskExpr::Not(Box::new(a))
    }

    pub fn remove(a: MaskExpr, b: MaskExpr) -> Self {
        MaskExpr::Remove(Box::new(a), Box::new(b))
    }

    pub fn cue(a: MaskExpr, cue: GeometricCue) -> Self {
        MaskExpr::Cue(Box::new(a), cue)
    }

    /// Visits every node, parents before children.
    pub fn walk<'a>(&'a self, f: &mut impl FnMut(&'a MaskExpr)) {
        f(self);
        match self {
            MaskExpr::Class(_) | MaskExpr::Ident(_) => {}
            MaskExpr::Not(a) | MaskExpr::Cue(a, _) => a.walk(f),
            MaskExpr::And(a, b) | MaskExpr::Or(a, b) | MaskExpr::Remove(a, b) => {
                a.walk(f);
                b.walk(f);
            }
        }
    }
}

/// What a `cost` rule charges for.
#[derive(Debug, Clone, PartialEq)]
pub enum CostTarget {
    Class(String),
    Ident(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Statement {
    Class(ClassSpec),
    Mask { name: String, expr: MaskExpr },
    Hierarchy(HierarchyEdge),
    Cost { target: CostTarget, weight: f64 },
}

/// A parsed costmap program, statements in source order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CostProgram {
    pub statements: Vec<Statement>,
}

impl CostProgram {
    pub fn new(statements: Vec<Statement>) -> Self {
        Self { statements }
    }

    pub fn classes(&self) -> impl Iterator<Item = &ClassSpec> {
        self.statements.iter().filter_map(|s| match s {
            Statement::Class(c) => Some(c),
            _ => None,
        })
    }

    pub fn mask_bindings(&self) -> impl Iterator<Item = (&str, &MaskExpr)> {
        self.statements.iter().filter_map(|s| match s {
            Statement::Mask { name, expr } => Some((name.as_str(), expr)),
            _ => None,
        })
    }

    pub fn hierarchy(&self) -> Vec<HierarchyEdge> {
        self.statements
            .iter()
            .filter_map(|s| match s {
                Statement::Hierarchy(e) => Some(e.clone()),
                _ => None,
            })
            .collect()
    }

    pub fn cost_rules(&self) -> impl Iterator<Item = (&CostTarget, f64)> {
        self.statements.iter().filter_map(|s| match s {
            Statement::Cost { target, weight } => Some((target, *weight)),
            _ => None,
        })
    }

    /// Every class name referenced anywhere in the program, as written.
    pub fn referenced_classes(&self) -> Vec<&str> {
        let mut out = Vec::new();
        for s in &self.statements {
            match s {
                Statement::Class(c) => out.push(c.name.as_str()),
                Statement::Mask { expr, .. } => expr.walk(&mut |e| {
                    if let MaskExpr::Class(n) = e {
                        out.push(n.as_str());
                    }
                }),
                Statement::Hierarchy(e) => {
                    out.push(e.child.as_str());
                    out.push(e.parent.as_str());
                }
                Statement::Cost { target: CostTarget::Class(n), .. } => out.push(n.as_str()),
                Statement::Cost { .. } => {}
            }
        }
        out
    }
}
