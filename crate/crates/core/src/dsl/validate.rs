use std::collections::BTreeSet;

use thiserror::Error;

use super::ast::{CostProgram, CostTarget, MaskExpr, Statement};
use crate::classes::{canonical_name, ClassSet};
use crate::mask::{check_acyclic, GeometricCue, HierarchyEdge, MaskError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ValidationError {
    #[error("unknown class {0:?}")]
    UnknownClass(String),
    #[error("class hierarchy contains a cycle through {0:?}")]
    HierarchyCycle(String),
    #[error("mask `{0}` is used before it is bound")]
    UnresolvedIdent(String),
    #[error("invalid weight {weight} for cost rule on {target}")]
    InvalidWeight { target: String, weight: f64 },
    #[error("invalid geometric cue {0}")]
    InvalidCue(GeometricCue),
    #[error("program has no cost rules")]
    NoCostRules,
}

/// A program whose references all resolve against a class set.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedProgram {
    program: CostProgram,
    hierarchy: Vec<HierarchyEdge>,
}

impl ValidatedProgram {
    pub fn program(&self) -> &CostProgram {
        &self.program
    }

    pub fn into_program(self) -> CostProgram {
        self.program
    }

    /// Hierarchy edges with canonical class names.
    pub fn hierarchy(&self) -> &[HierarchyEdge] {
        &self.hierarchy
    }
}

fn check_class(available: &ClassSet, name: &str) -> Result<(), ValidationError> {
    if available.contains(name) {
        Ok(())
    } else {
        Err(ValidationError::UnknownClass(name.to_string()))
    }
}

fn check_expr(
    expr: &MaskExpr,
    available: &ClassSet,
    bound: &BTreeSet<&str>,
) -> Result<(), ValidationError> {
    let mut result = Ok(());
    expr.walk(&mut |e| {
        if result.is_err() {
            return;
        }
        result = match e {
            MaskExpr::Class(name) => check_class(available, name),
            MaskExpr::Ident(name) if !bound.contains(name.as_str()) => {
                Err(ValidationError::UnresolvedIdent(name.clone()))
            }
            MaskExpr::Cue(_, cue) => cue.validate().map_err(|_| ValidationError::InvalidCue(*cue)),
            _ => Ok(()),
        };
    });
    result
}

/// Checks that every class exists in `available`, every mask name is bound
/// before use, weights are finite and non-negative, cues are well formed and
/// the hierarchy is acyclic.
pub fn validate(program: &CostProgram, available: &ClassSet) -> Result<ValidatedProgram, ValidationError> {
    let mut bound: BTreeSet<&str> = BTreeSet::new();
    let mut hierarchy = Vec::new();
    let mut rules = 0usize;
    for stmt in &program.statements {
        match stmt {
            Statement::Class(c) => check_class(available, &c.name)?,
            Statement::Mask { name, expr } => {
                check_expr(expr, available, &bound)?;
                bound.insert(name);
            }
            Statement::Hierarchy(e) => {
                check_class(available, &e.child)?;
                check_class(available, &e.parent)?;
                hierarchy.push(HierarchyEdge::new(canonical_name(&e.child), canonical_name(&e.parent)));
            }
            Statement::Cost { target, weight } => {
                let label = match target {
                    CostTarget::Class(name) => {
                        check_class(available, name)?;
                        format!("M({name:?})")
                    }
                    CostTarget::Ident(name) => {
                        if !bound.contains(name.as_str()) {
                            return Err(ValidationError::UnresolvedIdent(name.clone()));
                        }
                        name.clone()
                    }
                };
                if !(weight.is_finite() && *weight >= 0.0) {
                    return Err(ValidationError::InvalidWeight {
                        target: label,
                        weight: *weight,
                    });
                }
                rules += 1;
            }
        }
    }
    if rules == 0 {
        return Err(ValidationError::NoCostRules);
    }
    check_acyclic(&hierarchy).map_err(|e| match e {
        MaskError::HierarchyCycle(c) => ValidationError::HierarchyCycle(c),
        other => unreachable!("acyclicity check only reports cycles: {other}"),
    })?;
    Ok(ValidatedProgram {
        program: program.clone(),
        hierarchy,
    })
}
