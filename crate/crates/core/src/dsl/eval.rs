use std::collections::BTreeMap;

use thiserror::Error;

use super::ast::{CostTarget, MaskExpr, Statement};
use super::validate::ValidatedProgram;
use crate::classes::canonical_name;
use crate::mask::{apply_cue, apply_hierarchy, MaskError};
use crate::raster::{BinaryMask, Costmap, Grid, GridShape, ProbabilityMap, RasterError, SoftMask};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("inputs have no mask for class {0:?}")]
    MissingMask(String),
    #[error("inputs have no gated probability map for class {0:?}")]
    MissingProbability(String),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Mask(#[from] MaskError),
}

/// Refined class masks and gated probability maps, keyed by canonical class
/// name.
#[derive(Debug, Clone, Default)]
pub struct EvalInputs {
    pub masks: BTreeMap<String, BinaryMask>,
    pub probabilities: BTreeMap<String, ProbabilityMap>,
}

impl EvalInputs {
    pub fn insert(&mut self, class: &str, mask: BinaryMask, gated: ProbabilityMap) {
        let key = canonical_name(class);
        self.masks.insert(key.clone(), mask);
        self.probabilities.insert(key, gated);
    }
}

/// Intermediate rasters of one evaluation, kept for inspection.
#[derive(Debug, Clone)]
pub struct Evaluation {
    /// Accumulated weighted cost before the unassigned fill.
    pub accumulated: Grid<f64>,
    /// Pixels no cost rule touches.
    pub unassigned: BinaryMask,
    pub costmap: Costmap,
}

// Soft-mask algebra: min / max / complement, which coincides with boolean
// logic on {0, 1}.
fn combine(a: &SoftMask, b: &SoftMask, f: impl Fn(f64, f64) -> f64) -> Result<SoftMask, RasterError> {
    SoftMask::from_grid(a.grid().zip_with(b.grid(), |&x, &y| f(x, y))?)
}

fn support(m: &SoftMask) -> BinaryMask {
    BinaryMask::from_grid(m.grid().map(|&v| v > 0.0))
}

struct Env<'a> {
    classes: &'a BTreeMap<String, BinaryMask>,
    bound: BTreeMap<&'a str, SoftMask>,
}

impl Env<'_> {
    fn class(&self, name: &str) -> Result<&BinaryMask, EvalError> {
        let key = canonical_name(name);
        self.classes.get(&key).ok_or(EvalError::MissingMask(key))
    }

    fn eval(&self, e: &MaskExpr) -> Result<SoftMask, EvalError> {
        Ok(match e {
            MaskExpr::Class(name) => SoftMask::from(self.class(name)?),
            MaskExpr::Ident(name) => self.bound[name.as_str()].clone(),
            MaskExpr::And(a, b) => combine(&self.eval(a)?, &self.eval(b)?, f64::min)?,
            MaskExpr::Or(a, b) => combine(&self.eval(a)?, &self.eval(b)?, f64::max)?,
            MaskExpr::Remove(a, b) => combine(&self.eval(a)?, &self.eval(b)?, |x, y| x.min(1.0 - y))?,
            MaskExpr::Not(a) => {
                let m = self.eval(a)?;
                SoftMask::from_grid(m.grid().map(|&v| 1.0 - v))?
            }
            MaskExpr::Cue(a, cue) => apply_cue(&support(&self.eval(a)?), *cue)?,
        })
    }
}

/// Executes a validated program over refined masks and gated probabilities.
///
/// Order: hierarchy enforcement, mask bindings (with geometric cues), weighted
/// accumulation `w * M^G * P^tau` (derived masks carry probability 1), fill of
/// unassigned pixels with the maximum accumulated cost, then min-max
/// normalization. A constant map normalizes to 0 on assigned pixels and 1 on
/// unassigned ones.
pub fn evaluate_detailed(program: &ValidatedProgram, inputs: &EvalInputs) -> Result<Evaluation, EvalError> {
    let referenced: Vec<String> = program
        .program()
        .referenced_classes()
        .into_iter()
        .map(canonical_name)
        .collect();
    let mut shape: Option<GridShape> = None;
    let mut raw = BTreeMap::new();
    for name in &referenced {
        let mask = inputs
            .masks
            .get(name)
            .ok_or_else(|| EvalError::MissingMask(name.clone()))?;
        let prob = inputs
            .probabilities
            .get(name)
            .ok_or_else(|| EvalError::MissingProbability(name.clone()))?;
        let s = *shape.get_or_insert(mask.shape());
        s.ensure_same(&mask.shape())?;
        s.ensure_same(&prob.shape())?;
        raw.insert(name.clone(), mask.clone());
    }
    let shape = shape.expect("validated programs have at least one cost rule on a class or mask");

    let classes = apply_hierarchy(&raw, program.hierarchy())?;
    let mut env = Env {
        classes: &classes,
        bound: BTreeMap::new(),
    };
    let mut accumulated = vec![0.0f64; shape.len()];
    let mut covered = vec![false; shape.len()];
    for stmt in &program.program().statements {
        match stmt {
            Statement::Mask { name, expr } => {
                let m = env.eval(expr)?;
                m.shape().ensure_same(&shape)?;
                env.bound.insert(name.as_str(), m);
            }
            Statement::Cost { target, weight } => match target {
                CostTarget::Class(name) => {
                    let mask = env.class(name)?;
                    let prob = &inputs.probabilities[&canonical_name(name)];
                    for (i, (&m, &p)) in mask.values().iter().zip(prob.values()).enumerate() {
                        if m {
                            accumulated[i] += weight * p;
                            covered[i] = true;
                        }
                    }
                }
                CostTarget::Ident(name) => {
                    let mask = &env.bound[name.as_str()];
                    for (i, &g) in mask.values().iter().enumerate() {
                        if g > 0.0 {
                            accumulated[i] += weight * g;
                            covered[i] = true;
                        }
                    }
                }
            },
            Statement::Class(_) | Statement::Hierarchy(_) => {}
        }
    }

    let unassigned = BinaryMask::new(shape, covered.iter().map(|c| !c).collect())?;
    let accumulated = Grid::from_vec(shape, accumulated)?;
    let costmap = normalize(&accumulated, &covered, shape)?;
    Ok(Evaluation {
        accumulated,
        unassigned,
        costmap,
    })
}

fn normalize(accumulated: &Grid<f64>, covered: &[bool], shape: GridShape) -> Result<Costmap, RasterError> {
    if !covered.iter().any(|&c| c) {
        return Ok(Costmap::zeros(shape));
    }
    let c_max = accumulated.values().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let filled: Vec<f64> = accumulated
        .values()
        .iter()
        .zip(covered)
        .map(|(&v, &c)| if c { v } else { c_max })
        .collect();
    let lo = filled.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = c_max;
    let values = if hi > lo {
        let span = hi - lo;
        filled.iter().map(|&v| ((v - lo) / span).clamp(0.0, 1.0)).collect()
    } else {
        covered.iter().map(|&c| if c { 0.0 } else { 1.0 }).collect()
    };
    Costmap::new(shape, values)
}

/// Executes a validated program; see [`evaluate_detailed`].
pub fn evaluate(program: &ValidatedProgram, inputs: &EvalInputs) -> Result<Costmap, EvalError> {
    Ok(evaluate_detailed(program, inputs)?.costmap)
}
