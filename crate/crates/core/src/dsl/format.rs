use std::fmt::Write;

use super::ast::{CostProgram, CostTarget, MaskExpr, Statement};
use crate::mask::GeometricCue;

fn number(out: &mut String, v: f64) {
    // `{}` on f64 is the shortest round-tripping decimal, never exponent form
    let v = if v == 0.0 { 0.0 } else { v };
    write!(out, "{v}").unwrap();
}

fn string(out: &mut String, s: &str) {
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            c => out.push(c),
        }
    }
    out.push('"');
}

fn expr(out: &mut String, e: &MaskExpr) {
    let binary = |out: &mut String, op: &str, a: &MaskExpr, b: &MaskExpr| {
        out.push_str(op);
        out.push('(');
        expr(out, a);
        out.push_str(", ");
        expr(out, b);
        out.push(')');
    };
    match e {
        MaskExpr::Class(name) => {
            out.push_str("M(");
            string(out, name);
            out.push(')');
        }
        MaskExpr::Ident(name) => out.push_str(name),
        MaskExpr::And(a, b) => binary(out, "AND", a, b),
        MaskExpr::Or(a, b) => binary(out, "OR", a, b),
        MaskExpr::Remove(a, b) => binary(out, "REMOVE", a, b),
        MaskExpr::Not(a) => {
            out.push_str("NOT(");
            expr(out, a);
            out.push(')');
        }
        MaskExpr::Cue(a, cue) => {
            let (op, args): (&str, Vec<f64>) = match *cue {
                GeometricCue::Near { radius } => ("NEAR", vec![radius]),
                GeometricCue::Dilate { radius } => ("DILATE", vec![radius]),
                GeometricCue::Erode { radius } => ("ERODE", vec![radius]),
                GeometricCue::Edge { width } => ("EDGE", vec![width]),
                GeometricCue::Center => ("CENTER", vec![]),
                GeometricCue::WithinBand { inner, outer } => ("BAND", vec![inner, outer]),
            };
            out.push_str(op);
            out.push('(');
            expr(out, a);
            for v in args {
                out.push_str(", ");
                number(out, v);
            }
            out.push(')');
        }
    }
}

/// Renders a program as canonical source, one statement per line.
pub fn format(program: &CostProgram) -> String {
    let mut out = String::new();
    for s in &program.statements {
        match s {
            Statement::Class(c) => {
                out.push_str("class ");
                string(&mut out, &c.name);
                write!(out, " {};", c.geometry).unwrap();
            }
            Statement::Mask { name, expr: e } => {
                write!(out, "mask {name} = ").unwrap();
                expr(&mut out, e);
                out.push(';');
            }
            Statement::Hierarchy(edge) => {
                out.push_str("hierarchy ");
                string(&mut out, &edge.child);
                out.push_str(" subset_of ");
                string(&mut out, &edge.parent);
                out.push(';');
            }
            Statement::Cost { target, weight } => {
                out.push_str("cost ");
                match target {
                    CostTarget::Class(name) => expr(&mut out, &MaskExpr::Class(name.clone())),
                    CostTarget::Ident(name) => out.push_str(name),
                }
                out.push_str(": ");
                number(&mut out, *weight);
                out.push(';');
            }
        }
        out.push('\n');
    }
    out
}
