use std::collections::BTreeSet;

use super::ast::{CostProgram, CostTarget, MaskExpr, Statement};
use super::lexer::{tokenize, Keyword, Op, Spanned, Token};
use super::{DslError, ErrorKind};
use crate::classes::canonical_name;
use crate::mask::{GeometricCue, HierarchyEdge};
use crate::raster::{ClassSpec, Geometry};

struct Parser {
    tokens: Vec<Spanned>,
    pos: usize,
    masks: BTreeSet<String>,
    classes: BTreeSet<String>,
}

const EXPR_START: &[&str] = &[
    "`M`", "identifier", "`AND`", "`OR`", "`NOT`", "`REMOVE`", "`NEAR`", "`DILATE`", "`ERODE`",
    "`CENTER`", "`EDGE`", "`BAND`",
];
const STMT_START: &[&str] = &["`class`", "`mask`", "`hierarchy`", "`cost`"];

impl Parser {
    fn peek(&self) -> &Spanned {
        &self.tokens[self.pos]
    }

    fn advance(&mut self) -> Spanned {
        let t = self.tokens[self.pos].clone();
        if t.token != Token::Eof {
            self.pos += 1;
        }
        t
    }

    fn unexpected(&self, expected: &[&str]) -> DslError {
        let t = self.peek();
        DslError {
            kind: ErrorKind::Syntax,
            line: t.line,
            column: t.column,
            expected: expected.iter().map(|s| s.to_string()).collect(),
            message: format!("unexpected {}", t.token),
        }
    }

    fn expect(&mut self, want: Token, label: &str) -> Result<Spanned, DslError> {
        if self.peek().token == want {
            Ok(self.advance())
        } else {
            Err(self.unexpected(&[label]))
        }
    }

    fn string(&mut self) -> Result<String, DslError> {
        match &self.peek().token {
            Token::Str(s) => {
                let s = s.clone();
                self.advance();
                Ok(s)
            }
            _ => Err(self.unexpected(&["string"])),
        }
    }

    fn number(&mut self) -> Result<f64, DslError> {
        match self.peek().token {
            Token::Number(n) => {
                self.advance();
                Ok(n)
            }
            _ => Err(self.unexpected(&["number"])),
        }
    }

    fn ident(&mut self) -> Result<(String, usize, usize), DslError> {
        match &self.peek().token {
            Token::Ident(s) => {
                let s = s.clone();
                let t = self.advance();
                Ok((s, t.line, t.column))
            }
            _ => Err(self.unexpected(&["identifier"])),
        }
    }

    fn program(&mut self) -> Result<CostProgram, DslError> {
        let mut statements = Vec::new();
        loop {
            if self.peek().token == Token::Eof && !statements.is_empty() {
                return Ok(CostProgram { statements });
            }
            statements.push(self.statement()?);
        }
    }

    fn statement(&mut self) -> Result<Statement, DslError> {
        let stmt = match self.peek().token {
            Token::Keyword(Keyword::Class) => {
                self.advance();
                let at = self.peek().clone();
                let name = self.string()?;
                let geometry = match self.peek().token {
                    Token::Keyword(Keyword::Linear) => Geometry::Linear,
                    Token::Keyword(Keyword::Areal) => Geometry::Areal,
                    _ => return Err(self.unexpected(&["`linear`", "`areal`"])),
                };
                self.advance();
                if !self.classes.insert(canonical_name(&name)) {
                    return Err(duplicate(&at, format!("class {name:?} declared twice")));
                }
                Statement::Class(ClassSpec::new(name, geometry))
            }
            Token::Keyword(Keyword::Mask) => {
                self.advance();
                let (name, line, column) = self.ident()?;
                self.expect(Token::Equals, "`=`")?;
                let expr = self.expr()?;
                if !self.masks.insert(name.clone()) {
                    let at = Spanned { token: Token::Ident(name.clone()), line, column };
                    return Err(duplicate(&at, format!("mask `{name}` bound twice")));
                }
                Statement::Mask { name, expr }
            }
            Token::Keyword(Keyword::Hierarchy) => {
                self.advance();
                let child = self.string()?;
                self.expect(Token::Keyword(Keyword::SubsetOf), "`subset_of`")?;
                let parent = self.string()?;
                Statement::Hierarchy(HierarchyEdge { child, parent })
            }
            Token::Keyword(Keyword::Cost) => {
                self.advance();
                let target = match self.peek().token {
                    Token::Op(Op::M) => CostTarget::Class(self.class_ref()?),
                    Token::Ident(_) => CostTarget::Ident(self.ident()?.0),
                    _ => return Err(self.unexpected(&["`M`", "identifier"])),
                };
                self.expect(Token::Colon, "`:`")?;
                let weight = self.number()?;
                Statement::Cost { target, weight }
            }
            _ => return Err(self.unexpected(STMT_START)),
        };
        self.expect(Token::Semi, "`;`")?;
        Ok(stmt)
    }

    fn class_ref(&mut self) -> Result<String, DslError> {
        self.expect(Token::Op(Op::M), "`M`")?;
        self.expect(Token::LParen, "`(`")?;
        let name = self.string()?;
        self.expect(Token::RParen, "`)`")?;
        Ok(name)
    }

    fn expr(&mut self) -> Result<MaskExpr, DslError> {
        let op = match self.peek().token.clone() {
            Token::Op(Op::M) => return Ok(MaskExpr::Class(self.class_ref()?)),
            Token::Ident(name) => {
                self.advance();
                return Ok(MaskExpr::Ident(name));
            }
            Token::Op(op) => op,
            _ => return Err(self.unexpected(EXPR_START)),
        };
        self.advance();
        self.expect(Token::LParen, "`(`")?;
        let a = self.expr()?;
        let out = match op {
            Op::Not => MaskExpr::not(a),
            Op::Center => MaskExpr::cue(a, GeometricCue::Center),
            Op::And | Op::Or | Op::Remove => {
                self.expect(Token::Comma, "`,`")?;
                let b = self.expr()?;
                match op {
                    Op::And => MaskExpr::and(a, b),
                    Op::Or => MaskExpr::or(a, b),
                    _ => MaskExpr::remove(a, b),
                }
            }
            Op::Near | Op::Dilate | Op::Erode | Op::Edge => {
                self.expect(Token::Comma, "`,`")?;
                let r = self.number()?;
                let cue = match op {
                    Op::Near => GeometricCue::Near { radius: r },
                    Op::Dilate => GeometricCue::Dilate { radius: r },
                    Op::Erode => GeometricCue::Erode { radius: r },
                    _ => GeometricCue::Edge { width: r },
                };
                MaskExpr::cue(a, cue)
            }
            Op::Band => {
                self.expect(Token::Comma, "`,`")?;
                let inner = self.number()?;
                self.expect(Token::Comma, "`,`")?;
                let outer = self.number()?;
                MaskExpr::cue(a, GeometricCue::WithinBand { inner, outer })
            }
            Op::M => unreachable!("handled above"),
        };
        self.expect(Token::RParen, "`)`")?;
        Ok(out)
    }
}

fn duplicate(at: &Spanned, message: String) -> DslError {
    DslError {
        kind: ErrorKind::DuplicateBinding,
        line: at.line,
        column: at.column,
        expected: Vec::new(),
        message,
    }
}

/// Parses costmap program source.
pub fn parse(source: &str) -> Result<CostProgram, DslError> {
    let tokens = tokenize(source)?;
    Parser {
        tokens,
        pos: 0,
        masks: BTreeSet::new(),
        classes: BTreeSet::new(),
    }
    .program()
}
