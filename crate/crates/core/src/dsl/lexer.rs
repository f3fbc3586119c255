use std::fmt;

use super::{DslError, ErrorKind};

#[derive(Debug, Clone, PartialEq)]
pub enum Token {
    Keyword(Keyword),
    Op(Op),
    Ident(String),
    Str(String),
    Number(f64),
    LParen,
    RParen,
    Comma,
    Semi,
    Colon,
    Equals,
    Eof,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Keyword {
    Class,
    Linear,
    Areal,
    Mask,
    Hierarchy,
    SubsetOf,
    Cost,
}

impl Keyword {
    pub const ALL: [Keyword; 7] = [
        Keyword::Class,
        Keyword::Linear,
        Keyword::Areal,
        Keyword::Mask,
        Keyword::Hierarchy,
        Keyword::SubsetOf,
        Keyword::Cost,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Keyword::Class => "class",
            Keyword::Linear => "linear",
            Keyword::Areal => "areal",
            Keyword::Mask => "mask",
            Keyword::Hierarchy => "hierarchy",
            Keyword::SubsetOf => "subset_of",
            Keyword::Cost => "cost",
        }
    }
}

/// Upper-case operator names.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    M,
    And,
    Or,
    Not,
    Remove,
    Near,
    Dilate,
    Erode,
    Center,
    Edge,
    Band,
}

impl Op {
    pub const ALL: [Op; 11] = [
        Op::M,
        Op::And,
        Op::Or,
        Op::Not,
        Op::Remove,
        Op::Near,
        Op::Dilate,
        Op::Erode,
        Op::Center,
        Op::Edge,
        Op::Band,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Op::M => "M",
            Op::And => "AND",
            Op::Or => "OR",
            Op::Not => "NOT",
            Op::Remove => "REMOVE",
            Op::Near => "NEAR",
            Op::Dilate => "DILATE",
            Op::Erode => "ERODE",
            Op::Center => "CENTER",
            Op::Edge => "EDGE",
            Op::Band => "BAND",
        }
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::Keyword(k) => write!(f, "`{}`", k.as_str()),
            Token::Op(o) => write!(f, "`{}`", o.as_str()),
            Token::Ident(s) => write!(f, "identifier `{s}`"),
            Token::Str(s) => write!(f, "string {s:?}"),
            Token::Number(n) => write!(f, "number {n}"),
            Token::LParen => f.write_str("`(`"),
            Token::RParen => f.write_str("`)`"),
            Token::Comma => f.write_str("`,`"),
            Token::Semi => f.write_str("`;`"),
            Token::Colon => f.write_str("`:`"),
            Token::Equals => f.write_str("`=`"),
            Token::Eof => f.write_str("end of input"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Spanned {
    pub token: Token,
    pub line: usize,
    pub column: usize,
}

pub fn is_reserved(word: &str) -> bool {
    Keyword::ALL.iter().any(|k| k.as_str() == word)
}

struct Lexer<'a> {
    chars: std::iter::Peekable<std::str::Chars<'a>>,
    line: usize,
    column: usize,
}

impl Lexer<'_> {
    fn peek(&mut self) -> Option<char> {
        self.chars.peek().copied()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.chars.next()?;
        if c == '\n' {
            self.line += 1;
            self.column = 1;
        } else {
            self.column += 1;
        }
        Some(c)
    }

    fn error(&self, line: usize, column: usize, message: String) -> DslError {
        DslError {
            kind: ErrorKind::Lexical,
            line,
            column,
            expected: Vec::new(),
            message,
        }
    }

    fn word(&mut self, first: char) -> String {
        let mut s = String::from(first);
        while let Some(c) = self.peek() {
            if c.is_ascii_alphanumeric() || c == '_' {
                s.push(c);
                self.bump();
            } else {
                break;
            }
        }
        s
    }

    fn string(&mut self, line: usize, column: usize) -> Result<String, DslError> {
        let mut s = String::new();
        loop {
            match self.bump() {
                None | Some('\n') => {
                    return Err(self.error(line, column, "unterminated string".into()));
                }
                Some('"') => return Ok(s),
                Some('\\') => {
                    let (l, c) = (self.line, self.column - 1);
                    match self.bump() {
                        Some('"') => s.push('"'),
                        Some('\\') => s.push('\\'),
                        Some('n') => s.push('\n'),
                        Some('t') => s.push('\t'),
                        other => {
                            return Err(self.error(
                                l,
                                c,
                                format!("invalid escape sequence \\{}", other.map(String::from).unwrap_or_default()),
                            ))
                        }
                    }
                }
                Some(c) => s.push(c),
            }
        }
    }

    fn number(&mut self, first: char, line: usize, column: usize) -> Result<f64, DslError> {
        let mut s = String::from(first);
        while let Some(c) = self.peek().filter(char::is_ascii_digit) {
            s.push(c);
            self.bump();
        }
        if self.peek() == Some('.') {
            s.push('.');
            self.bump();
            let mut frac = false;
            while let Some(c) = self.peek().filter(char::is_ascii_digit) {
                s.push(c);
                self.bump();
                frac = true;
            }
            if !frac {
                return Err(self.error(line, column, format!("malformed number `{s}`")));
            }
        }
        s.parse()
            .map_err(|_| self.error(line, column, format!("malformed number `{s}`")))
    }
}

/// Splits `source` into tokens, ending with [`Token::Eof`].
pub fn tokenize(source: &str) -> Result<Vec<Spanned>, DslError> {
    let mut lx = Lexer {
        chars: source.chars().peekable(),
        line: 1,
        column: 1,
    };
    let mut out = Vec::new();
    loop {
        let (line, column) = (lx.line, lx.column);
        let Some(c) = lx.bump() else {
            out.push(Spanned {
                token: Token::Eof,
                line,
                column,
            });
            return Ok(out);
        };
        let token = match c {
            c if c.is_whitespace() => continue,
            '#' => {
                while lx.peek().is_some_and(|c| c != '\n') {
                    lx.bump();
                }
                continue;
            }
            '(' => Token::LParen,
            ')' => Token::RParen,
            ',' => Token::Comma,
            ';' => Token::Semi,
            ':' => Token::Colon,
            '=' => Token::Equals,
            '"' => Token::Str(lx.string(line, column)?),
            c if c.is_ascii_digit() => Token::Number(lx.number(c, line, column)?),
            c if c.is_ascii_lowercase() || c == '_' => {
                let w = lx.word(c);
                match Keyword::ALL.iter().find(|k| k.as_str() == w) {
                    Some(k) => Token::Keyword(*k),
                    None if w.chars().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_') => {
                        Token::Ident(w)
                    }
                    None => return Err(lx.error(line, column, format!("invalid identifier `{w}`"))),
                }
            }
            c if c.is_ascii_uppercase() => {
                let w = lx.word(c);
                match Op::ALL.iter().find(|o| o.as_str() == w) {
                    Some(o) => Token::Op(*o),
                    None => return Err(lx.error(line, column, format!("unknown operator `{w}`"))),
                }
            }
            other => return Err(lx.error(line, column, format!("unexpected character {other:?}"))),
        };
        out.push(Spanned {
            token,
            line,
            column,
        });
    }
}
