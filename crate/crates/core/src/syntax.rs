//! Tokenizer and term-level parsing shared by the `.dl`, `.txn` and `.fol`
//! readers.

use crate::error::{Error, Result};
use crate::logic::{Atom, Literal, Term};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Tok {
    Ident(String),
    Var(String),
    Int(i64),
    LParen,
    RParen,
    Comma,
    Dot,
    Colon,
    Neck,
    Amp,
    Bar,
    Arrow,
    BackArrow,
    DoubleArrow,
    Eq,
    Neq,
    Lt,
    Le,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) | Tok::Var(s) => format!("`{s}`"),
            Tok::Int(i) => format!("`{i}`"),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Comma => "`,`".into(),
            Tok::Dot => "`.`".into(),
            Tok::Colon => "`:`".into(),
            Tok::Neck => "`:-`".into(),
            Tok::Amp => "`&`".into(),
            Tok::Bar => "`|`".into(),
            Tok::Arrow => "`->`".into(),
            Tok::BackArrow => "`<-`".into(),
            Tok::DoubleArrow => "`<->`".into(),
            Tok::Eq => "`=`".into(),
            Tok::Neq => "`\\=`".into(),
            Tok::Lt => "`<`".into(),
            Tok::Le => "`<=`".into(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Token {
    pub tok: Tok,
    pub line: usize,
    pub col: usize,
}

fn is_ident_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

/// Splits `text` into tokens. `%` starts a comment running to end of line.
pub fn tokenize(text: &str) -> Result<Vec<Token>> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0, 1, 1);
    while i < chars.len() {
        let c = chars[i];
        let (start_line, start_col) = (line, col);
        let err = |msg: String| Error::Syntax { line: start_line, col: start_col, msg };
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        if c == '%' {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        let rest: String = chars[i..chars.len().min(i + 3)].iter().collect();
        let fixed: &[(&str, Tok)] = &[
            ("<->", Tok::DoubleArrow),
            (":-", Tok::Neck),
            ("->", Tok::Arrow),
            ("<-", Tok::BackArrow),
            ("<=", Tok::Le),
            ("\\=", Tok::Neq),
            ("<", Tok::Lt),
            ("=", Tok::Eq),
            ("(", Tok::LParen),
            (")", Tok::RParen),
            (",", Tok::Comma),
            (".", Tok::Dot),
            (":", Tok::Colon),
            ("&", Tok::Amp),
            ("|", Tok::Bar),
        ];
        if let Some((s, t)) = fixed.iter().find(|(s, _)| rest.starts_with(s)) {
            out.push(Token { tok: t.clone(), line, col });
            i += s.chars().count();
            col += s.chars().count();
            continue;
        }
        let negative_int = c == '-' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit());
        if c.is_ascii_digit() || negative_int {
            let mut j = i + 1;
            while j < chars.len() && chars[j].is_ascii_digit() {
                j += 1;
            }
            let s: String = chars[i..j].iter().collect();
            let v = s.parse::<i64>().map_err(|_| err(format!("integer out of range: {s}")))?;
            out.push(Token { tok: Tok::Int(v), line, col });
            col += j - i;
            i = j;
            continue;
        }
        if c.is_alphabetic() || c == '_' {
            let mut j = i + 1;
            while j < chars.len() && is_ident_char(chars[j]) {
                j += 1;
            }
            let s: String = chars[i..j].iter().collect();
            let tok = if c.is_uppercase() || c == '_' { Tok::Var(s) } else { Tok::Ident(s) };
            out.push(Token { tok, line, col });
            col += j - i;
            i = j;
            continue;
        }
        return Err(err(format!("unexpected character `{c}`")));
    }
    Ok(out)
}

/// Names like `_aux1` are predicate names when they appear in atom
/// position; generated predicates use them.
pub fn is_aux_name(v: &str) -> bool {
    let mut cs = v.chars();
    cs.next() == Some('_') && cs.next().is_some_and(|c| c.is_lowercase())
}

/// Cursor over a token stream with position-aware errors.
pub struct Parser {
    toks: Vec<Token>,
    pos: usize,
    end: (usize, usize),
}

impl Parser {
    pub fn new(text: &str) -> Result<Parser> {
        let toks = tokenize(text)?;
        let lines = text.split('\n').count();
        let last_col = text.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
        Ok(Parser { toks, pos: 0, end: (lines.max(1), last_col) })
    }

    pub fn at_end(&self) -> bool {
        self.pos >= self.toks.len()
    }

    pub fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.tok)
    }

    pub fn peek_at(&self, k: usize) -> Option<&Tok> {
        self.toks.get(self.pos + k).map(|t| &t.tok)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|t| t.tok.clone());
        self.pos += 1;
        t
    }

    pub fn error(&self, msg: impl Into<String>) -> Error {
        let (line, col) = match self.toks.get(self.pos) {
            Some(t) => (t.line, t.col),
            None => self.end,
        };
        Error::Syntax { line, col, msg: msg.into() }
    }

    pub fn eat(&mut self, t: &Tok) -> bool {
        if self.peek() == Some(t) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    pub fn expect(&mut self, t: &Tok) -> Result<()> {
        if self.eat(t) {
            Ok(())
        } else {
            let found = self.peek().map_or("end of input".to_string(), Tok::describe);
            Err(self.error(format!("expected {}, found {found}", t.describe())))
        }
    }

    pub fn term(&mut self) -> Result<Term> {
        match self.next() {
            Some(Tok::Var(v)) => Ok(Term::Var(v)),
            Some(Tok::Int(i)) => Ok(Term::Int(i)),
            Some(Tok::Ident(s)) => {
                if self.peek() == Some(&Tok::LParen) {
                    self.pos -= 1;
                    Err(self.error("function symbols are not supported in database terms"))
                } else {
                    Ok(Term::Const(s))
                }
            }
            _ => {
                self.pos -= 1;
                Err(self.error("expected a term"))
            }
        }
    }

    fn comparison(&mut self) -> Option<&'static str> {
        let op = match self.peek() {
            Some(Tok::Eq) => "=",
            Some(Tok::Neq) => "\\=",
            Some(Tok::Lt) => "<",
            Some(Tok::Le) => "<=",
            _ => return None,
        };
        self.pos += 1;
        Some(op)
    }

    /// An ordinary atom `p(t1,..,tn)` / `p`, or an infix comparison `s op t`.
    pub fn atom(&mut self) -> Result<Atom> {
        let aux_name = matches!(self.peek(), Some(Tok::Var(v)) if is_aux_name(v))
            && !matches!(self.peek_at(1), Some(Tok::Eq | Tok::Neq | Tok::Lt | Tok::Le));
        let starts_with_term = (!aux_name && matches!(self.peek(), Some(Tok::Var(_) | Tok::Int(_))))
            || (matches!(self.peek(), Some(Tok::Ident(_)))
                && matches!(self.peek_at(1), Some(Tok::Eq | Tok::Neq | Tok::Lt | Tok::Le)));
        if starts_with_term {
            let lhs = self.term()?;
            let op = self.comparison().ok_or_else(|| self.error("expected a comparison operator"))?;
            let rhs = self.term()?;
            return Ok(Atom::new(op, vec![lhs, rhs]));
        }
        let name = match self.next() {
            Some(Tok::Ident(s)) => s,
            Some(Tok::Var(s)) if aux_name => s,
            _ => {
                self.pos -= 1;
                return Err(self.error("expected a predicate name"));
            }
        };
        let mut args = Vec::new();
        if self.eat(&Tok::LParen) {
            loop {
                args.push(self.term()?);
                if !self.eat(&Tok::Comma) {
                    break;
                }
            }
            self.expect(&Tok::RParen)?;
        }
        Ok(Atom::new(&name, args))
    }

    /// A body literal: `atom` or `not atom`.
    pub fn literal(&mut self) -> Result<Literal> {
        if self.peek() == Some(&Tok::Ident("not".into()))
            && !matches!(
                self.peek_at(1),
                Some(Tok::LParen | Tok::Dot | Tok::Comma | Tok::Eq | Tok::Neq | Tok::Lt | Tok::Le) | None
            )
        {
            self.pos += 1;
            return Ok(Literal::neg(self.atom()?));
        }
        Ok(Literal::pos(self.atom()?))
    }

    pub fn is_keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Some(Tok::Ident(s)) if s == kw)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokens_and_positions() {
        let toks = tokenize("p(X) :- q(X), C1 <= 2. % note\nr <-> s").unwrap();
        let kinds: Vec<Tok> = toks.iter().map(|t| t.tok.clone()).collect();
        assert_eq!(kinds[4], Tok::Neck);
        assert!(kinds.contains(&Tok::Le));
        assert!(kinds.contains(&Tok::DoubleArrow));
        let last = toks.last().unwrap();
        assert_eq!((last.line, last.col), (2, 7));
    }

    #[test]
    fn bad_character_reports_position() {
        match tokenize("p(a).\n  q#") {
            Err(Error::Syntax { line, col, .. }) => assert_eq!((line, col), (2, 4)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn parses_comparison_and_negation() {
        let mut p = Parser::new("not access(E,menu)").unwrap();
        assert_eq!(p.literal().unwrap().to_string(), "not access(E,menu)");
        let mut p = Parser::new("C1 <= C2").unwrap();
        assert_eq!(p.literal().unwrap().to_string(), "C1 <= C2");
        let mut p = Parser::new("a \\= b").unwrap();
        assert_eq!(p.atom().unwrap().pred, "\\=");
    }
}
