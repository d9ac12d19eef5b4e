//! Recursive-descent parser for scLTL.
//!
//! Precedence from tightest: `!`, the unary temporal operators (`X`, `F`,
//! `G[a,b]`, `F[a,b]`), `&`, `|`, and finally `U`, which associates to the
//! right. Unicode connectives (`¬ ∧ ∨`) are accepted alongside ASCII ones.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::Formula;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Num(usize),
    Not,
    And,
    Or,
    LParen,
    RParen,
    LBracket,
    RBracket,
    Comma,
}

fn lex(text: &str) -> Result<Vec<(usize, Tok)>> {
    let mut out = Vec::new();
    let mut it = text.char_indices().peekable();
    while let Some(&(at, ch)) = it.peek() {
        if ch.is_whitespace() {
            it.next();
            continue;
        }
        let tok = match ch {
            '!' | '¬' => Tok::Not,
            '&' | '∧' => Tok::And,
            '|' | '∨' => Tok::Or,
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            '[' => Tok::LBracket,
            ']' => Tok::RBracket,
            ',' => Tok::Comma,
            c if c.is_ascii_digit() => {
                let mut n = 0usize;
                while let Some(&(_, d)) = it.peek() {
                    match d.to_digit(10) {
                        Some(v) => {
                            n = n
                                .checked_mul(10)
                                .and_then(|n| n.checked_add(v as usize))
                                .ok_or_else(|| syntax(at, "number too large"))?;
                            it.next();
                        }
                        None => break,
                    }
                }
                out.push((at, Tok::Num(n)));
                continue;
            }
            c if c.is_alphabetic() || c == '_' => {
                let mut s = String::new();
                while let Some(&(_, d)) = it.peek() {
                    if d.is_alphanumeric() || d == '_' {
                        s.push(d);
                        it.next();
                    } else {
                        break;
                    }
                }
                out.push((at, Tok::Ident(s)));
                continue;
            }
            other => return Err(syntax(at, &format!("unexpected character `{other}`"))),
        };
        it.next();
        // `&&` and `||` are accepted as their single-character forms.
        if matches!(tok, Tok::And | Tok::Or) {
            if let Some(&(_, next)) = it.peek() {
                if next == ch && ch.is_ascii() {
                    it.next();
                }
            }
        }
        out.push((at, tok));
    }
    Ok(out)
}

fn syntax(offset: usize, message: &str) -> Error {
    Error::Syntax {
        offset,
        message: message.to_string(),
    }
}

struct Parser<'a, S> {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    end: usize,
    atoms: &'a [S],
}

impl<S: AsRef<str>> Parser<'_, S> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.1)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end, |t| t.0)
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|t| t.1.clone());
        self.pos += 1;
        t
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<()> {
        let at = self.offset();
        match self.bump() {
            Some(t) if t == want => Ok(()),
            _ => Err(syntax(at, &format!("expected {what}"))),
        }
    }

    fn is_keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Some(Tok::Ident(s)) if s == kw)
    }

    fn until(&mut self) -> Result<Formula> {
        let lhs = self.or()?;
        if self.is_keyword("U") {
            self.bump();
            let rhs = self.until()?;
            return Ok(Formula::until(lhs, rhs));
        }
        Ok(lhs)
    }

    fn or(&mut self) -> Result<Formula> {
        let mut f = self.and()?;
        while self.peek() == Some(&Tok::Or) {
            self.bump();
            f = Formula::or(f, self.and()?);
        }
        Ok(f)
    }

    fn and(&mut self) -> Result<Formula> {
        let mut f = self.unary()?;
        while self.peek() == Some(&Tok::And) {
            self.bump();
            f = Formula::and(f, self.unary()?);
        }
        Ok(f)
    }

    fn bounds(&mut self) -> Result<(usize, usize)> {
        self.expect(Tok::LBracket, "`[`")?;
        let at = self.offset();
        let lo = match self.bump() {
            Some(Tok::Num(n)) => n,
            _ => return Err(syntax(at, "expected a step count")),
        };
        self.expect(Tok::Comma, "`,`")?;
        let at = self.offset();
        let hi = match self.bump() {
            Some(Tok::Num(n)) => n,
            _ => return Err(syntax(at, "expected a step count")),
        };
        self.expect(Tok::RBracket, "`]`")?;
        if hi < lo {
            return Err(syntax(at, "empty time window"));
        }
        Ok((lo, hi))
    }

    fn unary(&mut self) -> Result<Formula> {
        let at = self.offset();
        match self.peek() {
            Some(Tok::Not) => {
                self.bump();
                match self.unary()? {
                    Formula::Atom(p) => Ok(Formula::NotAtom(p)),
                    Formula::True => Ok(Formula::False),
                    Formula::False => Ok(Formula::True),
                    _ => Err(syntax(
                        at,
                        "negation is only allowed directly on atomic propositions",
                    )),
                }
            }
            Some(Tok::Ident(s)) if s == "X" => {
                self.bump();
                Ok(Formula::next(self.unary()?))
            }
            Some(Tok::Ident(s)) if s == "F" || s == "G" => {
                let always = s == "G";
                self.bump();
                if self.peek() == Some(&Tok::LBracket) {
                    let (lo, hi) = self.bounds()?;
                    let body = self.unary()?;
                    let mut f = if always {
                        Formula::always_within(hi - lo, body)
                    } else {
                        Formula::eventually_within(hi - lo, body)
                    };
                    for _ in 0..lo {
                        f = Formula::next(f);
                    }
                    Ok(f)
                } else if always {
                    Err(syntax(at, "unbounded `G` is not co-safe; use `G[a,b]`"))
                } else {
                    Ok(Formula::eventually(self.unary()?))
                }
            }
            _ => self.primary(),
        }
    }

    fn primary(&mut self) -> Result<Formula> {
        let at = self.offset();
        match self.bump() {
            Some(Tok::LParen) => {
                let f = self.until()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(f)
            }
            Some(Tok::Ident(s)) => match s.as_str() {
                "true" => Ok(Formula::True),
                "false" => Ok(Formula::False),
                "U" | "X" | "F" | "G" => Err(syntax(at, &format!("unexpected operator `{s}`"))),
                name => self
                    .atoms
                    .iter()
                    .position(|a| a.as_ref() == name)
                    .map(Formula::Atom)
                    .ok_or_else(|| Error::UnknownAtom(name.to_string())),
            },
            Some(_) => Err(syntax(at, "expected a formula")),
            None => Err(syntax(at, "unexpected end of formula")),
        }
    }
}

/// Parse `text` against the declared atomic propositions.
pub fn parse_scltl<S: AsRef<str>>(text: &str, atoms: &[S]) -> Result<Formula> {
    let toks = lex(text)?;
    let mut p = Parser {
        toks,
        pos: 0,
        end: text.len(),
        atoms,
    };
    let f = p.until()?;
    if p.pos < p.toks.len() {
        return Err(syntax(p.offset(), "trailing input"));
    }
    Ok(f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use Formula::*;

    const AP: [&str; 3] = ["p", "q", "safe"];

    fn parse(s: &str) -> Result<Formula> {
        parse_scltl(s, &AP)
    }

    #[test]
    fn remark_example() {
        assert_eq!(
            parse("p | X X q").unwrap(),
            Formula::or(Atom(0), Formula::next(Formula::next(Atom(1))))
        );
        assert_eq!(parse("p ∨ X X q").unwrap(), parse("p || X X q").unwrap());
    }

    #[test]
    fn until_and_precedence() {
        assert_eq!(parse("p U q").unwrap(), Formula::until(Atom(0), Atom(1)));
        // & binds tighter than |, which binds tighter than U.
        assert_eq!(
            parse("p & q | safe U q").unwrap(),
            Formula::until(
                Formula::or(Formula::and(Atom(0), Atom(1)), Atom(2)),
                Atom(1)
            )
        );
        // U associates to the right.
        assert_eq!(
            parse("p U q U safe").unwrap(),
            Formula::until(Atom(0), Formula::until(Atom(1), Atom(2)))
        );
        assert_eq!(
            parse("X p & q").unwrap(),
            Formula::and(Formula::next(Atom(0)), Atom(1))
        );
        assert_eq!(parse("!p & q").unwrap(), Formula::and(NotAtom(0), Atom(1)));
    }

    #[test]
    fn sugar() {
        assert_eq!(parse("F q").unwrap(), Formula::until(True, Atom(1)));
        assert_eq!(
            parse("G[0,2] safe").unwrap(),
            Formula::and(
                Atom(2),
                Formula::next(Formula::and(Atom(2), Formula::next(Atom(2))))
            )
        );
        assert_eq!(parse("G[0,0] safe").unwrap(), Atom(2));
        assert_eq!(parse("F[1,1] p").unwrap(), Formula::next(Atom(0)));
        assert_eq!(parse("!true").unwrap(), False);
    }

    #[test]
    fn rejects_outside_fragment() {
        assert!(matches!(parse("!(p & q)"), Err(Error::Syntax { .. })));
        assert!(matches!(parse("!X p"), Err(Error::Syntax { .. })));
        assert!(matches!(parse("G safe"), Err(Error::Syntax { .. })));
        assert!(matches!(parse("G[3,1] safe"), Err(Error::Syntax { .. })));
    }

    #[test]
    fn other_errors() {
        assert_eq!(parse("p & r"), Err(Error::UnknownAtom("r".into())));
        assert!(matches!(parse("p &"), Err(Error::Syntax { offset: 3, .. })));
        assert!(matches!(parse("(p"), Err(Error::Syntax { .. })));
        assert!(matches!(parse("p q"), Err(Error::Syntax { offset: 2, .. })));
        assert!(matches!(
            parse("p # q"),
            Err(Error::Syntax { offset: 2, .. })
        ));
    }

    #[test]
    fn display_reparses() {
        let names = super::super::atom_names(&AP);
        for s in ["p | X X q", "(p U q) & !safe", "F[0,2] (p & X q)"] {
            let f = parse(s).unwrap();
            let shown = alloc::format!("{}", f.display(&names));
            assert_eq!(parse(&shown).unwrap(), f, "{shown}");
        }
    }
}
