use super::{Facade, GrammarError, Item, Level, ProceduralCode, Span};

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(String),
    Num(String),
    LBrace,
    RBrace,
    LParen,
    RParen,
    Star,
    Pipe,
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Num(s) => format!("number `{s}`"),
            Tok::LBrace => "`{`".into(),
            Tok::RBrace => "`}`".into(),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Star => "`*`".into(),
            Tok::Pipe => "`|`".into(),
            Tok::Eof => "end of input".into(),
        }
    }
}

fn lex(text: &str) -> Result<Vec<(Tok, Span)>, GrammarError> {
    let mut out = Vec::new();
    let mut line = 1;
    let mut col = 1;
    let mut chars = text.char_indices().peekable();
    while let Some(&(offset, c)) = chars.peek() {
        let span = Span { line, col, offset };
        let mut bump = |chars: &mut std::iter::Peekable<std::str::CharIndices>| {
            let (_, c) = chars.next().unwrap();
            if c == '\n' {
                line += 1;
                col = 1;
            } else {
                col += 1;
            }
        };
        if c.is_whitespace() {
            bump(&mut chars);
            continue;
        }
        if c == '#' {
            while let Some(&(_, c)) = chars.peek() {
                if c == '\n' {
                    break;
                }
                bump(&mut chars);
            }
            continue;
        }
        let single = match c {
            '{' => Some(Tok::LBrace),
            '}' => Some(Tok::RBrace),
            '(' => Some(Tok::LParen),
            ')' => Some(Tok::RParen),
            '*' => Some(Tok::Star),
            '|' => Some(Tok::Pipe),
            _ => None,
        };
        if let Some(tok) = single {
            bump(&mut chars);
            out.push((tok, span));
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let mut s = String::new();
            while let Some(&(_, c)) = chars.peek() {
                if c.is_ascii_alphanumeric() || c == '_' {
                    s.push(c);
                    bump(&mut chars);
                } else {
                    break;
                }
            }
            out.push((Tok::Ident(s), span));
            continue;
        }
        if c.is_ascii_digit() || c == '-' || c == '+' || c == '.' {
            let mut s = String::new();
            let mut prev = ' ';
            while let Some(&(_, c)) = chars.peek() {
                let sign_ok = (c == '-' || c == '+') && (s.is_empty() || prev == 'e' || prev == 'E');
                if c.is_ascii_digit() || c == '.' || c == 'e' || c == 'E' || sign_ok {
                    s.push(c);
                    prev = c;
                    bump(&mut chars);
                } else {
                    break;
                }
            }
            out.push((Tok::Num(s), span));
            continue;
        }
        return Err(GrammarError::Syntax { span, message: format!("unexpected character `{c}`") });
    }
    out.push((Tok::Eof, Span { line, col, offset: text.len() }));
    Ok(out)
}

struct Parser {
    toks: Vec<(Tok, Span)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn span(&self) -> Span {
        self.toks[self.pos].1
    }

    fn next(&mut self) -> (Tok, Span) {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn err<T>(&self, message: impl Into<String>) -> Result<T, GrammarError> {
        Err(GrammarError::Syntax { span: self.span(), message: message.into() })
    }

    fn expect(&mut self, tok: Tok) -> Result<Span, GrammarError> {
        if *self.peek() == tok {
            Ok(self.next().1)
        } else {
            self.err(format!("expected {}, found {}", tok.describe(), self.peek().describe()))
        }
    }

    fn keyword(&mut self, kw: &str) -> Result<Span, GrammarError> {
        match self.peek() {
            Tok::Ident(s) if s == kw => Ok(self.next().1),
            other => self.err(format!("expected `{kw}`, found {}", other.describe())),
        }
    }

    fn ident(&mut self, what: &str) -> Result<String, GrammarError> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                self.next();
                Ok(s)
            }
            other => self.err(format!("expected {what}, found {}", other.describe())),
        }
    }

    fn number(&mut self) -> Result<f64, GrammarError> {
        match self.peek().clone() {
            Tok::Num(s) => {
                let span = self.span();
                self.next();
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or(GrammarError::Syntax { span, message: format!("invalid number `{s}`") })
            }
            other => self.err(format!("expected a number, found {}", other.describe())),
        }
    }

    fn building(&mut self) -> Result<ProceduralCode, GrammarError> {
        let span = self.keyword("building")?;
        let building_id = self.ident("a building name")?;
        self.expect(Tok::LBrace)?;
        let mut dims = None;
        if matches!(self.peek(), Tok::Ident(s) if s == "dims") {
            self.next();
            let d = [self.number()?, self.number()?, self.number()?];
            if d.iter().any(|&v| v <= 0.0) {
                return self.err("dims must be positive");
            }
            dims = Some(d);
        }
        let mut levels = Vec::new();
        while matches!(self.peek(), Tok::Ident(s) if s == "level") {
            levels.push(self.level()?);
        }
        if levels.is_empty() {
            return self.err(format!("expected `level`, found {}", self.peek().describe()));
        }
        self.expect(Tok::RBrace)?;
        Ok(ProceduralCode { building_id, dims, levels, span })
    }

    fn level(&mut self) -> Result<Level, GrammarError> {
        let span = self.keyword("level")?;
        let id = self.ident("a level name")?;
        let mut repeat_count = 1;
        if matches!(self.peek(), Tok::Ident(s) if s == "x") {
            self.next();
            let at = self.span();
            match self.peek().clone() {
                Tok::Num(s) => {
                    self.next();
                    repeat_count = s
                        .parse::<usize>()
                        .ok()
                        .filter(|&n| n >= 1)
                        .ok_or(GrammarError::Syntax { span: at, message: format!("repeat count must be an integer ≥ 1, found `{s}`") })?;
                }
                other => return self.err(format!("expected a repeat count, found {}", other.describe())),
            }
        }
        self.expect(Tok::LBrace)?;
        let mut facades = vec![self.facade()?];
        while *self.peek() == Tok::Pipe {
            self.next();
            facades.push(self.facade()?);
        }
        self.expect(Tok::RBrace)?;
        Ok(Level { id, repeat_count, facades, span })
    }

    fn facade(&mut self) -> Result<Facade, GrammarError> {
        let span = self.span();
        let mut items = Vec::new();
        while matches!(self.peek(), Tok::Ident(_) | Tok::LParen) {
            items.push(self.item()?);
        }
        if items.is_empty() {
            return self.err(format!("expected an asset or `(`, found {}", self.peek().describe()));
        }
        Ok(Facade { items, span })
    }

    fn item(&mut self) -> Result<Item, GrammarError> {
        let span = self.span();
        match self.peek().clone() {
            Tok::Ident(asset_id) => {
                self.next();
                let scalable = self.star();
                Ok(Item::Token { asset_id, scalable, span })
            }
            Tok::LParen => {
                self.next();
                let mut items = Vec::new();
                while matches!(self.peek(), Tok::Ident(_) | Tok::LParen) {
                    items.push(self.item()?);
                }
                if items.is_empty() {
                    return self.err("empty group");
                }
                if *self.peek() != Tok::RParen {
                    return Err(GrammarError::Syntax {
                        span,
                        message: format!("unclosed group: expected `)`, found {}", self.peek().describe()),
                    });
                }
                self.next();
                let repeatable = self.star();
                Ok(Item::Group { items, repeatable, span })
            }
            other => self.err(format!("expected an asset or `(`, found {}", other.describe())),
        }
    }

    fn star(&mut self) -> bool {
        if *self.peek() == Tok::Star {
            self.next();
            true
        } else {
            false
        }
    }
}

/// Parses a file holding one or more buildings.
pub fn parse_all(text: &str) -> Result<Vec<ProceduralCode>, GrammarError> {
    let mut p = Parser { toks: lex(text)?, pos: 0 };
    let mut out = vec![p.building()?];
    while *p.peek() != Tok::Eof {
        out.push(p.building()?);
    }
    Ok(out)
}

/// Parses exactly one building.
pub fn parse(text: &str) -> Result<ProceduralCode, GrammarError> {
    let mut p = Parser { toks: lex(text)?, pos: 0 };
    let b = p.building()?;
    if *p.peek() != Tok::Eof {
        return p.err(format!("expected end of input after building `{}`", b.building_id));
    }
    Ok(b)
}
