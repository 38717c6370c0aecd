//! Recursive-descent checker for the DOT language: graphs, statements,
//! attribute lists, edges and subgraphs. IDs may be bare words, numerals
//! or double-quoted strings; HTML strings are not accepted.

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Id(String),
    Punct(char),
    Arrow(&'static str),
}

fn lex(src: &str) -> Result<Vec<Tok>, String> {
    let b = src.as_bytes();
    let mut i = 0;
    let mut out = Vec::new();
    while i < b.len() {
        let c = b[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
        } else if src[i..].starts_with("//") || (c == '#' && (i == 0 || b[i - 1] == b'\n')) {
            while i < b.len() && b[i] != b'\n' {
                i += 1;
            }
        } else if src[i..].starts_with("/*") {
            let end = src[i + 2..].find("*/").ok_or("unterminated comment")?;
            i += end + 4;
        } else if src[i..].starts_with("->") {
            out.push(Tok::Arrow("->"));
            i += 2;
        } else if src[i..].starts_with("--") {
            out.push(Tok::Arrow("--"));
            i += 2;
        } else if "{}[]=;,:".contains(c) {
            out.push(Tok::Punct(c));
            i += 1;
        } else if c == '"' {
            let mut s = String::new();
            i += 1;
            loop {
                match b.get(i) {
                    None => return Err("unterminated string".into()),
                    Some(b'"') => break,
                    Some(b'\\') if i + 1 < b.len() => {
                        s.push('\\');
                        s.push(b[i + 1] as char);
                        i += 2;
                    }
                    Some(_) => {
                        let ch = src[i..].chars().next().unwrap();
                        s.push(ch);
                        i += ch.len_utf8();
                    }
                }
            }
            i += 1;
            out.push(Tok::Id(s));
        } else if c.is_ascii_digit() || c == '-' || c == '.' {
            let start = i;
            if c == '-' {
                i += 1;
            }
            let mut dot = false;
            while i < b.len() && (b[i].is_ascii_digit() || (b[i] == b'.' && !dot)) {
                dot |= b[i] == b'.';
                i += 1;
            }
            if i == start + usize::from(c == '-') {
                return Err(format!("bad numeral at byte {start}"));
            }
            out.push(Tok::Id(src[start..i].to_string()));
        } else if c.is_ascii_alphabetic() || c == '_' || (c as u32) >= 0x80 {
            let start = i;
            while i < b.len() && (b[i].is_ascii_alphanumeric() || b[i] == b'_' || b[i] >= 0x80) {
                i += 1;
            }
            out.push(Tok::Id(src[start..i].to_string()));
        } else {
            return Err(format!("unexpected {c:?} at byte {i}"));
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<Tok>,
    pos: usize,
    directed: bool,
    pub nodes: usize,
    pub edges: usize,
}

fn keyword(t: &Tok, k: &str) -> bool {
    matches!(t, Tok::Id(s) if s.eq_ignore_ascii_case(k))
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(&Tok::Punct(c)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: char) -> Result<(), String> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(format!("expected {c:?}, found {:?}", self.peek()))
        }
    }

    fn id(&mut self) -> Result<String, String> {
        match self.next() {
            Some(Tok::Id(s)) => Ok(s),
            t => Err(format!("expected ID, found {t:?}")),
        }
    }

    fn graph(&mut self) -> Result<(), String> {
        if self.peek().is_some_and(|t| keyword(t, "strict")) {
            self.pos += 1;
        }
        match self.next() {
            Some(t) if keyword(&t, "digraph") => self.directed = true,
            Some(t) if keyword(&t, "graph") => self.directed = false,
            t => return Err(format!("expected graph or digraph, found {t:?}")),
        }
        if matches!(self.peek(), Some(Tok::Id(_))) {
            self.pos += 1;
        }
        self.expect('{')?;
        self.stmt_list()?;
        self.expect('}')?;
        if self.pos != self.toks.len() {
            return Err("trailing tokens after graph".into());
        }
        Ok(())
    }

    fn stmt_list(&mut self) -> Result<(), String> {
        while !matches!(self.peek(), Some(Tok::Punct('}')) | None) {
            self.stmt()?;
            self.eat(';');
        }
        Ok(())
    }

    fn stmt(&mut self) -> Result<(), String> {
        let t = self.peek().cloned().ok_or("unexpected end")?;
        if keyword(&t, "graph") || keyword(&t, "node") || keyword(&t, "edge") {
            self.pos += 1;
            return self.attr_list(true);
        }
        if keyword(&t, "subgraph") || t == Tok::Punct('{') {
            self.subgraph()?;
            return self.edge_rhs(false);
        }
        let _ = self.id()?;
        if self.eat('=') {
            self.id()?;
            return Ok(());
        }
        self.port()?;
        let is_edge = matches!(self.peek(), Some(Tok::Arrow(_)));
        self.edge_rhs(true)?;
        if !is_edge {
            self.nodes += 1;
        }
        if matches!(self.peek(), Some(Tok::Punct('['))) {
            self.attr_list(false)?;
        }
        Ok(())
    }

    fn port(&mut self) -> Result<(), String> {
        if self.eat(':') {
            self.id()?;
            if self.eat(':') {
                self.id()?;
            }
        }
        Ok(())
    }

    fn subgraph(&mut self) -> Result<(), String> {
        if self.peek().is_some_and(|t| keyword(t, "subgraph")) {
            self.pos += 1;
            if matches!(self.peek(), Some(Tok::Id(_))) {
                self.pos += 1;
            }
        }
        self.expect('{')?;
        self.stmt_list()?;
        self.expect('}')
    }

    fn edge_rhs(&mut self, _from_node: bool) -> Result<(), String> {
        while let Some(Tok::Arrow(a)) = self.peek().cloned() {
            if (a == "->") != self.directed {
                return Err(format!("edge operator {a} in wrong graph kind"));
            }
            self.pos += 1;
            if matches!(self.peek(), Some(Tok::Punct('{'))) || self.peek().is_some_and(|t| keyword(t, "subgraph")) {
                self.subgraph()?;
            } else {
                self.id()?;
                self.port()?;
            }
            self.edges += 1;
        }
        Ok(())
    }

    fn attr_list(&mut self, required: bool) -> Result<(), String> {
        if required && !matches!(self.peek(), Some(Tok::Punct('['))) {
            return Err("expected attribute list".into());
        }
        while self.eat('[') {
            while !self.eat(']') {
                self.id()?;
                self.expect('=')?;
                self.id()?;
                if !self.eat(',') {
                    self.eat(';');
                }
            }
        }
        Ok(())
    }
}

/// Counts of node and edge statements in a well-formed DOT document.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DotShape {
    pub nodes: usize,
    pub edges: usize,
}

pub fn check(src: &str) -> Result<DotShape, String> {
    let mut p = Parser {
        toks: lex(src)?,
        pos: 0,
        directed: true,
        nodes: 0,
        edges: 0,
    };
    p.graph()?;
    Ok(DotShape {
        nodes: p.nodes,
        edges: p.edges,
    })
}
