//! Line-oriented text IR.
//!
//! ```text
//! # comment
//! input x [1,4,6,6]
//! input w [8,4,3,3]
//! y = Conv2D(x, w; stride=1, pad=1)
//! z = Reshape(y; shape=[1,8,36]) @reshape0 : [1,8,36]
//! output z
//! ```
//!
//! Statements end at a newline or a top-level `;`. Inside an argument list
//! `,` and `;` both separate items; an item of the form `name=value` is an
//! attribute, anything else is an input edge. A node's id defaults to the
//! name of the edge it defines and can be overridden with `@id`. When no
//! `output` statement is present, every unconsumed edge is a graph output.

use std::sync::Arc;

use super::{ComputeGraph, ElemOp, Fusion, GraphError, NodeId, Op, OpKind, OperatorNode, ReduceFn, UnaryFn};
use crate::index::{IndexExpr, IndexMap};
use crate::layout::LayoutChoice;
use crate::shape::TensorShape;

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(String),
    Int(i64),
    LParen,
    RParen,
    LBrack,
    RBrack,
    LBrace,
    RBrace,
    Comma,
    Semi,
    Eq,
    Colon,
    Pipe,
    At,
    Arrow,
    Plus,
    Star,
    SlashSlash,
    Percent,
    Newline,
    Eof,
}

#[derive(Clone, Debug)]
struct Token {
    tok: Tok,
    line: usize,
    col: usize,
}

fn syntax(line: usize, col: usize, msg: impl Into<String>) -> GraphError {
    GraphError::Syntax {
        line,
        col,
        msg: msg.into(),
    }
}

fn lex(src: &str) -> Result<Vec<Token>, GraphError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0, 1, 1);
    let mut depth = 0usize;
    while i < chars.len() {
        let c = chars[i];
        let (tl, tc) = (line, col);
        let mut push = |tok: Tok, len: usize, i: &mut usize, col: &mut usize| {
            out.push(Token { tok, line: tl, col: tc });
            *i += len;
            *col += len;
        };
        match c {
            '\n' => {
                if depth == 0 {
                    out.push(Token {
                        tok: Tok::Newline,
                        line,
                        col,
                    });
                }
                i += 1;
                line += 1;
                col = 1;
            }
            ' ' | '\t' | '\r' => {
                i += 1;
                col += 1;
            }
            '#' => {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
            }
            '(' | '[' | '{' => {
                depth += 1;
                let t = match c {
                    '(' => Tok::LParen,
                    '[' => Tok::LBrack,
                    _ => Tok::LBrace,
                };
                push(t, 1, &mut i, &mut col);
            }
            ')' | ']' | '}' => {
                depth = depth.saturating_sub(1);
                let t = match c {
                    ')' => Tok::RParen,
                    ']' => Tok::RBrack,
                    _ => Tok::RBrace,
                };
                push(t, 1, &mut i, &mut col);
            }
            ',' => push(Tok::Comma, 1, &mut i, &mut col),
            ';' => push(Tok::Semi, 1, &mut i, &mut col),
            '=' => push(Tok::Eq, 1, &mut i, &mut col),
            ':' => push(Tok::Colon, 1, &mut i, &mut col),
            '|' => push(Tok::Pipe, 1, &mut i, &mut col),
            '@' => push(Tok::At, 1, &mut i, &mut col),
            '+' => push(Tok::Plus, 1, &mut i, &mut col),
            '*' => push(Tok::Star, 1, &mut i, &mut col),
            '%' => push(Tok::Percent, 1, &mut i, &mut col),
            '-' if chars.get(i + 1) == Some(&'>') => push(Tok::Arrow, 2, &mut i, &mut col),
            '/' if chars.get(i + 1) == Some(&'/') => push(Tok::SlashSlash, 2, &mut i, &mut col),
            d if d.is_ascii_digit() => {
                let start = i;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
                let text: String = chars[start..i].iter().collect();
                let v = text
                    .parse::<i64>()
                    .map_err(|_| syntax(tl, tc, format!("integer `{text}` out of range")))?;
                col += i - start;
                out.push(Token {
                    tok: Tok::Int(v),
                    line: tl,
                    col: tc,
                });
            }
            a if a.is_ascii_alphabetic() || a == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_' || chars[i] == '.') {
                    i += 1;
                }
                col += i - start;
                out.push(Token {
                    tok: Tok::Ident(chars[start..i].iter().collect()),
                    line: tl,
                    col: tc,
                });
            }
            other => return Err(syntax(line, col, format!("unexpected character `{other}`"))),
        }
    }
    out.push(Token {
        tok: Tok::Eof,
        line,
        col,
    });
    Ok(out)
}

/// Attribute value.
#[derive(Clone, Debug)]
enum Value {
    Int(i64),
    Ident(String),
    List(Vec<Value>),
    Call(String, Vec<(Option<String>, Value)>),
    Map(IndexMap),
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
}

type PResult<T> = Result<T, GraphError>;

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_at(&self, n: usize) -> &Tok {
        &self.toks[(self.pos + n).min(self.toks.len() - 1)].tok
    }

    fn here(&self) -> (usize, usize) {
        let t = &self.toks[self.pos];
        (t.line, t.col)
    }

    fn err<T>(&self, msg: impl Into<String>) -> PResult<T> {
        let (l, c) = self.here();
        Err(syntax(l, c, msg))
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn eat(&mut self, t: &Tok) -> bool {
        if self.peek() == t {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, t: Tok, what: &str) -> PResult<()> {
        if self.eat(&t) {
            Ok(())
        } else {
            self.err(format!("expected {what}, found {}", describe(self.peek())))
        }
    }

    fn ident(&mut self, what: &str) -> PResult<String> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                self.bump();
                Ok(s)
            }
            t => self.err(format!("expected {what}, found {}", describe(&t))),
        }
    }

    fn int(&mut self) -> PResult<i64> {
        match *self.peek() {
            Tok::Int(v) => {
                self.bump();
                Ok(v)
            }
            ref t => self.err(format!("expected integer, found {}", describe(t))),
        }
    }

    fn shape(&mut self) -> PResult<TensorShape> {
        let (l, c) = self.here();
        self.expect(Tok::LBrack, "`[`")?;
        let mut dims = Vec::new();
        if !self.eat(&Tok::RBrack) {
            loop {
                dims.push(self.int()? as usize);
                if self.eat(&Tok::RBrack) {
                    break;
                }
                self.expect(Tok::Comma, "`,` or `]`")?;
            }
        }
        TensorShape::new(dims).map_err(|e| syntax(l, c, e.to_string()))
    }

    fn value(&mut self) -> PResult<Value> {
        match self.peek().clone() {
            Tok::Int(v) => {
                self.bump();
                Ok(Value::Int(v))
            }
            Tok::LBrack => {
                self.bump();
                let mut items = Vec::new();
                if !self.eat(&Tok::RBrack) {
                    loop {
                        items.push(self.value()?);
                        if self.eat(&Tok::RBrack) {
                            break;
                        }
                        self.expect(Tok::Comma, "`,` or `]`")?;
                    }
                }
                Ok(Value::List(items))
            }
            Tok::LBrace => Ok(Value::Map(self.map_literal()?)),
            Tok::Ident(name) => {
                self.bump();
                if !self.eat(&Tok::LParen) {
                    return Ok(Value::Ident(name));
                }
                let mut args = Vec::new();
                if !self.eat(&Tok::RParen) {
                    loop {
                        let key = match (self.peek().clone(), self.peek_at(1)) {
                            (Tok::Ident(k), Tok::Eq) => {
                                self.bump();
                                self.bump();
                                Some(k)
                            }
                            _ => None,
                        };
                        args.push((key, self.value()?));
                        if self.eat(&Tok::RParen) {
                            break;
                        }
                        self.expect(Tok::Comma, "`,` or `)`")?;
                    }
                }
                Ok(Value::Call(name, args))
            }
            t => self.err(format!("expected value, found {}", describe(&t))),
        }
    }

    fn map_literal(&mut self) -> PResult<IndexMap> {
        let (l, c) = self.here();
        self.expect(Tok::LBrace, "`{`")?;
        let out_shape = self.shape()?;
        self.expect(Tok::Arrow, "`->`")?;
        let in_shape = self.shape()?;
        self.expect(Tok::Colon, "`:`")?;
        let mut exprs = Vec::new();
        loop {
            exprs.push(self.expr()?);
            if self.eat(&Tok::RBrace) {
                break;
            }
            self.expect(Tok::Comma, "`,` or `}`")?;
        }
        let map = IndexMap::new(out_shape, in_shape, exprs).map_err(|e| syntax(l, c, e.to_string()))?;
        map.check_range().map_err(|e| syntax(l, c, e.to_string()))?;
        Ok(map)
    }

    fn expr(&mut self) -> PResult<IndexExpr> {
        let mut acc = self.term()?;
        while self.eat(&Tok::Plus) {
            acc = IndexExpr::add(acc, self.term()?);
        }
        Ok(acc)
    }

    fn term(&mut self) -> PResult<IndexExpr> {
        let mut acc = self.atom()?;
        loop {
            let op = self.peek().clone();
            if !matches!(op, Tok::Star | Tok::SlashSlash | Tok::Percent) {
                return Ok(acc);
            }
            self.bump();
            let c = self.int()?;
            acc = match op {
                Tok::Star => IndexExpr::mul(acc, c),
                _ if c <= 0 => return self.err("divisor must be positive"),
                Tok::SlashSlash => IndexExpr::floor_div(acc, c),
                _ => IndexExpr::modulo(acc, c),
            };
        }
    }

    fn atom(&mut self) -> PResult<IndexExpr> {
        match self.peek().clone() {
            Tok::Int(v) => {
                self.bump();
                Ok(IndexExpr::Const(v))
            }
            Tok::LParen => {
                self.bump();
                let e = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            Tok::Ident(name) if name == "tab" => {
                self.bump();
                self.expect(Tok::LBrack, "`[`")?;
                let mut table = Vec::new();
                loop {
                    table.push(self.int()?);
                    if self.eat(&Tok::RBrack) {
                        break;
                    }
                    self.expect(Tok::Comma, "`,` or `]`")?;
                }
                self.expect(Tok::LParen, "`(`")?;
                let e = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(IndexExpr::lookup(Arc::from(table), e))
            }
            Tok::Ident(name) => match name.strip_prefix('o').and_then(|n| n.parse::<usize>().ok()) {
                Some(v) => {
                    self.bump();
                    Ok(IndexExpr::Var(v))
                }
                None => self.err(format!("unknown index variable `{name}`")),
            },
            t => self.err(format!("expected index expression, found {}", describe(&t))),
        }
    }
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Ident(s) => format!("`{s}`"),
        Tok::Int(v) => format!("`{v}`"),
        Tok::Newline => "end of line".into(),
        Tok::Eof => "end of input".into(),
        other => format!("{other:?}"),
    }
}

struct Attrs {
    items: Vec<(String, Value)>,
    line: usize,
    col: usize,
}

impl Attrs {
    fn err<T>(&self, msg: impl Into<String>) -> PResult<T> {
        Err(syntax(self.line, self.col, msg))
    }

    fn take(&mut self, key: &str) -> Option<Value> {
        let pos = self.items.iter().position(|(k, _)| k == key)?;
        Some(self.items.remove(pos).1)
    }

    fn usize(&mut self, key: &str, default: Option<usize>) -> PResult<usize> {
        match self.take(key) {
            Some(Value::Int(v)) if v >= 0 => Ok(v as usize),
            Some(_) => self.err(format!("attribute `{key}` must be a non-negative integer")),
            None => match default {
                Some(d) => Ok(d),
                None => self.err(format!("missing attribute `{key}`")),
            },
        }
    }

    fn list(&mut self, key: &str) -> PResult<Vec<usize>> {
        match self.take(key) {
            Some(Value::List(items)) => items
                .into_iter()
                .map(|v| match v {
                    Value::Int(i) if i >= 0 => Ok(i as usize),
                    _ => self.err(format!("attribute `{key}` must list non-negative integers")),
                })
                .collect(),
            Some(_) => self.err(format!("attribute `{key}` must be a list")),
            None => self.err(format!("missing attribute `{key}`")),
        }
    }

    fn ident(&mut self, key: &str, default: Option<&str>) -> PResult<String> {
        match self.take(key) {
            Some(Value::Ident(s)) => Ok(s),
            Some(_) => self.err(format!("attribute `{key}` must be a name")),
            None => match default {
                Some(d) => Ok(d.to_string()),
                None => self.err(format!("missing attribute `{key}`")),
            },
        }
    }

    fn boolean(&mut self, key: &str, default: bool) -> PResult<bool> {
        match self.ident(key, Some(if default { "true" } else { "false" }))?.as_str() {
            "true" => Ok(true),
            "false" => Ok(false),
            other => self.err(format!("attribute `{key}` must be true or false, got `{other}`")),
        }
    }

    fn map(&mut self, key: &str) -> PResult<Option<IndexMap>> {
        match self.take(key) {
            Some(Value::Map(m)) => Ok(Some(m)),
            Some(_) => self.err(format!("attribute `{key}` must be an index map")),
            None => Ok(None),
        }
    }
}

fn parse_name<T>(r: Result<T, String>, a: &Attrs) -> PResult<T> {
    r.or_else(|m| a.err(m))
}

fn build_op(kind: OpKind, a: &mut Attrs) -> PResult<Op> {
    Ok(match kind {
        OpKind::Conv2D => Op::Conv2D {
            stride: a.usize("stride", Some(1))?,
            pad: a.usize("pad", Some(0))?,
        },
        OpKind::MatMul => Op::MatMul,
        OpKind::LayerNorm => Op::LayerNorm { axes: a.list("axes")? },
        OpKind::Softmax => Op::Softmax {
            axis: a.usize("axis", None)?,
        },
        OpKind::Reduce => {
            let axes = a.list("axes")?;
            let func = a.ident("func", Some("sum"))?;
            Op::Reduce {
                axes,
                func: parse_name(func.parse::<ReduceFn>(), a)?,
                keepdims: a.boolean("keepdims", true)?,
            }
        }
        OpKind::Reshape => Op::Reshape { shape: a.list("shape")? },
        OpKind::Transpose => Op::Transpose { perm: a.list("perm")? },
        OpKind::DepthToSpace => Op::DepthToSpace {
            block: a.usize("block", None)?,
        },
        OpKind::SpaceToDepth => Op::SpaceToDepth {
            block: a.usize("block", None)?,
        },
        OpKind::Gather => Op::Gather {
            axis: a.usize("axis", None)?,
            indices: a.list("indices")?,
        },
        OpKind::Slice => Op::Slice {
            axis: a.usize("axis", None)?,
            start: a.usize("start", Some(0))?,
            end: a.usize("end", None)?,
            step: a.usize("step", Some(1))?,
        },
        OpKind::Unary => {
            let f = a.ident("fn", None)?;
            Op::Unary {
                func: parse_name(f.parse::<UnaryFn>(), a)?,
            }
        }
        OpKind::Add => Op::Add,
        OpKind::Relayout => {
            let Some(map) = a.map("map")? else {
                return a.err("missing attribute `map`");
            };
            let origin = a.ident("origin", Some("Relayout"))?;
            Op::Relayout {
                map,
                origin: parse_name(origin.parse::<OpKind>(), a)?,
            }
        }
    })
}

fn build_fusion(a: &mut Attrs, n_inputs: usize) -> PResult<Fusion> {
    let mut fusion = Fusion::default();
    for slot in 0..n_inputs {
        if let Some(m) = a.map(&format!("in{slot}"))? {
            fusion.set_input_map(slot, Some(m));
        }
    }
    if let Some(v) = a.take("epi") {
        let Value::List(items) = v else {
            return a.err("attribute `epi` must be a list");
        };
        for item in items {
            let op = match item {
                Value::Ident(name) => match name.parse::<UnaryFn>() {
                    Ok(f) => ElemOp::Unary(f),
                    Err(m) => return a.err(m),
                },
                Value::Call(name, args) if name == "add" && args.len() == 1 => match args[0] {
                    (None, Value::Int(i)) if i >= 0 && (i as usize) < n_inputs => ElemOp::Add(i as usize),
                    _ => return a.err("`add` takes one input position"),
                },
                _ => return a.err("epilogue entries are unary names or add(<input>)"),
            };
            fusion.epilogue.push(op);
        }
    }
    fusion.output_map = a.map("out")?;
    Ok(fusion)
}

fn layout_of(v: Value, line: usize, col: usize) -> PResult<LayoutChoice> {
    let bad = |m: &str| syntax(line, col, format!("invalid layout: {m}"));
    let Value::Call(name, args) = v else {
        return Err(bad("expected L(...)"));
    };
    if name != "L" {
        return Err(bad("expected L(...)"));
    }
    let mut layout = LayoutChoice::default();
    let ints = |v: Value| -> PResult<Vec<usize>> {
        match v {
            Value::List(items) => items
                .into_iter()
                .map(|i| match i {
                    Value::Int(x) if x >= 0 => Ok(x as usize),
                    _ => Err(bad("expected integers")),
                })
                .collect(),
            _ => Err(bad("expected a list")),
        }
    };
    for (key, value) in args {
        match (key.as_deref(), value) {
            (Some("order"), v) => layout.dim_order = ints(v)?,
            (Some("block"), Value::Int(b)) if b >= 0 => layout.blocked = Some(b as usize),
            (Some("serves"), v) => layout.serves = ints(v)?,
            (Some("copies"), Value::List(items)) => {
                for item in items {
                    layout.copies.push(layout_of(item, line, col)?);
                }
            }
            (k, _) => return Err(bad(&format!("unexpected field {k:?}"))),
        }
    }
    Ok(layout)
}

/// Parses IR text into a graph. Shapes of intermediate edges are left
/// unset unless annotated with `: [..]`.
pub fn parse_graph(text: &str) -> Result<ComputeGraph, GraphError> {
    let mut p = Parser { toks: lex(text)?, pos: 0 };
    let mut g = ComputeGraph::new();
    let mut outputs: Vec<String> = Vec::new();
    let mut layouts: Vec<(String, LayoutChoice)> = Vec::new();
    loop {
        while p.eat(&Tok::Newline) || p.eat(&Tok::Semi) {}
        if *p.peek() == Tok::Eof {
            break;
        }
        let (line, col) = p.here();
        let head = p.ident("statement")?;
        match (head.as_str(), p.peek()) {
            ("input", Tok::Ident(_)) => {
                let name = p.ident("input name")?;
                let shape = p.shape()?;
                g.add_input(&name, shape).map_err(|e| syntax(line, col, e.to_string()))?;
                if p.eat(&Tok::Pipe) {
                    let (l, c) = p.here();
                    let v = p.value()?;
                    layouts.push((name, layout_of(v, l, c)?));
                }
            }
            ("output", Tok::Ident(_)) => loop {
                outputs.push(p.ident("output name")?);
                if !p.eat(&Tok::Comma) {
                    break;
                }
            },
            (_, Tok::Eq) => {
                p.bump();
                let (kl, kc) = p.here();
                let kind_name = p.ident("operator kind")?;
                let kind: OpKind = kind_name.parse().map_err(|m: String| syntax(kl, kc, m))?;
                p.expect(Tok::LParen, "`(`")?;
                let mut inputs = Vec::new();
                let mut attrs = Attrs {
                    items: Vec::new(),
                    line: kl,
                    col: kc,
                };
                if !p.eat(&Tok::RParen) {
                    loop {
                        let (il, ic) = p.here();
                        let name = p.ident("input or attribute")?;
                        if p.eat(&Tok::Eq) {
                            if attrs.items.iter().any(|(k, _)| *k == name) {
                                return Err(syntax(il, ic, format!("attribute `{name}` given twice")));
                            }
                            attrs.items.push((name, p.value()?));
                        } else {
                            inputs.push(super::EdgeId(name));
                        }
                        if p.eat(&Tok::RParen) {
                            break;
                        }
                        if !(p.eat(&Tok::Comma) || p.eat(&Tok::Semi)) {
                            return p.err(format!("expected `,`, `;` or `)`, found {}", describe(p.peek())));
                        }
                    }
                }
                let op = build_op(kind, &mut attrs)?;
                if let Err(msg) = op.check_attrs() {
                    return Err(syntax(kl, kc, msg));
                }
                let fusion = build_fusion(&mut attrs, inputs.len())?;
                if let Some((k, _)) = attrs.items.first() {
                    return attrs.err(format!("unknown attribute `{k}` for {kind}"));
                }
                let mut node_id = head.clone();
                if p.eat(&Tok::At) {
                    node_id = p.ident("node id")?;
                }
                let node = OperatorNode {
                    id: NodeId(node_id),
                    op,
                    inputs,
                    output: super::EdgeId(head.clone()),
                    fusion,
                };
                g.insert_node(node).map_err(|e| syntax(line, col, e.to_string()))?;
                if p.eat(&Tok::Colon) {
                    let s = p.shape()?;
                    g.edges.get_mut(&super::EdgeId(head.clone())).expect("just inserted").shape = Some(s);
                }
                if p.eat(&Tok::Pipe) {
                    let (l, c) = p.here();
                    let v = p.value()?;
                    layouts.push((head, layout_of(v, l, c)?));
                }
            }
            _ => return Err(syntax(line, col, format!("unknown statement `{head}`"))),
        }
        match p.peek() {
            Tok::Newline | Tok::Semi | Tok::Eof => {}
            t => return p.err(format!("expected end of statement, found {}", describe(t))),
        }
    }
    for (edge, layout) in layouts {
        if let Some(e) = g.edges.get_mut(&super::EdgeId(edge)) {
            e.layout = Some(layout);
        }
    }
    g.relink();
    if outputs.is_empty() {
        let mut defined: Vec<&super::TensorEdge> = g
            .edges
            .values()
            .filter(|e| e.consumers.is_empty() && e.producer != super::Producer::Input)
            .collect();
        defined.sort_by_key(|e| e.id.clone());
        g.outputs = defined.into_iter().map(|e| e.id.clone()).collect();
    } else {
        g.outputs = outputs.into_iter().map(super::EdgeId).collect();
    }
    g.check_refs()?;
    Ok(g)
}
