use std::fmt;
use std::sync::Arc;

/// Integer index expression over the output index variables `o0, o1, ...`.
///
/// Only the operators that layout operators need are representable: sums,
/// scaling by a constant, floor division and modulo by positive constants,
/// and a constant-table lookup (used by `Gather`). All values are
/// non-negative on the variable domain.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum IndexExpr {
    Var(usize),
    Const(i64),
    Add(Box<IndexExpr>, Box<IndexExpr>),
    Mul(Box<IndexExpr>, i64),
    FloorDiv(Box<IndexExpr>, i64),
    Mod(Box<IndexExpr>, i64),
    Lookup(Arc<[i64]>, Box<IndexExpr>),
}

/// Inclusive value range of an expression.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Interval {
    pub lo: i64,
    pub hi: i64,
}

impl Interval {
    pub fn point(v: i64) -> Self {
        Interval { lo: v, hi: v }
    }
}

impl IndexExpr {
    pub fn var(i: usize) -> Self {
        IndexExpr::Var(i)
    }

    pub fn constant(c: i64) -> Self {
        IndexExpr::Const(c)
    }

    pub fn add(a: IndexExpr, b: IndexExpr) -> Self {
        IndexExpr::Add(Box::new(a), Box::new(b))
    }

    pub fn mul(a: IndexExpr, c: i64) -> Self {
        IndexExpr::Mul(Box::new(a), c)
    }

    pub fn floor_div(a: IndexExpr, c: i64) -> Self {
        assert!(c > 0, "divisor must be positive");
        IndexExpr::FloorDiv(Box::new(a), c)
    }

    pub fn modulo(a: IndexExpr, c: i64) -> Self {
        assert!(c > 0, "modulus must be positive");
        IndexExpr::Mod(Box::new(a), c)
    }

    pub fn lookup(table: Arc<[i64]>, a: IndexExpr) -> Self {
        IndexExpr::Lookup(table, Box::new(a))
    }

    pub fn eval(&self, vars: &[i64]) -> i64 {
        match self {
            IndexExpr::Var(i) => vars[*i],
            IndexExpr::Const(c) => *c,
            IndexExpr::Add(a, b) => a.eval(vars) + b.eval(vars),
            IndexExpr::Mul(a, c) => a.eval(vars) * c,
            IndexExpr::FloorDiv(a, c) => a.eval(vars).div_euclid(*c),
            IndexExpr::Mod(a, c) => a.eval(vars).rem_euclid(*c),
            IndexExpr::Lookup(t, a) => {
                let k = a.eval(vars);
                t[k as usize]
            }
        }
    }

    /// Interval analysis given the extent of every variable.
    pub fn range(&self, extents: &[usize]) -> Interval {
        match self {
            IndexExpr::Var(i) => Interval {
                lo: 0,
                hi: extents[*i] as i64 - 1,
            },
            IndexExpr::Const(c) => Interval::point(*c),
            IndexExpr::Add(a, b) => {
                let (x, y) = (a.range(extents), b.range(extents));
                Interval {
                    lo: x.lo + y.lo,
                    hi: x.hi + y.hi,
                }
            }
            IndexExpr::Mul(a, c) => {
                let x = a.range(extents);
                Interval {
                    lo: x.lo * c,
                    hi: x.hi * c,
                }
            }
            IndexExpr::FloorDiv(a, c) => {
                let x = a.range(extents);
                Interval {
                    lo: x.lo.div_euclid(*c),
                    hi: x.hi.div_euclid(*c),
                }
            }
            IndexExpr::Mod(a, c) => {
                let x = a.range(extents);
                if x.hi - x.lo < *c && x.lo.rem_euclid(*c) <= x.hi.rem_euclid(*c) {
                    Interval {
                        lo: x.lo.rem_euclid(*c),
                        hi: x.hi.rem_euclid(*c),
                    }
                } else {
                    Interval { lo: 0, hi: c - 1 }
                }
            }
            IndexExpr::Lookup(t, a) => {
                let x = a.range(extents);
                let lo = x.lo.max(0) as usize;
                let hi = (x.hi.max(0) as usize).min(t.len().saturating_sub(1));
                let slice = &t[lo.min(hi)..=hi];
                Interval {
                    lo: *slice.iter().min().unwrap_or(&0),
                    hi: *slice.iter().max().unwrap_or(&0),
                }
            }
        }
    }

    /// Number of `//` and `%` nodes.
    pub fn divmod_count(&self) -> usize {
        match self {
            IndexExpr::Var(_) | IndexExpr::Const(_) => 0,
            IndexExpr::Add(a, b) => a.divmod_count() + b.divmod_count(),
            IndexExpr::Mul(a, _) | IndexExpr::Lookup(_, a) => a.divmod_count(),
            IndexExpr::FloorDiv(a, _) | IndexExpr::Mod(a, _) => 1 + a.divmod_count(),
        }
    }

    pub fn node_count(&self) -> usize {
        match self {
            IndexExpr::Var(_) | IndexExpr::Const(_) => 1,
            IndexExpr::Add(a, b) => 1 + a.node_count() + b.node_count(),
            IndexExpr::Mul(a, _)
            | IndexExpr::Lookup(_, a)
            | IndexExpr::FloorDiv(a, _)
            | IndexExpr::Mod(a, _) => 1 + a.node_count(),
        }
    }

    /// Replaces every `Var(i)` with `subs[i]`.
    pub fn substitute(&self, subs: &[IndexExpr]) -> IndexExpr {
        match self {
            IndexExpr::Var(i) => subs[*i].clone(),
            IndexExpr::Const(c) => IndexExpr::Const(*c),
            IndexExpr::Add(a, b) => IndexExpr::add(a.substitute(subs), b.substitute(subs)),
            IndexExpr::Mul(a, c) => IndexExpr::Mul(Box::new(a.substitute(subs)), *c),
            IndexExpr::FloorDiv(a, c) => IndexExpr::FloorDiv(Box::new(a.substitute(subs)), *c),
            IndexExpr::Mod(a, c) => IndexExpr::Mod(Box::new(a.substitute(subs)), *c),
            IndexExpr::Lookup(t, a) => IndexExpr::Lookup(t.clone(), Box::new(a.substitute(subs))),
        }
    }

    /// Collects the variables the expression reads.
    pub fn vars(&self, out: &mut Vec<usize>) {
        match self {
            IndexExpr::Var(i) => {
                if !out.contains(i) {
                    out.push(*i);
                }
            }
            IndexExpr::Const(_) => {}
            IndexExpr::Add(a, b) => {
                a.vars(out);
                b.vars(out);
            }
            IndexExpr::Mul(a, _)
            | IndexExpr::FloorDiv(a, _)
            | IndexExpr::Mod(a, _)
            | IndexExpr::Lookup(_, a) => a.vars(out),
        }
    }

    pub fn mentions(&self, var: usize) -> bool {
        let mut v = Vec::new();
        self.vars(&mut v);
        v.contains(&var)
    }

    fn precedence(&self) -> u8 {
        match self {
            IndexExpr::Add(..) => 1,
            IndexExpr::Mul(..) | IndexExpr::FloorDiv(..) | IndexExpr::Mod(..) => 2,
            _ => 3,
        }
    }

    fn fmt_prec(&self, f: &mut fmt::Formatter<'_>, min: u8) -> fmt::Result {
        let paren = self.precedence() < min;
        if paren {
            write!(f, "(")?;
        }
        match self {
            IndexExpr::Var(i) => write!(f, "o{i}")?,
            IndexExpr::Const(c) => write!(f, "{c}")?,
            IndexExpr::Add(a, b) => {
                a.fmt_prec(f, 1)?;
                write!(f, "+")?;
                b.fmt_prec(f, 2)?;
            }
            IndexExpr::Mul(a, c) => {
                a.fmt_prec(f, 2)?;
                write!(f, "*{c}")?;
            }
            IndexExpr::FloorDiv(a, c) => {
                a.fmt_prec(f, 2)?;
                write!(f, "//{c}")?;
            }
            IndexExpr::Mod(a, c) => {
                a.fmt_prec(f, 2)?;
                write!(f, "%{c}")?;
            }
            IndexExpr::Lookup(t, a) => {
                write!(f, "tab[")?;
                for (i, v) in t.iter().enumerate() {
                    if i > 0 {
                        write!(f, ",")?;
                    }
                    write!(f, "{v}")?;
                }
                write!(f, "](")?;
                a.fmt_prec(f, 0)?;
                write!(f, ")")?;
            }
        }
        if paren {
            write!(f, ")")?;
        }
        Ok(())
    }
}

impl fmt::Display for IndexExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_prec(f, 0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn display_parenthesizes_by_precedence() {
        let e = IndexExpr::modulo(
            IndexExpr::add(IndexExpr::mul(IndexExpr::var(0), 3), IndexExpr::var(1)),
            4,
        );
        assert_eq!(e.to_string(), "(o0*3+o1)%4");
        let nested = IndexExpr::add(
            IndexExpr::var(0),
            IndexExpr::add(IndexExpr::var(1), IndexExpr::var(2)),
        );
        assert_eq!(nested.to_string(), "o0+(o1+o2)");
        let chain = IndexExpr::modulo(IndexExpr::modulo(IndexExpr::var(0), 12), 4);
        assert_eq!(chain.to_string(), "o0%12%4");
    }

    #[test]
    fn interval_of_mod_tracks_small_ranges() {
        // o0 in [0,3): o0 % 8 stays within [0,2]
        let e = IndexExpr::modulo(IndexExpr::var(0), 8);
        assert_eq!(e.range(&[3]), Interval { lo: 0, hi: 2 });
        let wide = IndexExpr::modulo(IndexExpr::var(0), 8);
        assert_eq!(wide.range(&[20]), Interval { lo: 0, hi: 7 });
        let shifted = IndexExpr::modulo(IndexExpr::add(IndexExpr::var(0), IndexExpr::constant(6)), 8);
        // values 6..=8 wrap, so the conservative range applies
        assert_eq!(shifted.range(&[3]), Interval { lo: 0, hi: 7 });
    }
}
