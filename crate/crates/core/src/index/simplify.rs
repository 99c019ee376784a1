//! Strength reduction of index expressions.
//!
//! Rewrites run bottom-up and are justified by interval analysis over the
//! variable extents. Every rewrite preserves the value of the expression on
//! the whole variable domain and never adds a `//` or `%` node.

use super::expr::IndexExpr;

/// Flattened sum `Σ coeff·base + constant`. Bases are never sums, scaled
/// terms or constants.
#[derive(Clone, Debug, Default)]
struct Linear {
    terms: Vec<(IndexExpr, i64)>,
    constant: i64,
}

impl Linear {
    fn of(e: &IndexExpr) -> Linear {
        match e {
            IndexExpr::Const(c) => Linear {
                terms: Vec::new(),
                constant: *c,
            },
            IndexExpr::Add(a, b) => {
                let mut l = Linear::of(a);
                l.extend(Linear::of(b));
                l
            }
            IndexExpr::Mul(a, c) => Linear::of(a).scale(*c),
            other => Linear {
                terms: vec![(other.clone(), 1)],
                constant: 0,
            },
        }
    }

    fn extend(&mut self, other: Linear) {
        self.terms.extend(other.terms);
        self.constant += other.constant;
    }

    fn scale(mut self, c: i64) -> Linear {
        for t in &mut self.terms {
            t.1 *= c;
        }
        self.constant *= c;
        self
    }

    /// Splits into (terms divisible by `g`, divided by `g`) and the rest.
    fn split_by(&self, g: i64) -> (Linear, Linear) {
        let mut big = Linear {
            terms: Vec::new(),
            constant: self.constant / g,
        };
        let mut small = Linear {
            terms: Vec::new(),
            constant: self.constant % g,
        };
        for (base, coeff) in &self.terms {
            if coeff % g == 0 {
                big.terms.push((base.clone(), coeff / g));
            } else {
                small.terms.push((base.clone(), *coeff));
            }
        }
        (big, small)
    }

    fn merged(terms: Vec<(IndexExpr, i64)>) -> Vec<(IndexExpr, i64)> {
        let mut terms = terms;
        terms.sort_by(|a, b| a.0.cmp(&b.0));
        let mut merged: Vec<(IndexExpr, i64)> = Vec::with_capacity(terms.len());
        for (base, coeff) in terms {
            match merged.last_mut() {
                Some((b, c)) if *b == base => *c += coeff,
                _ => merged.push((base, coeff)),
            }
        }
        merged.retain(|t| t.1 != 0);
        merged
    }

    /// Finds `k*(x%c)` next to `k*c*(x//c)` or `k*c*((x//c)%m)` and folds
    /// the pair into `k*x` or `k*(x%(c*m))`.
    fn recombine_once(&mut self) -> bool {
        for i in 0..self.terms.len() {
            let (IndexExpr::Mod(x, c), k) = &self.terms[i] else {
                continue;
            };
            let (x, c, k) = ((**x).clone(), *c, *k);
            for j in 0..self.terms.len() {
                if j == i || self.terms[j].1 != k * c {
                    continue;
                }
                let replacement = match &self.terms[j].0 {
                    IndexExpr::FloorDiv(y, c2) if **y == x && *c2 == c => Linear::of(&x),
                    IndexExpr::Mod(inner, m) => match &**inner {
                        IndexExpr::FloorDiv(y, c2) if **y == x && *c2 == c => {
                            Linear::of(&IndexExpr::modulo(x.clone(), c * m))
                        }
                        _ => continue,
                    },
                    _ => continue,
                };
                let (hi, lo) = (i.max(j), i.min(j));
                self.terms.remove(hi);
                self.terms.remove(lo);
                self.extend(replacement.scale(k));
                self.terms = Linear::merged(std::mem::take(&mut self.terms));
                return true;
            }
        }
        false
    }

    fn build(mut self) -> IndexExpr {
        self.terms = Linear::merged(std::mem::take(&mut self.terms));
        while self.recombine_once() {}
        let mut merged = self.terms;
        // larger strides first, as in a row-major linearization
        merged.sort_by(|a, b| b.1.abs().cmp(&a.1.abs()).then_with(|| a.0.cmp(&b.0)));
        let mut acc: Option<IndexExpr> = None;
        for (base, coeff) in merged {
            if coeff == 0 {
                continue;
            }
            let term = if coeff == 1 {
                base
            } else {
                IndexExpr::mul(base, coeff)
            };
            acc = Some(match acc {
                None => term,
                Some(prev) => IndexExpr::add(prev, term),
            });
        }
        match (acc, self.constant) {
            (None, c) => IndexExpr::Const(c),
            (Some(e), 0) => e,
            (Some(e), c) => IndexExpr::add(e, IndexExpr::Const(c)),
        }
    }
}

fn divisors_desc(c: i64) -> Vec<i64> {
    let mut small = Vec::new();
    let mut large = Vec::new();
    let mut d = 1;
    while d * d <= c {
        if c % d == 0 {
            small.push(d);
            if d != c / d {
                large.push(c / d);
            }
        }
        d += 1;
    }
    let mut all: Vec<i64> = large;
    all.extend(small.into_iter().rev());
    all
}

fn within(e: &IndexExpr, extents: &[usize], bound: i64) -> bool {
    let r = e.range(extents);
    r.lo >= 0 && r.hi < bound
}

fn reduce_div(a: IndexExpr, c: i64, extents: &[usize]) -> IndexExpr {
    if c == 1 {
        return a;
    }
    let r = a.range(extents);
    if r.lo >= 0 && r.lo / c == r.hi / c {
        // covers i//C -> 0 when extent(i) <= C
        return IndexExpr::Const(r.lo / c);
    }
    if let IndexExpr::FloorDiv(inner, c1) = &a {
        // i//Ca//Cb -> i//(Ca*Cb)
        return reduce_div((**inner).clone(), c1 * c, extents);
    }
    let lin = Linear::of(&a);
    // (g*B + S)//C -> B//(C/g) for g | C and 0 <= S < g; g = C is (i*C+j)//C -> i
    for g in divisors_desc(c) {
        if g == 1 {
            continue;
        }
        let (big, small) = lin.split_by(g);
        if big.terms.is_empty() && big.constant == 0 {
            continue;
        }
        if within(&small.clone().build(), extents, g) {
            let q = big.build();
            return if g == c { q } else { reduce_div(q, c / g, extents) };
        }
    }
    // (C*B + S)//C -> B + S//C
    let (big, small) = lin.split_by(c);
    if !big.terms.is_empty() || big.constant != 0 {
        let rest = small.build();
        let mut out = big;
        out.extend(Linear::of(&reduce_div(rest, c, extents)));
        return out.build();
    }
    IndexExpr::floor_div(a, c)
}

fn reduce_mod(a: IndexExpr, c: i64, extents: &[usize]) -> IndexExpr {
    if c == 1 {
        return IndexExpr::Const(0);
    }
    if within(&a, extents, c) {
        // i%C -> i when extent(i) <= C
        return a;
    }
    if let IndexExpr::Mod(inner, c1) = &a {
        if c1 % c == 0 {
            // i%Ca%Cb -> i%Cb when Ca%Cb == 0
            return reduce_mod((**inner).clone(), c, extents);
        }
    }
    let lin = Linear::of(&a);
    // (i*C + j)%C -> j%C
    let (_, rest) = lin.split_by(c);
    if within(&rest.clone().build(), extents, c) {
        return rest.build();
    }
    // (g*B + S)%C -> (B%(C/g))*g + S for g | C and 0 <= S < g
    for g in divisors_desc(c) {
        if g == 1 || g == c {
            continue;
        }
        let (big, small) = rest.split_by(g);
        if big.terms.is_empty() {
            continue;
        }
        if within(&small.clone().build(), extents, g) {
            let inner = reduce_mod(big.build(), c / g, extents);
            let mut out = Linear::of(&inner).scale(g);
            out.extend(small);
            return out.build();
        }
    }
    IndexExpr::modulo(rest.build(), c)
}

fn reduce_once(e: &IndexExpr, extents: &[usize]) -> IndexExpr {
    match e {
        IndexExpr::Var(_) | IndexExpr::Const(_) => e.clone(),
        IndexExpr::Add(a, b) => {
            let mut lin = Linear::of(&reduce_once(a, extents));
            lin.extend(Linear::of(&reduce_once(b, extents)));
            lin.build()
        }
        IndexExpr::Mul(a, c) => {
            if *c == 0 {
                return IndexExpr::Const(0);
            }
            Linear::of(&reduce_once(a, extents)).scale(*c).build()
        }
        IndexExpr::FloorDiv(a, c) => reduce_div(reduce_once(a, extents), *c, extents),
        IndexExpr::Mod(a, c) => reduce_mod(reduce_once(a, extents), *c, extents),
        IndexExpr::Lookup(t, a) => {
            let inner = reduce_once(a, extents);
            if let IndexExpr::Const(k) = inner {
                if let Some(&v) = usize::try_from(k).ok().and_then(|k| t.get(k)) {
                    return IndexExpr::Const(v);
                }
            }
            let r = inner.range(extents);
            let is_iota = r.lo >= 0
                && (r.hi as usize) < t.len()
                && (r.lo..=r.hi).all(|k| t[k as usize] == k);
            if is_iota {
                inner
            } else {
                IndexExpr::Lookup(t.clone(), Box::new(inner))
            }
        }
    }
}

/// Applies the strength-reduction rules to a fixpoint.
///
/// `extents[i]` is the extent of variable `o{i}`. The result is equal to
/// `expr` at every point of the domain and has no more `//`/`%` nodes.
pub fn strength_reduce(expr: &IndexExpr, extents: &[usize]) -> IndexExpr {
    let (reduced, _) = strength_reduce_counted(expr, extents);
    reduced
}

/// Like [`strength_reduce`], also returning the number of passes until the
/// fixpoint was observed.
pub fn strength_reduce_counted(expr: &IndexExpr, extents: &[usize]) -> (IndexExpr, usize) {
    let mut current = expr.clone();
    let mut passes = 0;
    for _ in 0..expr.node_count().max(1) {
        passes += 1;
        let next = reduce_once(&current, extents);
        if next == current {
            break;
        }
        current = next;
    }
    if current.divmod_count() > expr.divmod_count() {
        return (expr.clone(), passes);
    }
    (current, passes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::expr::IndexExpr as E;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn all_points(extents: &[usize]) -> Vec<Vec<i64>> {
        let shape = crate::shape::TensorShape::from_slice(extents);
        shape
            .indices()
            .map(|i| i.into_iter().map(|v| v as i64).collect())
            .collect()
    }

    fn assert_equivalent(a: &E, b: &E, extents: &[usize]) {
        for p in all_points(extents) {
            assert_eq!(a.eval(&p), b.eval(&p), "at {p:?}: {a} vs {b}");
        }
    }

    #[test]
    fn nested_mod_collapses_when_moduli_divide() {
        let e = E::modulo(E::modulo(E::var(0), 12), 4);
        let r = strength_reduce(&e, &[100]);
        assert_eq!(r, E::modulo(E::var(0), 4));
        assert_equivalent(&e, &r, &[100]);
    }

    #[test]
    fn nested_mod_kept_when_moduli_do_not_divide() {
        let e = E::modulo(E::modulo(E::var(0), 10), 4);
        let r = strength_reduce(&e, &[100]);
        assert_eq!(r.divmod_count(), 2);
        assert_equivalent(&e, &r, &[100]);
    }

    #[test]
    fn merged_split_divides_back_to_outer_var() {
        // (i*8 + j)//8 with j < 8, checked exhaustively over i<4, j<8
        let e = E::floor_div(E::add(E::mul(E::var(0), 8), E::var(1)), 8);
        let r = strength_reduce(&e, &[4, 8]);
        assert_eq!(r, E::var(0));
        assert_equivalent(&e, &r, &[4, 8]);
        let m = E::modulo(E::add(E::mul(E::var(0), 8), E::var(1)), 8);
        assert_eq!(strength_reduce(&m, &[4, 8]), E::var(1));
    }

    #[test]
    fn plain_variable_is_untouched() {
        assert_eq!(strength_reduce(&E::var(0), &[7]), E::var(0));
    }

    #[test]
    fn nested_division_merges() {
        let e = E::floor_div(E::floor_div(E::var(0), 3), 5);
        let r = strength_reduce(&e, &[200]);
        assert_eq!(r, E::floor_div(E::var(0), 15));
        assert_equivalent(&e, &r, &[200]);
    }

    #[test]
    fn small_extent_division_and_mod_vanish() {
        assert_eq!(strength_reduce(&E::floor_div(E::var(0), 8), &[8]), E::Const(0));
        assert_eq!(strength_reduce(&E::modulo(E::var(0), 8), &[8]), E::var(0));
    }

    #[test]
    fn gcd_split_reduces_partial_multiples() {
        // (o0*2 + o1)//4 with o1 < 2 -> o0//2
        let e = E::floor_div(E::add(E::mul(E::var(0), 2), E::var(1)), 4);
        let r = strength_reduce(&e, &[10, 2]);
        assert_eq!(r, E::floor_div(E::var(0), 2));
        assert_equivalent(&e, &r, &[10, 2]);
        // ((o0*2 + o1)%8)//2 -> o0%4
        let e2 = E::floor_div(E::modulo(E::add(E::mul(E::var(0), 2), E::var(1)), 8), 2);
        let r2 = strength_reduce(&e2, &[10, 2]);
        assert_eq!(r2, E::modulo(E::var(0), 4));
        assert_equivalent(&e2, &r2, &[10, 2]);
    }

    #[test]
    fn lookup_of_identity_table_disappears() {
        let t: Arc<[i64]> = vec![0, 1, 2, 3, 9].into();
        let e = E::lookup(t.clone(), E::var(0));
        assert_eq!(strength_reduce(&e, &[4]), E::var(0));
        assert_eq!(strength_reduce(&e, &[5]), e);
    }

    fn arb_expr(nvars: usize) -> impl Strategy<Value = E> {
        let leaf = prop_oneof![
            (0..nvars).prop_map(E::Var),
            (0i64..6).prop_map(E::Const),
        ];
        leaf.prop_recursive(5, 24, 2, |inner| {
            prop_oneof![
                (inner.clone(), inner.clone()).prop_map(|(a, b)| E::add(a, b)),
                (inner.clone(), 1i64..9).prop_map(|(a, c)| E::mul(a, c)),
                (inner.clone(), 1i64..13).prop_map(|(a, c)| E::floor_div(a, c)),
                (inner.clone(), 1i64..13).prop_map(|(a, c)| E::modulo(a, c)),
                inner.prop_map(|a| E::lookup(
                    Arc::from((0..200).map(|k| (k * 7) % 11).collect::<Vec<i64>>()),
                    E::modulo(a, 200)
                )),
            ]
        })
    }

    proptest! {
        #[test]
        fn reduction_is_sound_and_never_adds_divmod(
            e in arb_expr(3),
            ext in proptest::collection::vec(1usize..7, 3),
        ) {
            let (r, passes) = strength_reduce_counted(&e, &ext);
            prop_assert!(r.divmod_count() <= e.divmod_count());
            prop_assert!(passes <= e.node_count().max(1));
            for p in all_points(&ext) {
                prop_assert_eq!(e.eval(&p), r.eval(&p));
            }
            // fixpoint
            prop_assert_eq!(strength_reduce(&r, &ext), r);
        }
    }
}
