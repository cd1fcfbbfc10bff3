//! The group PSL_2(F_p).
//!
//! An element is a determinant-1 matrix [[a,b],[c,d]] over F_p modulo sign.
//! The canonical representative of {M, -M} is the one whose entry tuple
//! (a, b, c, d) is lexicographically smaller; every operation returns
//! canonical values, so equality, hashing and ordering are plain derives.
//! The same representative doubles as the fixed SL_2 lift wherever a lift is
//! needed (trace polynomials, sieve systems).

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{FieldCtx, FpElem};

/// Element of PSL_2(F_p) in canonical (sign-normalized) form.
/// Entries fit in u32 because p < 2^31.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ProjMat {
    pub a: u32,
    pub b: u32,
    pub c: u32,
    pub d: u32,
}

impl ProjMat {
    /// Validated constructor: reduces entries, checks det = 1, canonicalizes.
    pub fn new(ctx: &FieldCtx, a: u64, b: u64, c: u64, d: u64) -> Result<Self> {
        let (a, b, c, d) = (ctx.reduce(a), ctx.reduce(b), ctx.reduce(c), ctx.reduce(d));
        let det = ctx.sub(ctx.mul(a, d), ctx.mul(b, c));
        if det != 1 {
            return Err(Error::Math(format!(
                "matrix ({a},{b},{c},{d}) has determinant {det} != 1 mod {}",
                ctx.p()
            )));
        }
        Ok(canonicalize(ctx, a, b, c, d))
    }

    pub fn entries(&self) -> [u64; 4] {
        [self.a as u64, self.b as u64, self.c as u64, self.d as u64]
    }
}

/// The identity of PSL_2 (canonical for every p since (1,0,0,1) < (p-1,0,0,p-1)).
pub fn identity() -> ProjMat {
    ProjMat { a: 1, b: 0, c: 0, d: 1 }
}

/// Sign-normalizes reduced entries: picks the lexicographically smaller of
/// (a,b,c,d) and its negation. Assumes the entries are already reduced and
/// the determinant is 1; this is the hot path under every product.
pub fn canonicalize(ctx: &FieldCtx, a: FpElem, b: FpElem, c: FpElem, d: FpElem) -> ProjMat {
    debug_assert!(
        ctx.sub(ctx.mul(a, d), ctx.mul(b, c)) == 1,
        "canonicalize needs det 1, got ({a},{b},{c},{d}) mod {}",
        ctx.p()
    );
    let neg = (ctx.neg(a), ctx.neg(b), ctx.neg(c), ctx.neg(d));
    if (a, b, c, d) <= neg {
        ProjMat { a: a as u32, b: b as u32, c: c as u32, d: d as u32 }
    } else {
        ProjMat { a: neg.0 as u32, b: neg.1 as u32, c: neg.2 as u32, d: neg.3 as u32 }
    }
}

pub fn mul(ctx: &FieldCtx, g: ProjMat, h: ProjMat) -> ProjMat {
    let [a, b, c, d] = g.entries();
    let [e, f, gg, hh] = h.entries();
    canonicalize(
        ctx,
        ctx.add(ctx.mul(a, e), ctx.mul(b, gg)),
        ctx.add(ctx.mul(a, f), ctx.mul(b, hh)),
        ctx.add(ctx.mul(c, e), ctx.mul(d, gg)),
        ctx.add(ctx.mul(c, f), ctx.mul(d, hh)),
    )
}

/// Inverse via the adjugate; no division because det = 1.
pub fn inv(ctx: &FieldCtx, g: ProjMat) -> ProjMat {
    let [a, b, c, d] = g.entries();
    canonicalize(ctx, d, ctx.neg(b), ctx.neg(c), a)
}

/// g h g^-1.
pub fn conjugate(ctx: &FieldCtx, g: ProjMat, h: ProjMat) -> ProjMat {
    mul(ctx, mul(ctx, g, h), inv(ctx, g))
}

/// The unipotent u(x) = [[1, x], [0, 1]] mod sign.
pub fn unipotent(ctx: &FieldCtx, x: FpElem) -> ProjMat {
    canonicalize(ctx, 1, ctx.reduce(x), 0, 1)
}

/// Trace up to sign, reported as the canonical class representative
/// min(t, p - t). Well defined on PSL_2.
pub fn trace_pm(ctx: &FieldCtx, g: ProjMat) -> FpElem {
    let t = ctx.add(g.a as u64, g.d as u64);
    t.min(ctx.neg(t))
}

/// Whether Tr(g) = +-2, i.e. whether g is unipotent or the identity.
pub fn trace_is_pm2(ctx: &FieldCtx, g: ProjMat) -> bool {
    trace_pm(ctx, g) == 2.min(ctx.neg(2))
}

/// Order of g by iterated multiplication. Every order in PSL_2(F_p) divides
/// p, (p-1)/2 or (p+1)/2, so the loop terminates within p+1 steps; running
/// past that cap means a corrupted element and is an internal error.
pub fn element_order(ctx: &FieldCtx, g: ProjMat) -> Result<u64> {
    let e = identity();
    let mut h = g;
    let mut n = 1u64;
    while h != e {
        h = mul(ctx, h, g);
        n += 1;
        if n > ctx.p() + 1 {
            return Err(Error::Math(format!("order of {g:?} exceeds p+1")));
        }
    }
    Ok(n)
}

/// |PSL_2(F_p)| = p(p^2 - 1)/2.
pub fn group_order(p: u64) -> u64 {
    p * (p * p - 1) / 2
}

/// Full enumeration of PSL_2(F_p) with positional lookup, used by the dense
/// spectral and walk computations.
#[derive(Debug, Clone)]
pub struct GroupIndex {
    elements: Vec<ProjMat>,
    pos: HashMap<ProjMat, u32>,
}

/// Default cap on |G| for dense enumeration (about 320 MB of index).
pub const DEFAULT_GROUP_CAP: u64 = 20_000_000;

/// Enumerates all of PSL_2(F_p) by direct parameter scan: for c != 0 the
/// triple (a, c, d) is free and b = (ad - 1)/c; for c = 0, a != 0 forces
/// d = a^-1 with b free. Each PSL_2 element is produced by exactly two SL_2
/// matrices and deduplicated through the canonical form.
pub fn enumerate_group(ctx: &FieldCtx, cap: u64) -> Result<GroupIndex> {
    let p = ctx.p();
    let order = group_order(p);
    if order > cap {
        return Err(Error::Resource(format!(
            "|PSL_2(F_{p})| = {order} exceeds enumeration cap {cap}"
        )));
    }
    let mut elements = Vec::with_capacity(order as usize);
    let mut pos: HashMap<ProjMat, u32> = HashMap::with_capacity(2 * order as usize);
    let mut push = |m: ProjMat, elements: &mut Vec<ProjMat>| {
        if let std::collections::hash_map::Entry::Vacant(v) = pos.entry(m) {
            v.insert(elements.len() as u32);
            elements.push(m);
        }
    };
    for a in 0..p {
        for c in 1..p {
            let cinv = ctx.inv(c).expect("c != 0");
            for d in 0..p {
                let b = ctx.mul(ctx.sub(ctx.mul(a, d), 1), cinv);
                push(canonicalize(ctx, a, b, c, d), &mut elements);
            }
        }
    }
    for a in 1..p {
        let d = ctx.inv(a).expect("a != 0");
        for b in 0..p {
            push(canonicalize(ctx, a, b, 0, d), &mut elements);
        }
    }
    debug_assert_eq!(elements.len() as u64, order);
    Ok(GroupIndex { elements, pos })
}

impl GroupIndex {
    pub fn order(&self) -> usize {
        self.elements.len()
    }

    pub fn elements(&self) -> &[ProjMat] {
        &self.elements
    }

    pub fn get(&self, i: u32) -> ProjMat {
        self.elements[i as usize]
    }

    pub fn index_of(&self, m: &ProjMat) -> Option<u32> {
        self.pos.get(m).copied()
    }
}
