//! Arithmetic in the prime field F_p and polynomials over it.
//!
//! Elements are plain `u64` values kept in `[0, p)`. The context holds the
//! modulus; p is restricted to odd primes below 2^31 so that any product of
//! two reduced elements fits in a `u64` without overflow.

use crate::error::{Error, Result};

/// A reduced residue mod p. Every operation returns values in `[0, p)`.
pub type FpElem = u64;

/// Largest admissible modulus (exclusive). Keeps products inside u64.
pub const MAX_P: u64 = 1 << 31;

/// Deterministic Miller-Rabin, valid for all n < 3_215_031_751 with the base
/// set {2, 3, 5, 7}. Our moduli are far below that.
pub fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    for q in [2u64, 3, 5, 7] {
        if n == q {
            return true;
        }
        if n % q == 0 {
            return false;
        }
    }
    let mut d = n - 1;
    let mut s = 0u32;
    while d % 2 == 0 {
        d /= 2;
        s += 1;
    }
    'witness: for a in [2u64, 3, 5, 7] {
        let mut x = powmod(a, d, n);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..s {
            x = mulmod(x, x, n);
            if x == n - 1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

fn mulmod(a: u64, b: u64, m: u64) -> u64 {
    ((a as u128 * b as u128) % m as u128) as u64
}

fn powmod(mut base: u64, mut exp: u64, m: u64) -> u64 {
    let mut acc = 1u64;
    base %= m;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = mulmod(acc, base, m);
        }
        base = mulmod(base, base, m);
        exp >>= 1;
    }
    acc
}

/// The field F_p for an odd prime 5 <= p < 2^31.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FieldCtx {
    p: u64,
}

impl FieldCtx {
    pub fn new(p: u64) -> Result<Self> {
        if p < 5 || p >= MAX_P {
            return Err(Error::Precondition(format!(
                "p = {p} out of range [5, 2^31)"
            )));
        }
        if !is_prime(p) {
            return Err(Error::Precondition(format!("p = {p} is not prime")));
        }
        Ok(FieldCtx { p })
    }

    #[inline]
    pub fn p(&self) -> u64 {
        self.p
    }

    #[inline]
    pub fn reduce(&self, a: u64) -> FpElem {
        a % self.p
    }

    /// Reduce a possibly negative integer.
    pub fn reduce_i64(&self, a: i64) -> FpElem {
        let p = self.p as i64;
        (((a % p) + p) % p) as u64
    }

    #[inline]
    pub fn add(&self, a: FpElem, b: FpElem) -> FpElem {
        debug_assert!(a < self.p && b < self.p);
        let s = a + b;
        if s >= self.p {
            s - self.p
        } else {
            s
        }
    }

    #[inline]
    pub fn sub(&self, a: FpElem, b: FpElem) -> FpElem {
        debug_assert!(a < self.p && b < self.p);
        if a >= b {
            a - b
        } else {
            a + self.p - b
        }
    }

    #[inline]
    pub fn neg(&self, a: FpElem) -> FpElem {
        debug_assert!(a < self.p);
        if a == 0 {
            0
        } else {
            self.p - a
        }
    }

    #[inline]
    pub fn mul(&self, a: FpElem, b: FpElem) -> FpElem {
        debug_assert!(a < self.p && b < self.p);
        // a, b < 2^31 so the product fits in u64.
        (a * b) % self.p
    }

    pub fn pow(&self, mut base: FpElem, mut exp: u64) -> FpElem {
        let mut acc = 1u64;
        base %= self.p;
        while exp > 0 {
            if exp & 1 == 1 {
                acc = self.mul(acc, base);
            }
            base = self.mul(base, base);
            exp >>= 1;
        }
        acc
    }

    /// Multiplicative inverse via Fermat. Inverting zero is an error.
    pub fn inv(&self, a: FpElem) -> Result<FpElem> {
        if a == 0 {
            return Err(Error::Math("inverse of zero".into()));
        }
        Ok(self.pow(a, self.p - 2))
    }

    /// Legendre symbol (a|p) as -1, 0, +1, computed by Euler's criterion.
    pub fn legendre(&self, a: FpElem) -> i32 {
        let a = self.reduce(a);
        if a == 0 {
            return 0;
        }
        let e = self.pow(a, (self.p - 1) / 2);
        if e == 1 {
            1
        } else {
            debug_assert_eq!(e, self.p - 1);
            -1
        }
    }

    /// Smallest quadratic non-residue. Exists for every odd prime; the scan
    /// terminates well before p.
    pub fn find_nonresidue(&self) -> FpElem {
        (2..self.p)
            .find(|&a| self.legendre(a) == -1)
            .expect("odd prime field has a non-residue")
    }
}

/// Polynomial over F_p, dense coefficients, constant term first. Invariant:
/// no trailing zero coefficient, so the zero polynomial is the empty vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FpPoly {
    coeffs: Vec<FpElem>,
}

impl FpPoly {
    pub fn zero() -> Self {
        FpPoly { coeffs: Vec::new() }
    }

    pub fn constant(ctx: &FieldCtx, c: FpElem) -> Self {
        Self::from_coeffs(ctx, vec![c])
    }

    /// Builds a polynomial, reducing coefficients and trimming trailing zeros.
    pub fn from_coeffs(ctx: &FieldCtx, mut coeffs: Vec<u64>) -> Self {
        for c in coeffs.iter_mut() {
            *c = ctx.reduce(*c);
        }
        while coeffs.last() == Some(&0) {
            coeffs.pop();
        }
        FpPoly { coeffs }
    }

    pub fn coeffs(&self) -> &[FpElem] {
        &self.coeffs
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// Degree, or None for the zero polynomial.
    pub fn degree(&self) -> Option<usize> {
        self.coeffs.len().checked_sub(1)
    }

    pub fn leading_coeff(&self) -> Option<FpElem> {
        self.coeffs.last().copied()
    }

    /// Coefficient of x^k (zero beyond the stored degree).
    pub fn coeff(&self, k: usize) -> FpElem {
        self.coeffs.get(k).copied().unwrap_or(0)
    }

    pub fn add(&self, ctx: &FieldCtx, other: &FpPoly) -> FpPoly {
        let n = self.coeffs.len().max(other.coeffs.len());
        let mut out = Vec::with_capacity(n);
        for k in 0..n {
            out.push(ctx.add(self.coeff(k), other.coeff(k)));
        }
        while out.last() == Some(&0) {
            out.pop();
        }
        FpPoly { coeffs: out }
    }

    pub fn sub(&self, ctx: &FieldCtx, other: &FpPoly) -> FpPoly {
        let n = self.coeffs.len().max(other.coeffs.len());
        let mut out = Vec::with_capacity(n);
        for k in 0..n {
            out.push(ctx.sub(self.coeff(k), other.coeff(k)));
        }
        while out.last() == Some(&0) {
            out.pop();
        }
        FpPoly { coeffs: out }
    }

    pub fn neg(&self, ctx: &FieldCtx) -> FpPoly {
        FpPoly {
            coeffs: self.coeffs.iter().map(|&c| ctx.neg(c)).collect(),
        }
    }

    pub fn scale(&self, ctx: &FieldCtx, s: FpElem) -> FpPoly {
        if s == 0 {
            return FpPoly::zero();
        }
        FpPoly {
            coeffs: self.coeffs.iter().map(|&c| ctx.mul(c, s)).collect(),
        }
    }

    pub fn mul(&self, ctx: &FieldCtx, other: &FpPoly) -> FpPoly {
        if self.is_zero() || other.is_zero() {
            return FpPoly::zero();
        }
        let mut out = vec![0u64; self.coeffs.len() + other.coeffs.len() - 1];
        for (i, &a) in self.coeffs.iter().enumerate() {
            if a == 0 {
                continue;
            }
            for (j, &b) in other.coeffs.iter().enumerate() {
                out[i + j] = ctx.add(out[i + j], ctx.mul(a, b));
            }
        }
        while out.last() == Some(&0) {
            out.pop();
        }
        FpPoly { coeffs: out }
    }

    /// Horner evaluation.
    pub fn eval(&self, ctx: &FieldCtx, x: FpElem) -> FpElem {
        let x = ctx.reduce(x);
        let mut acc = 0u64;
        for &c in self.coeffs.iter().rev() {
            acc = ctx.add(ctx.mul(acc, x), c);
        }
        acc
    }

    /// All roots in F_p by exhaustive evaluation. The zero polynomial has
    /// every point as a root and is rejected as an error.
    pub fn roots(&self, ctx: &FieldCtx) -> Result<Vec<FpElem>> {
        if self.is_zero() {
            return Err(Error::Math("roots of the zero polynomial".into()));
        }
        Ok((0..ctx.p()).filter(|&x| self.eval(ctx, x) == 0).collect())
    }
}
