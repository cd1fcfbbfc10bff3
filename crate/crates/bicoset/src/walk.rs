//! Random walks driven by the product set and non-concentration diagnostics.
//!
//! A walk distribution lives on a full `GroupIndex`. Convolving with the
//! uniform measure on a generating multiset is one permutation-average per
//! generator, so stepping is O(|G| |S|). The l^2 norm of the l-step
//! distribution is the flattening curve; its floor is |G|^(-1/2), attained
//! exactly at uniformity.
//!
//! The subgroup families are the three kinds of large proper subgroups that
//! could swallow walk mass: upper-triangular stabilizers, and the
//! normalizers of the two torus types. Each family is materialized as every
//! conjugate, and `max_coset_mass` scans the full coset partition of each
//! one. `commutator_law_check` tests the identity [[h1,h2],[h3,h4]] = 1 that
//! holds inside any of these subgroups (their commutator subgroups are
//! abelian) but fails on the whole group.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::FieldCtx;
use crate::group::{self, GroupIndex, ProjMat};

/// A probability distribution aligned with a GroupIndex's element order.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution {
    pub probs: Vec<f64>,
}

fn kahan_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut s = 0.0f64;
    let mut c = 0.0f64;
    for v in values {
        let y = v - c;
        let t = s + y;
        c = (t - s) - y;
        s = t;
    }
    s
}

impl Distribution {
    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        kahan_sum(self.probs.iter().copied())
    }

    pub fn l2_norm(&self) -> f64 {
        kahan_sum(self.probs.iter().map(|&p| p * p)).sqrt()
    }

    pub fn max_mass(&self) -> f64 {
        self.probs.iter().fold(0.0f64, |m, &p| m.max(p))
    }
}

/// Uniform distribution on a list of distinct elements.
pub fn uniform_on(index: &GroupIndex, support: &[ProjMat]) -> Result<Distribution> {
    if support.is_empty() {
        return Err(Error::Precondition("empty support".into()));
    }
    let mut probs = vec![0.0f64; index.order()];
    let w = 1.0 / support.len() as f64;
    for m in support {
        let i = index
            .index_of(m)
            .ok_or_else(|| Error::Math(format!("{m:?} is not in the group index")))?;
        if probs[i as usize] != 0.0 {
            return Err(Error::Precondition("support has repeated elements".into()));
        }
        probs[i as usize] = w;
    }
    Ok(Distribution { probs })
}

/// Precomputed source-index tables for repeated convolution steps with a
/// fixed generator list: table_s[i] = index of s^-1 * g_i.
pub struct Convolver {
    tables: Vec<Vec<u32>>,
}

impl Convolver {
    pub fn new(ctx: &FieldCtx, index: &GroupIndex, gens: &[ProjMat]) -> Result<Self> {
        if gens.is_empty() {
            return Err(Error::Precondition("empty generator list".into()));
        }
        let mut tables = Vec::with_capacity(gens.len());
        for &s in gens {
            let s_inv = group::inv(ctx, s);
            let table: Result<Vec<u32>> = index
                .elements()
                .iter()
                .map(|&g| {
                    index
                        .index_of(&group::mul(ctx, s_inv, g))
                        .ok_or_else(|| Error::Math("generator left the group index".into()))
                })
                .collect();
            tables.push(table?);
        }
        Ok(Convolver { tables })
    }

    /// nu(g) = (1/|gens|) sum_s mu(s^-1 g).
    pub fn step(&self, mu: &Distribution) -> Distribution {
        let n = mu.len();
        let mut out = vec![0.0f64; n];
        let w = 1.0 / self.tables.len() as f64;
        for table in &self.tables {
            for (o, &src) in out.iter_mut().zip(table.iter()) {
                *o += mu.probs[src as usize];
            }
        }
        for o in &mut out {
            *o *= w;
        }
        Distribution { probs: out }
    }
}

/// One convolution step without keeping the tables.
pub fn convolve_step(
    ctx: &FieldCtx,
    index: &GroupIndex,
    mu: &Distribution,
    gens: &[ProjMat],
) -> Result<Distribution> {
    Ok(Convolver::new(ctx, index, gens)?.step(mu))
}

/// mu~(g) = (mu(g) + mu(g^-1)) / 2.
pub fn symmetrize(ctx: &FieldCtx, index: &GroupIndex, mu: &Distribution) -> Result<Distribution> {
    let mut out = vec![0.0f64; mu.len()];
    for (i, &g) in index.elements().iter().enumerate() {
        let j = index
            .index_of(&group::inv(ctx, g))
            .ok_or_else(|| Error::Math("index not closed under inversion".into()))? as usize;
        out[i] = 0.5 * (mu.probs[i] + mu.probs[j]);
    }
    Ok(Distribution { probs: out })
}

/// One sample point of the flattening curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlatteningPoint {
    pub l: u32,
    pub l2_norm: f64,
    /// l2_norm divided by the uniform floor |G|^(-1/2); tends to 1.
    pub uniform_ratio: f64,
}

/// l2 norms of the l-fold self-convolutions of the uniform measure on
/// `gens`, l = 1..=l_max.
pub fn flattening_curve(
    ctx: &FieldCtx,
    index: &GroupIndex,
    gens: &[ProjMat],
    l_max: u32,
) -> Result<Vec<FlatteningPoint>> {
    let conv = Convolver::new(ctx, index, gens)?;
    let sqrt_n = (index.order() as f64).sqrt();
    let mut mu = uniform_on(index, gens)?;
    let mut points = Vec::with_capacity(l_max as usize);
    for l in 1..=l_max {
        if l > 1 {
            mu = conv.step(&mu);
        }
        debug_assert!((mu.total_mass() - 1.0).abs() < 1e-9, "mass leak at step {l}");
        let l2 = mu.l2_norm();
        points.push(FlatteningPoint { l, l2_norm: l2, uniform_ratio: l2 * sqrt_n });
    }
    Ok(points)
}

// ---------------------------------------------------------------------------
// Subgroup families.
// ---------------------------------------------------------------------------

/// The three families of large proper subgroups tracked by the
/// non-concentration diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyKind {
    /// Stabilizers of projective points: upper-triangular matrices and their
    /// conjugates. Order p(p-1)/2, index p+1.
    Borel,
    /// Normalizer of the diagonal (split) torus: diagonal matrices plus the
    /// Weyl flip. Order p-1.
    SplitTorusNormalizer,
    /// Normalizer of the non-split torus. Order p+1.
    NonsplitTorusNormalizer,
}

impl FamilyKind {
    pub fn name(self) -> &'static str {
        match self {
            FamilyKind::Borel => "borel",
            FamilyKind::SplitTorusNormalizer => "split_torus_normalizer",
            FamilyKind::NonsplitTorusNormalizer => "nonsplit_torus_normalizer",
        }
    }
}

/// All conjugates of one subgroup, each as a sorted list of element indices.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubgroupFamily {
    pub name: String,
    pub subgroup_order: usize,
    pub conjugates: Vec<Vec<u32>>,
}

fn base_subgroup(ctx: &FieldCtx, kind: FamilyKind) -> Result<Vec<ProjMat>> {
    let p = ctx.p();
    let mut set: HashSet<ProjMat> = HashSet::new();
    match kind {
        FamilyKind::Borel => {
            for a in 1..p {
                let ainv = ctx.inv(a)?;
                for b in 0..p {
                    set.insert(group::canonicalize(ctx, a, b, 0, ainv));
                }
            }
        }
        FamilyKind::SplitTorusNormalizer => {
            let w0 = group::canonicalize(ctx, 0, ctx.neg(1), 1, 0);
            for a in 1..p {
                let t = group::canonicalize(ctx, a, 0, 0, ctx.inv(a)?);
                set.insert(t);
                set.insert(group::mul(ctx, w0, t));
            }
        }
        FamilyKind::NonsplitTorusNormalizer => {
            let torus = crate::subgroups::build_nonsplit_torus(ctx)?;
            let eps = ctx.find_nonresidue();
            // An inverting element [[x, y*eps], [-y, -x]] needs
            // x^2 - eps y^2 = -1; the norm form is onto, so a scan finds one.
            let mut k = None;
            'scan: for x in 0..p {
                for y in 0..p {
                    let norm = ctx.sub(ctx.mul(x, x), ctx.mul(eps, ctx.mul(y, y)));
                    if norm == ctx.neg(1) {
                        k = Some(group::canonicalize(
                            ctx,
                            x,
                            ctx.mul(y, eps),
                            ctx.neg(y),
                            ctx.neg(x),
                        ));
                        break 'scan;
                    }
                }
            }
            let k = k.ok_or_else(|| Error::Math("no torus-inverting element".into()))?;
            for &t in &torus.elements {
                set.insert(t);
                set.insert(group::mul(ctx, k, t));
            }
        }
    }
    let mut v: Vec<ProjMat> = set.into_iter().collect();
    v.sort_unstable();
    #[cfg(debug_assertions)]
    {
        let lookup: HashSet<ProjMat> = v.iter().copied().collect();
        for &a in &v {
            for &b in &v {
                debug_assert!(lookup.contains(&group::mul(ctx, a, b)), "not closed");
            }
        }
    }
    Ok(v)
}

/// Materializes every conjugate of the chosen subgroup, deduplicated, in
/// first-encounter order over the group enumeration.
pub fn build_subgroup_family(
    ctx: &FieldCtx,
    index: &GroupIndex,
    kind: FamilyKind,
) -> Result<SubgroupFamily> {
    let base = base_subgroup(ctx, kind)?;
    let mut seen: HashSet<Vec<u32>> = HashSet::new();
    let mut conjugates = Vec::new();
    for &g in index.elements() {
        let mut ids: Vec<u32> = Vec::with_capacity(base.len());
        for &u in &base {
            let c = group::conjugate(ctx, g, u);
            ids.push(
                index
                    .index_of(&c)
                    .ok_or_else(|| Error::Math("conjugate left the group index".into()))?,
            );
        }
        ids.sort_unstable();
        if seen.insert(ids.clone()) {
            conjugates.push(ids);
        }
    }
    Ok(SubgroupFamily {
        name: kind.name().to_string(),
        subgroup_order: base.len(),
        conjugates,
    })
}

/// Worst coset mass over a whole family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MassReport {
    pub family: String,
    pub subgroup_order: usize,
    pub conjugate_count: usize,
    pub max_mass: f64,
}

/// max over conjugates U and left cosets gU of mu(gU), by scanning the full
/// coset partition of each conjugate.
pub fn max_coset_mass(
    ctx: &FieldCtx,
    index: &GroupIndex,
    mu: &Distribution,
    family: &SubgroupFamily,
) -> Result<MassReport> {
    let n = index.order();
    if mu.len() != n {
        return Err(Error::Precondition(
            "distribution and index have different sizes".into(),
        ));
    }
    let mut max_mass = 0.0f64;
    let mut visited = vec![false; n];
    for ids in &family.conjugates {
        let members: Vec<ProjMat> = ids.iter().map(|&i| index.get(i)).collect();
        visited.fill(false);
        let mut covered = 0usize;
        for i in 0..n {
            if visited[i] {
                continue;
            }
            let g = index.get(i as u32);
            let mut mass = 0.0f64;
            for &u in &members {
                let j = index
                    .index_of(&group::mul(ctx, g, u))
                    .ok_or_else(|| Error::Math("coset left the group index".into()))?
                    as usize;
                debug_assert!(!visited[j], "left cosets must partition the group");
                visited[j] = true;
                covered += 1;
                mass += mu.probs[j];
            }
            max_mass = max_mass.max(mass);
        }
        debug_assert_eq!(covered, n);
    }
    Ok(MassReport {
        family: family.name.clone(),
        subgroup_order: family.subgroup_order,
        conjugate_count: family.conjugates.len(),
        max_mass,
    })
}

/// Result of sampling the two-level commutator law [[h1,h2],[h3,h4]] = 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommutatorLawReport {
    pub trials: u64,
    pub violations: u64,
    pub holds: bool,
    pub first_violation: Option<[ProjMat; 4]>,
}

/// Samples 4-tuples from `members` and evaluates the nested commutator.
/// Subgroups with abelian commutator subgroup satisfy the law identically;
/// the full group does not.
pub fn commutator_law_check(
    ctx: &FieldCtx,
    members: &[ProjMat],
    trials: u64,
    seed: u64,
) -> Result<CommutatorLawReport> {
    if members.is_empty() {
        return Err(Error::Precondition("empty member list".into()));
    }
    let comm = |a: ProjMat, b: ProjMat| {
        group::mul(
            ctx,
            group::mul(ctx, a, b),
            group::mul(ctx, group::inv(ctx, a), group::inv(ctx, b)),
        )
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut violations = 0u64;
    let mut first_violation = None;
    for _ in 0..trials {
        let pick: [ProjMat; 4] =
            std::array::from_fn(|_| members[rng.gen_range(0..members.len())]);
        let outer = comm(comm(pick[0], pick[1]), comm(pick[2], pick[3]));
        if outer != group::identity() {
            violations += 1;
            if first_violation.is_none() {
                first_violation = Some(pick);
            }
        }
    }
    Ok(CommutatorLawReport {
        trials,
        violations,
        holds: violations == 0,
        first_violation,
    })
}
