//! End-to-end runs: find a conjugation parameter, verify one pair at desk
//! scale, or sweep a prime range.
//!
//! Verification is phased (pair, girth, spectral, walk) and degrades
//! gracefully: a phase that hits a resource cap is recorded as skipped and
//! the report stays partial instead of failing. Genuine errors (bad inputs,
//! broken invariants) still propagate.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::cosetgraph::{build_graph, girth_lower_bound_algebraic};
use crate::error::{Error, Result};
use crate::field::{is_prime, FieldCtx};
use crate::group::{self, GroupIndex};
use crate::spectral::{
    convexity_bound, operator_norm_l20, verify_coset2cayley, BipartiteOperator, CayleyOperator,
    NormParams, SpectralReport, DEFAULT_DENSE_CAP, DEFAULT_MAX_ITER, DEFAULT_NORM_TOL,
};
use crate::subgroups::{
    build_nonsplit_torus, check_word_condition, double_commutator_word, make_pair,
    product_free_depth, sieve_bad_x, subgroup_of_order, CheckMode, CyclicSubgroup,
    PairCertificate, SieveOutcome, WordCheckMode, DEFAULT_TUPLE_BUDGET,
};
use crate::walk::{
    build_subgroup_family, flattening_curve, max_coset_mass, uniform_on, Convolver, FamilyKind,
    FlatteningPoint,
};

/// Word rank of the default sieve word; the depth formulas depend on it.
pub const WORD_RANK: usize = 8;

/// Loop depth L1 with the growth rate the cardinality count dictates:
/// floor(log p / (2.1 log(d-1))), at least 1.
pub fn default_l1(p: u64, d: u64) -> u32 {
    let v = ((p as f64).ln() / (2.1 * ((d - 1) as f64).ln())).floor();
    (v as u32).max(1)
}

/// Word depth L2: floor(log p / (2.1 r log(d-1))). Zero at desk scale.
pub fn default_l2(p: u64, d: u64, r: usize) -> u32 {
    ((p as f64).ln() / (2.1 * r as f64 * ((d - 1) as f64).ln())).floor() as u32
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SearchMode {
    /// Try x = 1, 2, ... with direct group-level checks.
    Scan,
    /// Exclude candidates by the trace-polynomial sieve, then certify the
    /// first survivor.
    Sieve,
    /// Direct checks on a seeded random order of candidates.
    Random,
}

impl std::str::FromStr for SearchMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "scan" => Ok(SearchMode::Scan),
            "sieve" => Ok(SearchMode::Sieve),
            "random" => Ok(SearchMode::Random),
            other => Err(format!("unknown mode '{other}' (scan|sieve|random)")),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchCensus {
    pub candidates_tried: u64,
    pub rejected_intersection: u64,
    pub rejected_loop: u64,
    pub rejected_word: u64,
}

impl SearchCensus {
    pub fn rejected_total(&self) -> u64 {
        self.rejected_intersection + self.rejected_loop + self.rejected_word
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub p: u64,
    pub d: u64,
    pub mode: SearchMode,
    pub l1: u32,
    pub l2: u32,
    pub census: SearchCensus,
    pub sieve: Option<SieveOutcome>,
    /// The accepted parameter and its certificate, absent when every
    /// candidate failed.
    pub found: Option<(u64, PairCertificate)>,
}

#[derive(Debug, Clone, Copy)]
pub struct SearchParams {
    pub mode: SearchMode,
    pub l1: Option<u32>,
    pub l2: Option<u32>,
    pub budget: u64,
    pub seed: u64,
    pub threads: usize,
}

impl Default for SearchParams {
    fn default() -> Self {
        SearchParams {
            mode: SearchMode::Sieve,
            l1: None,
            l2: None,
            budget: DEFAULT_TUPLE_BUDGET,
            seed: 0,
            threads: 1,
        }
    }
}

/// d >= 3 and d | (p+1)/2; returns the order-d subgroup of the non-split
/// torus.
pub fn build_subgroup(ctx: &FieldCtx, d: u64) -> Result<CyclicSubgroup> {
    if d < 3 {
        return Err(Error::Precondition(format!("d must be at least 3, got {d}")));
    }
    let torus = build_nonsplit_torus(ctx)?;
    subgroup_of_order(ctx, &torus, d)
}

/// Runs the direct acceptance checks for one candidate x. Ok(Some) means
/// accepted; Ok(None) means rejected with the census updated.
fn try_candidate(
    ctx: &FieldCtx,
    h: &CyclicSubgroup,
    x: u64,
    l1: u32,
    l2: u32,
    budget: u64,
    threads: usize,
    census: &mut SearchCensus,
) -> Result<Option<PairCertificate>> {
    census.candidates_tried += 1;
    let mut cert = match make_pair(ctx, h, x) {
        Ok(c) => c,
        Err(Error::PairRejected { .. }) => {
            census.rejected_intersection += 1;
            return Ok(None);
        }
        Err(e) => return Err(e),
    };
    let depth = product_free_depth(ctx, &cert, l1);
    if depth < l1 {
        census.rejected_loop += 1;
        return Ok(None);
    }
    cert.checked_no_loop_depth = depth;
    let w = double_commutator_word();
    for l in 1..=l2 {
        let rep = check_word_condition(ctx, &cert, &w, l, CheckMode::Exhaustive, budget, threads, 0)?;
        if !rep.holds {
            census.rejected_word += 1;
            return Ok(None);
        }
    }
    cert.word_check = WordCheckMode::Exhaustive { depth: l2 };
    Ok(Some(cert))
}

/// Finds the smallest acceptable x (in the chosen candidate order).
pub fn run_search(ctx: &FieldCtx, d: u64, params: &SearchParams) -> Result<SearchOutcome> {
    let h = build_subgroup(ctx, d)?;
    let p = ctx.p();
    let l1 = params.l1.unwrap_or_else(|| default_l1(p, d));
    let l2 = params.l2.unwrap_or_else(|| default_l2(p, d, WORD_RANK));
    let mut census = SearchCensus::default();
    let mut sieve_outcome = None;

    let found = match params.mode {
        SearchMode::Scan => {
            let mut found = None;
            for x in 1..p {
                if let Some(cert) =
                    try_candidate(ctx, &h, x, l1, l2, params.budget, params.threads, &mut census)?
                {
                    found = Some((x, cert));
                    break;
                }
            }
            found
        }
        SearchMode::Random => {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut order: Vec<u64> = (1..p).collect();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(params.seed);
            order.shuffle(&mut rng);
            let mut found = None;
            for x in order {
                if let Some(cert) =
                    try_candidate(ctx, &h, x, l1, l2, params.budget, params.threads, &mut census)?
                {
                    found = Some((x, cert));
                    break;
                }
            }
            found
        }
        SearchMode::Sieve => {
            let w = double_commutator_word();
            let sieve = sieve_bad_x(ctx, &h, l1, l2, &w, params.budget, params.threads)?;
            let mut found = None;
            for x in 1..p {
                if sieve.bad.contains(&x) {
                    continue;
                }
                census.candidates_tried += 1;
                // The sieve already certifies these; make_pair and the depth
                // check are cheap cross-confirmation while building the
                // certificate.
                let mut cert = match make_pair(ctx, &h, x) {
                    Ok(c) => c,
                    Err(Error::PairRejected { .. }) => {
                        census.rejected_intersection += 1;
                        continue;
                    }
                    Err(e) => return Err(e),
                };
                let depth = product_free_depth(ctx, &cert, l1);
                if depth < l1 {
                    census.rejected_loop += 1;
                    continue;
                }
                cert.checked_no_loop_depth = depth;
                cert.word_check = WordCheckMode::Sieved { depth: l2 };
                found = Some((x, cert));
                break;
            }
            sieve_outcome = Some(sieve);
            found
        }
    };
    Ok(SearchOutcome {
        p,
        d,
        mode: params.mode,
        l1,
        l2,
        census,
        sieve: sieve_outcome,
        found,
    })
}

// ---------------------------------------------------------------------------
// Verification.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct VerifyParams {
    pub p: u64,
    pub d: u64,
    pub x: Option<u64>,
    pub mode: SearchMode,
    pub l1: Option<u32>,
    pub l2: Option<u32>,
    pub tol: f64,
    pub max_iter: u64,
    pub dense_cap: usize,
    pub group_cap: u64,
    pub walk_steps: u32,
    pub budget: u64,
    pub seed: u64,
    pub threads: usize,
}

impl VerifyParams {
    pub fn new(p: u64, d: u64) -> Self {
        VerifyParams {
            p,
            d,
            x: None,
            mode: SearchMode::Sieve,
            l1: None,
            l2: None,
            tol: DEFAULT_NORM_TOL,
            max_iter: DEFAULT_MAX_ITER,
            dense_cap: DEFAULT_DENSE_CAP,
            group_cap: group::DEFAULT_GROUP_CAP,
            walk_steps: 100,
            budget: DEFAULT_TUPLE_BUDGET,
            seed: 0,
            threads: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedPhase {
    pub phase: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkSummary {
    /// First l with l2 norm within 1.5x of the uniform floor.
    pub mix_in_step: Option<u32>,
    pub final_l2_norm: f64,
    pub final_uniform_ratio: f64,
    /// Largest mass any coset of any point stabilizer carries at l = 10.
    pub borel_max_coset_mass_l10: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerifyReport {
    pub p: u64,
    pub d: u64,
    pub x: u64,
    pub group_order: u64,
    pub cosets_per_side: u64,
    pub l1: u32,
    pub l2: u32,
    pub intersection_trivial: bool,
    /// Verified loop-free depth (equals l1 unless x was forced).
    pub product_free_depth: u32,
    pub word_condition_holds: Option<bool>,
    pub word_check: WordCheckMode,
    pub girth: Option<u32>,
    pub connected: Option<bool>,
    pub girth_algebraic_bound: u32,
    /// girth * log(d-1) / log|G|; the asymptotic yardstick, just reported.
    pub girth_theorem_ratio: Option<f64>,
    pub spectral: Option<SpectralReport>,
    pub coset2cayley_ok: Option<bool>,
    pub convexity_ok: Option<bool>,
    pub walk: Option<WalkSummary>,
    pub timings_ms: BTreeMap<String, f64>,
    pub skipped: Vec<SkippedPhase>,
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Report plus the bulky artifacts the report only summarizes.
#[derive(Debug, Clone)]
pub struct VerifyOutput {
    pub report: VerifyReport,
    pub flattening: Option<Vec<FlatteningPoint>>,
}

/// Full desk-scale verification of one pair. Resource caps skip phases;
/// everything else is an error.
pub fn run_verify(params: &VerifyParams) -> Result<VerifyReport> {
    run_verify_full(params).map(|o| o.report)
}

pub fn run_verify_full(params: &VerifyParams) -> Result<VerifyOutput> {
    let ctx = FieldCtx::new(params.p)?;
    let p = params.p;
    let d = params.d;
    let h = build_subgroup(&ctx, d)?;
    let l1 = params.l1.unwrap_or_else(|| default_l1(p, d));
    let l2 = params.l2.unwrap_or_else(|| default_l2(p, d, WORD_RANK));
    let mut timings: BTreeMap<String, f64> = BTreeMap::new();
    let mut skipped: Vec<SkippedPhase> = Vec::new();

    // Phase: pair (search or direct construction at the forced x).
    let t = Instant::now();
    let (x, cert, word_condition_holds) = match params.x {
        Some(x) => {
            let mut cert = make_pair(&ctx, &h, x)?;
            let depth = product_free_depth(&ctx, &cert, l1);
            cert.checked_no_loop_depth = depth;
            let w = double_commutator_word();
            let mut holds = Some(true);
            let mut checked = 0u32;
            for l in 1..=l2 {
                match check_word_condition(
                    &ctx,
                    &cert,
                    &w,
                    l,
                    CheckMode::Exhaustive,
                    params.budget,
                    params.threads,
                    params.seed,
                ) {
                    Ok(rep) => {
                        holds = Some(holds.unwrap_or(true) && rep.holds);
                        checked = l;
                    }
                    Err(Error::Resource(reason)) => {
                        skipped.push(SkippedPhase {
                            phase: format!("word_check_l{l}"),
                            reason,
                        });
                        if checked == 0 && l2 > 0 {
                            holds = None;
                        }
                        break;
                    }
                    Err(e) => return Err(e),
                }
            }
            cert.word_check = WordCheckMode::Exhaustive { depth: checked };
            (x, cert, holds)
        }
        None => {
            let sp = SearchParams {
                mode: params.mode,
                l1: Some(l1),
                l2: Some(l2),
                budget: params.budget,
                seed: params.seed,
                threads: params.threads,
            };
            let outcome = run_search(&ctx, d, &sp)?;
            match outcome.found {
                Some((x, cert)) => (x, cert, Some(true)),
                None => {
                    let sieved = outcome.sieve.map(|s| s.bad.len()).unwrap_or(0);
                    return Err(Error::Exhausted {
                        p,
                        bad_count: sieved.max(outcome.census.rejected_total() as usize),
                    });
                }
            }
        }
    };
    timings.insert("pair".into(), ms_since(t));

    // Phase: girth.
    let t = Instant::now();
    let mut girth = None;
    let mut connected = None;
    let mut graph = None;
    match build_graph(&ctx, &cert, params.group_cap) {
        Ok(g) => {
            let rep = g.girth();
            girth = rep.girth;
            connected = Some(rep.connected);
            graph = Some(g);
        }
        Err(Error::Resource(reason)) => skipped.push(SkippedPhase { phase: "girth".into(), reason }),
        Err(e) => return Err(e),
    }
    timings.insert("girth".into(), ms_since(t));

    let group_order = group::group_order(p);
    let girth_algebraic_bound = girth_lower_bound_algebraic(cert.checked_no_loop_depth);
    let girth_theorem_ratio =
        girth.map(|g| g as f64 * ((d - 1) as f64).ln() / (group_order as f64).ln());

    // Phase: spectral. Needs the graph and a full group index.
    let t = Instant::now();
    let mut spectral = None;
    let mut coset2cayley_ok = None;
    let mut convexity_ok = None;
    let mut index: Option<GroupIndex> = None;
    if let Some(graph) = &graph {
        match group::enumerate_group(&ctx, params.group_cap) {
            Ok(idx) => {
                let np = NormParams {
                    tol: params.tol,
                    max_iter: params.max_iter,
                    restarts: 3,
                    seed: params.seed,
                    dense_cap: params.dense_cap,
                };
                let bop = BipartiteOperator::new(graph)?;
                let nb = operator_norm_l20(&bop, &np);
                let op_s = CayleyOperator::new(&ctx, &idx, &cert.s)?;
                let ns = operator_norm_l20(&op_s, &np);
                let op_s0 = CayleyOperator::new(&ctx, &idx, &cert.s0)?;
                let ns0 = operator_norm_l20(&op_s0, &np);
                let method = if nb.method == ns.method && ns.method == ns0.method {
                    nb.method.clone()
                } else {
                    "mixed".into()
                };
                spectral = Some(SpectralReport {
                    norm_bipartite_a0: nb.value,
                    norm_cayley_s_a0: ns.value,
                    norm_cayley_s0_a0: ns0.value,
                    method,
                    iterations: nb.iterations + ns.iterations + ns0.iterations,
                    residual: nb.residual.max(ns.residual).max(ns0.residual),
                });
                coset2cayley_ok = Some(verify_coset2cayley(nb.value, ns.value, 1e-8));
                convexity_ok = Some(ns.value <= convexity_bound(d, ns0.value) + 1e-8);
                index = Some(idx);
            }
            Err(Error::Resource(reason)) => {
                skipped.push(SkippedPhase { phase: "spectral".into(), reason })
            }
            Err(e) => return Err(e),
        }
    } else {
        skipped.push(SkippedPhase {
            phase: "spectral".into(),
            reason: "graph construction was skipped".into(),
        });
    }
    timings.insert("spectral".into(), ms_since(t));

    // Phase: walk.
    let t = Instant::now();
    let mut walk = None;
    let mut flattening = None;
    if params.walk_steps == 0 {
        skipped.push(SkippedPhase { phase: "walk".into(), reason: "walk_steps = 0".into() });
    } else if let Some(idx) = &index {
        let curve = flattening_curve(&ctx, idx, &cert.s0, params.walk_steps)?;
        let mix_in_step = curve.iter().find(|pt| pt.uniform_ratio <= 1.5).map(|pt| pt.l);
        let last = curve.last().expect("walk_steps >= 1");
        let borel_mass = {
            let conv = Convolver::new(&ctx, idx, &cert.s0)?;
            let mut mu = uniform_on(idx, &cert.s0)?;
            for _ in 1..10u32.min(params.walk_steps) {
                mu = conv.step(&mu);
            }
            let fam = build_subgroup_family(&ctx, idx, FamilyKind::Borel)?;
            Some(max_coset_mass(&ctx, idx, &mu, &fam)?.max_mass)
        };
        walk = Some(WalkSummary {
            mix_in_step,
            final_l2_norm: last.l2_norm,
            final_uniform_ratio: last.uniform_ratio,
            borel_max_coset_mass_l10: borel_mass,
        });
        flattening = Some(curve);
    } else {
        skipped.push(SkippedPhase {
            phase: "walk".into(),
            reason: "group index was not built".into(),
        });
    }
    timings.insert("walk".into(), ms_since(t));

    let report = VerifyReport {
        p,
        d,
        x,
        group_order,
        cosets_per_side: group_order / d,
        l1,
        l2,
        intersection_trivial: cert.intersection_trivial,
        product_free_depth: cert.checked_no_loop_depth,
        word_condition_holds,
        word_check: cert.word_check,
        girth,
        connected,
        girth_algebraic_bound,
        girth_theorem_ratio,
        spectral,
        coset2cayley_ok,
        convexity_ok,
        walk,
        timings_ms: timings,
        skipped,
    };
    Ok(VerifyOutput { report, flattening })
}

// ---------------------------------------------------------------------------
// Scan.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub p: u64,
    pub group_order: u64,
    pub x: u64,
    pub girth: Option<u32>,
    pub girth_bound: u32,
    pub norm_bipartite_a0: f64,
    pub norm_cayley_s_a0: f64,
    pub norm_cayley_s0_a0: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScanResult {
    pub rows: Vec<ScanRow>,
    /// Primes in range that were eligible but produced no row.
    pub skipped: Vec<(u64, String)>,
}

/// Primes p in [p_min, p_max] with p >= 5 and d | (p+1)/2.
pub fn eligible_primes(d: u64, p_min: u64, p_max: u64) -> Vec<u64> {
    (p_min.max(5)..=p_max)
        .filter(|&p| is_prime(p) && ((p + 1) / 2) % d == 0)
        .collect()
}

pub fn run_scan(
    d: u64,
    p_min: u64,
    p_max: u64,
    search: &SearchParams,
    tol: f64,
    max_iter: u64,
    dense_cap: usize,
    group_cap: u64,
) -> Result<ScanResult> {
    if d < 3 {
        return Err(Error::Precondition(format!("d must be at least 3, got {d}")));
    }
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for p in eligible_primes(d, p_min, p_max) {
        match scan_one(p, d, search, tol, max_iter, dense_cap, group_cap) {
            Ok(row) => rows.push(row),
            Err(Error::Resource(r)) => skipped.push((p, r)),
            Err(Error::Exhausted { .. }) => skipped.push((p, "no valid x".into())),
            Err(e) => return Err(e),
        }
    }
    Ok(ScanResult { rows, skipped })
}

fn scan_one(
    p: u64,
    d: u64,
    search: &SearchParams,
    tol: f64,
    max_iter: u64,
    dense_cap: usize,
    group_cap: u64,
) -> Result<ScanRow> {
    let ctx = FieldCtx::new(p)?;
    let outcome = run_search(&ctx, d, search)?;
    let (x, cert) = outcome.found.ok_or(Error::Exhausted {
        p,
        bad_count: outcome.census.rejected_total() as usize,
    })?;
    let graph = build_graph(&ctx, &cert, group_cap)?;
    let girth = graph.girth().girth;
    let index = group::enumerate_group(&ctx, group_cap)?;
    let np = NormParams {
        tol,
        max_iter,
        restarts: 3,
        seed: search.seed,
        dense_cap,
    };
    let bop = BipartiteOperator::new(&graph)?;
    let op_s = CayleyOperator::new(&ctx, &index, &cert.s)?;
    let op_s0 = CayleyOperator::new(&ctx, &index, &cert.s0)?;
    Ok(ScanRow {
        p,
        group_order: group::group_order(p),
        x,
        girth,
        girth_bound: girth_lower_bound_algebraic(cert.checked_no_loop_depth),
        norm_bipartite_a0: operator_norm_l20(&bop, &np).value,
        norm_cayley_s_a0: operator_norm_l20(&op_s, &np).value,
        norm_cayley_s0_a0: operator_norm_l20(&op_s0, &np).value,
    })
}

/// CSV with a fixed header; floats in shortest round-trip form.
pub fn scan_to_csv(rows: &[ScanRow]) -> String {
    let mut out = String::from(
        "p,group_order,x,girth,girth_bound,norm_bipartite_a0,norm_cayley_s_a0,norm_cayley_s0_a0\n",
    );
    for r in rows {
        let girth = r.girth.map(|g| g.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.p,
            r.group_order,
            r.x,
            girth,
            r.girth_bound,
            r.norm_bipartite_a0,
            r.norm_cayley_s_a0,
            r.norm_cayley_s0_a0
        ));
    }
    out
}

pub fn flattening_to_csv(points: &[FlatteningPoint]) -> String {
    let mut out = String::from("l,l2_norm,uniform_ratio\n");
    for pt in points {
        out.push_str(&format!("{},{},{}\n", pt.l, pt.l2_norm, pt.uniform_ratio));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn depth_defaults_match_formulas() {
        assert_eq!(default_l1(29, 3), 2);
        assert_eq!(default_l2(29, 3, 8), 0);
        assert_eq!(default_l1(5, 3), 1);
        assert_eq!(default_l1(101, 3), 3);
        assert_eq!(default_l1(7, 4), 1); // clamped up from 0
        assert_eq!(default_l2(1_000_003, 3, 8), 1);
    }

    #[test]
    fn eligible_primes_filter() {
        assert_eq!(eligible_primes(3, 5, 60), vec![5, 11, 17, 23, 29, 41, 47, 53, 59]);
        assert_eq!(eligible_primes(4, 5, 40), vec![7, 23, 31]);
        assert!(!eligible_primes(3, 6, 10).contains(&7));
    }

    #[test]
    fn search_modes_agree_at_p29() {
        let ctx = FieldCtx::new(29).unwrap();
        let scan = run_search(&ctx, 3, &SearchParams { mode: SearchMode::Scan, ..Default::default() })
            .unwrap();
        let sieve =
            run_search(&ctx, 3, &SearchParams { mode: SearchMode::Sieve, ..Default::default() })
                .unwrap();
        let (xs, _) = scan.found.expect("scan finds x");
        let (xv, cert) = sieve.found.expect("sieve finds x");
        // The sieve may exclude more x than strictly necessary, so its pick
        // can only be >= the scan pick.
        assert!(xv >= xs);
        assert!(cert.intersection_trivial);
        let bad = &sieve.sieve.as_ref().unwrap().bad;
        assert!(!bad.contains(&xv));
        assert!(bad.contains(&0));
        // Determinism.
        let again =
            run_search(&ctx, 3, &SearchParams { mode: SearchMode::Sieve, ..Default::default() })
                .unwrap();
        assert_eq!(again.found.unwrap().0, xv);
    }

    #[test]
    fn random_mode_is_seeded() {
        let ctx = FieldCtx::new(29).unwrap();
        let a = run_search(
            &ctx,
            3,
            &SearchParams { mode: SearchMode::Random, seed: 42, ..Default::default() },
        )
        .unwrap();
        let b = run_search(
            &ctx,
            3,
            &SearchParams { mode: SearchMode::Random, seed: 42, ..Default::default() },
        )
        .unwrap();
        assert_eq!(a.found.unwrap().0, b.found.unwrap().0);
    }

    #[test]
    fn impossible_depth_exhausts() {
        let ctx = FieldCtx::new(5).unwrap();
        let out = run_search(
            &ctx,
            3,
            &SearchParams { mode: SearchMode::Scan, l1: Some(4), ..Default::default() },
        )
        .unwrap();
        assert!(out.found.is_none());
        assert_eq!(out.census.candidates_tried, 4);
        assert_eq!(out.census.rejected_loop, 4);
    }

    #[test]
    fn verify_p5_reports_the_degenerate_instance_honestly() {
        // The search accepts x = 1 (trivial intersection, depth 1), but at
        // p = 5 that pair generates a proper subgroup: five components, all
        // projected norms exactly 1, and a walk that never flattens to
        // uniform on G. The report must say so rather than pretty it up.
        let mut params = VerifyParams::new(5, 3);
        params.group_cap = 100_000;
        let rep = run_verify(&params).unwrap();
        assert_eq!(rep.x, 1);
        assert!(rep.intersection_trivial);
        assert_eq!(rep.group_order, 60);
        assert_eq!(rep.cosets_per_side, 20);
        assert_eq!(rep.product_free_depth, 1);
        assert_eq!(rep.girth, Some(4));
        assert_eq!(rep.girth_algebraic_bound, 4);
        assert_eq!(rep.connected, Some(false));
        let spec = rep.spectral.expect("dense spectral path");
        assert_eq!(spec.method, "dense");
        assert!((spec.norm_bipartite_a0 - 1.0).abs() < 1e-9);
        assert!((spec.norm_cayley_s_a0 - 1.0).abs() < 1e-9);
        // The inequality chain still holds, with equality everywhere.
        assert_eq!(rep.coset2cayley_ok, Some(true));
        assert_eq!(rep.convexity_ok, Some(true));
        let walk = rep.walk.expect("walk ran");
        assert_eq!(walk.mix_in_step, None);
        assert!((walk.final_uniform_ratio - 5f64.sqrt()).abs() < 1e-9);
        assert!(walk.borel_max_coset_mass_l10.unwrap() < 1.0);
        assert!(rep.skipped.is_empty(), "{:?}", rep.skipped);
        assert_eq!(rep.timings_ms.len(), 4);
    }

    #[test]
    fn verify_p11_full_report_is_nondegenerate() {
        let mut params = VerifyParams::new(11, 3);
        params.mode = SearchMode::Scan;
        params.group_cap = 100_000;
        params.walk_steps = 40;
        let rep = run_verify(&params).unwrap();
        assert_eq!(rep.x, 1);
        assert!(rep.intersection_trivial);
        assert_eq!(rep.group_order, 660);
        assert_eq!(rep.cosets_per_side, 220);
        assert_eq!(rep.girth, Some(10));
        assert_eq!(rep.connected, Some(true));
        let spec = rep.spectral.expect("dense spectral path");
        assert_eq!(spec.method, "dense");
        assert!(spec.norm_bipartite_a0 < 0.999);
        assert!(spec.norm_cayley_s_a0 < 0.999);
        assert_eq!(rep.coset2cayley_ok, Some(true));
        assert_eq!(rep.convexity_ok, Some(true));
        let walk = rep.walk.expect("walk ran");
        assert_eq!(walk.mix_in_step, Some(5));
        assert!(walk.final_uniform_ratio < 1.01);
        assert!(walk.borel_max_coset_mass_l10.unwrap() < 0.5);
        assert!(rep.skipped.is_empty(), "{:?}", rep.skipped);
    }

    #[test]
    fn verify_partial_when_capped() {
        let mut params = VerifyParams::new(11, 3);
        params.group_cap = 100; // too small for |G| = 660
        let rep = run_verify(&params).unwrap();
        assert_eq!(rep.girth, None);
        assert!(rep.spectral.is_none());
        assert!(rep.walk.is_none());
        let phases: Vec<&str> = rep.skipped.iter().map(|s| s.phase.as_str()).collect();
        assert!(phases.contains(&"girth"));
        assert!(phases.contains(&"spectral"));
        assert!(phases.contains(&"walk"));
        // The pair phase still certified the pair.
        assert!(rep.intersection_trivial);
        assert_eq!(rep.girth_algebraic_bound, 2 * rep.product_free_depth + 2);
    }

    #[test]
    fn verify_with_forced_x_and_word_depth() {
        let mut params = VerifyParams::new(29, 3);
        params.x = Some(1);
        params.l2 = Some(1);
        params.threads = 2;
        params.group_cap = 100_000;
        params.walk_steps = 30;
        let rep = run_verify(&params).unwrap();
        assert_eq!(rep.x, 1);
        assert_eq!(rep.l2, 1);
        assert!(rep.word_condition_holds.is_some());
        assert!(matches!(rep.word_check, WordCheckMode::Exhaustive { depth: 1 }));
        assert!(rep.girth.unwrap() >= rep.girth_algebraic_bound);
    }

    #[test]
    fn verify_rejects_bad_inputs() {
        assert!(matches!(
            run_verify(&VerifyParams::new(5, 2)),
            Err(Error::Precondition(_))
        ));
        assert!(matches!(
            run_verify(&VerifyParams::new(7, 3)), // 3 does not divide 4
            Err(Error::Precondition(_))
        ));
        // A forced x with non-trivial intersection surfaces as a rejection.
        let mut params = VerifyParams::new(5, 3);
        params.x = Some(0);
        assert!(matches!(run_verify(&params), Err(Error::PairRejected { .. })));
    }

    #[test]
    fn scan_small_range() {
        let res = run_scan(
            3,
            5,
            12,
            &SearchParams::default(),
            1e-10,
            100_000,
            4000,
            100_000,
        )
        .unwrap();
        assert_eq!(res.rows.len(), 2);
        assert_eq!(res.rows[0].p, 5);
        assert_eq!(res.rows[1].p, 11);
        assert!(res.skipped.is_empty());
        let csv = scan_to_csv(&res.rows);
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "p,group_order,x,girth,girth_bound,norm_bipartite_a0,norm_cayley_s_a0,norm_cayley_s0_a0"
        );
        assert_eq!(lines.count(), 2);
        // Header-only output for an empty range.
        let empty = run_scan(3, 6, 10, &SearchParams::default(), 1e-10, 100, 4000, 1000).unwrap();
        assert_eq!(scan_to_csv(&empty.rows).lines().count(), 1);
    }

    #[test]
    fn report_json_round_trip() {
        let mut params = VerifyParams::new(5, 3);
        params.group_cap = 100_000;
        let rep = run_verify(&params).unwrap();
        let json = serde_json::to_string_pretty(&rep).unwrap();
        let back: VerifyReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.p, rep.p);
        assert_eq!(back.girth, rep.girth);
        assert_eq!(back.timings_ms.len(), rep.timings_ms.len());
    }
}
