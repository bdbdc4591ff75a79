//! Suprema of rank functionals over the non-increasing rearrangement of ṗ.
//!
//! The multiset `{ṗ_j}` of a profile is decomposed into finitely many atoms
//! (a value with a finite multiplicity), possibly one value with infinite
//! multiplicity, and at most one monotone tail family with a finite set of
//! indices removed. Every functional handled here has the form
//! `sup_r φ(log(r+1+o), ṗ_(r))` over 1-based ranks `r`, with `o = −1` for `S`
//! and `T` (ranks counted from zero) and `o = 0` otherwise, and with `φ`
//! non-decreasing in both arguments, so
//! among tied values only the largest rank matters, and along the monotone
//! tail the rank of index `j` is `j + d` for a piecewise-constant shift `d`.
//! Finite tail segments are searched by branch and bound with the envelope
//! `φ(log(rank(b)+1), ṗ(a))`; the final unbounded segment uses a closed-form
//! certificate per family.

use std::collections::{BTreeMap, BTreeSet};

use crate::profiles::{dot_value, ExtReal, Family, Profile};

/// Largest index handled by exact integer search.
const INT_LIMIT: f64 = 4_503_599_627_370_496.0; // 2^52
const LN_INT_LIMIT: f64 = 36.04365338911715; // ln(2^52)
const MAX_NODES: usize = 2_000_000;

#[derive(Clone, Copy, Debug)]
pub(crate) enum Functional {
    /// `ṗ · log r`
    S,
    /// `log r / log(1/ṗ)`
    T,
    /// `2 r ṗ`
    Width,
    /// `log(r+1) / (n log(2 + log(r+1)/(n ṗ)))`
    Log { n: f64 },
}

impl Functional {
    /// Offset added to the 1-based rank before taking `log(· + 1)`.
    fn rank_offset(&self) -> i64 {
        match self {
            Functional::S | Functional::T => -1,
            Functional::Width | Functional::Log { .. } => 0,
        }
    }

    fn eval(&self, lr: f64, v: f64) -> f64 {
        if !(v > 0.0) {
            return 0.0;
        }
        match *self {
            Functional::S => v * lr,
            Functional::T => lr / (1.0 / v).ln(),
            Functional::Width => 2.0 * v * lr.exp_m1(),
            Functional::Log { n } => lr / (n * (2.0 + lr / (n * v)).ln()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum Attained {
    Rank(f64),
    Limit,
    Nowhere,
}

#[derive(Clone, Debug)]
pub(crate) struct SupReport {
    pub value: ExtReal,
    pub attained: Attained,
    pub examined: f64,
    /// `(rank, term value)` pairs showing unbounded growth.
    pub witness: Vec<(f64, f64)>,
}

#[derive(Clone, Copy, Debug)]
enum Count {
    Exact(u64),
    /// Natural log of a count too large for exact integer search.
    Huge(f64),
}

impl Count {
    fn as_f64(self) -> f64 {
        match self {
            Count::Exact(k) => k as f64,
            Count::Huge(l) => l.exp(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum TailKind {
    PowerLaw(f64),
    InvLog,
}

impl TailKind {
    /// Value at `x = ln(j+1)`.
    pub(crate) fn value_x(self, x: f64) -> f64 {
        match self {
            TailKind::PowerLaw(t) => (-x / t).exp().min(0.5),
            TailKind::InvLog => (1.0 / (x + (-x).exp().ln_1p())).min(0.5),
        }
    }

    pub(crate) fn value_j(self, j: f64) -> f64 {
        self.value_x(j.ln_1p())
    }

    /// `ln` of the threshold index where the value crosses `v`.
    fn log_threshold(self, v: f64) -> f64 {
        match self {
            TailKind::PowerLaw(t) => -t * v.ln(),
            TailKind::InvLog => 1.0 / v,
        }
    }

    /// `#{j ≥ 1 : a_j ≥ v}` for `v > 0`.
    fn count_ge(self, v: f64) -> Count {
        self.count_by(v, false)
    }

    /// `#{j ≥ 1 : a_j > v}` for `v > 0`.
    fn count_gt(self, v: f64) -> Count {
        self.count_by(v, true)
    }

    fn count_by(self, v: f64, strict: bool) -> Count {
        if v > 0.5 || (strict && v >= 0.5) {
            return Count::Exact(0);
        }
        let pass = |j: i64| -> bool {
            if j < 1 {
                return true;
            }
            let a = self.value_j(j as f64);
            if strict {
                a > v
            } else {
                a >= v
            }
        };
        let ln_x = self.log_threshold(v);
        if ln_x > LN_INT_LIMIT - 1.0 {
            return Count::Huge(ln_x);
        }
        // j + 1 ≤ X for PowerLaw, j + 2 ≤ X for InvLog.
        let offset = match self {
            TailKind::PowerLaw(_) => 1,
            TailKind::InvLog => 2,
        };
        let mut k = ln_x.exp().floor() as i64 - offset;
        k = k.max(0);
        while k >= 1 && !pass(k) {
            k -= 1;
        }
        while pass(k + 1) {
            k += 1;
        }
        Count::Exact(k as u64)
    }
}

#[derive(Clone, Debug)]
struct Run {
    start: u64,
    end: Option<u64>,
    value: f64,
    removed: BTreeSet<u64>,
}

impl Run {
    fn contains(&self, j: u64) -> bool {
        j >= self.start && self.end.is_none_or(|e| j <= e) && !self.removed.contains(&j)
    }
}

#[derive(Clone, Debug, Default)]
struct Layout {
    points: BTreeMap<u64, f64>,
    runs: Vec<Run>,
    tail: Option<(TailKind, BTreeSet<u64>)>,
    nondecaying: bool,
}

fn layout(p: &Profile) -> Layout {
    let mut out = Layout::default();
    match p.family() {
        Family::PowerLaw { t } => out.tail = Some((TailKind::PowerLaw(*t), BTreeSet::new())),
        Family::InvLog => out.tail = Some((TailKind::InvLog, BTreeSet::new())),
        Family::Step { q, support } => out.runs.push(Run {
            start: 1,
            end: Some(*support),
            value: dot_value(*q),
            removed: BTreeSet::new(),
        }),
        Family::StepBump {
            q,
            q_prime,
            k,
            support,
        } => {
            let mut removed = BTreeSet::new();
            if k <= support {
                removed.insert(*k);
            }
            out.runs.push(Run {
                start: 1,
                end: Some(*support),
                value: dot_value(*q),
                removed,
            });
            out.points.insert(*k, dot_value(*q_prime));
        }
        Family::Const { c } => out.runs.push(Run {
            start: 1,
            end: None,
            value: dot_value(*c),
            removed: BTreeSet::new(),
        }),
        Family::HalfBand { .. } => out.nondecaying = true,
        Family::Explicit { values } => {
            for (i, v) in values.iter().enumerate() {
                out.points.insert(i as u64 + 1, dot_value(*v));
            }
        }
        Family::Reflect { base, .. } | Family::Dot { base } => out = layout(base),
    }
    for (&j, &v) in p.overrides() {
        if out.points.remove(&j).is_none() {
            if let Some(run) = out.runs.iter_mut().find(|r| r.contains(j)) {
                run.removed.insert(j);
            } else if let Some((_, removed)) = out.tail.as_mut() {
                removed.insert(j);
            }
        }
        out.points.insert(j, dot_value(v));
    }
    out
}

fn witness_for_value(f: Functional, v: f64) -> Vec<(f64, f64)> {
    (1..=6)
        .map(|k| {
            let r = 10f64.powi(k);
            (r, f.eval(r.ln_1p(), v))
        })
        .collect()
}

fn infinite(witness: Vec<(f64, f64)>) -> SupReport {
    SupReport {
        value: ExtReal::Infinite,
        attained: Attained::Limit,
        examined: witness.last().map_or(0.0, |w| w.0),
        witness,
    }
}

/// Running maximum with its location.
#[derive(Clone, Copy, Debug)]
struct Best {
    value: f64,
    rank: f64,
    limit: bool,
}

impl Best {
    fn offer(&mut self, value: f64, rank: f64) {
        if value > self.value {
            self.value = value;
            self.rank = rank;
            self.limit = false;
        }
    }

    fn offer_limit(&mut self, value: f64) {
        if value > self.value {
            self.value = value;
            self.limit = true;
        }
    }
}

struct Segments<'a> {
    kind: TailKind,
    f: Functional,
    tol: f64,
    best: &'a mut Best,
    /// Envelope left over after the node budget ran out.
    slack: f64,
    examined: f64,
}

impl Segments<'_> {
    fn term_j(&self, j: u64, d: i64) -> f64 {
        let lr = ((j as f64) + 1.0 + d as f64).ln();
        self.f.eval(lr, self.kind.value_j(j as f64))
    }

    fn lr_x(x: f64, d: i64) -> f64 {
        x + (d as f64 * (-x).exp()).ln_1p()
    }

    fn term_x(&self, x: f64, d: i64) -> f64 {
        self.f.eval(Self::lr_x(x, d), self.kind.value_x(x))
    }

    fn rank_x(x: f64, d: i64) -> f64 {
        x.exp_m1() + d as f64
    }

    /// Maximise over integer `j ∈ [lo, hi]`.
    fn search_int(&mut self, lo: u64, hi: u64, d: i64) {
        if lo > hi {
            return;
        }
        self.examined = self.examined.max(hi as f64);
        let fl = self.term_j(lo, d);
        self.best.offer(fl, (lo as i64 + d) as f64);
        let fh = self.term_j(hi, d);
        self.best.offer(fh, (hi as i64 + d) as f64);
        let mut stack = vec![(lo, hi)];
        let mut nodes = 0usize;
        while let Some((a, b)) = stack.pop() {
            if b <= a + 1 {
                continue;
            }
            let env = self.f.eval(
                ((b as f64) + 1.0 + d as f64).ln(),
                self.kind.value_j(a as f64),
            );
            if env <= self.best.value + self.tol {
                continue;
            }
            nodes += 1;
            if nodes > MAX_NODES {
                self.slack = self.slack.max(env);
                continue;
            }
            let m = if b < 2 * a + 2 {
                a + (b - a) / 2
            } else {
                let g = (((a + 1) as f64) * ((b + 1) as f64)).sqrt() as u64;
                g.saturating_sub(1).clamp(a + 1, b - 1)
            };
            let fm = self.term_j(m, d);
            self.best.offer(fm, (m as i64 + d) as f64);
            stack.push((a, m));
            stack.push((m, b));
        }
    }

    /// Maximise over real `x = ln(j+1) ∈ [xa, xb]` (indices beyond exact range).
    fn search_x(&mut self, xa: f64, xb: f64, d: i64) {
        if xa > xb {
            return;
        }
        self.examined = self.examined.max(xb.exp_m1());
        let fa = self.term_x(xa, d);
        self.best.offer(fa, Self::rank_x(xa, d));
        let fb = self.term_x(xb, d);
        self.best.offer(fb, Self::rank_x(xb, d));
        let mut stack = vec![(xa, xb)];
        let mut nodes = 0usize;
        while let Some((a, b)) = stack.pop() {
            let env = self.f.eval(Self::lr_x(b, d), self.kind.value_x(a));
            if env <= self.best.value + self.tol {
                continue;
            }
            nodes += 1;
            if b - a <= 1e-12 * b.max(1.0) || nodes > MAX_NODES {
                self.slack = self.slack.max(env);
                continue;
            }
            let m = 0.5 * (a + b);
            let fm = self.term_x(m, d);
            self.best.offer(fm, Self::rank_x(m, d));
            stack.push((a, m));
            stack.push((m, b));
        }
    }

    /// Maximise over `j ∈ [lo, hi]` given as reals (`hi` may be astronomically large).
    fn search(&mut self, lo: f64, hi_x: f64, d: i64) {
        let lo_x = lo.ln_1p();
        if lo_x > hi_x {
            return;
        }
        if lo < INT_LIMIT {
            let hi_int = if hi_x < LN_INT_LIMIT {
                hi_x.exp_m1().round().min(INT_LIMIT)
            } else {
                INT_LIMIT
            };
            self.search_int(lo as u64, hi_int as u64, d);
            if hi_x > LN_INT_LIMIT {
                self.search_x(LN_INT_LIMIT, hi_x, d);
            }
        } else {
            self.search_x(lo_x, hi_x, d);
        }
    }
}

pub(crate) fn sup(p: &Profile, f: Functional, tol: f64) -> SupReport {
    let lay = layout(p);
    if lay.nondecaying {
        return infinite(witness_for_value(f, 0.25));
    }
    for run in &lay.runs {
        if run.end.is_none() && run.value > 0.0 {
            return infinite(witness_for_value(f, run.value));
        }
    }

    // Positive atoms, merged by value, sorted descending.
    let mut atoms: BTreeMap<u64, u64> = BTreeMap::new();
    for &v in lay.points.values() {
        if v > 0.0 {
            *atoms.entry(v.to_bits()).or_default() += 1;
        }
    }
    for run in &lay.runs {
        if run.value > 0.0 {
            let end = run.end.expect("infinite runs handled above");
            let removed = run.removed.range(run.start..=end).count() as u64;
            let len = (end + 1).saturating_sub(run.start) - removed;
            if len > 0 {
                *atoms.entry(run.value.to_bits()).or_default() += len;
            }
        }
    }
    // Positive f64 bit patterns order like the values themselves.
    let atoms: Vec<(f64, u64)> = atoms
        .into_iter()
        .rev()
        .map(|(b, c)| (f64::from_bits(b), c))
        .collect();

    let mut best = Best {
        value: 0.0,
        rank: 0.0,
        limit: false,
    };
    let off = f.rank_offset();
    let mut examined = 0.0f64;
    let mut cum = 0u64;
    for &(v, c) in &atoms {
        cum += c;
        let tail_count = lay.tail.as_ref().map(|(kind, removed)| match kind.count_ge(v) {
            Count::Exact(k) => Count::Exact(k - removed.range(..=k).count() as u64),
            huge => huge,
        });
        let (lr, rank) = match tail_count {
            None | Some(Count::Exact(0)) => (((cum as f64) + 1.0 + off as f64).ln(), cum as f64),
            Some(Count::Exact(k)) => {
                let r = cum as f64 + k as f64;
                ((r + 1.0 + off as f64).ln(), r)
            }
            Some(Count::Huge(l)) => (l + ((cum as f64 + 1.0 + off as f64) * (-l).exp()).ln_1p(), l.exp()),
        };
        examined = examined.max(rank);
        best.offer(f.eval(lr, v), rank);
    }

    let Some((kind, removed)) = lay.tail.as_ref() else {
        let attained = if best.value > 0.0 {
            Attained::Rank(best.rank)
        } else {
            Attained::Nowhere
        };
        return SupReport {
            value: ExtReal::Finite(best.value),
            attained,
            examined,
            witness: Vec::new(),
        };
    };
    let kind = *kind;

    // Breakpoints along the tail: atoms overtake tail elements, removed indices are skipped.
    enum Ev {
        Atom(u64),
        Removed,
    }
    let mut events: Vec<(f64, Ev)> = Vec::new();
    for &(v, c) in &atoms {
        let b = kind.count_gt(v).as_f64() + 1.0;
        events.push((b, Ev::Atom(c)));
    }
    for &r in removed {
        events.push((r as f64, Ev::Removed));
    }
    events.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut seg = Segments {
        kind,
        f,
        tol,
        best: &mut best,
        slack: f64::NEG_INFINITY,
        examined,
    };
    let mut cur = 1.0f64;
    let mut d: i64 = off;
    for (pos, ev) in events {
        if pos > cur {
            seg.search(cur, (pos - 1.0).ln_1p(), d);
        }
        match ev {
            Ev::Atom(c) => {
                d += c as i64;
                cur = cur.max(pos);
            }
            Ev::Removed => {
                d -= 1;
                cur = cur.max(pos + 1.0);
            }
        }
    }
    debug_assert!(d <= 0, "final tail shift must be non-positive");

    // Final unbounded segment [cur, ∞).
    let lo_x = cur.ln_1p();
    match (kind, f) {
        (TailKind::PowerLaw(t), Functional::S) => {
            let x_cut = (2.0 * (d.unsigned_abs() as f64)).ln().max(std::f64::consts::LN_2 + 2.0 * t + 1.0);
            seg.search(cur, x_cut.max(lo_x), d);
        }
        (TailKind::PowerLaw(t), Functional::T) => {
            let first_off_cap = kind.count_ge(0.5).as_f64() + 1.0;
            let j0 = cur.max(first_off_cap);
            seg.search(cur, j0.ln_1p(), d);
            if d == 0 {
                seg.best.offer(t, j0);
            } else {
                seg.best.offer_limit(t);
            }
        }
        (TailKind::PowerLaw(t), Functional::Width) => {
            if t > 1.0 {
                let w = divergence_witness(kind, f, lo_x, d);
                return infinite(w);
            } else if t == 1.0 {
                seg.best.offer_limit(2.0);
            } else {
                let x_cut = ((1.0 - d as f64) / (1.0 - t) + 1.0).ln();
                seg.search(cur, x_cut.max(lo_x), d);
            }
        }
        (TailKind::PowerLaw(t), Functional::Log { n }) => {
            let x_cut = n + (d.unsigned_abs() as f64 * (-n).exp()).ln_1p();
            seg.search(cur, x_cut.max(lo_x), d);
            seg.best.offer_limit(t / n);
        }
        (TailKind::InvLog, Functional::S) => seg.best.offer_limit(1.0),
        (TailKind::InvLog, _) => {
            let w = divergence_witness(kind, f, lo_x, d);
            return infinite(w);
        }
    }
    let slack = seg.slack;
    let examined = seg.examined;
    let mut value = best.value;
    if slack > value + tol {
        value = slack;
    }
    SupReport {
        value: ExtReal::Finite(value),
        attained: if best.limit {
            Attained::Limit
        } else if best.value > 0.0 {
            Attained::Rank(best.rank - off as f64)
        } else {
            Attained::Nowhere
        },
        examined,
        witness: Vec::new(),
    }
}

fn divergence_witness(kind: TailKind, f: Functional, lo_x: f64, d: i64) -> Vec<(f64, f64)> {
    (0..10)
        .map(|k| {
            let x = lo_x + 2f64.powi(k);
            let lr = Segments::lr_x(x, d);
            (Segments::rank_x(x, d), f.eval(lr, kind.value_x(x)))
        })
        .collect()
}
