//! Node-level split search: two-sample weighted log-rank statistics evaluated
//! incrementally across candidate thresholds.
//!
//! For a node, the primary-cause event ages te_1 < .. < te_E define the
//! comparison grid. With d_j the (weighted) primary events at te_j and Y_j the
//! weighted number at risk, a candidate split into left L and right R is
//! scored by U^2 / V with
//!
//!   U = sum_j (d_Lj - Y_Lj * d_j / Y_j)
//!   V = sum_j d_j (Y_j - d_j) / ((Y_j - 1) Y_j^2) * Y_Lj (Y_j - Y_Lj)
//!
//! Each subject's total contribution to U is a constant that does not depend
//! on the split, so U is maintained in O(1) per subject moved from right to
//! left. V is maintained by updating Y_Lj over the subject's at-risk window.
//!
//! Under the subdistribution rule, subjects with a competing event stay in
//! the risk set past their event age with weight scale_i * G(te_j-), where G
//! is the per-tree censoring Kaplan-Meier and scale_i = mult_i / G(T_i-).

use crate::cohort::EventKind;
use crate::survival::SurvCurve;

use super::ForestData;

/// Per-node risk-set aggregates, independent of any particular split.
pub(crate) struct NodeStats {
    /// Distinct primary-cause event ages in the node, ascending.
    pub te: Vec<f64>,
    /// Weighted at-risk mass per event age (includes carried mass).
    pub yj: Vec<f64>,
    /// d_j / Y_j.
    rj: Vec<f64>,
    /// d_j (Y_j - d_j) / ((Y_j - 1) Y_j^2); zero where Y_j <= 1.
    bj: Vec<f64>,
    /// G(te_j-) under the subdistribution rule, empty otherwise.
    gleft: Vec<f64>,
    /// Per member (parallel to the node's member list):
    /// at-risk window [lo, hi) into te.
    pub lo: Vec<usize>,
    pub hi: Vec<usize>,
    /// Split-independent contribution to U.
    u: Vec<f64>,
    /// Own primary-event mass (multiplicity if the member's event is the
    /// primary cause, else zero).
    pub ev: Vec<f64>,
    /// Carried-tail scale per member; zero unless the member has a competing
    /// event and the subdistribution rule is active.
    pub scale: Vec<f64>,
    /// Multiplicity-weighted primary events in the node.
    pub events_total: f64,
}

/// Evaluate G(t-) treating a fully censored tail as the last positive value,
/// so carried weights never divide by zero.
pub(crate) fn censor_left_floored(g: &SurvCurve, t: f64) -> f64 {
    let v = g.at_left(t);
    if v > 0.0 {
        return v;
    }
    let last_pos = g
        .survival
        .iter()
        .rev()
        .find(|&&s| s > 0.0)
        .copied()
        .unwrap_or(1.0);
    last_pos
}

impl NodeStats {
    /// `members` must be sorted by subject index; `mult` is the in-bag
    /// multiplicity (indexed by subject); `censor_km` is Some only under the
    /// subdistribution rule.
    pub(crate) fn new(
        data: &ForestData,
        members: &[usize],
        mult: &[u32],
        censor_km: Option<&SurvCurve>,
    ) -> NodeStats {
        let m = members.len();

        let mut te: Vec<f64> = members
            .iter()
            .filter(|&&i| data.event[i] == EventKind::Dementia)
            .map(|&i| data.exit[i])
            .collect();
        te.sort_by(|a, b| a.partial_cmp(b).unwrap());
        te.dedup();
        let e = te.len();

        let mut stats = NodeStats {
            te,
            yj: vec![0.0; e],
            rj: vec![0.0; e],
            bj: vec![0.0; e],
            gleft: Vec::new(),
            lo: vec![0; m],
            hi: vec![0; m],
            u: vec![0.0; m],
            ev: vec![0.0; m],
            scale: vec![0.0; m],
            events_total: 0.0,
        };
        if e == 0 {
            return stats;
        }

        if let Some(g) = censor_km {
            stats.gleft = stats.te.iter().map(|&t| censor_left_floored(g, t)).collect();
        }

        // Windows and per-age event mass.
        let mut dj = vec![0.0; e];
        for (k, &i) in members.iter().enumerate() {
            let w = mult[i] as f64;
            let lo = stats.te.partition_point(|&t| t <= data.entry[i]);
            let hi = stats.te.partition_point(|&t| t <= data.exit[i]);
            stats.lo[k] = lo;
            stats.hi[k] = hi;
            if data.event[i] == EventKind::Dementia {
                stats.ev[k] = w;
                stats.events_total += w;
                // The member's own event age is in [lo, hi) by construction.
                let j = stats.te.partition_point(|&t| t < data.exit[i]);
                dj[j] += w;
            }
            if censor_km.is_some() && data.event[i] == EventKind::Death {
                let g = censor_km.unwrap();
                stats.scale[k] = w / censor_left_floored(g, data.exit[i]);
            }
        }

        // At-risk mass via difference arrays: conventional windows plus the
        // carried tail for competing events under the subdistribution rule.
        let mut conv = vec![0.0; e + 1];
        let mut carr = vec![0.0; e + 1];
        for (k, &i) in members.iter().enumerate() {
            conv[stats.lo[k]] += mult[i] as f64;
            conv[stats.hi[k]] -= mult[i] as f64;
            if stats.scale[k] > 0.0 {
                carr[stats.hi[k]] += stats.scale[k];
            }
        }
        let mut run_c = 0.0;
        let mut run_g = 0.0;
        for j in 0..e {
            run_c += conv[j];
            run_g += carr[j];
            let mut y = run_c;
            if !stats.gleft.is_empty() {
                y += run_g * stats.gleft[j];
            }
            stats.yj[j] = y;
            stats.rj[j] = dj[j] / y;
            stats.bj[j] = if y > 1.0 {
                dj[j] * (y - dj[j]) / ((y - 1.0) * y * y)
            } else {
                0.0
            };
        }

        // Prefix sums of r_j (and r_j * gleft_j) give each member's constant
        // contribution to U in O(1).
        let mut rpre = vec![0.0; e + 1];
        for j in 0..e {
            rpre[j + 1] = rpre[j] + stats.rj[j];
        }
        let rgpre: Vec<f64> = if stats.gleft.is_empty() {
            Vec::new()
        } else {
            let mut p = vec![0.0; e + 1];
            for j in 0..e {
                p[j + 1] = p[j] + stats.rj[j] * stats.gleft[j];
            }
            p
        };
        for (k, &i) in members.iter().enumerate() {
            let w = mult[i] as f64;
            let mut u = stats.ev[k] - w * (rpre[stats.hi[k]] - rpre[stats.lo[k]]);
            if stats.scale[k] > 0.0 {
                u -= stats.scale[k] * (rgpre[e] - rgpre[stats.hi[k]]);
            }
            stats.u[k] = u;
        }
        stats
    }

    pub(crate) fn n_ages(&self) -> usize {
        self.te.len()
    }
}

/// Best split found by a scan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct SplitChoice {
    pub feature: usize,
    pub threshold: f64,
    pub statistic: f64,
}

/// Relative band inside which two statistics count as tied. Distinct
/// features can induce the same left/right partition, whose statistics are
/// equal in exact arithmetic but differ by a few ulps across the
/// feature-specific accumulation orders; without the band such ties would be
/// broken by floating-point noise instead of by candidate order.
pub(crate) const REL_TIE: f64 = 1e-9;

/// Replacement rule shared by the scan and the exhaustive reference: a
/// candidate only displaces the incumbent when it is better beyond the tie
/// band, so ties keep the earlier candidate (lower feature index, then lower
/// threshold).
pub(crate) fn improves(candidate: f64, best: Option<f64>) -> bool {
    match best {
        None => candidate > 0.0,
        Some(b) => candidate > b * (1.0 + REL_TIE),
    }
}

/// Scan one feature for the best admissible threshold, updating `best`.
///
/// Admissible: both children hold at least `min_events` multiplicity-weighted
/// primary events and the statistic is strictly positive. Ties keep the
/// earlier candidate (lower feature index, then lower threshold), which the
/// caller arranges by scanning features in ascending order.
#[allow(clippy::too_many_arguments)]
pub(crate) fn scan_feature(
    stats: &NodeStats,
    members: &[usize],
    mult: &[u32],
    column: &[f64],
    feature: usize,
    min_events: f64,
    yl: &mut Vec<f64>,
    order: &mut Vec<usize>,
    best: &mut Option<SplitChoice>,
) {
    let m = members.len();
    let e = stats.n_ages();
    if e == 0 || m < 2 {
        return;
    }

    order.clear();
    order.extend(0..m);
    order.sort_by(|&a, &b| {
        column[members[a]]
            .partial_cmp(&column[members[b]])
            .unwrap()
            .then(a.cmp(&b))
    });

    yl.clear();
    yl.resize(e, 0.0);

    let mut u = 0.0;
    let mut v = 0.0;
    let mut ev_left = 0.0;
    let mut prev_x = f64::NAN;

    for (step, &k) in order.iter().enumerate() {
        let i = members[k];
        let xv = column[i];
        debug_assert!(xv.is_finite(), "forest predictors must be imputed");

        if step > 0 && xv != prev_x {
            let ev_right = stats.events_total - ev_left;
            if ev_left >= min_events && ev_right >= min_events && v > 0.0 {
                let statistic = u * u / v;
                let threshold = 0.5 * (prev_x + xv);
                if improves(statistic, best.map(|b| b.statistic)) {
                    *best = Some(SplitChoice { feature, threshold, statistic });
                }
            }
        }
        prev_x = xv;

        // Move member k into the left child.
        u += stats.u[k];
        ev_left += stats.ev[k];
        let w = mult[i] as f64;
        for j in stats.lo[k]..stats.hi[k] {
            v += stats.bj[j] * w * (stats.yj[j] - 2.0 * yl[j] - w);
            yl[j] += w;
        }
        if stats.scale[k] > 0.0 {
            for j in stats.hi[k]..e {
                let wc = stats.scale[k] * stats.gleft[j];
                v += stats.bj[j] * wc * (stats.yj[j] - 2.0 * yl[j] - wc);
                yl[j] += wc;
            }
        }
    }
}

/// Reference evaluator: statistic pieces (U, V, left event mass) for an
/// explicit left-member set by direct summation over ages. Used by tests to
/// cross-check the incremental scan; O(m * E) per call.
#[cfg_attr(not(test), allow(dead_code))]
pub(crate) fn logrank_direct(
    stats: &NodeStats,
    members: &[usize],
    mult: &[u32],
    in_left: &[bool],
) -> Option<(f64, f64, f64)> {
    let e = stats.n_ages();
    if e == 0 {
        return None;
    }
    let mut ylj = vec![0.0; e];
    let mut ev_left = 0.0;
    for (k, &i) in members.iter().enumerate() {
        if !in_left[k] {
            continue;
        }
        let w = mult[i] as f64;
        for j in stats.lo[k]..stats.hi[k] {
            ylj[j] += w;
        }
        if stats.scale[k] > 0.0 {
            for j in stats.hi[k]..e {
                ylj[j] += stats.scale[k] * stats.gleft[j];
            }
        }
        ev_left += stats.ev[k];
    }
    // Sum_j d_Lj collapses to the left event mass, so U needs no per-age
    // event bookkeeping.
    let mut u = ev_left;
    let mut v = 0.0;
    for j in 0..e {
        u -= ylj[j] * stats.rj[j];
        v += stats.bj[j] * ylj[j] * (stats.yj[j] - ylj[j]);
    }
    Some((u, v, ev_left))
}
