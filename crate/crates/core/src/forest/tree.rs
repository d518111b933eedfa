//! Single-tree growth: recursive partitioning with per-node candidate draws
//! and terminal Aalen-Johansen incidence curves.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::cohort::EventKind;
use crate::survival::{aalen_johansen, kaplan_meier, CifCurve, RiskSetIndex, RiskSubject, SurvCurve};

use super::split::{scan_feature, NodeStats, SplitChoice};
use super::{ForestConfig, ForestData, ForestError, Node, SplitRule, SurvTree};

/// Grow one tree on the in-bag multiset given by `mult` (multiplicity per
/// subject; zero means out of bag). The RNG drives per-node candidate-feature
/// draws and must be dedicated to this tree.
pub fn grow_tree(
    data: &ForestData,
    mult: &[u32],
    cfg: &ForestConfig,
    rng: &mut ChaCha8Rng,
) -> Result<SurvTree, ForestError> {
    let n = data.len();
    if mult.len() != n {
        return Err(ForestError::DimensionMismatch { got: mult.len(), want: n });
    }
    let members: Vec<usize> = (0..n).filter(|&i| mult[i] > 0).collect();
    if members.is_empty() {
        return Err(ForestError::EmptySample);
    }

    // Censoring Kaplan-Meier over the in-bag multiset; drives the carried
    // risk-set weights under the subdistribution rule.
    let censor_km: Option<SurvCurve> = match cfg.split_rule {
        SplitRule::SubdistributionLogrank => {
            let idx = in_bag_index(data, &members, mult)?;
            Some(kaplan_meier(&idx, &[EventKind::Censored]))
        }
        SplitRule::CausespecificLogrank => None,
    };

    let m_features = data.columns.len();
    let mtry = cfg.mtry.unwrap_or_else(|| (m_features as f64).sqrt().ceil() as usize);
    let mtry = mtry.clamp(1, m_features.max(1));
    let min_events = f64::from(cfg.min_terminal_events.max(1));

    let mut builder = Builder {
        data,
        mult,
        cfg,
        censor_km: censor_km.as_ref(),
        mtry,
        min_events,
        nodes: Vec::new(),
        scratch_order: Vec::new(),
        scratch_yl: Vec::new(),
        feature_pool: (0..m_features).collect(),
    };
    builder.build(members, 0, rng);

    Ok(SurvTree { nodes: builder.nodes, in_bag: mult.to_vec() })
}

fn in_bag_index(
    data: &ForestData,
    members: &[usize],
    mult: &[u32],
) -> Result<RiskSetIndex, ForestError> {
    let parts: Vec<RiskSubject> = members
        .iter()
        .enumerate()
        .map(|(k, &i)| RiskSubject {
            entry: data.entry[i],
            exit: data.exit[i],
            event: data.event[i],
            weight: f64::from(mult[i]),
            household: k,
        })
        .collect();
    RiskSetIndex::from_parts(parts).map_err(|_| ForestError::EmptySample)
}

struct Builder<'a> {
    data: &'a ForestData,
    mult: &'a [u32],
    cfg: &'a ForestConfig,
    censor_km: Option<&'a SurvCurve>,
    mtry: usize,
    min_events: f64,
    nodes: Vec<Node>,
    scratch_order: Vec<usize>,
    scratch_yl: Vec<f64>,
    feature_pool: Vec<usize>,
}

impl Builder<'_> {
    /// Build the subtree over `members` (sorted by subject index) and return
    /// its arena index. The root ends up at index 0 because the placeholder
    /// is pushed before any child is built.
    fn build(&mut self, members: Vec<usize>, depth: usize, rng: &mut ChaCha8Rng) -> u32 {
        let idx = self.nodes.len() as u32;
        self.nodes.push(Node::Leaf { cif: CifCurve { ages: Vec::new(), dementia: Vec::new(), death: Vec::new() } });

        let choice = self.choose_split(&members, depth, rng);
        match choice {
            None => {
                let cif = self.terminal_cif(&members);
                self.nodes[idx as usize] = Node::Leaf { cif };
            }
            Some(split) => {
                let (left, right): (Vec<usize>, Vec<usize>) = members
                    .iter()
                    .partition(|&&i| self.data.columns[split.feature][i] <= split.threshold);
                debug_assert!(!left.is_empty() && !right.is_empty());
                let li = self.build(left, depth + 1, rng);
                let ri = self.build(right, depth + 1, rng);
                self.nodes[idx as usize] = Node::Split {
                    feature: split.feature as u32,
                    threshold: split.threshold,
                    left: li,
                    right: ri,
                };
            }
        }
        idx
    }

    fn choose_split(
        &mut self,
        members: &[usize],
        depth: usize,
        rng: &mut ChaCha8Rng,
    ) -> Option<SplitChoice> {
        if let Some(max_depth) = self.cfg.max_depth {
            if depth >= max_depth {
                return None;
            }
        }
        if members.len() < 2 {
            return None;
        }
        let stats = NodeStats::new(self.data, members, self.mult, self.censor_km);
        if stats.n_ages() == 0 || stats.events_total < 2.0 * self.min_events {
            return None;
        }

        // Partial Fisher-Yates draw of mtry distinct candidates, then sorted
        // ascending so ties resolve toward the lowest feature index.
        let m = self.feature_pool.len();
        for k in 0..self.mtry.min(m) {
            let j = k + rng.random_range(0..(m - k));
            self.feature_pool.swap(k, j);
        }
        let mut candidates: Vec<usize> = self.feature_pool[..self.mtry.min(m)].to_vec();
        candidates.sort_unstable();

        let mut order = std::mem::take(&mut self.scratch_order);
        let mut yl = std::mem::take(&mut self.scratch_yl);
        let mut best: Option<SplitChoice> = None;
        for &f in &candidates {
            scan_feature(
                &stats,
                members,
                self.mult,
                &self.data.columns[f],
                f,
                self.min_events,
                &mut yl,
                &mut order,
                &mut best,
            );
        }
        self.scratch_order = order;
        self.scratch_yl = yl;
        best
    }

    fn terminal_cif(&self, members: &[usize]) -> CifCurve {
        let parts: Vec<RiskSubject> = members
            .iter()
            .enumerate()
            .map(|(k, &i)| RiskSubject {
                entry: self.data.entry[i],
                exit: self.data.exit[i],
                event: self.data.event[i],
                weight: f64::from(self.mult[i]),
                household: k,
            })
            .collect();
        // Members are nonempty by construction, so the index always builds.
        let idx = RiskSetIndex::from_parts(parts).expect("terminal node is nonempty");
        aalen_johansen(&idx)
    }
}
