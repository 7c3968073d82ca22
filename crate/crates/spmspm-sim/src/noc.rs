//! On-chip network models: distribution network, multiplier network and
//! the merger-reduction tree.
//!
//! The distribution network behaves as a non-blocking crossbar with an
//! injection bandwidth cap; a multicast of one element to any number of
//! multipliers is a single injection. The merger-reduction network is a
//! binary tree whose internal nodes are configured per tile as adders
//! (reduce aligned psums), comparators (merge coordinate-sorted psum
//! streams, accumulating on coordinate match) or forwarders (pass through
//! across cluster boundaries). Timing contract: one element per node per
//! cycle, so an element traverses the tree in `log2(leaves)` cycles, and
//! the root egresses at most the configured merging bandwidth per cycle.

use std::collections::VecDeque;

use crate::sparse::{Element, Fiber};
use crate::{Error, Result};

/// A value plus the minor output coordinate it belongs to, as carried on
/// the MRN's paired links. `end_of_fiber` marks stream termination and is
/// never charged against bandwidth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaggedPsum {
    pub coord: usize,
    pub value: f64,
    pub end_of_fiber: bool,
}

impl TaggedPsum {
    pub fn new(coord: usize, value: f64) -> TaggedPsum {
        TaggedPsum {
            coord,
            value,
            end_of_fiber: false,
        }
    }

    pub fn end_marker() -> TaggedPsum {
        TaggedPsum {
            coord: usize::MAX,
            value: 0.0,
            end_of_fiber: true,
        }
    }
}

/// Multiplier unit operating mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MultiplierMode {
    /// Multiply the stationary element by the streamed input.
    Multiply,
    /// Forward the input (typically a psum) untouched to the MRN.
    Forwarder,
}

/// One multiplier step. In `Multiply` mode a stationary element must be
/// loaded; the product keeps the streamed coordinate.
pub fn multiplier_eval(
    mode: MultiplierMode,
    stationary: Option<Element>,
    input: TaggedPsum,
) -> Result<TaggedPsum> {
    match mode {
        MultiplierMode::Forwarder => Ok(input),
        MultiplierMode::Multiply => {
            let s = stationary.ok_or_else(|| {
                Error::Config("multiplier in multiply mode with no stationary element".into())
            })?;
            Ok(TaggedPsum {
                coord: input.coord,
                value: s.value * input.value,
                end_of_fiber: input.end_of_fiber,
            })
        }
    }
}

/// Operating mode of one internal MRN node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MrnNodeMode {
    Adder,
    Comparator,
    Forward,
}

/// Which input(s) a node consumed in one step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Consumed {
    Both,
    Left,
    Right,
    Neither,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeStep {
    pub emitted: Option<TaggedPsum>,
    pub consumed: Consumed,
}

/// Advances one MRN node given the heads of its two input streams.
///
/// * Adder: coordinates are aligned by construction; mismatch means the
///   schedule is broken and reports an invariant violation.
/// * Comparator: equal coordinates accumulate and consume both sides;
///   otherwise the lower-coordinate element is emitted and only that side
///   consumed; an exhausted side (end marker) drains the other.
/// * Forward: passes its single live input through unchanged.
pub fn mrn_node_step(
    mode: MrnNodeMode,
    left: Option<TaggedPsum>,
    right: Option<TaggedPsum>,
) -> Result<NodeStep> {
    let nothing = NodeStep {
        emitted: None,
        consumed: Consumed::Neither,
    };
    match mode {
        MrnNodeMode::Adder => match (left, right) {
            (Some(l), Some(r)) => {
                if l.end_of_fiber && r.end_of_fiber {
                    return Ok(NodeStep {
                        emitted: Some(TaggedPsum::end_marker()),
                        consumed: Consumed::Both,
                    });
                }
                if l.coord != r.coord {
                    return Err(Error::Invariant(format!(
                        "adder node saw mismatched coordinates {} vs {}",
                        l.coord, r.coord
                    )));
                }
                Ok(NodeStep {
                    emitted: Some(TaggedPsum::new(l.coord, l.value + r.value)),
                    consumed: Consumed::Both,
                })
            }
            (None, None) => Ok(nothing),
            _ => Err(Error::Invariant(
                "adder node received a single input".into(),
            )),
        },
        MrnNodeMode::Comparator => match (left, right) {
            (Some(l), Some(r)) => {
                if l.end_of_fiber && r.end_of_fiber {
                    Ok(NodeStep {
                        emitted: Some(TaggedPsum::end_marker()),
                        consumed: Consumed::Both,
                    })
                } else if l.end_of_fiber {
                    Ok(NodeStep {
                        emitted: Some(r),
                        consumed: Consumed::Right,
                    })
                } else if r.end_of_fiber {
                    Ok(NodeStep {
                        emitted: Some(l),
                        consumed: Consumed::Left,
                    })
                } else if l.coord == r.coord {
                    Ok(NodeStep {
                        emitted: Some(TaggedPsum::new(l.coord, l.value + r.value)),
                        consumed: Consumed::Both,
                    })
                } else if l.coord < r.coord {
                    Ok(NodeStep {
                        emitted: Some(l),
                        consumed: Consumed::Left,
                    })
                } else {
                    Ok(NodeStep {
                        emitted: Some(r),
                        consumed: Consumed::Right,
                    })
                }
            }
            // A comparator cannot emit with an unknown head on one side.
            _ => Ok(nothing),
        },
        MrnNodeMode::Forward => match (left, right) {
            (Some(l), None) => Ok(NodeStep {
                emitted: Some(l),
                consumed: Consumed::Left,
            }),
            (None, Some(r)) => Ok(NodeStep {
                emitted: Some(r),
                consumed: Consumed::Right,
            }),
            (None, None) => Ok(nothing),
            (Some(_), Some(_)) => Err(Error::Invariant(
                "forward node received two live inputs".into(),
            )),
        },
    }
}

/// One distribution-network injection: an element delivered to a set of
/// multiplier indices. Unicast, multicast and broadcast are all one
/// injection.
#[derive(Debug, Clone)]
pub struct Injection {
    pub element: Element,
    pub dests: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct DeliverySchedule {
    pub cycles: u64,
    /// Injection indices delivered on each cycle.
    pub waves: Vec<Vec<usize>>,
}

/// Schedules a batch of injections at the given bandwidth (injections per
/// cycle). The network is non-blocking, so the schedule is a plain wave
/// split: `ceil(n / bandwidth)` cycles.
pub fn distribute(
    injections: &[Injection],
    n_multipliers: usize,
    bandwidth: usize,
) -> Result<DeliverySchedule> {
    if bandwidth == 0 {
        return Err(Error::Config("distribution bandwidth must be positive".into()));
    }
    for (i, inj) in injections.iter().enumerate() {
        if inj.dests.iter().any(|&d| d >= n_multipliers) {
            return Err(Error::Input(format!(
                "injection {i} targets a multiplier outside 0..{n_multipliers}"
            )));
        }
    }
    let waves: Vec<Vec<usize>> = (0..injections.len())
        .collect::<Vec<_>>()
        .chunks(bandwidth)
        .map(|c| c.to_vec())
        .collect();
    Ok(DeliverySchedule {
        cycles: waves.len() as u64,
        waves,
    })
}

/// Merges coordinate-sorted fibers into one coordinate-sorted,
/// coordinate-unique fiber, accumulating values on coordinate matches.
/// Sums that cancel to zero stay in the output.
///
/// `width` is the number of tree leaves. With more fibers than leaves the
/// controller runs multiple passes, grouping `width` fibers at a time into
/// intermediate fibers until one remains; the returned pass count follows
/// that grouping.
pub fn merge_fibers(fibers: &[Fiber], width: usize) -> Result<(Fiber, usize)> {
    if width == 0 {
        return Err(Error::Config("merge width must be positive".into()));
    }
    for (i, f) in fibers.iter().enumerate() {
        if !f.is_sorted() {
            return Err(Error::Input(format!("input fiber {i} is not sorted")));
        }
    }
    if fibers.is_empty() {
        return Ok((Fiber::default(), 1));
    }

    let mut passes = 0usize;
    let mut level: Vec<Fiber> = fibers.to_vec();
    loop {
        passes += 1;
        level = level.chunks(width).map(merge_group).collect();
        if level.len() == 1 {
            return Ok((level.pop().expect("level is non-empty"), passes));
        }
    }
}

fn merge_group(fibers: &[Fiber]) -> Fiber {
    let mut cursors = vec![0usize; fibers.len()];
    let mut out = Vec::new();
    loop {
        let mut min_coord = usize::MAX;
        for (f, &c) in fibers.iter().zip(&cursors) {
            if c < f.len() {
                min_coord = min_coord.min(f.elements[c].coord);
            }
        }
        if min_coord == usize::MAX {
            break;
        }
        let mut sum = 0.0;
        for (f, c) in fibers.iter().zip(cursors.iter_mut()) {
            if *c < f.len() && f.elements[*c].coord == min_coord {
                sum += f.elements[*c].value;
                *c += 1;
            }
        }
        out.push(Element::new(min_coord, sum));
    }
    Fiber::new(out)
}

/// Per-tile MRN configuration: a power-of-two leaf count partitioned into
/// contiguous clusters. Nodes strictly inside one cluster's leaf span take
/// the cluster mode; nodes spanning clusters (or only idle leaves)
/// forward.
#[derive(Debug, Clone)]
pub struct MrnConfig {
    pub n_leaves: usize,
    /// Internal node modes in breadth-first order (root first).
    pub node_modes: Vec<MrnNodeMode>,
    /// Contiguous, non-overlapping leaf ranges, one per cluster.
    pub clusters: Vec<std::ops::Range<usize>>,
}

impl MrnConfig {
    pub fn for_clusters(
        n_leaves: usize,
        cluster_sizes: &[usize],
        cluster_mode: MrnNodeMode,
    ) -> Result<MrnConfig> {
        if !n_leaves.is_power_of_two() {
            return Err(Error::Config(format!(
                "leaf count must be a power of two, got {n_leaves}"
            )));
        }
        if cluster_mode == MrnNodeMode::Forward {
            return Err(Error::Config("cluster mode must be adder or comparator".into()));
        }
        let used: usize = cluster_sizes.iter().sum();
        if used > n_leaves {
            return Err(Error::Config(format!(
                "clusters need {used} leaves but the tree has {n_leaves}"
            )));
        }
        let mut clusters = Vec::with_capacity(cluster_sizes.len());
        let mut start = 0;
        for &s in cluster_sizes {
            if s == 0 {
                return Err(Error::Config("empty cluster".into()));
            }
            clusters.push(start..start + s);
            start += s;
        }

        let n_internal = n_leaves - 1;
        let mut node_modes = vec![MrnNodeMode::Forward; n_internal];
        // Breadth-first layout: node i covers a contiguous leaf span of
        // width n_leaves >> depth(i).
        for i in 0..n_internal {
            let depth = (i + 1).ilog2() as usize;
            let span = n_leaves >> depth;
            let lo = (i + 1 - (1 << depth)) * span;
            let hi = lo + span;
            let inside_one = clusters.iter().any(|c| c.start <= lo && hi <= c.end);
            node_modes[i] = if inside_one { cluster_mode } else { MrnNodeMode::Forward };
        }
        Ok(MrnConfig {
            n_leaves,
            node_modes,
            clusters,
        })
    }

    /// Pipeline depth in cycles: one level per cycle.
    pub fn depth(&self) -> u64 {
        self.n_leaves.ilog2() as u64
    }
}

/// Timing model of the tree as a pipeline: an item pushed on cycle `t`
/// reaches the root at `t + depth`, and the root egresses at most
/// `egress_bw` items per cycle in push order.
#[derive(Debug)]
pub struct MrnPipe<T> {
    depth: u64,
    egress_bw: usize,
    queue: VecDeque<(u64, T)>,
}

impl<T> MrnPipe<T> {
    pub fn new(depth: u64, egress_bw: usize) -> MrnPipe<T> {
        MrnPipe {
            depth,
            egress_bw,
            queue: VecDeque::new(),
        }
    }

    pub fn push(&mut self, now: u64, item: T) {
        self.queue.push_back((now + self.depth, item));
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    /// Items whose tree traversal has completed by `now`, up to the egress
    /// bandwidth. `budget` lets the caller throttle further (e.g. bank
    /// availability); the effective cap is `min(budget, egress_bw)`.
    pub fn pop_ready(&mut self, now: u64, budget: usize) -> Vec<T> {
        let mut out = Vec::new();
        while out.len() < budget.min(self.egress_bw) {
            match self.queue.front() {
                Some((ready, _)) if *ready <= now => {
                    out.push(self.queue.pop_front().expect("front checked").1);
                }
                _ => break,
            }
        }
        out
    }

    /// Peek helper used when the consumer must inspect the head before
    /// deciding to take it (e.g. psum store bank arbitration).
    pub fn peek_ready(&self, now: u64) -> Option<&T> {
        match self.queue.front() {
            Some((ready, item)) if *ready <= now => Some(item),
            _ => None,
        }
    }

    pub fn pop_front(&mut self) -> Option<T> {
        self.queue.pop_front().map(|(_, t)| t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    #[test]
    fn distribute_one_wave() {
        let inj: Vec<Injection> = (0..16)
            .map(|i| Injection {
                element: Element::new(i, 1.0),
                dests: vec![i],
            })
            .collect();
        assert_eq!(distribute(&inj, 16, 16).unwrap().cycles, 1);
    }

    #[test]
    fn distribute_broadcast_is_one_injection() {
        let inj = vec![Injection {
            element: Element::new(0, 1.0),
            dests: (0..64).collect(),
        }];
        assert_eq!(distribute(&inj, 64, 16).unwrap().cycles, 1);
    }

    #[test]
    fn distribute_ceiling_division() {
        let inj: Vec<Injection> = (0..33)
            .map(|i| Injection {
                element: Element::new(i, 1.0),
                dests: vec![i % 8],
            })
            .collect();
        let sched = distribute(&inj, 8, 16).unwrap();
        assert_eq!(sched.cycles, 3);
        assert_eq!(sched.waves.iter().map(Vec::len).sum::<usize>(), 33);
    }

    #[test]
    fn distribute_rejects_bad_destination() {
        let inj = vec![Injection {
            element: Element::new(0, 1.0),
            dests: vec![8],
        }];
        assert!(distribute(&inj, 8, 16).is_err());
    }

    #[test]
    fn multiplier_modes() {
        let p = multiplier_eval(
            MultiplierMode::Multiply,
            Some(Element::new(9, 3.0)),
            TaggedPsum::new(5, 4.0),
        )
        .unwrap();
        assert_eq!((p.coord, p.value), (5, 12.0));

        let f = multiplier_eval(MultiplierMode::Forwarder, None, TaggedPsum::new(2, 7.0)).unwrap();
        assert_eq!((f.coord, f.value), (2, 7.0));

        let one = multiplier_eval(
            MultiplierMode::Multiply,
            Some(Element::new(0, 1.0)),
            TaggedPsum::new(0, 42.0),
        )
        .unwrap();
        assert_eq!(one.value, 42.0);

        assert!(multiplier_eval(MultiplierMode::Multiply, None, TaggedPsum::new(0, 1.0)).is_err());
    }

    #[test]
    fn comparator_accumulates_equal_coords() {
        let s = mrn_node_step(
            MrnNodeMode::Comparator,
            Some(TaggedPsum::new(0, 2.0)),
            Some(TaggedPsum::new(0, 3.0)),
        )
        .unwrap();
        assert_eq!(s.emitted, Some(TaggedPsum::new(0, 5.0)));
        assert_eq!(s.consumed, Consumed::Both);
    }

    #[test]
    fn comparator_emits_lower_coordinate() {
        let s = mrn_node_step(
            MrnNodeMode::Comparator,
            Some(TaggedPsum::new(0, 2.0)),
            Some(TaggedPsum::new(1, 3.0)),
        )
        .unwrap();
        assert_eq!(s.emitted, Some(TaggedPsum::new(0, 2.0)));
        assert_eq!(s.consumed, Consumed::Left);
    }

    #[test]
    fn comparator_drains_past_end_marker() {
        let s = mrn_node_step(
            MrnNodeMode::Comparator,
            Some(TaggedPsum::end_marker()),
            Some(TaggedPsum::new(4, 1.0)),
        )
        .unwrap();
        assert_eq!(s.emitted, Some(TaggedPsum::new(4, 1.0)));
        assert_eq!(s.consumed, Consumed::Right);
    }

    #[test]
    fn adder_sums_aligned_coords() {
        let s = mrn_node_step(
            MrnNodeMode::Adder,
            Some(TaggedPsum::new(7, 2.0)),
            Some(TaggedPsum::new(7, 3.0)),
        )
        .unwrap();
        assert_eq!(s.emitted, Some(TaggedPsum::new(7, 5.0)));
    }

    #[test]
    fn adder_mismatch_is_invariant_violation() {
        assert!(mrn_node_step(
            MrnNodeMode::Adder,
            Some(TaggedPsum::new(0, 1.0)),
            Some(TaggedPsum::new(1, 1.0)),
        )
        .is_err());
    }

    fn fiber(elems: &[(usize, f64)]) -> Fiber {
        Fiber::new(elems.iter().map(|&(c, v)| Element::new(c, v)).collect())
    }

    /// Reference merge: accumulate into an ordered map. Shares no code
    /// with the cursor-based implementation.
    fn merge_oracle(fibers: &[Fiber]) -> Vec<(usize, f64)> {
        let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
        for f in fibers {
            for e in &f.elements {
                *acc.entry(e.coord).or_insert(0.0) += e.value;
            }
        }
        acc.into_iter().collect()
    }

    #[test]
    fn merge_two_singletons() {
        let (out, passes) = merge_fibers(&[fiber(&[(0, 1.0)]), fiber(&[(0, 2.0)])], 16).unwrap();
        assert_eq!(out, fiber(&[(0, 3.0)]));
        assert_eq!(passes, 1);
    }

    #[test]
    fn merge_walkthrough_row1_psum_fibers() {
        // Psum fibers of output row 1 in the walk-through: products of
        // A(1,0)=3, A(1,2)=4, A(1,3)=5 with their B rows.
        let fibers = [
            fiber(&[(1, 21.0), (3, 3.0)]),
            fiber(&[(0, 20.0), (1, 12.0)]),
            fiber(&[(0, 20.0), (2, 40.0), (3, 45.0)]),
        ];
        let (out, passes) = merge_fibers(&fibers, 4).unwrap();
        assert_eq!(passes, 1);
        let want: Vec<Element> = merge_oracle(&fibers)
            .into_iter()
            .map(|(c, v)| Element::new(c, v))
            .collect();
        assert_eq!(out.elements, want);
    }

    #[test]
    fn merge_seventeen_fibers_takes_two_passes() {
        let fibers: Vec<Fiber> = (0..17).map(|i| fiber(&[(i, 1.0)])).collect();
        let (out, passes) = merge_fibers(&fibers, 16).unwrap();
        assert_eq!(passes, 2);
        assert_eq!(out.len(), 17);
        assert!(out.is_sorted());
    }

    #[test]
    fn merge_rejects_unsorted_input() {
        assert!(merge_fibers(&[fiber(&[(3, 1.0), (1, 1.0)])], 4).is_err());
    }

    #[test]
    fn merge_keeps_zero_sums() {
        let (out, _) = merge_fibers(&[fiber(&[(2, 5.0)]), fiber(&[(2, -5.0)])], 4).unwrap();
        assert_eq!(out, fiber(&[(2, 0.0)]));
    }

    #[test]
    fn merge_matches_oracle_exhaustively() {
        // Every fiber count up to 4, every length up to 4, coords drawn
        // from a small universe via a counter-driven pattern.
        for n_fibers in 1..=4usize {
            for pattern in 0..256u32 {
                let mut fibers = Vec::new();
                let mut x = pattern;
                for _ in 0..n_fibers {
                    let len = (x % 5) as usize;
                    x = x.rotate_left(3).wrapping_add(0x9e37);
                    let mut coords: Vec<usize> = (0..len)
                        .map(|_| {
                            let c = (x % 6) as usize;
                            x = x.rotate_left(5).wrapping_add(0x79b9);
                            c
                        })
                        .collect();
                    coords.sort_unstable();
                    coords.dedup();
                    fibers.push(fiber(
                        &coords
                            .iter()
                            .map(|&c| (c, (c + 1) as f64))
                            .collect::<Vec<_>>(),
                    ));
                }
                let (out, _) = merge_fibers(&fibers, 4).unwrap();
                let want: Vec<Element> = merge_oracle(&fibers)
                    .into_iter()
                    .map(|(c, v)| Element::new(c, v))
                    .collect();
                assert_eq!(out.elements, want);
                assert!(out.is_sorted(), "output must be sorted and unique");
            }
        }
    }

    #[test]
    fn adder_cluster_reduces_to_dot_product() {
        // Reducing k aligned products through adders equals the scalar sum.
        let products: Vec<f64> = vec![3.0, -1.0, 4.0, 1.5];
        let mut level: Vec<TaggedPsum> = products.iter().map(|&v| TaggedPsum::new(9, v)).collect();
        while level.len() > 1 {
            let mut next = Vec::new();
            for pair in level.chunks(2) {
                if pair.len() == 2 {
                    let s = mrn_node_step(MrnNodeMode::Adder, Some(pair[0]), Some(pair[1]))
                        .unwrap()
                        .emitted
                        .unwrap();
                    next.push(s);
                } else {
                    next.push(pair[0]);
                }
            }
            level = next;
        }
        assert_eq!(level[0].value, products.iter().sum::<f64>());
    }

    #[test]
    fn mrn_config_modes() {
        // 8 leaves, clusters of 4+4: the two subtree roots and their
        // children are cluster-mode, the tree root spans both and forwards.
        let cfg = MrnConfig::for_clusters(8, &[4, 4], MrnNodeMode::Adder).unwrap();
        assert_eq!(cfg.node_modes[0], MrnNodeMode::Forward);
        assert!(cfg.node_modes[1..].iter().all(|&m| m == MrnNodeMode::Adder));
        assert_eq!(cfg.depth(), 3);

        // A cluster of 3 inside 4 leaves: node over leaves {0,1} is inside,
        // node over {2,3} spans the cluster edge and forwards.
        let cfg = MrnConfig::for_clusters(4, &[3, 1], MrnNodeMode::Comparator).unwrap();
        assert_eq!(cfg.node_modes[0], MrnNodeMode::Forward);
        assert_eq!(cfg.node_modes[1], MrnNodeMode::Comparator);
        assert_eq!(cfg.node_modes[2], MrnNodeMode::Forward);

        assert!(MrnConfig::for_clusters(6, &[3, 3], MrnNodeMode::Adder).is_err());
        assert!(MrnConfig::for_clusters(8, &[5, 4], MrnNodeMode::Adder).is_err());
    }

    #[test]
    fn pipe_latency_is_tree_depth() {
        let mut pipe: MrnPipe<u32> = MrnPipe::new(6, 16);
        pipe.push(10, 1);
        assert!(pipe.pop_ready(15, 16).is_empty());
        assert_eq!(pipe.pop_ready(16, 16), vec![1]);
    }

    #[test]
    fn pipe_sustains_egress_bandwidth() {
        let mut pipe: MrnPipe<u32> = MrnPipe::new(4, 16);
        for i in 0..48 {
            pipe.push(0, i);
        }
        assert_eq!(pipe.pop_ready(4, usize::MAX).len(), 16);
        assert_eq!(pipe.pop_ready(5, usize::MAX).len(), 16);
        assert_eq!(pipe.pop_ready(6, usize::MAX).len(), 16);
        assert!(pipe.is_empty());
    }
}
