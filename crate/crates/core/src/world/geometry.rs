//! Body spans, route walking and conflict-box occupancy.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use super::road::{Cell, RoadNet, SegmentId};
use super::{CollisionEvent, CollisionSite, VehicleId, VehicleState, WorldState};

const EPS: f64 = 1e-9;

/// The part of a vehicle body lying on one lane of one segment.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Span {
    pub segment: SegmentId,
    pub lane: u8,
    pub lo: f64,
    pub hi: f64,
}

pub fn on_shoulder(road: &RoadNet, v: &VehicleState) -> bool {
    let seg = road.segment(v.lane.segment);
    seg.has_shoulder() && v.lane.index == seg.shoulder_index()
}

fn lane_on(road: &RoadNet, segment: SegmentId, index: u8) -> u8 {
    let lanes = road.segment(segment).lanes.max(1);
    index.min(lanes - 1)
}

/// Next route position, wrapping on ring segments.
pub fn next_route(road: &RoadNet, v: &VehicleState, idx: usize) -> Option<usize> {
    if on_shoulder(road, v) {
        return None;
    }
    if idx + 1 < v.route.len() {
        Some(idx + 1)
    } else if road.segment(v.route[idx]).ring {
        Some(idx)
    } else {
        None
    }
}

pub fn prev_route(road: &RoadNet, v: &VehicleState, idx: usize) -> Option<usize> {
    if on_shoulder(road, v) {
        return None;
    }
    if idx > 0 {
        Some(idx - 1)
    } else if road.segment(v.route[idx]).ring {
        Some(idx)
    } else {
        None
    }
}

/// Body spans of a vehicle placed at `s` on its current segment.
pub fn spans_at(road: &RoadNet, v: &VehicleState, s: f64) -> Vec<Span> {
    if v.exited {
        return Vec::new();
    }
    let half = v.length / 2.0;
    let seg = road.segment(v.lane.segment);
    if on_shoulder(road, v) {
        return vec![Span {
            segment: seg.id,
            lane: v.lane.index,
            lo: (s - half).max(0.0),
            hi: (s + half).min(seg.length),
        }];
    }
    let mut out = vec![Span {
        segment: seg.id,
        lane: v.lane.index,
        lo: (s - half).max(0.0),
        hi: (s + half).min(seg.length),
    }];
    // ahead
    let mut overflow = s + half - seg.length;
    let mut idx = v.route_index;
    while overflow > EPS {
        let Some(n) = next_route(road, v, idx) else { break };
        let nseg = road.segment(v.route[n]);
        out.push(Span {
            segment: nseg.id,
            lane: lane_on(road, nseg.id, v.lane.index),
            lo: 0.0,
            hi: overflow.min(nseg.length),
        });
        overflow -= nseg.length;
        idx = n;
    }
    // behind
    let mut underflow = half - s;
    let mut idx = v.route_index;
    while underflow > EPS {
        let Some(p) = prev_route(road, v, idx) else { break };
        let pseg = road.segment(v.route[p]);
        out.push(Span {
            segment: pseg.id,
            lane: lane_on(road, pseg.id, v.lane.index),
            lo: (pseg.length - underflow).max(0.0),
            hi: pseg.length,
        });
        underflow -= pseg.length;
        idx = p;
    }
    out
}

pub fn spans(road: &RoadNet, v: &VehicleState) -> Vec<Span> {
    spans_at(road, v, v.s)
}

/// Cells overlapped by a set of spans.
pub fn cells_of(road: &RoadNet, spans: &[Span]) -> Vec<(Cell, SegmentId)> {
    let mut out = Vec::new();
    for span in spans {
        for cell in road.segment(span.segment).cells() {
            if span.lo < cell.to - EPS && span.hi > cell.from + EPS {
                out.push((cell.cell, span.segment));
            }
        }
    }
    out
}

/// Route index of the connector on a vehicle's route, if any.
pub fn connector_index(road: &RoadNet, v: &VehicleState) -> Option<usize> {
    v.route.iter().position(|id| road.segment(*id).is_connector())
}

/// One segment on a walk along a route, with its start expressed in the
/// coordinates of the walker's current segment.
#[derive(Clone, Copy, Debug)]
pub struct WalkStep {
    pub route_index: usize,
    pub segment: SegmentId,
    pub lane: u8,
    pub offset: f64,
}

pub fn walk_forward(road: &RoadNet, v: &VehicleState, horizon: f64) -> Vec<WalkStep> {
    let mut out = vec![WalkStep {
        route_index: v.route_index,
        segment: v.lane.segment,
        lane: v.lane.index,
        offset: 0.0,
    }];
    let mut offset = road.segment(v.lane.segment).length;
    let mut idx = v.route_index;
    while offset < v.s + horizon {
        let Some(n) = next_route(road, v, idx) else { break };
        let seg = v.route[n];
        out.push(WalkStep { route_index: n, segment: seg, lane: lane_on(road, seg, v.lane.index), offset });
        offset += road.segment(seg).length;
        idx = n;
    }
    out
}

pub fn walk_backward(road: &RoadNet, v: &VehicleState, horizon: f64) -> Vec<WalkStep> {
    let mut out = vec![WalkStep {
        route_index: v.route_index,
        segment: v.lane.segment,
        lane: v.lane.index,
        offset: 0.0,
    }];
    let mut offset = 0.0;
    let mut idx = v.route_index;
    while offset > v.s - horizon {
        let Some(p) = prev_route(road, v, idx) else { break };
        let seg = v.route[p];
        offset -= road.segment(seg).length;
        out.push(WalkStep { route_index: p, segment: seg, lane: lane_on(road, seg, v.lane.index), offset });
        idx = p;
    }
    out
}

/// (vehicle, rear, front) along one lane.
pub type LaneBodies = Vec<(VehicleId, f64, f64)>;

/// Per-tick spatial index.
pub struct Occupancy {
    pub spans: BTreeMap<VehicleId, Vec<Span>>,
    pub by_lane: HashMap<(SegmentId, u8), LaneBodies>,
    /// cell -> (vehicle, connector it occupies the cell from)
    pub cells: BTreeMap<Cell, Vec<(VehicleId, SegmentId)>>,
    /// cell -> vehicles holding a claim (in the box or granted)
    pub claims: BTreeMap<Cell, BTreeSet<VehicleId>>,
}

impl Occupancy {
    pub fn build(world: &WorldState) -> Occupancy {
        let road = &world.road;
        let mut spans_map = BTreeMap::new();
        let mut by_lane: HashMap<(SegmentId, u8), LaneBodies> = HashMap::new();
        let mut cells: BTreeMap<Cell, Vec<(VehicleId, SegmentId)>> = BTreeMap::new();
        let mut claims: BTreeMap<Cell, BTreeSet<VehicleId>> = BTreeMap::new();
        for v in world.vehicles.values() {
            if v.exited {
                continue;
            }
            let sp = spans(road, v);
            for span in &sp {
                by_lane.entry((span.segment, span.lane)).or_default().push((v.id, span.lo, span.hi));
            }
            for (cell, seg) in cells_of(road, &sp) {
                cells.entry(cell).or_default().push((v.id, seg));
            }
            for cell in claimed_cells(road, v, &sp) {
                claims.entry(cell).or_default().insert(v.id);
            }
            spans_map.insert(v.id, sp);
        }
        Occupancy { spans: spans_map, by_lane, cells, claims }
    }

    pub fn cell_blocked_for(&self, cell: Cell, me: VehicleId, my_connector: SegmentId) -> bool {
        self.cells
            .get(&cell)
            .map(|list| list.iter().any(|(id, seg)| *id != me && *seg != my_connector))
            .unwrap_or(false)
    }

    pub fn cell_claimed_by_other(&self, cell: Cell, me: VehicleId) -> bool {
        self.claims
            .get(&cell)
            .map(|set| set.iter().any(|id| *id != me))
            .unwrap_or(false)
    }
}

/// Cells a vehicle holds: what it occupies plus the rest of its path once it
/// is in the box or has been granted entry.
pub fn claimed_cells(road: &RoadNet, v: &VehicleState, sp: &[Span]) -> Vec<Cell> {
    let Some(ci) = connector_index(road, v) else { return Vec::new() };
    let connector = road.segment(v.route[ci]);
    let on_connector = sp.iter().find(|s| s.segment == connector.id);
    let mut out = Vec::new();
    match on_connector {
        Some(span) => {
            for cell in connector.cells() {
                if cell.to > span.lo + EPS {
                    out.push(cell.cell);
                }
            }
        }
        None if v.granted && v.route_index < ci => {
            out.extend(connector.cells().iter().map(|c| c.cell));
        }
        None => {}
    }
    out
}

/// Nearest thing ahead on the route: (gap from front bumper, its signed speed).
pub fn leader_gap(world: &WorldState, occ: &Occupancy, v: &VehicleState) -> Option<(f64, f64)> {
    obstacles_ahead(world, occ, v).into_iter().min_by(|a, b| a.0.total_cmp(&b.0))
}

/// Every constraint ahead: the nearest vehicle body, the stop line when not
/// granted, and the first cell held from another connector. A static
/// obstacle further away can bind harder than a moving leader close by.
pub fn obstacles_ahead(world: &WorldState, occ: &Occupancy, v: &VehicleState) -> Vec<(f64, f64)> {
    let road = &world.road;
    let front = v.s + v.length / 2.0;
    let mut out = Vec::new();
    let mut nearest: Option<(f64, f64)> = None;
    let steps = walk_forward(road, v, world.config.lookahead);
    let ring_self = road.segment(v.lane.segment).ring;
    for step in &steps {
        if let Some(list) = occ.by_lane.get(&(step.segment, step.lane)) {
            for (id, lo, _) in list {
                if *id == v.id {
                    continue;
                }
                let lo = lo + step.offset;
                // bodies whose rear lies ahead of our centre are leaders
                if lo > v.s - EPS && nearest.map(|(g, _)| lo - front < g).unwrap_or(true) {
                    nearest = Some((lo - front, world.vehicles[id].signed_speed()));
                }
            }
        }
        if ring_self && step.offset > 0.0 {
            break;
        }
    }
    out.extend(nearest);
    // stop line and occupied cells
    if let Some(ci) = connector_index(road, v) {
        if let Some(step) = steps.iter().find(|s| s.route_index == ci && s.offset >= 0.0) {
            let connector = road.segment(step.segment);
            let me_spans = &occ.spans[&v.id];
            let on_connector = me_spans.iter().any(|s| s.segment == connector.id);
            if !v.granted && !on_connector && v.route_index < ci {
                out.push((step.offset - front, 0.0));
            }
            let mine: Vec<Cell> = cells_of(road, me_spans).into_iter().map(|(c, _)| c).collect();
            for cell in connector.cells() {
                if mine.contains(&cell.cell) {
                    continue;
                }
                let start = step.offset + cell.from;
                if start + EPS < front {
                    continue;
                }
                if occ.cell_blocked_for(cell.cell, v.id, connector.id) {
                    out.push((start - front, 0.0));
                    break;
                }
            }
        }
    }
    out
}

/// Nearest thing behind: (gap from rear bumper to its front, its signed speed).
/// A route start without predecessor counts as a wall.
pub fn follower_gap(world: &WorldState, occ: &Occupancy, v: &VehicleState, horizon: f64) -> Option<(f64, f64)> {
    let road = &world.road;
    let rear = v.s - v.length / 2.0;
    let mut best: Option<(f64, f64)> = None;
    let steps = walk_backward(road, v, horizon);
    let ring_self = road.segment(v.lane.segment).ring;
    for step in &steps {
        if let Some(list) = occ.by_lane.get(&(step.segment, step.lane)) {
            for (id, _, hi) in list {
                if *id == v.id {
                    continue;
                }
                let hi = hi + step.offset;
                if hi < v.s + EPS {
                    let gap = rear - hi;
                    if best.map(|(g, _)| gap < g).unwrap_or(true) {
                        best = Some((gap, world.vehicles[id].signed_speed()));
                    }
                }
            }
        }
        if ring_self && step.offset < 0.0 {
            break;
        }
    }
    let last = steps.last().unwrap();
    if prev_route(road, v, last.route_index).is_none() {
        let gap = rear - last.offset;
        if best.map(|(g, _)| gap < g).unwrap_or(true) {
            best = Some((gap, 0.0));
        }
    }
    best
}

pub fn detect_collisions(world: &WorldState) -> Vec<CollisionEvent> {
    let occ = Occupancy::build(world);
    let mut pairs: BTreeMap<(VehicleId, VehicleId), CollisionSite> = BTreeMap::new();
    let mut lanes: Vec<_> = occ.by_lane.iter().collect();
    lanes.sort_by_key(|(k, _)| **k);
    for ((segment, lane), list) in lanes {
        for i in 0..list.len() {
            for j in (i + 1)..list.len() {
                let (a, alo, ahi) = list[i];
                let (b, blo, bhi) = list[j];
                if a == b {
                    continue;
                }
                if alo < bhi - EPS && blo < ahi - EPS {
                    let key = if a < b { (a, b) } else { (b, a) };
                    let s = (alo.max(blo) + ahi.min(bhi)) / 2.0;
                    pairs.entry(key).or_insert(CollisionSite::Lane { segment: *segment, lane: *lane, s });
                }
            }
        }
    }
    for (cell, list) in &occ.cells {
        for i in 0..list.len() {
            for j in (i + 1)..list.len() {
                let (a, sa) = list[i];
                let (b, sb) = list[j];
                if a != b && sa != sb {
                    let key = if a < b { (a, b) } else { (b, a) };
                    pairs.entry(key).or_insert(CollisionSite::Cell { cell: *cell });
                }
            }
        }
    }
    pairs
        .into_iter()
        .map(|((a, b), site)| CollisionEvent { tick: world.tick, a, b, site })
        .collect()
}
