//! Structured scene snapshot with a canonical text form and digest.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::geometry::{self, cells_of, connector_index, on_shoulder, Occupancy};
use super::road::{Cell, CellSpan, Heading, Movement, SegmentId, SegmentKind};
use super::{CollisionEvent, VehicleId, WorldState};

/// Round to the observation resolution of 0.01.
pub fn quantize(x: f64) -> f64 {
    let q = (x * 100.0).round() / 100.0;
    if q == 0.0 {
        0.0
    } else {
        q
    }
}

fn quantize_opt(x: Option<f64>) -> Option<f64> {
    x.map(quantize)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentRow {
    pub id: SegmentId,
    pub kind: String,
    pub length: f64,
    pub lanes: u8,
    pub heading: Heading,
    pub ring: bool,
    pub movement: Option<Movement>,
    pub cells: Vec<CellSpan>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VehicleRow {
    pub id: VehicleId,
    pub segment: SegmentId,
    pub lane: u8,
    pub on_shoulder: bool,
    pub s: f64,
    /// Signed: negative while reversing.
    pub v: f64,
    pub desired: f64,
    pub length: f64,
    pub heading: Heading,
    pub wrecked: bool,
    pub exited: bool,
    pub stopped_ticks: u64,
    pub route: Vec<SegmentId>,
    pub route_index: usize,
    pub movement: Option<Movement>,
    pub cells: Vec<Cell>,
    pub next_cell: Option<Cell>,
    pub granted: bool,
    pub box_entry_tick: Option<u64>,
    pub last_lane_change: Option<u64>,
    pub leader: Option<VehicleId>,
    pub gap_ahead: Option<f64>,
    pub gap_behind: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneObservation {
    pub tick: u64,
    pub dt: f64,
    pub has_intersection: bool,
    pub segments: Vec<SegmentRow>,
    pub vehicles: Vec<VehicleRow>,
    pub collisions: Vec<CollisionEvent>,
}

impl SceneObservation {
    pub fn vehicle(&self, id: VehicleId) -> Option<&VehicleRow> {
        self.vehicles.iter().find(|v| v.id == id)
    }

    pub fn segment(&self, id: SegmentId) -> Option<&SegmentRow> {
        self.segments.iter().find(|s| s.id == id)
    }

    /// One line per item, fixed field order, two decimals.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(
            out,
            "SCENE tick={} dt={:.2} intersection={} vehicles={}",
            self.tick,
            self.dt,
            self.has_intersection,
            self.vehicles.len()
        )
        .unwrap();
        for seg in &self.segments {
            if seg.kind == "connector" {
                let cells: Vec<String> = seg
                    .cells
                    .iter()
                    .map(|c| format!("{}:{:.2}-{:.2}", c.cell.token(), c.from, c.to))
                    .collect();
                writeln!(
                    out,
                    "CONNECTOR id={} heading={} movement={} length={:.2} cells={}",
                    seg.id,
                    seg.heading.token(),
                    seg.movement.map(|m| m.token()).unwrap_or("-"),
                    seg.length,
                    cells.join(",")
                )
                .unwrap();
            } else {
                writeln!(
                    out,
                    "SEGMENT id={} kind={} heading={} length={:.2} lanes={} ring={}",
                    seg.id,
                    seg.kind,
                    seg.heading.token(),
                    seg.length,
                    seg.lanes,
                    seg.ring
                )
                .unwrap();
            }
        }
        if self.has_intersection {
            for cell in Cell::ALL {
                let holders: Vec<String> = self
                    .vehicles
                    .iter()
                    .filter(|v| v.cells.contains(&cell))
                    .map(|v| v.id.to_string())
                    .collect();
                let holders = if holders.is_empty() { "-".to_string() } else { holders.join(",") };
                writeln!(out, "CELL {} occupants={}", cell.token(), holders).unwrap();
            }
        }
        let opt = |x: Option<f64>| x.map(|x| format!("{x:.2}")).unwrap_or_else(|| "-".into());
        for v in &self.vehicles {
            let route: Vec<String> = v.route.iter().map(|s| s.to_string()).collect();
            let cells: Vec<&str> = v.cells.iter().map(|c| c.token()).collect();
            writeln!(
                out,
                "VEHICLE {} seg={} lane={} shoulder={} s={:.2} v={:.2} desired={:.2} len={:.2} heading={} \
                 wrecked={} exited={} stopped={} route={} idx={} movement={} cells={} next_cell={} granted={} \
                 box_entry={} last_lane_change={} leader={} gap_ahead={} gap_behind={}",
                v.id,
                v.segment,
                v.lane,
                v.on_shoulder,
                v.s,
                v.v,
                v.desired,
                v.length,
                v.heading.token(),
                v.wrecked,
                v.exited,
                v.stopped_ticks,
                route.join(","),
                v.route_index,
                v.movement.map(|m| m.token()).unwrap_or("-"),
                if cells.is_empty() { "-".to_string() } else { cells.join(",") },
                v.next_cell.map(|c| c.token()).unwrap_or("-"),
                v.granted,
                v.box_entry_tick.map(|t| t.to_string()).unwrap_or_else(|| "-".into()),
                v.last_lane_change.map(|t| t.to_string()).unwrap_or_else(|| "-".into()),
                v.leader.map(|l| l.to_string()).unwrap_or_else(|| "-".into()),
                opt(v.gap_ahead),
                opt(v.gap_behind),
            )
            .unwrap();
        }
        for c in &self.collisions {
            writeln!(out, "COLLISION tick={} a={} b={} site={}", c.tick, c.a, c.b, c.site).unwrap();
        }
        out
    }

    /// Hex sha256 of the canonical text.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }
}

fn kind_token(kind: &SegmentKind) -> &'static str {
    match kind {
        SegmentKind::Road => "road",
        SegmentKind::Inbound => "inbound",
        SegmentKind::Outbound => "outbound",
        SegmentKind::Connector { .. } => "connector",
    }
}

/// Nearest vehicle body ahead on the same lane (walking the route) and its gap.
fn leader_of(world: &WorldState, occ: &Occupancy, id: VehicleId) -> Option<(VehicleId, f64)> {
    let v = &world.vehicles[&id];
    let front = v.s + v.length / 2.0;
    let ring_self = world.road.segment(v.lane.segment).ring;
    let mut best: Option<(VehicleId, f64)> = None;
    for step in geometry::walk_forward(&world.road, v, world.config.lookahead) {
        if let Some(list) = occ.by_lane.get(&(step.segment, step.lane)) {
            for (other, lo, _) in list {
                let lo = lo + step.offset;
                if *other != id && lo > v.s {
                    let gap = lo - front;
                    if best.map(|(_, g)| gap < g).unwrap_or(true) {
                        best = Some((*other, gap));
                    }
                }
            }
        }
        if ring_self && step.offset > 0.0 {
            break;
        }
    }
    best
}

pub(super) fn observe(world: &WorldState) -> SceneObservation {
    let road = &world.road;
    let occ = Occupancy::build(world);
    let segments = road
        .segments
        .iter()
        .map(|seg| SegmentRow {
            id: seg.id,
            kind: kind_token(&seg.kind).to_string(),
            length: quantize(seg.length),
            lanes: seg.lanes,
            heading: seg.heading,
            ring: seg.ring,
            movement: seg.movement(),
            cells: seg.cells().to_vec(),
        })
        .collect();
    let mut vehicles = Vec::new();
    for v in world.vehicles.values() {
        let seg = road.segment(v.lane.segment);
        let (cells, next_cell, movement) = match connector_index(road, v) {
            Some(ci) if !v.exited => {
                let spans = &occ.spans[&v.id];
                let mine: Vec<Cell> = {
                    let mut c: Vec<Cell> = cells_of(road, spans).into_iter().map(|(c, _)| c).collect();
                    c.dedup();
                    c
                };
                let connector = road.segment(v.route[ci]);
                let front = v.s + v.length / 2.0;
                let front_on_connector = if v.route_index == ci {
                    front
                } else if v.route_index + 1 == ci {
                    front - seg.length
                } else {
                    f64::NEG_INFINITY
                };
                let next = if v.route_index > ci {
                    None
                } else {
                    connector
                        .cells()
                        .iter()
                        .find(|c| c.to > front_on_connector + 1e-9 && !mine.contains(&c.cell))
                        .map(|c| c.cell)
                };
                (mine, next, connector.movement())
            }
            Some(ci) => (Vec::new(), None, road.segment(v.route[ci]).movement()),
            None => (Vec::new(), None, None),
        };
        let leader = if v.exited { None } else { leader_of(world, &occ, v.id) };
        let gap_behind = if v.exited {
            None
        } else {
            geometry::follower_gap(world, &occ, v, world.config.lookahead).map(|(g, _)| g)
        };
        vehicles.push(VehicleRow {
            id: v.id,
            segment: seg.id,
            lane: v.lane.index,
            on_shoulder: on_shoulder(road, v),
            s: quantize(v.s),
            v: quantize(v.signed_speed()),
            desired: quantize(v.desired),
            length: quantize(v.length),
            heading: seg.heading,
            wrecked: v.wrecked,
            exited: v.exited,
            stopped_ticks: v.stopped_ticks,
            route: v.route.clone(),
            route_index: v.route_index,
            movement,
            cells,
            next_cell,
            granted: v.granted,
            box_entry_tick: v.box_entry_tick,
            last_lane_change: v.last_lane_change,
            leader: leader.map(|(id, _)| id),
            gap_ahead: quantize_opt(leader.map(|(_, g)| g)),
            gap_behind: quantize_opt(gap_behind),
        });
    }
    SceneObservation {
        tick: world.tick,
        dt: world.config.dt,
        has_intersection: road.intersection.is_some(),
        segments,
        vehicles,
        collisions: world.collisions.clone(),
    }
}
