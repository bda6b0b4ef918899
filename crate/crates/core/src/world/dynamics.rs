use std::collections::BTreeSet;

use super::geometry::{self, connector_index, on_shoulder, Occupancy};
use super::road::{Cell, LaneId, SegmentKind};
use super::{
    ActiveControl, ControlInput, ControlStatus, LaneSide, SpeedRelease, VehicleId, VehicleState,
    WorldConfig, WorldState,
};

const EPS: f64 = 1e-9;

pub(super) fn step(world: &mut WorldState) {
    world.tick += 1;
    update_grants(world);
    lane_changes(world);

    let occ = Occupancy::build(world);
    let motions: Vec<(VehicleId, Motion)> = world
        .vehicles
        .values()
        .filter(|v| !v.exited)
        .map(|v| (v.id, decide(world, &occ, v)))
        .collect();
    for (id, motion) in motions {
        apply(world, id, motion);
    }

    let occ = Occupancy::build(world);
    let tick = world.tick;
    for v in world.vehicles.values_mut() {
        if v.exited {
            continue;
        }
        let spans = &occ.spans[&v.id];
        let in_box = spans.iter().any(|s| world.road.segment(s.segment).is_connector());
        if in_box && v.box_entry_tick.is_none() {
            v.box_entry_tick = Some(tick);
        }
        if v.granted && !in_box {
            if let Some(ci) = connector_index(&world.road, v) {
                // past the box, or backed out of it: the grant is spent
                let backed_out = v.route_index < ci
                    && matches!(v.control.as_ref().map(|c| &c.input), Some(ControlInput::Reverse { .. }));
                if v.route_index > ci || backed_out {
                    v.granted = false;
                }
            }
        }
        if v.v == 0.0 {
            v.stopped_ticks += 1;
        } else {
            v.stopped_ticks = 0;
        }
    }
    record_collisions(world);
}

pub(super) fn record_collisions(world: &mut WorldState) -> usize {
    let known: BTreeSet<(VehicleId, VehicleId)> =
        world.collisions.iter().map(|c| (c.a, c.b)).collect();
    let fresh: Vec<_> = world
        .detect_collisions()
        .into_iter()
        .filter(|c| !known.contains(&(c.a, c.b)))
        .collect();
    for event in &fresh {
        for id in [event.a, event.b] {
            let v = world.vehicles.get_mut(&id).expect("collision names a live vehicle");
            v.wrecked = true;
            v.v = 0.0;
            v.a = 0.0;
            v.reversing = false;
            if let Some(ctl) = v.control.as_mut() {
                if ctl.status == ControlStatus::Active {
                    ctl.status = ControlStatus::SafetyStopped;
                }
            }
        }
    }
    let n = fresh.len();
    world.collisions.extend(fresh);
    n
}

/// Distance from the front bumper to the stop line of the vehicle's connector.
fn distance_to_stop_line(world: &WorldState, v: &VehicleState, ci: usize) -> f64 {
    let mut dist = -(v.s + v.length / 2.0);
    for idx in v.route_index..ci {
        dist += world.road.segment(v.route[idx]).length;
    }
    dist
}

fn update_grants(world: &mut WorldState) {
    if world.road.intersection.is_none() {
        return;
    }
    let occ = Occupancy::build(world);
    let mut claimed: BTreeSet<Cell> = occ.claims.keys().copied().collect();
    claimed.extend(occ.cells.keys().copied());

    let mut candidates: Vec<(f64, VehicleId)> = Vec::new();
    for v in world.vehicles.values() {
        if v.exited || v.wrecked || v.granted || v.reversing {
            continue;
        }
        let Some(ci) = connector_index(&world.road, v) else { continue };
        if v.route_index >= ci {
            continue;
        }
        let dist = distance_to_stop_line(world, v, ci);
        if dist > world.config.grant_distance {
            continue;
        }
        // only the first ungranted vehicle of a lane may ask
        let blocked_by_ahead = world.vehicles.values().any(|o| {
            o.id != v.id
                && !o.exited
                && !o.granted
                && o.lane == v.lane
                && o.route_index == v.route_index
                && o.s > v.s
        });
        if !blocked_by_ahead {
            candidates.push((dist, v.id));
        }
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    for (_, id) in candidates {
        let v = &world.vehicles[&id];
        let ci = connector_index(&world.road, v).unwrap();
        let path: Vec<Cell> = world.road.segment(v.route[ci]).cells().iter().map(|c| c.cell).collect();
        if path.iter().any(|c| claimed.contains(c)) {
            continue;
        }
        claimed.extend(path);
        world.vehicles.get_mut(&id).unwrap().granted = true;
    }
}

/// (gap, signed speed) of a neighbouring vehicle.
type Neighbour = Option<(f64, f64)>;

/// Nearest vehicle ahead and behind on a lane of a road segment, measured
/// between bodies for a vehicle of `length` centred at `s`.
/// Returns (ahead: (gap, speed), behind: (gap, speed), overlapping).
fn lane_neighbours(
    world: &WorldState,
    lane: LaneId,
    s: f64,
    length: f64,
    me: VehicleId,
) -> (Neighbour, Neighbour, bool) {
    let seg = world.road.segment(lane.segment);
    let mut ahead: Option<(f64, f64)> = None;
    let mut behind: Option<(f64, f64)> = None;
    let mut overlap = false;
    for o in world.vehicles.values() {
        if o.id == me || o.exited || o.lane != lane {
            continue;
        }
        let mut d = o.s - s;
        if seg.ring {
            d = d.rem_euclid(seg.length);
            if d > seg.length / 2.0 {
                d -= seg.length;
            }
        }
        let reach = (o.length + length) / 2.0;
        if d.abs() < reach {
            overlap = true;
            continue;
        }
        if d > 0.0 {
            let gap = d - reach;
            if ahead.map(|(g, _)| gap < g).unwrap_or(true) {
                ahead = Some((gap, o.signed_speed()));
            }
        } else {
            let gap = -d - reach;
            if behind.map(|(g, _)| gap < g).unwrap_or(true) {
                behind = Some((gap, o.signed_speed()));
            }
        }
    }
    (ahead, behind, overlap)
}

fn required_gap(cfg: &WorldConfig, v: f64, lead: f64) -> f64 {
    let lead = lead.max(0.0);
    cfg.safe_gap(v) + ((v * v - lead * lead) / (2.0 * cfg.a_max)).max(0.0)
}

/// A lateral move to `target` is safe when the gaps fore and aft cover the
/// safe gap plus the braking distance difference.
fn lane_change_safe(world: &WorldState, v: &VehicleState, target: LaneId) -> bool {
    let (ahead, behind, overlap) = lane_neighbours(world, target, v.s, v.length, v.id);
    if overlap {
        return false;
    }
    let cfg = &world.config;
    if let Some((gap, lead)) = ahead {
        if gap < required_gap(cfg, v.v, lead) {
            return false;
        }
    }
    if let Some((gap, follower)) = behind {
        if gap < required_gap(cfg, follower.max(0.0), v.v) {
            return false;
        }
    }
    true
}

fn lane_change_target(world: &WorldState, v: &VehicleState, side: LaneSide) -> Option<LaneId> {
    let seg = world.road.segment(v.lane.segment);
    let index = match side {
        LaneSide::Left => v.lane.index.checked_add(1).filter(|i| *i < seg.lanes)?,
        LaneSide::Right => v.lane.index.checked_sub(1)?,
    };
    Some(LaneId { segment: seg.id, index })
}

fn can_change_lanes(world: &WorldState, v: &VehicleState) -> bool {
    let seg = world.road.segment(v.lane.segment);
    !v.exited
        && !v.wrecked
        && !v.reversing
        && seg.kind == SegmentKind::Road
        && seg.lanes >= 2
        && !on_shoulder(&world.road, v)
}

fn lane_changes(world: &mut WorldState) {
    let ids: Vec<VehicleId> = world.vehicles.keys().copied().collect();
    let tick = world.tick;
    let hold_limit = world.config.hold_limit;
    for id in ids {
        let v = &world.vehicles[&id];
        let commanded = match &v.control {
            Some(ActiveControl { input: ControlInput::LaneChange(side), status: ControlStatus::Active, .. }) => Some(*side),
            _ => None,
        };
        if let Some(side) = commanded {
            let target = if can_change_lanes(world, v) { lane_change_target(world, v, side) } else { None };
            let ok = target.filter(|t| lane_change_safe(world, v, *t));
            let v = world.vehicles.get_mut(&id).unwrap();
            let ctl = v.control.as_mut().unwrap();
            match ok {
                Some(target) => {
                    ctl.status = ControlStatus::Done;
                    ctl.held_now = false;
                    ctl.held_ticks = 0;
                    v.lane = target;
                    v.last_lane_change = Some(tick);
                }
                None => {
                    ctl.held_now = true;
                    ctl.held_ticks += 1;
                    if ctl.held_ticks > hold_limit {
                        ctl.status = ControlStatus::SafetyStopped;
                    }
                }
            }
            continue;
        }
        let free_to_choose = match &v.control {
            None => true,
            Some(ctl) => ctl.status.is_terminal() || matches!(ctl.input, ControlInput::TargetSpeed { .. }),
        };
        if v.reckless || !free_to_choose || !can_change_lanes(world, v) {
            continue;
        }
        if let Some(last) = v.last_lane_change {
            if tick < last + world.config.lane_change_cooldown {
                continue;
            }
        }
        if let Some(target) = overtaking_choice(world, v) {
            let v = world.vehicles.get_mut(&id).unwrap();
            v.lane = target;
            v.last_lane_change = Some(tick);
        }
    }
}

fn desired_for(v: &VehicleState) -> f64 {
    match &v.control {
        Some(ActiveControl { input: ControlInput::TargetSpeed { target, .. }, status: ControlStatus::Active, .. }) => *target,
        _ => v.effective_desired(),
    }
}

/// Default overtaking: leave a lane whose leader holds us well below our
/// desired speed when the neighbouring lane offers a clearly better gap.
fn overtaking_choice(world: &WorldState, v: &VehicleState) -> Option<LaneId> {
    let desired = desired_for(v);
    let (own_ahead, _, _) = lane_neighbours(world, v.lane, v.s, v.length, v.id);
    let (own_gap, own_speed) = own_ahead?;
    if own_gap > world.config.safe_gap(desired) + 15.0 || own_speed > desired - 1.0 {
        return None;
    }
    for side in [LaneSide::Right, LaneSide::Left] {
        let Some(target) = lane_change_target(world, v, side) else { continue };
        let (ahead, _, _) = lane_neighbours(world, target, v.s, v.length, v.id);
        let better = match ahead {
            None => true,
            Some((gap, speed)) => gap > own_gap + 5.0 && speed > own_speed + 0.5,
        };
        if better && lane_change_safe(world, v, target) {
            return Some(target);
        }
    }
    None
}

/// Largest speed in `[lo, hi]` that keeps the safe gap to a leader after this
/// tick, assuming the leader brakes at the limit.
pub(crate) fn constrained_speed(cfg: &WorldConfig, gap: f64, lead: f64, lo: f64, hi: f64) -> f64 {
    let lead_next = if lead >= 0.0 { (lead - cfg.a_max * cfg.dt).max(0.0) } else { lead };
    let ok = |vn: f64| {
        let gap_next = gap + (lead_next - vn) * cfg.dt;
        gap_next - required_gap(cfg, vn, lead_next) >= 0.0
    };
    if ok(hi) {
        return hi;
    }
    if !ok(lo) {
        return lo;
    }
    let (mut a, mut b) = (lo, hi);
    for _ in 0..60 {
        let mid = 0.5 * (a + b);
        if ok(mid) {
            a = mid;
        } else {
            b = mid;
        }
    }
    a
}

#[derive(Debug, Default)]
struct Motion {
    v: f64,
    reversing: bool,
    /// Signed displacement along the route.
    delta: f64,
    control: Option<ActiveControl>,
    cap: Option<Option<f64>>,
    teleport: Option<(LaneId, Vec<super::SegmentId>, f64)>,
}

fn free_speed(cfg: &WorldConfig, v: f64, desired: f64) -> f64 {
    let desired = desired.clamp(0.0, cfg.v_max);
    if v < desired {
        (v + cfg.a_cruise * cfg.dt).min(desired)
    } else {
        (v - cfg.a_max * cfg.dt).max(desired)
    }
}

/// Car-following update: (new speed, whether the gap rule bound it).
fn follow(world: &WorldState, occ: &Occupancy, v: &VehicleState, desired: f64) -> (f64, bool) {
    let cfg = &world.config;
    let hi = free_speed(cfg, v.v, desired).min(cfg.v_max);
    if v.reckless {
        return (hi, false);
    }
    let lo = (v.v - cfg.a_max * cfg.dt).max(0.0);
    let hi = hi.max(lo);
    let vn = geometry::obstacles_ahead(world, occ, v)
        .into_iter()
        .map(|(gap, lead)| constrained_speed(cfg, gap, lead, lo, hi))
        .fold(hi, f64::min);
    (vn, vn < hi - EPS)
}

fn decide(world: &WorldState, occ: &Occupancy, v: &VehicleState) -> Motion {
    let cfg = &world.config;
    let live = v.control.as_ref().filter(|c| c.status == ControlStatus::Active);

    if v.wrecked {
        if let Some(ctl) = live {
            if let ControlInput::Relocate { .. } = ctl.input {
                return relocate(world, occ, v, ctl.clone());
            }
        }
        return Motion { v: 0.0, ..Motion::default() };
    }

    // finish any backwards roll before anything else
    if v.reversing && !matches!(live.map(|c| &c.input), Some(ControlInput::Reverse { .. })) {
        let vn = (v.v - cfg.a_max * cfg.dt).max(0.0);
        return Motion { v: vn, reversing: vn > 0.0, delta: -vn * cfg.dt, ..Motion::default() };
    }

    let Some(ctl) = live else {
        let (vn, _) = follow(world, occ, v, v.effective_desired());
        return Motion { v: vn, delta: vn * cfg.dt, ..Motion::default() };
    };
    let mut ctl = ctl.clone();
    match ctl.input.clone() {
        ControlInput::TargetSpeed { target, release } => {
            let (vn, bound) = follow(world, occ, v, target);
            let mut cap = None;
            if !bound && (vn - target).abs() < 1e-6 {
                ctl.status = ControlStatus::Done;
                cap = match release {
                    SpeedRelease::Uncap => Some(None),
                    SpeedRelease::Keep => None,
                    SpeedRelease::Cap => Some(Some(target)),
                };
            }
            mark_held(&mut ctl, bound, cfg.hold_limit);
            Motion { v: vn, delta: vn * cfg.dt, control: Some(ctl), cap, ..Motion::default() }
        }
        ControlInput::Halt => {
            let vn = (v.v - cfg.a_max * cfg.dt).max(0.0);
            let mut cap = None;
            if vn == 0.0 {
                ctl.status = ControlStatus::Done;
                cap = Some(Some(0.0));
            }
            Motion { v: vn, delta: vn * cfg.dt, control: Some(ctl), cap, ..Motion::default() }
        }
        ControlInput::LaneChange(_) => {
            let (vn, _) = follow(world, occ, v, v.effective_desired());
            Motion { v: vn, delta: vn * cfg.dt, control: Some(ctl), ..Motion::default() }
        }
        ControlInput::Reverse { speed_cap, .. } => reverse(world, occ, v, ctl, speed_cap),
        ControlInput::Relocate { .. } => relocate(world, occ, v, ctl),
    }
}

fn mark_held(ctl: &mut ActiveControl, held: bool, hold_limit: u32) {
    ctl.held_now = held;
    if held {
        ctl.held_ticks += 1;
        if ctl.held_ticks > hold_limit && ctl.status == ControlStatus::Active {
            ctl.status = ControlStatus::SafetyStopped;
        }
    } else {
        ctl.held_ticks = 0;
    }
}

/// Speed for a distance-bounded manoeuvre: ramp at the cruise rate, brake on
/// a half-limit profile so the last step lands exactly on the target.
fn ramp_speed(cfg: &WorldConfig, v: f64, remaining: f64, cap: f64) -> f64 {
    let brake = 0.5 * cfg.a_max;
    let mut want = cap.min(v + cfg.a_cruise * cfg.dt).min((2.0 * brake * remaining).sqrt());
    if want * cfg.dt > remaining {
        want = remaining / cfg.dt;
    }
    want.max(0.0)
}

fn reverse(world: &WorldState, occ: &Occupancy, v: &VehicleState, mut ctl: ActiveControl, speed_cap: f64) -> Motion {
    let cfg = &world.config;
    if !v.reversing && v.v > 0.0 {
        let vn = (v.v - cfg.a_max * cfg.dt).max(0.0);
        return Motion { v: vn, delta: vn * cfg.dt, control: Some(ctl), ..Motion::default() };
    }
    let cap = speed_cap.min(cfg.reverse_speed_cap);
    let want = ramp_speed(cfg, if v.reversing { v.v } else { 0.0 }, ctl.remaining, cap);
    let mut delta = want * cfg.dt;

    let mut avail = f64::INFINITY;
    if let Some((gap, speed)) = geometry::follower_gap(world, occ, v, 40.0) {
        let allowance = speed.max(0.0) * cfg.dt + cfg.a_cruise * cfg.dt * cfg.dt;
        avail = gap - allowance - cfg.reverse_clearance;
    }
    // Only cells the vehicle backs into are checked; it may always retreat
    // from cells it already holds.
    let held_now: Vec<_> =
        geometry::cells_of(&world.road, &geometry::spans_at(&world.road, v, v.s)).into_iter().map(|(c, _)| c).collect();
    let new_spans = geometry::spans_at(&world.road, v, v.s - delta);
    let cells_ok = geometry::cells_of(&world.road, &new_spans).into_iter().all(|(cell, seg)| {
        held_now.contains(&cell) || (!occ.cell_blocked_for(cell, v.id, seg) && !occ.cell_claimed_by_other(cell, v.id))
    });
    if !cells_ok {
        avail = 0.0;
    }
    let held = delta > avail + EPS;
    if held {
        delta = avail.max(0.0);
    }
    ctl.remaining -= delta;
    mark_held(&mut ctl, held && delta <= EPS, cfg.hold_limit);
    let mut vn = delta / cfg.dt;
    if ctl.remaining <= EPS {
        ctl.remaining = ctl.remaining.max(0.0);
        ctl.status = ControlStatus::Done;
        vn = 0.0;
    }
    if ctl.status == ControlStatus::SafetyStopped {
        vn = 0.0;
    }
    Motion { v: vn, reversing: vn > 0.0, delta: -delta, control: Some(ctl), ..Motion::default() }
}

/// Nearest shoulder position downstream of (or beside) the vehicle.
fn shoulder_target(world: &WorldState, v: &VehicleState) -> Option<(super::SegmentId, f64)> {
    let half = v.length / 2.0;
    let road = &world.road;
    let here = road.segment(v.lane.segment);
    if here.has_shoulder() {
        let s = v.s.clamp(half + 0.1, (here.length - half - 0.1).max(half + 0.1));
        return Some((here.id, s));
    }
    v.route[v.route_index + 1..]
        .iter()
        .map(|id| road.segment(*id))
        .find(|seg| seg.has_shoulder())
        .map(|seg| (seg.id, half + 0.5))
}

fn relocate(world: &WorldState, occ: &Occupancy, v: &VehicleState, mut ctl: ActiveControl) -> Motion {
    let cfg = &world.config;
    let half = v.length / 2.0;
    if !ctl.on_shoulder {
        let target = shoulder_target(world, v).filter(|(seg, s)| {
            let lane = world.road.segment(*seg).shoulder_index();
            occ.by_lane
                .get(&(*seg, lane))
                .map(|list| {
                    list.iter().all(|(id, lo, hi)| {
                        *id == v.id || *hi < s - half - 0.5 || *lo > s + half + 0.5
                    })
                })
                .unwrap_or(true)
        });
        let Some((seg, s)) = target else {
            mark_held(&mut ctl, true, cfg.hold_limit);
            return Motion { v: 0.0, control: Some(ctl), ..Motion::default() };
        };
        ctl.on_shoulder = true;
        mark_held(&mut ctl, false, cfg.hold_limit);
        let lane = LaneId { segment: seg, index: world.road.segment(seg).shoulder_index() };
        return Motion { v: 0.0, control: Some(ctl), teleport: Some((lane, vec![seg], s)), ..Motion::default() };
    }
    let want = ramp_speed(cfg, v.v, ctl.remaining, cfg.reverse_speed_cap);
    let mut delta = want * cfg.dt;
    let seg = world.road.segment(v.lane.segment);
    let front = v.s + half;
    let mut avail = seg.length - front;
    if let Some(list) = occ.by_lane.get(&(v.lane.segment, v.lane.index)) {
        for (id, lo, _) in list {
            if *id != v.id && *lo > v.s {
                avail = avail.min(lo - front - cfg.reverse_clearance);
            }
        }
    }
    let held = delta > avail + EPS;
    if held {
        delta = avail.max(0.0);
    }
    ctl.remaining -= delta;
    mark_held(&mut ctl, held && delta <= EPS, cfg.hold_limit);
    let mut vn = delta / cfg.dt;
    if ctl.remaining <= EPS {
        ctl.remaining = ctl.remaining.max(0.0);
        ctl.status = ControlStatus::Done;
        vn = 0.0;
    }
    if ctl.status == ControlStatus::SafetyStopped {
        vn = 0.0;
    }
    Motion { v: vn, delta, control: Some(ctl), ..Motion::default() }
}

fn apply(world: &mut WorldState, id: VehicleId, motion: Motion) {
    let dt = world.config.dt;
    let road = &world.road;
    let v = world.vehicles.get_mut(&id).unwrap();
    let before = v.signed_speed();
    if let Some(ctl) = motion.control {
        v.control = Some(ctl);
    }
    if let Some(cap) = motion.cap {
        v.speed_cap = cap;
    }
    if let Some((lane, route, s)) = motion.teleport {
        v.lane = lane;
        v.route = route;
        v.route_index = 0;
        v.s = s;
        v.v = 0.0;
        v.reversing = false;
        v.a = 0.0;
        return;
    }
    v.v = motion.v;
    v.reversing = motion.reversing && motion.v > 0.0;
    v.a = (v.signed_speed() - before) / dt;
    v.s += motion.delta;
    v.odometer += motion.delta;
    if on_shoulder(road, v) {
        let len = road.segment(v.lane.segment).length;
        v.s = v.s.clamp(0.0, len);
        return;
    }
    loop {
        let len = road.segment(v.lane.segment).length;
        if v.s > len {
            match geometry::next_route(road, v, v.route_index) {
                Some(n) => {
                    v.s -= len;
                    v.route_index = n;
                    let seg = road.segment(v.route[n]);
                    v.lane = LaneId { segment: seg.id, index: v.lane.index.min(seg.lanes.max(1) - 1) };
                }
                None => {
                    v.s = len;
                    v.exited = true;
                    v.granted = false;
                    break;
                }
            }
        } else if v.s < 0.0 {
            match geometry::prev_route(road, v, v.route_index) {
                Some(p) => {
                    let seg = road.segment(v.route[p]);
                    v.s += seg.length;
                    v.route_index = p;
                    v.lane = LaneId { segment: seg.id, index: v.lane.index.min(seg.lanes.max(1) - 1) };
                }
                None => {
                    v.s = 0.0;
                    break;
                }
            }
        } else {
            break;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{RoadNet, SegmentId};
    use proptest::prelude::*;

    fn road_vehicle(id: u32, lane: u8, s: f64, v: f64, desired: f64) -> VehicleState {
        let mut veh = VehicleState::new(
            VehicleId(id),
            LaneId { segment: SegmentId(0), index: lane },
            s,
            v,
            vec![SegmentId(0)],
        );
        veh.desired = desired;
        veh
    }

    fn straight(vehicles: Vec<VehicleState>) -> WorldState {
        let mut world = WorldState::new(WorldConfig::default(), RoadNet::straight(2000.0, 1), 1);
        for v in vehicles {
            world.insert(v);
        }
        world
    }

    #[test]
    fn constant_velocity_advances_exactly() {
        let mut world = straight(vec![road_vehicle(0, 0, 100.0, 10.0, 10.0)]);
        world.step();
        let v = world.vehicle(VehicleId(0)).unwrap();
        assert!((v.s - 101.0).abs() < 1e-12);
        assert_eq!(v.v, 10.0);
    }

    #[test]
    fn follower_settles_at_the_gap_fixed_point() {
        let cfg = WorldConfig::default();
        let mut world = straight(vec![
            road_vehicle(0, 0, 200.0, 10.0, 10.0),
            road_vehicle(1, 0, 150.0, 10.0, 14.0),
        ]);
        world.run(1500);
        let lead = world.vehicle(VehicleId(0)).unwrap();
        let follow = world.vehicle(VehicleId(1)).unwrap();
        let gap = lead.s - follow.s - (lead.length + follow.length) / 2.0;
        // steady state: gap + (vl' - v) dt = d0 + tau v + (v^2 - vl'^2) / 2a with vl' = v - a dt
        let v = 10.0;
        let vl = v - cfg.a_max * cfg.dt;
        let expected = cfg.min_gap + cfg.headway * v + (v * v - vl * vl) / (2.0 * cfg.a_max) - (vl - v) * cfg.dt;
        assert!((follow.v - v).abs() < 0.01, "speed {}", follow.v);
        assert!((gap - expected).abs() < 0.05, "gap {gap} vs {expected}");
    }

    #[test]
    fn reckless_vehicle_collides_and_both_are_wrecked() {
        let mut stopped = road_vehicle(0, 0, 50.0, 0.0, 1.0);
        stopped.speed_cap = Some(0.0);
        let mut reckless = road_vehicle(1, 0, 20.0, 10.0, 10.0);
        reckless.reckless = true;
        let mut world = straight(vec![stopped, reckless]);
        world.run(60);
        assert_eq!(world.collisions.len(), 1);
        let c = &world.collisions[0];
        assert_eq!((c.a, c.b), (VehicleId(0), VehicleId(1)));
        for id in [0, 1] {
            let v = world.vehicle(VehicleId(id)).unwrap();
            assert!(v.wrecked);
            assert_eq!(v.v, 0.0);
        }
    }

    #[test]
    fn halt_stops_within_the_braking_bound() {
        let mut world = straight(vec![road_vehicle(0, 0, 100.0, 12.0, 12.0)]);
        world.apply_control(VehicleId(0), ControlInput::Halt).unwrap();
        let bound = (12.0_f64 / (4.0 * 0.1)).ceil() as u64;
        for _ in 0..bound {
            world.step();
        }
        let v = world.vehicle(VehicleId(0)).unwrap();
        assert_eq!(v.v, 0.0);
        assert_eq!(v.control_status(), Some(ControlStatus::Done));
        world.run(20);
        assert_eq!(world.vehicle(VehicleId(0)).unwrap().v, 0.0);
    }

    #[test]
    fn target_speed_at_current_speed_matches_free_run() {
        let mut a = straight(vec![road_vehicle(0, 0, 100.0, 10.0, 10.0)]);
        let mut b = a.clone();
        b.apply_control(VehicleId(0), ControlInput::TargetSpeed { target: 10.0, release: SpeedRelease::Keep })
            .unwrap();
        a.run(100);
        b.run(100);
        let (va, vb) = (a.vehicle(VehicleId(0)).unwrap(), b.vehicle(VehicleId(0)).unwrap());
        assert!((va.s - vb.s).abs() < 1e-9);
        assert_eq!(va.v, vb.v);
    }

    #[test]
    fn reverse_covers_the_commanded_distance() {
        let mut world = straight(vec![road_vehicle(0, 0, 50.0, 0.0, 1.0)]);
        world.vehicle_mut(VehicleId(0)).unwrap().speed_cap = Some(0.0);
        world.apply_control(VehicleId(0), ControlInput::Reverse { distance: 5.0, speed_cap: 3.0 }).unwrap();
        world.run(100);
        let v = world.vehicle(VehicleId(0)).unwrap();
        assert_eq!(v.control_status(), Some(ControlStatus::Done));
        assert!((v.s - 45.0).abs() < 0.05, "s = {}", v.s);
        assert!(!v.reversing);
    }

    #[test]
    fn reverse_is_held_by_a_close_follower() {
        let mut front = road_vehicle(0, 0, 50.0, 0.0, 1.0);
        front.speed_cap = Some(0.0);
        let mut back = road_vehicle(1, 0, 43.0, 0.0, 1.0);
        back.speed_cap = Some(0.0);
        let mut world = straight(vec![front, back]);
        world.apply_control(VehicleId(0), ControlInput::Reverse { distance: 5.0, speed_cap: 3.0 }).unwrap();
        world.run(200);
        assert!(world.collisions.is_empty());
        let v = world.vehicle(VehicleId(0)).unwrap();
        assert_eq!(v.control_status(), Some(ControlStatus::SafetyStopped));
        let gap = v.s - world.vehicle(VehicleId(1)).unwrap().s - 4.5;
        assert!(gap >= 0.5 - 1e-6);
    }

    #[test]
    fn crossing_traffic_clears_the_box_without_collisions() {
        let mut world = WorldState::new(WorldConfig::default(), RoadNet::four_way(100.0, 100.0), 3);
        let mut id = 0;
        for heading in crate::world::Heading::ALL {
            for movement in crate::world::Movement::ALL {
                let route = world.road.route(heading, movement).unwrap();
                let lane = LaneId { segment: route[0], index: 0 };
                let mut v = VehicleState::new(VehicleId(id), lane, 80.0 - 12.0 * (id % 3) as f64, 8.0, route);
                v.desired = 10.0;
                world.insert(v);
                id += 1;
            }
        }
        world.run(1500);
        assert!(world.collisions.is_empty(), "{:?}", world.collisions);
        assert!(world.vehicles.values().all(|v| v.exited));
    }

    /// Vehicles on a ring spaced so that each can stop behind a leader that
    /// brakes at the limit.
    fn ring_world(speeds: &[f64], desired: &[f64], lanes: u8, seed: u64) -> WorldState {
        let cfg = WorldConfig::default();
        let mut slots = Vec::new();
        let mut s = 0.0;
        let mut row_max: f64 = 0.0;
        for (i, v) in speeds.iter().enumerate() {
            let lane = (i as u8) % lanes;
            slots.push((lane, s, *v));
            row_max = row_max.max(*v);
            if lane + 1 == lanes {
                s += 4.5 + cfg.safe_gap(row_max) + row_max * row_max / (2.0 * cfg.a_max) + 1.0;
                row_max = 0.0;
            }
        }
        let length = s + 60.0;
        let mut world = WorldState::new(cfg, RoadNet::ring(length, lanes), seed);
        for (i, (lane, s, v)) in slots.into_iter().enumerate() {
            world.insert(road_vehicle(i as u32, lane, s, v, desired[i]));
        }
        world
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]

        #[test]
        fn stepping_is_deterministic(
            speeds in prop::collection::vec(0.0f64..14.0, 3..10),
            seed in any::<u64>(),
        ) {
            let desired: Vec<f64> = speeds.iter().map(|v| 8.0 + v / 2.0).collect();
            let mut a = ring_world(&speeds, &desired, 2, seed);
            let mut b = ring_world(&speeds, &desired, 2, seed);
            a.run(300);
            b.run(300);
            prop_assert_eq!(a.observe().digest(), b.observe().digest());
            prop_assert_eq!(a, b);
        }

        #[test]
        fn safe_kinematic_and_conserving(
            speeds in prop::collection::vec(0.0f64..14.0, 3..12),
            desired_raw in prop::collection::vec(4.0f64..16.7, 12),
        ) {
            let cfg = WorldConfig::default();
            let mut world = ring_world(&speeds, &desired_raw, 2, 7);
            let n = world.vehicles.len();
            for _ in 0..10_000 {
                let before: Vec<(f64, f64)> = world.vehicles.values().map(|v| (v.signed_speed(), v.odometer)).collect();
                world.step();
                for ((v0, odo0), v) in before.iter().zip(world.vehicles.values()) {
                    prop_assert!((v.signed_speed() - v0).abs() <= cfg.a_max * cfg.dt + 1e-9);
                    prop_assert!(v.v >= 0.0 && v.v <= cfg.v_max + 1e-9);
                    prop_assert!((v.odometer - odo0 - v.signed_speed() * cfg.dt).abs() < 1e-9);
                }
                prop_assert!(world.collisions.is_empty(), "collision at tick {}", world.tick);
            }
            prop_assert_eq!(world.vehicles.len(), n);
        }
    }
}
