use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{GroundTruth, ScenarioError, ScenarioSpec};
use crate::label::{AnomalyLabel, FaultDegree};
use crate::world::{
    Heading, LaneId, Movement, RoadNet, SegmentId, VehicleId, VehicleState, WorldConfig, WorldState,
};

/// Build the world for `spec` at tick 0 together with its ground truth.
pub fn build(spec: &ScenarioSpec) -> Result<(WorldState, GroundTruth), ScenarioError> {
    build_with(spec, WorldConfig::default())
}

pub fn build_with(spec: &ScenarioSpec, config: WorldConfig) -> Result<(WorldState, GroundTruth), ScenarioError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    match spec.kind {
        AnomalyLabel::Normal => normal(spec, config, &mut rng),
        AnomalyLabel::Congestion => congestion(spec, config, &mut rng),
        AnomalyLabel::GhostJam => ghost_jam(spec, config, &mut rng),
        AnomalyLabel::Deadlock => deadlock(spec, config, &mut rng),
        AnomalyLabel::Accident => accident(spec, config, &mut rng),
    }
}

fn invalid(msg: impl Into<String>) -> ScenarioError {
    ScenarioError::InvalidParams(msg.into())
}

fn count(spec: &ScenarioSpec, name: &str, default: f64) -> Result<usize, ScenarioError> {
    let raw = spec.param(name, default);
    if raw < 0.0 || raw.fract() != 0.0 || raw > 10_000.0 {
        return Err(invalid(format!("{name} must be a non-negative integer, got {raw}")));
    }
    Ok(raw as usize)
}

fn on_road(id: u32, lane: u8, s: f64, v: f64, desired: f64) -> VehicleState {
    let mut veh = VehicleState::new(VehicleId(id), LaneId { segment: SegmentId(0), index: lane }, s, v, vec![SegmentId(0)]);
    veh.desired = desired;
    veh
}

/// Gap a follower at `v` needs behind a leader at the same speed.
fn cruising_gap(config: &WorldConfig, v: f64) -> f64 {
    let lead_next = (v - config.a_max * config.dt).max(0.0);
    config.safe_gap(v) + (v * v - lead_next * lead_next) / (2.0 * config.a_max) + (v - lead_next) * config.dt
}

fn ghost_jam(
    spec: &ScenarioSpec,
    config: WorldConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(WorldState, GroundTruth), ScenarioError> {
    let followers = count(spec, "followers", 4.0)?;
    if followers < 3 {
        return Err(invalid("ghost jam needs at least 3 followers"));
    }
    let length = spec.param("road_length", 2000.0);
    let slow = spec.param("slow_speed", 2.5 + rng.gen_range(0.0..0.5));
    if !(0.5..=5.0).contains(&slow) {
        return Err(invalid(format!("slow_speed {slow} outside 0.5..=5")));
    }
    let front = spec.param("blocker_position", 300.0 + rng.gen_range(0.0..20.0));
    let mut world = WorldState::new(config.clone(), RoadNet::straight(length, 2), spec.seed);

    // the lane-0 blocker leads its twin by a metre
    let mut lead = on_road(0, 0, front + 1.0, slow, 12.0);
    lead.speed_cap = Some(slow);
    let mut trail = on_road(2, 1, front, slow, 12.0);
    trail.speed_cap = Some(slow);
    let mut tails = [lead.s, trail.s];
    let (lead_len, trail_len) = (lead.length, trail.length);
    world.insert(lead);
    world.insert(trail);

    let mut last_len = [lead_len, trail_len];
    let mut ids: Vec<VehicleId> = Vec::new();
    for k in 0..followers {
        let id = if k == 0 { 1 } else { k as u32 + 2 };
        let lane = k % 2;
        let desired = rng.gen_range(12.0..14.0);
        let spacing = cruising_gap(&config, slow) + 0.5 + rng.gen_range(0.0..1.0);
        let mut veh = on_road(id, lane as u8, 0.0, slow, desired);
        veh.s = tails[lane] - (last_len[lane] + veh.length) / 2.0 - spacing;
        if veh.s - veh.length / 2.0 < 0.0 {
            return Err(invalid(format!("{followers} followers do not fit behind the blockers")));
        }
        tails[lane] = veh.s;
        last_len[lane] = veh.length;
        ids.push(veh.id);
        world.insert(veh);
    }
    if front + 1.0 + 1.5 * slow * spec.tick_budget as f64 * config.dt > length {
        return Err(invalid("road too short for the tick budget"));
    }
    ids.sort();
    let mut involved = vec![VehicleId(0), VehicleId(2)];
    involved.extend(ids);
    Ok((world, GroundTruth { label: AnomalyLabel::GhostJam, involved, fault: None }))
}

fn normal(
    spec: &ScenarioSpec,
    config: WorldConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(WorldState, GroundTruth), ScenarioError> {
    let n = count(spec, "vehicles", 8.0)?;
    let length = spec.param("road_length", 3000.0);
    let mut world = WorldState::new(config, RoadNet::straight(length, 2), spec.seed);
    let mut s = 20.0;
    for k in 0..n {
        let desired = rng.gen_range(10.0..14.0);
        let lane = (k % 2) as u8;
        world.insert(on_road(k as u32, lane, s, desired, desired));
        s += rng.gen_range(60.0..100.0);
        if s > length / 2.0 {
            return Err(invalid("too many vehicles for the road length"));
        }
    }
    Ok((world, GroundTruth { label: AnomalyLabel::Normal, involved: Vec::new(), fault: None }))
}

fn congestion(
    spec: &ScenarioSpec,
    config: WorldConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(WorldState, GroundTruth), ScenarioError> {
    let n = count(spec, "vehicles", 60.0)?;
    let length = spec.param("ring_length", 300.0);
    let per_lane = n.div_ceil(2).max(1);
    let spacing = length / per_lane as f64;
    let start_speed = 2.0;
    if spacing < 4.5 + cruising_gap(&config, start_speed) + 0.7 {
        return Err(invalid("ring too short for the vehicle count"));
    }
    let mut world = WorldState::new(config, RoadNet::ring(length, 2), spec.seed);
    let mut involved = Vec::new();
    for k in 0..n {
        let lane = (k % 2) as u8;
        let slot = (k / 2) as f64;
        let offset = if lane == 1 { spacing / 2.0 } else { 0.0 };
        let s = slot * spacing + offset + rng.gen_range(-0.3..0.3);
        let desired = rng.gen_range(11.0..14.0);
        world.insert(on_road(k as u32, lane, s.rem_euclid(length), start_speed, desired));
        involved.push(VehicleId(k as u32));
    }
    Ok((world, GroundTruth { label: AnomalyLabel::Congestion, involved, fault: None }))
}

/// Place a vehicle centred `centre` metres past the stop line of its
/// approach; negative values put it on the inbound lane.
fn intersection_vehicle(world: &WorldState, id: u32, heading: Heading, movement: Movement, centre: f64) -> VehicleState {
    let route = world.road.route(heading, movement).expect("four-way route");
    let inbound_len = world.road.segment(route[0]).length;
    let (segment, s, route_index) = if centre >= 0.0 {
        (route[1], centre, 1)
    } else {
        (route[0], inbound_len + centre, 0)
    };
    let mut v = VehicleState::new(VehicleId(id), LaneId { segment, index: 0 }, s, 0.0, route);
    v.route_index = route_index;
    v
}

fn deadlock(
    spec: &ScenarioSpec,
    config: WorldConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(WorldState, GroundTruth), ScenarioError> {
    let upstream = count(spec, "upstream_per_approach", 0.0)?;
    if upstream > 6 {
        return Err(invalid("at most 6 upstream vehicles per approach"));
    }
    let mut world = WorldState::new(config.clone(), RoadNet::four_way(100.0, 100.0), spec.seed);
    let mut pool: Vec<u32> = (0..=9).collect();
    pool.shuffle(rng);
    let ring_ids = &pool[..4];
    let mut next_id = 10;
    let mut ring = Vec::new();
    for (heading, id) in Heading::ALL.into_iter().zip(ring_ids) {
        let centre = rng.gen_range(1.5..2.7);
        let mut v = intersection_vehicle(&world, *id, heading, Movement::Straight, centre);
        v.desired = rng.gen_range(8.0..11.0);
        v.granted = true;
        v.box_entry_tick = Some(0);
        let mut tail = centre - v.length / 2.0;
        ring.push((heading, v.id));
        world.insert(v);
        for _ in 0..upstream {
            // queued bumper to bumper so nobody in front can back up
            let centre = tail - config.min_gap - 2.25 - rng.gen_range(0.0..0.4);
            let mut q = intersection_vehicle(&world, next_id, heading, Movement::Straight, centre);
            q.desired = rng.gen_range(8.0..11.0);
            tail = centre - q.length / 2.0;
            world.insert(q);
            next_id += 1;
        }
    }
    // straight movements chain N -> W -> S -> E -> N: each waits for the next
    let order = waits_for_order(&world, &ring);
    Ok((world, GroundTruth { label: AnomalyLabel::Deadlock, involved: order, fault: None }))
}

/// Order the ring so the vehicle that will proceed comes last and the others
/// follow the waits-for chain backwards from it.
fn waits_for_order(world: &WorldState, ring: &[(Heading, VehicleId)]) -> Vec<VehicleId> {
    let proceeder = ring.iter().map(|(_, id)| *id).min().unwrap();
    // who occupies the cell each vehicle needs next
    let blocker_of = |id: VehicleId| -> VehicleId {
        let v = &world.vehicles[&id];
        let connector = world.road.segment(v.route[1]);
        let next = connector.cells()[1].cell;
        ring.iter()
            .map(|(_, other)| *other)
            .find(|other| {
                let o = &world.vehicles[other];
                *other != id && world.road.segment(o.route[1]).cells()[0].cell == next
            })
            .expect("straight movements form a cycle")
    };
    let mut chain = Vec::new();
    let mut cur = blocker_of(proceeder);
    while cur != proceeder {
        chain.push(cur);
        cur = blocker_of(cur);
    }
    chain.reverse();
    chain.push(proceeder);
    chain
}

fn accident(
    spec: &ScenarioSpec,
    config: WorldConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(WorldState, GroundTruth), ScenarioError> {
    let background = count(spec, "background_per_approach", 2.0)?;
    if background > 4 {
        return Err(invalid("at most 4 background vehicles per approach"));
    }
    let turns = (spec.seed % 4) as u32;
    let mut world = WorldState::new(config.clone(), RoadNet::four_way(100.0, 100.0), spec.seed);

    let truck_heading = Heading::South.rotate(turns);
    let car_heading = Heading::North.rotate(turns);
    let mut truck = intersection_vehicle(&world, 0, truck_heading, Movement::Straight, 3.0 + rng.gen_range(-0.4..0.4));
    truck.length = 8.0;
    truck.desired = 11.0;
    truck.granted = true;
    truck.box_entry_tick = Some(0);
    let mut car = intersection_vehicle(&world, 9, car_heading, Movement::Left, 12.0 + rng.gen_range(-0.4..0.4));
    car.desired = 11.0;
    car.box_entry_tick = Some(0);
    let truck_tail = truck.s - truck.length / 2.0;
    world.insert(truck);
    world.insert(car);

    let mut next_id = 1;
    for heading in Heading::ALL {
        let mut tail = if heading == truck_heading { truck_tail } else { -(config.min_gap + rng.gen_range(6.0..12.0)) };
        for _ in 0..background {
            if next_id == 9 {
                next_id = 10;
            }
            let centre = tail - config.min_gap - 2.25 - rng.gen_range(1.0..6.0);
            let mut v = intersection_vehicle(&world, next_id, heading, Movement::Straight, centre);
            v.desired = rng.gen_range(8.0..11.0);
            tail = centre - v.length / 2.0;
            world.insert(v);
            next_id += 1;
        }
    }
    let recorded = world.record_collisions();
    debug_assert_eq!(recorded, 1);

    let mut fault = BTreeMap::new();
    fault.insert(VehicleId(9), FaultDegree::Primary);
    fault.insert(VehicleId(0), FaultDegree::None);
    Ok((
        world,
        GroundTruth { label: AnomalyLabel::Accident, involved: vec![VehicleId(9), VehicleId(0)], fault: Some(fault) },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{is_resolved, warm_up, DEADLOCK_WINDOW};
    use crate::world::Cell;
    use proptest::prelude::*;

    fn built(kind: AnomalyLabel, seed: u64) -> (WorldState, GroundTruth) {
        build(&ScenarioSpec::new(kind, seed)).unwrap()
    }

    #[test]
    fn build_is_deterministic() {
        for kind in AnomalyLabel::ALL {
            let (a, ta) = built(kind, 11);
            let (b, tb) = built(kind, 11);
            assert_eq!(a, b);
            assert_eq!(ta, tb);
        }
    }

    #[test]
    fn involved_ids_exist_and_fault_only_for_accidents() {
        for kind in AnomalyLabel::ALL {
            for seed in 0..5 {
                let (world, truth) = built(kind, seed);
                assert!(truth.involved.iter().all(|id| world.vehicle(*id).is_some()));
                assert_eq!(truth.fault.is_some(), kind == AnomalyLabel::Accident);
            }
        }
    }

    #[test]
    fn ghost_jam_queues_behind_slow_pair() {
        let (mut world, truth) = built(AnomalyLabel::GhostJam, 7);
        warm_up(&mut world);
        for id in &truth.involved[..2] {
            assert!(world.vehicle(*id).unwrap().v <= 3.0);
        }
        let followers = truth.followers();
        assert!(followers.len() >= 3);
        let mean: f64 = followers.iter().map(|id| world.vehicle(*id).unwrap().v).sum::<f64>() / followers.len() as f64;
        assert!(mean < 4.0, "mean follower speed {mean}");
        assert!(followers.iter().all(|id| world.vehicle(*id).unwrap().desired >= 12.0));
        assert!(world.collisions.is_empty());
    }

    #[test]
    fn ghost_jam_rejects_short_queues() {
        let spec = ScenarioSpec::new(AnomalyLabel::GhostJam, 1).with_param("followers", 2.0);
        assert!(matches!(build(&spec), Err(ScenarioError::InvalidParams(_))));
        let spec = ScenarioSpec::new(AnomalyLabel::GhostJam, 1).with_param("followers", 80.0);
        assert!(matches!(build(&spec), Err(ScenarioError::InvalidParams(_))));
    }

    #[test]
    fn deadlock_locks_four_vehicles_in_the_box() {
        let (mut world, truth) = built(AnomalyLabel::Deadlock, 1);
        warm_up(&mut world);
        assert_eq!(truth.involved.len(), 4);
        for id in &truth.involved {
            let v = world.vehicle(*id).unwrap();
            assert_eq!(v.v, 0.0);
            assert!(v.stopped_ticks >= DEADLOCK_WINDOW);
        }
        assert_eq!(world.box_occupants().len(), 4);
        assert!(world.collisions.is_empty());
    }

    #[test]
    fn deadlock_order_ends_with_lowest_id_and_follows_blocking() {
        let (world, truth) = built(AnomalyLabel::Deadlock, 4);
        let last = *truth.involved.last().unwrap();
        assert_eq!(last, *truth.involved.iter().min().unwrap());
        // the vehicle right before the proceeder occupies the cell it needs
        let p = world.vehicle(last).unwrap();
        let need: Cell = world.road.segment(p.route[1]).cells()[1].cell;
        let b = world.vehicle(truth.involved[2]).unwrap();
        assert_eq!(world.road.segment(b.route[1]).cells()[0].cell, need);
    }

    #[test]
    fn accident_records_exactly_the_staged_pair() {
        for seed in 0..8 {
            let (world, truth) = built(AnomalyLabel::Accident, seed);
            assert_eq!(world.collisions.len(), 1);
            let c = &world.collisions[0];
            assert_eq!((c.a, c.b), (VehicleId(0), VehicleId(9)));
            assert_eq!(world.detect_collisions().len(), 1);
            assert_eq!(truth.fault.as_ref().unwrap()[&VehicleId(9)], FaultDegree::Primary);
            assert_eq!(world.vehicle(VehicleId(0)).unwrap().length, 8.0);
        }
    }

    #[test]
    fn congestion_runs_well_below_desired_speed() {
        let (mut world, _) = built(AnomalyLabel::Congestion, 2);
        warm_up(&mut world);
        let n = world.vehicles.len() as f64;
        let speed: f64 = world.vehicles.values().map(|v| v.v).sum::<f64>() / n;
        let desired: f64 = world.vehicles.values().map(|v| v.desired).sum::<f64>() / n;
        assert!(speed < 0.5 * desired, "{speed} vs {desired}");
        assert!(world.collisions.is_empty());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(6))]

        #[test]
        fn anomalies_persist_without_intervention(seed in 0u64..1000, kind in 0usize..3) {
            let kind = AnomalyLabel::ANOMALIES[kind];
            let spec = ScenarioSpec::new(kind, seed);
            let (mut world, truth) = build(&spec).unwrap();
            warm_up(&mut world);
            for _ in 0..spec.tick_budget {
                world.step();
                prop_assert!(!is_resolved(&world, &truth), "{kind} resolved by itself at tick {}", world.tick);
            }
        }
    }
}
