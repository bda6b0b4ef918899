//! Road network: lane segments, the four-approach intersection template and
//! its conflict box.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Side length of one conflict-box cell along a connector, in metres.
pub const CELL_LENGTH: f64 = 5.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SegmentId(pub u32);

impl fmt::Display for SegmentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A lane within a segment. `index == segment.lanes` addresses the shoulder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LaneId {
    pub segment: SegmentId,
    pub index: u8,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Heading {
    North,
    East,
    South,
    West,
}

impl Heading {
    pub const ALL: [Heading; 4] = [Heading::North, Heading::East, Heading::South, Heading::West];

    /// Rotate clockwise by `quarter_turns`.
    pub fn rotate(self, quarter_turns: u32) -> Heading {
        let idx = Heading::ALL.iter().position(|h| *h == self).unwrap();
        Heading::ALL[(idx + quarter_turns as usize) % 4]
    }

    pub fn token(self) -> &'static str {
        match self {
            Heading::North => "north",
            Heading::East => "east",
            Heading::South => "south",
            Heading::West => "west",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Movement {
    Straight,
    Left,
    Right,
}

impl Movement {
    pub const ALL: [Movement; 3] = [Movement::Straight, Movement::Left, Movement::Right];

    pub fn token(self) -> &'static str {
        match self {
            Movement::Straight => "straight",
            Movement::Left => "left",
            Movement::Right => "right",
        }
    }

    pub fn is_turn(self) -> bool {
        !matches!(self, Movement::Straight)
    }

    fn exit_heading(self, heading: Heading) -> Heading {
        match self {
            Movement::Straight => heading,
            Movement::Left => heading.rotate(3),
            Movement::Right => heading.rotate(1),
        }
    }
}

/// Quadrant cells of the conflict box.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cell {
    Ne,
    Nw,
    Sw,
    Se,
}

impl Cell {
    pub const ALL: [Cell; 4] = [Cell::Ne, Cell::Nw, Cell::Sw, Cell::Se];

    pub fn token(self) -> &'static str {
        match self {
            Cell::Ne => "ne",
            Cell::Nw => "nw",
            Cell::Sw => "sw",
            Cell::Se => "se",
        }
    }
}

impl FromStr for Cell {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Cell::ALL
            .into_iter()
            .find(|c| c.token() == s)
            .ok_or_else(|| format!("unknown cell `{s}`"))
    }
}

/// Right-hand traffic: the cells a movement sweeps, in travel order.
fn movement_cells(heading: Heading, movement: Movement) -> Vec<Cell> {
    use Cell::*;
    let straight: [Cell; 2] = match heading {
        Heading::North => [Se, Ne],
        Heading::West => [Ne, Nw],
        Heading::South => [Nw, Sw],
        Heading::East => [Sw, Se],
    };
    match movement {
        Movement::Right => vec![straight[0]],
        Movement::Straight => straight.to_vec(),
        Movement::Left => {
            // the left turn continues into the cell the crossing left-hand flow uses next
            let third = match heading {
                Heading::North => Nw,
                Heading::West => Sw,
                Heading::South => Se,
                Heading::East => Ne,
            };
            vec![straight[0], straight[1], third]
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSpan {
    pub cell: Cell,
    pub from: f64,
    pub to: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum SegmentKind {
    Road,
    Inbound,
    Outbound,
    Connector { movement: Movement, cells: Vec<CellSpan> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LaneSegment {
    pub id: SegmentId,
    pub length: f64,
    pub lanes: u8,
    pub heading: Heading,
    pub kind: SegmentKind,
    /// The segment's end joins its own start.
    pub ring: bool,
}

impl LaneSegment {
    pub fn has_shoulder(&self) -> bool {
        !matches!(self.kind, SegmentKind::Connector { .. })
    }

    pub fn shoulder_index(&self) -> u8 {
        self.lanes
    }

    pub fn is_connector(&self) -> bool {
        matches!(self.kind, SegmentKind::Connector { .. })
    }

    pub fn cells(&self) -> &[CellSpan] {
        match &self.kind {
            SegmentKind::Connector { cells, .. } => cells,
            _ => &[],
        }
    }

    pub fn movement(&self) -> Option<Movement> {
        match &self.kind {
            SegmentKind::Connector { movement, .. } => Some(*movement),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Approach {
    /// Direction of travel of the inbound traffic.
    pub heading: Heading,
    pub inbound: SegmentId,
    /// (movement, connector, outbound)
    pub movements: Vec<(Movement, SegmentId, SegmentId)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConflictBox {
    pub cells: Vec<Cell>,
    pub approaches: Vec<Approach>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoadNet {
    pub segments: Vec<LaneSegment>,
    pub intersection: Option<ConflictBox>,
}

impl RoadNet {
    /// A single open road segment.
    pub fn straight(length: f64, lanes: u8) -> RoadNet {
        RoadNet {
            segments: vec![LaneSegment {
                id: SegmentId(0),
                length,
                lanes,
                heading: Heading::East,
                kind: SegmentKind::Road,
                ring: false,
            }],
            intersection: None,
        }
    }

    /// A closed loop road; vehicles leaving the end re-enter at the start.
    pub fn ring(length: f64, lanes: u8) -> RoadNet {
        let mut net = RoadNet::straight(length, lanes);
        net.segments[0].ring = true;
        net
    }

    /// Four single-lane approaches meeting at one conflict box; each approach
    /// offers straight, left and right connectors to the matching outbound.
    pub fn four_way(approach_length: f64, exit_length: f64) -> RoadNet {
        let mut segments = Vec::new();
        let mut next_id = 0u32;
        let mut alloc = |segments: &mut Vec<LaneSegment>, length, heading, kind| {
            let id = SegmentId(next_id);
            next_id += 1;
            segments.push(LaneSegment { id, length, lanes: 1, heading, kind, ring: false });
            id
        };
        let inbound: Vec<SegmentId> = Heading::ALL
            .iter()
            .map(|h| alloc(&mut segments, approach_length, *h, SegmentKind::Inbound))
            .collect();
        let outbound: Vec<SegmentId> = Heading::ALL
            .iter()
            .map(|h| alloc(&mut segments, exit_length, *h, SegmentKind::Outbound))
            .collect();
        let mut approaches = Vec::new();
        for (i, heading) in Heading::ALL.iter().enumerate() {
            let mut movements = Vec::new();
            for movement in Movement::ALL {
                let cells: Vec<CellSpan> = movement_cells(*heading, movement)
                    .into_iter()
                    .enumerate()
                    .map(|(k, cell)| CellSpan {
                        cell,
                        from: k as f64 * CELL_LENGTH,
                        to: (k + 1) as f64 * CELL_LENGTH,
                    })
                    .collect();
                let length = cells.len() as f64 * CELL_LENGTH;
                let connector = alloc(
                    &mut segments,
                    length,
                    *heading,
                    SegmentKind::Connector { movement, cells },
                );
                let exit = movement.exit_heading(*heading);
                let out = outbound[Heading::ALL.iter().position(|h| *h == exit).unwrap()];
                movements.push((movement, connector, out));
            }
            approaches.push(Approach { heading: *heading, inbound: inbound[i], movements });
        }
        RoadNet {
            segments,
            intersection: Some(ConflictBox { cells: Cell::ALL.to_vec(), approaches }),
        }
    }

    pub fn segment(&self, id: SegmentId) -> &LaneSegment {
        &self.segments[id.0 as usize]
    }

    pub fn get(&self, id: SegmentId) -> Option<&LaneSegment> {
        self.segments.get(id.0 as usize).filter(|s| s.id == id)
    }

    pub fn approach(&self, heading: Heading) -> Option<&Approach> {
        self.intersection
            .as_ref()?
            .approaches
            .iter()
            .find(|a| a.heading == heading)
    }

    /// Route through the intersection: inbound, connector, outbound.
    pub fn route(&self, heading: Heading, movement: Movement) -> Option<Vec<SegmentId>> {
        let approach = self.approach(heading)?;
        let (_, connector, out) = approach.movements.iter().find(|(m, _, _)| *m == movement)?;
        Some(vec![approach.inbound, *connector, *out])
    }
}
