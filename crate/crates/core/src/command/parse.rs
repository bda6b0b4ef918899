use std::fmt;

use super::{FaultAssignment, FaultDegree, InterventionCommand, ResolutionPlan, SpeedAdjust, Verb};
use crate::label::AnomalyLabel;
use crate::world::VehicleId;

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub expected: String,
    pub found: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "line {}, column {}: expected {}, found {}",
            self.line, self.column, self.expected, self.found
        )
    }
}

#[derive(Clone, Copy, Debug)]
struct Token<'a> {
    text: &'a str,
    line: usize,
    column: usize,
}

impl Token<'_> {
    fn is(&self, keyword: &str) -> bool {
        self.text.eq_ignore_ascii_case(keyword)
    }
}

fn shown(text: &str) -> String {
    let mut out: String = text.chars().take(40).collect();
    if out.len() < text.len() {
        out.push_str("...");
    }
    format!("`{out}`")
}

fn error(at: &Token<'_>, expected: impl Into<String>) -> ParseError {
    ParseError { line: at.line, column: at.column, expected: expected.into(), found: shown(at.text) }
}

/// Error positioned just past the last token of a line.
fn end_of_line(line: &[Token<'_>], expected: impl Into<String>) -> ParseError {
    let last = line.last().expect("lines are non-empty");
    ParseError {
        line: last.line,
        column: last.column + last.text.chars().count(),
        expected: expected.into(),
        found: "end of line".into(),
    }
}

/// Whitespace-separated tokens with `=` split out on its own.
fn tokenize(text: &str) -> Vec<Vec<Token<'_>>> {
    let mut lines = Vec::new();
    for (idx, raw) in text.split('\n').enumerate() {
        let raw = raw.strip_suffix('\r').unwrap_or(raw);
        let mut tokens = Vec::new();
        let mut start: Option<usize> = None;
        let mut column = 0;
        let mut start_col = 0;
        for (byte, ch) in raw.char_indices() {
            column += 1;
            if ch.is_whitespace() || ch == '=' {
                if let Some(s) = start.take() {
                    tokens.push(Token { text: &raw[s..byte], line: idx + 1, column: start_col });
                }
                if ch == '=' {
                    tokens.push(Token { text: &raw[byte..byte + 1], line: idx + 1, column });
                }
            } else if start.is_none() {
                start = Some(byte);
                start_col = column;
            }
        }
        if let Some(s) = start {
            tokens.push(Token { text: &raw[s..], line: idx + 1, column: start_col });
        }
        if !tokens.is_empty() {
            lines.push(tokens);
        }
    }
    lines
}

fn vehicle(tok: &Token<'_>) -> Result<VehicleId, ParseError> {
    tok.text.parse::<VehicleId>().map_err(|_| error(tok, "vehicle id `v-<digits>`"))
}

fn number(tok: &Token<'_>) -> Result<f64, ParseError> {
    let (int, frac) = match tok.text.split_once('.') {
        Some((i, f)) => (i, Some(f)),
        None => (tok.text, None),
    };
    let digits = |s: &str| !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit());
    if !digits(int) || frac.map(|f| !digits(f)).unwrap_or(false) {
        return Err(error(tok, "a decimal number"));
    }
    tok.text
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| error(tok, "a decimal number"))
}

fn one_of<T: Copy>(tok: &Token<'_>, options: &[T], token: fn(T) -> &'static str, expected: &str) -> Result<T, ParseError> {
    options
        .iter()
        .copied()
        .find(|o| tok.is(token(*o)))
        .ok_or_else(|| error(tok, expected))
}

fn label(tok: &Token<'_>) -> Result<AnomalyLabel, ParseError> {
    one_of(tok, &AnomalyLabel::ALL, AnomalyLabel::token, "normal, congestion, ghost_jam, deadlock or accident")
}

fn verb(tok: &Token<'_>) -> Result<Verb, ParseError> {
    one_of(
        tok,
        &Verb::ALL,
        Verb::token,
        "move_forward, move_backward, change_lane_left, change_lane_right, stop or relocate",
    )
}

fn action(line: &[Token<'_>]) -> Result<InterventionCommand, ParseError> {
    let id = vehicle(line.get(1).ok_or_else(|| end_of_line(line, "vehicle id"))?)?;
    let verb_tok = line.get(2).ok_or_else(|| end_of_line(line, "verb"))?;
    let mut cmd = InterventionCommand::new(id, verb(verb_tok)?);
    let mut rest = &line[3..];
    while let Some(key) = rest.first() {
        let eq = rest.get(1).ok_or_else(|| end_of_line(line, "`=`"))?;
        if eq.text != "=" {
            return Err(error(eq, "`=`"));
        }
        let value = rest.get(2).ok_or_else(|| end_of_line(line, "argument value"))?;
        if key.is("distance_m") {
            if !cmd.verb.requires_distance() {
                return Err(error(key, format!("no distance for {}", cmd.verb.token())));
            }
            if cmd.distance_m.is_some() {
                return Err(error(key, "each argument at most once"));
            }
            cmd.distance_m = Some(number(value)?);
        } else if key.is("speed") {
            if !cmd.verb.accepts_speed() {
                return Err(error(key, format!("no speed for {}", cmd.verb.token())));
            }
            if cmd.speed.is_some() {
                return Err(error(key, "each argument at most once"));
            }
            cmd.speed = Some(one_of(value, &SpeedAdjust::ALL, SpeedAdjust::token, "increase, maintain or decrease")?);
        } else {
            return Err(error(key, "distance_m or speed"));
        }
        rest = &rest[3..];
    }
    if cmd.verb.requires_distance() && cmd.distance_m.is_none() {
        return Err(end_of_line(line, format!("distance_m for {}", cmd.verb.token())));
    }
    Ok(cmd)
}

fn fault(line: &[Token<'_>], seen_primary: bool) -> Result<FaultAssignment, ParseError> {
    let id = vehicle(line.get(1).ok_or_else(|| end_of_line(line, "vehicle id"))?)?;
    let deg_tok = line.get(2).ok_or_else(|| end_of_line(line, "primary, secondary or none"))?;
    let degree = one_of(deg_tok, &FaultDegree::ALL, FaultDegree::token, "primary, secondary or none")?;
    if degree == FaultDegree::Primary && seen_primary {
        return Err(error(deg_tok, "secondary or none (one primary per plan)"));
    }
    if let Some(extra) = line.get(3) {
        return Err(error(extra, "end of line"));
    }
    Ok(FaultAssignment { vehicle: id, degree })
}

pub fn parse(text: &str) -> Result<ResolutionPlan, ParseError> {
    let lines = tokenize(text);
    let mut iter = lines.iter().peekable();
    let eof = |expected: &str| ParseError {
        line: text.split('\n').count(),
        column: 1,
        expected: expected.into(),
        found: "end of input".into(),
    };

    if let Some(first) = iter.peek() {
        if first[0].is("FORMAT") {
            let version = first.get(1).ok_or_else(|| end_of_line(first, "format version"))?;
            if version.text != "1" {
                return Err(error(version, "format version 1"));
            }
            if let Some(extra) = first.get(2) {
                return Err(error(extra, "end of line"));
            }
            iter.next();
        }
    }
    let header = iter.next().ok_or_else(|| eof("PLAN"))?;
    if !header[0].is("PLAN") {
        return Err(error(&header[0], "PLAN"));
    }
    let label = label(header.get(1).ok_or_else(|| end_of_line(header, "scene label"))?)?;
    if let Some(extra) = header.get(2) {
        return Err(error(extra, "end of line"));
    }

    let mut plan = ResolutionPlan::new(label);
    for line in iter {
        let head = &line[0];
        if head.is("ACTION") {
            plan.commands.push(action(line)?);
        } else if head.is("FAULT") {
            if label != AnomalyLabel::Accident {
                return Err(error(head, "ACTION (faults only in accident plans)"));
            }
            let seen = plan.faults.iter().any(|f| f.degree == FaultDegree::Primary);
            plan.faults.push(fault(line, seen)?);
        } else {
            return Err(error(head, "ACTION or FAULT"));
        }
    }
    if label == AnomalyLabel::Accident && plan.faults.is_empty() {
        return Err(eof("FAULT (accident plans assign fault)"));
    }
    Ok(plan)
}

/// Parse raw bytes; invalid UTF-8 becomes a positioned error.
pub fn parse_bytes(bytes: &[u8]) -> Result<ResolutionPlan, ParseError> {
    match std::str::from_utf8(bytes) {
        Ok(text) => parse(text),
        Err(e) => {
            let good = &bytes[..e.valid_up_to()];
            let line = good.iter().filter(|b| **b == b'\n').count() + 1;
            let line_start = good.iter().rposition(|b| *b == b'\n').map(|p| p + 1).unwrap_or(0);
            let column = std::str::from_utf8(&good[line_start..]).map(|s| s.chars().count()).unwrap_or(0) + 1;
            Err(ParseError {
                line,
                column,
                expected: "UTF-8 text".into(),
                found: format!("byte 0x{:02x}", bytes[e.valid_up_to()]),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn unknown_verb_points_at_the_token() {
        let err = parse("PLAN normal\nACTION v-0 fly").unwrap_err();
        assert_eq!((err.line, err.column), (2, 12));
        assert_eq!(err.found, "`fly`");
        let err = parse("ACTION v-0 fly").unwrap_err();
        assert_eq!(err.expected, "PLAN");
    }

    #[test]
    fn keywords_are_case_insensitive_and_spacing_free() {
        let plan = parse("format 1\n  plan   GHOST_JAM \naction V-3 Move_Forward speed = Increase\r\n").unwrap();
        assert_eq!(plan.label, AnomalyLabel::GhostJam);
        assert_eq!(plan.commands[0].vehicle, VehicleId(3));
        assert_eq!(plan.commands[0].speed, Some(SpeedAdjust::Increase));
    }

    #[test]
    fn argument_rules() {
        assert!(parse("PLAN deadlock\nACTION v-1 move_backward").is_err());
        assert!(parse("PLAN deadlock\nACTION v-1 stop speed=increase").is_err());
        assert!(parse("PLAN deadlock\nACTION v-1 move_forward distance_m=3").is_err());
        assert!(parse("PLAN deadlock\nACTION v-1 move_backward distance_m=3 distance_m=4").is_err());
        assert!(parse("PLAN deadlock\nACTION v-1 move_backward distance_m=-3").is_err());
        assert!(parse("PLAN deadlock\nACTION v-1 move_backward distance_m=3.").is_err());
        assert!(parse("PLAN deadlock\nACTION v-1 move_backward distance_m=3.25").is_ok());
    }

    #[test]
    fn fault_rules() {
        assert!(parse("PLAN accident\nACTION v-1 stop").is_err());
        assert!(parse("PLAN deadlock\nFAULT v-1 none").is_err());
        let err = parse("PLAN accident\nFAULT v-1 primary\nFAULT v-2 primary").unwrap_err();
        assert_eq!((err.line, err.column), (3, 11));
    }

    #[test]
    fn format_versions() {
        assert!(parse("FORMAT 1\nPLAN normal").is_ok());
        assert!(parse("FORMAT 2\nPLAN normal").is_err());
        assert!(parse("").is_err());
    }

    #[test]
    fn invalid_utf8_is_positioned() {
        let err = parse_bytes(b"PLAN normal\nAC\xffTION").unwrap_err();
        assert_eq!((err.line, err.column), (2, 3));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2_000))]

        #[test]
        fn arbitrary_bytes_never_panic(bytes in prop::collection::vec(any::<u8>(), 0..200)) {
            let _ = parse_bytes(&bytes);
        }

        #[test]
        fn token_soup_never_panics(words in prop::collection::vec(
            prop::sample::select(vec!["PLAN", "ACTION", "FAULT", "FORMAT", "1", "v-1", "v-", "=", "speed",
                "distance_m", "move_backward", "relocate", "accident", "primary", "\n", " ", "3.5", "increase"]),
            0..40,
        )) {
            let _ = parse(&words.join(" "));
        }
    }
}
