//! Template instructions over a closed token vocabulary.

use std::f64::consts::PI;

use super::dynamics::{azimuth, START_HEADING};
use super::world::{NavGraph, LEVEL_HEIGHT};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    Straight,
    Left,
    Right,
    Back,
    Up,
    Down,
}

impl Direction {
    pub const ALL: [Direction; 6] =
        [Direction::Straight, Direction::Left, Direction::Right, Direction::Back, Direction::Up, Direction::Down];

    fn index(self) -> u32 {
        Direction::ALL.iter().position(|&d| d == self).unwrap() as u32
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Token {
    Go,
    To,
    Stop,
    At,
    Dir(Direction),
    Landmark(u32),
}

const FIXED: u32 = 10;

/// Token id mapping for a world family with `landmarks` landmark classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Vocabulary {
    pub landmarks: usize,
}

impl Vocabulary {
    pub fn new(landmarks: usize) -> Self {
        Vocabulary { landmarks }
    }

    pub fn size(&self) -> usize {
        FIXED as usize + self.landmarks
    }

    pub fn encode(&self, token: Token) -> u32 {
        match token {
            Token::Go => 0,
            Token::To => 1,
            Token::Stop => 2,
            Token::At => 3,
            Token::Dir(d) => 4 + d.index(),
            Token::Landmark(k) => {
                assert!((k as usize) < self.landmarks, "landmark {k} outside vocabulary");
                FIXED + k
            }
        }
    }

    pub fn decode(&self, id: u32) -> Option<Token> {
        Some(match id {
            0 => Token::Go,
            1 => Token::To,
            2 => Token::Stop,
            3 => Token::At,
            4..=9 => Token::Dir(Direction::ALL[(id - 4) as usize]),
            _ if ((id - FIXED) as usize) < self.landmarks => Token::Landmark(id - FIXED),
            _ => return None,
        })
    }
}

/// Wraps an angle into (-π, π].
pub fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w <= -PI {
        w + 2.0 * PI
    } else {
        w
    }
}

/// Buckets a hop into a direction word given the heading before the hop.
pub fn hop_direction(graph: &NavGraph, from: usize, to: usize, heading: f64) -> Direction {
    let (p, q) = (graph.position(from), graph.position(to));
    let dz = q[2] - p[2];
    if dz > 0.5 * LEVEL_HEIGHT {
        return Direction::Up;
    }
    if dz < -0.5 * LEVEL_HEIGHT {
        return Direction::Down;
    }
    let rel = wrap_angle(azimuth(p, q) - heading);
    let quarter = PI / 4.0;
    if rel.abs() <= quarter {
        Direction::Straight
    } else if rel > quarter && rel <= 3.0 * quarter {
        Direction::Left
    } else if rel < -quarter && rel >= -3.0 * quarter {
        Direction::Right
    } else {
        Direction::Back
    }
}

/// Expands `path` into `[GO DIR TO LM]*` hops followed by `[STOP AT LM_goal]`.
pub fn synthesize_instruction(graph: &NavGraph, path: &[usize]) -> Result<Vec<u32>> {
    let goal = *path.last().ok_or_else(|| Error::InvalidParam("empty path".into()))?;
    let vocab = Vocabulary::new(graph.params.landmark_vocab);
    let lm = |n: usize| vocab.encode(Token::Landmark(graph.nodes[n].landmark_id));
    let mut heading = START_HEADING;
    let mut out = Vec::with_capacity(4 * path.len() + 3);
    for w in path.windows(2) {
        if graph.edge_length(w[0], w[1]).is_none() {
            return Err(Error::InvalidParam(format!("path hop ({}, {}) is not an edge", w[0], w[1])));
        }
        let dir = hop_direction(graph, w[0], w[1], heading);
        out.extend([vocab.encode(Token::Go), vocab.encode(Token::Dir(dir)), vocab.encode(Token::To), lm(w[1])]);
        heading = azimuth(graph.position(w[0]), graph.position(w[1]));
    }
    out.extend([vocab.encode(Token::Stop), vocab.encode(Token::At), lm(goal)]);
    Ok(out)
}
