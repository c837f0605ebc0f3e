use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Candidate operation of a search node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Sep3,
    Sep5,
    AvgPool,
    MaxPool,
}

impl OpKind {
    pub const ALL: [OpKind; 4] = [OpKind::Sep3, OpKind::Sep5, OpKind::AvgPool, OpKind::MaxPool];
    pub const COUNT: usize = 4;

    pub fn id(self) -> usize {
        self as usize
    }

    pub fn from_id(id: usize) -> Option<Self> {
        Self::ALL.get(id).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Sep3 => "sep3x3",
            OpKind::Sep5 => "sep5x5",
            OpKind::AvgPool => "avgpool",
            OpKind::MaxPool => "maxpool",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeChoice {
    pub op: OpKind,
    /// Earlier nodes feeding this one through a skip branch, ascending.
    pub skips: Vec<usize>,
}

/// One architecture: an op per node plus skip connections to earlier nodes.
///
/// The text form joins nodes with `|`; a node is its op id optionally
/// followed by `:` and a comma-separated ascending skip list, e.g.
/// `0|1:0|3:0,1|2|0:1,3`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ArchEncoding {
    nodes: Vec<NodeChoice>,
}

impl ArchEncoding {
    pub fn new(nodes: Vec<NodeChoice>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::Contract("architecture needs at least one node".into()));
        }
        for (i, n) in nodes.iter().enumerate() {
            if n.skips.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Contract(format!("node {i}: skips must be strictly ascending")));
            }
            if let Some(&s) = n.skips.iter().find(|&&s| s >= i) {
                return Err(Error::Contract(format!("node {i}: skip {s} is not an earlier node")));
            }
        }
        Ok(Self { nodes })
    }

    /// Pure chain with the given ops.
    pub fn chain(ops: &[OpKind]) -> Result<Self> {
        Self::new(ops.iter().map(|&op| NodeChoice { op, skips: vec![] }).collect())
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[NodeChoice] {
        &self.nodes
    }

    /// Decisions a controller makes for `nodes` nodes: one op each plus one
    /// bit per ordered pair.
    pub fn decision_count(nodes: usize) -> usize {
        nodes + nodes * (nodes.saturating_sub(1)) / 2
    }

    /// Size of the search space over `nodes` nodes.
    pub fn space_size(nodes: usize) -> u128 {
        (OpKind::COUNT as u128).pow(nodes as u32) * 2u128.pow((nodes * nodes.saturating_sub(1) / 2) as u32)
    }

    /// The `index`-th architecture in a fixed enumeration of the space.
    pub fn from_index(nodes: usize, mut index: u128) -> Result<Self> {
        if nodes == 0 || index >= Self::space_size(nodes) {
            return Err(Error::Contract(format!("index {index} outside the {nodes}-node space")));
        }
        let mut out = Vec::with_capacity(nodes);
        for i in 0..nodes {
            let op = OpKind::ALL[(index % 4) as usize];
            index /= 4;
            let mut skips = Vec::new();
            for j in 0..i {
                if index % 2 == 1 {
                    skips.push(j);
                }
                index /= 2;
            }
            out.push(NodeChoice { op, skips });
        }
        Self::new(out)
    }

    /// Uniformly random architecture.
    pub fn random<R: Rng + ?Sized>(nodes: usize, rng: &mut R) -> Result<Self> {
        let out = (0..nodes)
            .map(|i| NodeChoice {
                op: OpKind::ALL[rng.random_range(0..OpKind::COUNT)],
                skips: (0..i).filter(|_| rng.random_bool(0.5)).collect(),
            })
            .collect();
        Self::new(out)
    }

    pub fn encode(&self) -> String {
        self.to_string()
    }

    pub fn decode(s: &str) -> Result<Self> {
        s.parse()
    }
}

impl fmt::Display for ArchEncoding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, n) in self.nodes.iter().enumerate() {
            if i > 0 {
                f.write_str("|")?;
            }
            write!(f, "{}", n.op.id())?;
            for (k, s) in n.skips.iter().enumerate() {
                f.write_str(if k == 0 { ":" } else { "," })?;
                write!(f, "{s}")?;
            }
        }
        Ok(())
    }
}

fn parse_err(position: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        position,
        message: message.into(),
    }
}

fn parse_number(s: &str, at: usize) -> Result<usize> {
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
        return Err(parse_err(at, format!("expected a number, found `{s}`")));
    }
    if s.len() > 1 && s.starts_with('0') {
        return Err(parse_err(at, format!("leading zero in `{s}`")));
    }
    s.parse().map_err(|_| parse_err(at, format!("number `{s}` out of range")))
}

impl FromStr for ArchEncoding {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut nodes = Vec::new();
        let mut at = 0;
        for (i, part) in s.split('|').enumerate() {
            let (op_str, skip_str) = match part.split_once(':') {
                Some((o, k)) => (o, Some(k)),
                None => (part, None),
            };
            let op_id = parse_number(op_str, at)?;
            let op = OpKind::from_id(op_id)
                .ok_or_else(|| parse_err(at, format!("op id {op_id} is not in 0..4")))?;
            let mut skips: Vec<usize> = Vec::new();
            if let Some(list) = skip_str {
                let mut pos = at + op_str.len() + 1;
                for item in list.split(',') {
                    let v = parse_number(item, pos)?;
                    if v >= i {
                        return Err(parse_err(pos, format!("node {i} cannot skip from node {v}")));
                    }
                    if skips.last().is_some_and(|&p| p >= v) {
                        return Err(parse_err(pos, "skips must be strictly ascending"));
                    }
                    skips.push(v);
                    pos += item.len() + 1;
                }
            }
            nodes.push(NodeChoice { op, skips });
            at += part.len() + 1;
        }
        Self::new(nodes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_node_example() {
        let a = ArchEncoding::new(vec![
            NodeChoice { op: OpKind::Sep3, skips: vec![] },
            NodeChoice { op: OpKind::MaxPool, skips: vec![0] },
        ])
        .unwrap();
        assert_eq!(a.encode(), "0|3:0");
        assert_eq!(ArchEncoding::decode("0|3:0").unwrap(), a);
    }

    #[test]
    fn documented_string_round_trips() {
        let s = "0|1:0|3:0,1|2|0:1,3";
        let a = ArchEncoding::decode(s).unwrap();
        assert_eq!(a.len(), 5);
        assert_eq!(a.nodes()[4].skips, vec![1, 3]);
        assert_eq!(a.encode(), s);
        assert_eq!(ArchEncoding::decode("2|2|2").unwrap().encode(), "2|2|2");
    }

    #[test]
    fn parse_errors_carry_positions() {
        let pos = |s: &str| match ArchEncoding::decode(s) {
            Err(Error::Parse { position, .. }) => position,
            other => panic!("{s}: {other:?}"),
        };
        assert_eq!(pos("0|7"), 2);
        assert_eq!(pos("0|1:1"), 4);
        assert_eq!(pos("0|1|2:1,0"), 8);
        assert_eq!(pos("0||1"), 2);
        assert_eq!(pos("0|x"), 2);
        assert_eq!(pos("0|1:"), 4);
    }

    #[test]
    fn index_enumeration_is_a_bijection_at_three_nodes() {
        let n = ArchEncoding::space_size(3);
        assert_eq!(n, 512);
        let mut seen = std::collections::BTreeSet::new();
        for i in 0..n {
            seen.insert(ArchEncoding::from_index(3, i).unwrap().encode());
        }
        assert_eq!(seen.len(), 512);
        assert!(ArchEncoding::from_index(3, 512).is_err());
    }
}
