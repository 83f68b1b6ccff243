//! Model population: folding matched rides into graph counters.

use std::collections::BTreeMap;
use std::ops::AddAssign;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{ElementId, MapGraph, MatchedRide};
use crate::ride::INCIDENT_CATEGORIES;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PopulateError {
    #[error("element {0} is not part of the graph")]
    UnknownElement(ElementId),
    #[error("edge {0} referenced without a travel direction")]
    MissingDirection(ElementId),
}

/// Counters of one element. Nodes only use column 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counters {
    pub r: [u64; 2],
    pub s: [[u64; 2]; INCIDENT_CATEGORIES],
    pub n: [[u64; 2]; INCIDENT_CATEGORIES],
}

impl AddAssign for Counters {
    fn add_assign(&mut self, o: Counters) {
        for d in 0..2 {
            self.r[d] += o.r[d];
            for c in 0..INCIDENT_CATEGORIES {
                self.s[c][d] += o.s[c][d];
                self.n[c][d] += o.n[c][d];
            }
        }
    }
}

/// Per-element counter increments from a set of matched rides. Merging is
/// commutative, so partial tallies from parallel workers can be summed in
/// any order.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Tally {
    pub counters: BTreeMap<ElementId, Counters>,
    pub incidents: u64,
}

impl AddAssign for Tally {
    fn add_assign(&mut self, o: Tally) {
        for (id, c) in o.counters {
            *self.counters.entry(id).or_default() += c;
        }
        self.incidents += o.incidents;
    }
}

fn column(element: ElementId, direction: Option<super::Direction>) -> Result<usize, PopulateError> {
    match (element, direction) {
        (ElementId::Node(_), _) => Ok(0),
        (ElementId::Edge(_), Some(d)) => Ok(d.index()),
        (ElementId::Edge(_), None) => Err(PopulateError::MissingDirection(element)),
    }
}

impl Tally {
    /// Adds one ride: one ride count per traversal entry and one incident
    /// count per matched labeled incident.
    pub fn add_ride(&mut self, ride: &MatchedRide) -> Result<(), PopulateError> {
        for entry in &ride.traversal {
            let col = column(entry.element, entry.direction)?;
            self.counters.entry(entry.element).or_default().r[col] += 1;
        }
        for inc in &ride.matched_incidents {
            let Some(cat) = inc.incident_type.category_index() else { continue };
            let col = column(inc.element, inc.direction)?;
            let c = self.counters.entry(inc.element).or_default();
            if inc.scary {
                c.s[cat][col] += 1;
            } else {
                c.n[cat][col] += 1;
            }
            self.incidents += 1;
        }
        Ok(())
    }

    pub fn from_rides(rides: &[MatchedRide]) -> Result<Tally, PopulateError> {
        let mut t = Tally::default();
        for r in rides {
            t.add_ride(r)?;
        }
        Ok(t)
    }

    /// Adds the tally onto the graph counters. Nothing is changed when an
    /// element is unknown.
    pub fn apply(&self, graph: &mut MapGraph) -> Result<(), PopulateError> {
        if let Some(id) = self.counters.keys().find(|id| !graph.contains(**id)) {
            return Err(PopulateError::UnknownElement(*id));
        }
        for (id, c) in &self.counters {
            match id {
                ElementId::Node(n) => {
                    let node = graph.nodes.get_mut(n).expect("checked above");
                    node.r += c.r[0];
                    for k in 0..INCIDENT_CATEGORIES {
                        node.s[k] += c.s[k][0];
                        node.n[k] += c.n[k][0];
                    }
                }
                ElementId::Edge(e) => {
                    let edge = graph.edges.get_mut(e).expect("checked above");
                    for d in 0..2 {
                        edge.r[d] += c.r[d];
                        for k in 0..INCIDENT_CATEGORIES {
                            edge.s[k][d] += c.s[k][d];
                            edge.n[k][d] += c.n[k][d];
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Adds the counts of `matched` onto the graph.
pub fn populate(graph: &mut MapGraph, matched: &[MatchedRide]) -> Result<(), PopulateError> {
    Tally::from_rides(matched)?.apply(graph)
}
