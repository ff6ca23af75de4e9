//! Hierarchical B-frame GOP planning.
//!
//! Every GOP is bounded by two intra frames and filled by recursive
//! bisection: the midpoint of each reference pair is coded next, breadth
//! first. Display indices are zero based.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FrameType {
    I,
    B,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GopEntry {
    pub display_index: usize,
    pub coding_index: usize,
    pub frame_type: FrameType,
    /// Bisection depth, 1 for the first midpoint of a GOP. Intra frames use 0.
    pub level: u32,
    /// Coding level label: 1 for frames that are never used as a reference.
    pub coding_level: u8,
    pub ref_past: Option<usize>,
    pub ref_future: Option<usize>,
    /// Distance to each reference; 0 for intra frames.
    pub k: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GopPlan {
    /// Entries in coding order.
    pub entries: Vec<GopEntry>,
    pub intra_period: usize,
    pub num_frames: usize,
}

impl GopPlan {
    pub fn coding_order(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.display_index).collect()
    }

    pub fn by_display(&self, display_index: usize) -> Option<&GopEntry> {
        self.entries.iter().find(|e| e.display_index == display_index)
    }

    pub fn num_levels(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.frame_type == FrameType::B)
            .map(|e| e.level)
            .collect::<HashSet<_>>()
            .len()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }
}

fn check_period(intra_period: usize) -> Result<()> {
    if intra_period < 2 || !intra_period.is_power_of_two() {
        return Err(Error::Config(format!(
            "intra period {intra_period} must be a power of two >= 2"
        )));
    }
    Ok(())
}

/// Display indices of all intra frames: multiples of the intra period, plus
/// the closing frames of a truncated tail. A tail of length `r` is split into
/// descending power-of-two sub-GOPs so that every B frame keeps equidistant
/// references.
pub fn intra_positions(num_frames: usize, intra_period: usize) -> Vec<usize> {
    let last = num_frames - 1;
    let mut out: Vec<usize> = (0..=last).step_by(intra_period).collect();
    let mut pos = *out.last().unwrap();
    let mut rem = last - pos;
    while rem > 0 {
        let step = 1usize << (usize::BITS - 1 - rem.leading_zeros());
        pos += step;
        rem -= step;
        out.push(pos);
    }
    out
}

pub fn plan_gop(num_frames: usize, intra_period: usize) -> Result<GopPlan> {
    check_period(intra_period)?;
    if num_frames == 0 {
        return Err(Error::Config("a sequence needs at least one frame".into()));
    }
    let intra = intra_positions(num_frames, intra_period);
    let mut entries = Vec::with_capacity(num_frames);
    let push = |entries: &mut Vec<GopEntry>, e: GopEntry| {
        let mut e = e;
        e.coding_index = entries.len();
        entries.push(e);
    };
    let intra_entry = |d: usize| GopEntry {
        display_index: d,
        coding_index: 0,
        frame_type: FrameType::I,
        level: 0,
        coding_level: 0,
        ref_past: None,
        ref_future: None,
        k: 0,
    };
    push(&mut entries, intra_entry(intra[0]));
    for pair in intra.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        push(&mut entries, intra_entry(b));
        // Breadth-first bisection of [a, b].
        let mut queue = vec![(a, b)];
        let mut level = 1;
        while !queue.is_empty() {
            let mut next = Vec::new();
            for (lo, hi) in queue {
                if hi - lo < 2 {
                    continue;
                }
                let mid = (lo + hi) / 2;
                let leaf = hi - lo == 2;
                push(
                    &mut entries,
                    GopEntry {
                        display_index: mid,
                        coding_index: 0,
                        frame_type: FrameType::B,
                        level,
                        coding_level: u8::from(leaf),
                        ref_past: Some(lo),
                        ref_future: Some(hi),
                        k: mid - lo,
                    },
                );
                next.push((lo, mid));
                next.push((mid, hi));
            }
            queue = next;
            level += 1;
        }
    }
    Ok(GopPlan {
        entries,
        intra_period,
        num_frames,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Rule {
    Permutation,
    CodingIndex,
    MissingReference,
    Causality,
    ReferenceOrder,
    Equidistance,
    CodingLevel,
    IntraPlacement,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub display_index: usize,
    pub rule: Rule,
    pub message: String,
}

/// Checks every plan invariant and reports each failure; never errors.
pub fn validate(plan: &GopPlan) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut v = |d: usize, rule: Rule, message: String| {
        out.push(Violation {
            display_index: d,
            rule,
            message,
        })
    };

    let mut seen = HashSet::new();
    for e in &plan.entries {
        if e.display_index >= plan.num_frames || !seen.insert(e.display_index) {
            v(
                e.display_index,
                Rule::Permutation,
                "display index out of range or repeated".into(),
            );
        }
    }
    if seen.len() != plan.num_frames {
        v(
            0,
            Rule::Permutation,
            format!("{} of {} frames planned", seen.len(), plan.num_frames),
        );
    }

    let coded_at: HashMap<usize, usize> = plan
        .entries
        .iter()
        .enumerate()
        .map(|(pos, e)| (e.display_index, pos))
        .collect();
    let mut referenced = HashSet::new();
    for (pos, e) in plan.entries.iter().enumerate() {
        if e.coding_index != pos {
            v(
                e.display_index,
                Rule::CodingIndex,
                format!("coding index {} at position {pos}", e.coding_index),
            );
        }
        match e.frame_type {
            FrameType::I => {
                if e.ref_past.is_some() || e.ref_future.is_some() {
                    v(e.display_index, Rule::ReferenceOrder, "intra frame has references".into());
                }
            }
            FrameType::B => {
                let (Some(p), Some(f)) = (e.ref_past, e.ref_future) else {
                    v(e.display_index, Rule::MissingReference, "B frame lacks a reference".into());
                    continue;
                };
                referenced.insert(p);
                referenced.insert(f);
                for r in [p, f] {
                    match coded_at.get(&r) {
                        Some(&rpos) if rpos < pos => {}
                        _ => v(
                            e.display_index,
                            Rule::Causality,
                            format!("reference {r} is not coded before this frame"),
                        ),
                    }
                }
                if !(p < e.display_index && e.display_index < f) {
                    v(
                        e.display_index,
                        Rule::ReferenceOrder,
                        format!("references {p},{f} do not bracket the frame"),
                    );
                } else if e.display_index - p != f - e.display_index || e.k != e.display_index - p
                {
                    v(
                        e.display_index,
                        Rule::Equidistance,
                        format!("refs {p},{f} with k={} are not equidistant", e.k),
                    );
                }
            }
        }
    }

    for e in &plan.entries {
        let expect = u8::from(e.frame_type == FrameType::B && !referenced.contains(&e.display_index));
        if e.coding_level != expect {
            v(
                e.display_index,
                Rule::CodingLevel,
                format!("coding level {} but expected {expect}", e.coding_level),
            );
        }
    }

    if check_period(plan.intra_period).is_ok() && plan.num_frames > 0 {
        let expect: HashSet<usize> = intra_positions(plan.num_frames, plan.intra_period)
            .into_iter()
            .collect();
        for e in &plan.entries {
            if (e.frame_type == FrameType::I) != expect.contains(&e.display_index) {
                v(
                    e.display_index,
                    Rule::IntraPlacement,
                    format!("{:?} frame at an unexpected position", e.frame_type),
                );
            }
        }
    } else {
        v(0, Rule::IntraPlacement, format!("invalid intra period {}", plan.intra_period));
    }
    out
}
