//! Transition datasets. A dataset is an ordered list of one-step
//! transitions, optionally partitioned into trajectories. Trajectory
//! metadata is only needed by return-based priorities; the advantage-based
//! path works on bare transitions.
//!
//! On-disk format (`ODPRDS01`, little-endian):
//!
//! ```text
//! magic            8 bytes  "ODPRDS01"
//! n                u64
//! state_dim        u32
//! action_dim       u32
//! has_bounds       u8
//! n records:       state f32*state_dim, action f32*action_dim,
//!                  reward f32, next_state f32*state_dim, terminal u8
//! if has_bounds:   m u64, then m * (start u64, len u64)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::OdprError;
use crate::rng::{fnv1a64, stream_rng};
use crate::Result;

const MAGIC: &[u8; 8] = b"ODPRDS01";

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f32>,
    pub action: Vec<f32>,
    pub reward: f32,
    pub next_state: Vec<f32>,
    pub terminal: bool,
}

/// Undiscounted per-trajectory returns plus the same value broadcast to
/// every transition of the trajectory.
#[derive(Debug, Clone)]
pub struct TrajectoryReturns {
    pub returns: Vec<f64>,
    pub per_transition: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    transitions: Vec<Transition>,
    state_dim: usize,
    action_dim: usize,
    /// (start, len) per trajectory; sorted, disjoint, exactly covering 0..n.
    bounds: Option<Vec<(usize, usize)>>,
}

impl Dataset {
    pub fn new(transitions: Vec<Transition>, bounds: Option<Vec<(usize, usize)>>) -> Result<Self> {
        if transitions.is_empty() {
            return Err(OdprError::invariant("dataset must contain at least one transition"));
        }
        let state_dim = transitions[0].state.len();
        let action_dim = transitions[0].action.len();
        if state_dim == 0 {
            return Err(OdprError::invariant("state dimension must be nonzero"));
        }
        for (i, t) in transitions.iter().enumerate() {
            if t.state.len() != state_dim || t.next_state.len() != state_dim {
                return Err(OdprError::format_at(i, "state dimension mismatch"));
            }
            if t.action.len() != action_dim {
                return Err(OdprError::format_at(i, "action dimension mismatch"));
            }
            if !t.reward.is_finite() {
                return Err(OdprError::format_at(i, "non-finite reward"));
            }
            let finite = t.state.iter().chain(&t.next_state).chain(&t.action).all(|x| x.is_finite());
            if !finite {
                return Err(OdprError::format_at(i, "non-finite state or action entry"));
            }
        }
        if let Some(b) = &bounds {
            validate_bounds(b, transitions.len())?;
            for &(start, len) in b {
                for t in start..start + len - 1 {
                    if transitions[t].next_state != transitions[t + 1].state {
                        return Err(OdprError::format_at(
                            t,
                            "next_state does not chain to the following transition's state",
                        ));
                    }
                }
            }
        }
        Ok(Dataset { transitions, state_dim, action_dim, bounds })
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.transitions[i]
    }

    pub fn bounds(&self) -> Option<&[(usize, usize)]> {
        self.bounds.as_deref()
    }

    /// Serialized record block, exactly as written to disk. This is what the
    /// weight-file pairing hash is computed over.
    pub fn transition_block_bytes(&self) -> Vec<u8> {
        let rec = (2 * self.state_dim + self.action_dim + 1) * 4 + 1;
        let mut out = Vec::with_capacity(rec * self.transitions.len());
        for t in &self.transitions {
            for x in &t.state {
                out.extend_from_slice(&x.to_le_bytes());
            }
            for x in &t.action {
                out.extend_from_slice(&x.to_le_bytes());
            }
            out.extend_from_slice(&t.reward.to_le_bytes());
            for x in &t.next_state {
                out.extend_from_slice(&x.to_le_bytes());
            }
            out.push(t.terminal as u8);
        }
        out
    }

    /// Fingerprint used to pair weight files with the dataset they were
    /// computed on.
    pub fn content_hash(&self) -> u64 {
        fnv1a64(&self.transition_block_bytes())
    }

    /// Undiscounted return of each trajectory. Errors when the dataset
    /// carries no trajectory metadata.
    pub fn trajectory_returns(&self) -> Result<TrajectoryReturns> {
        let bounds = self
            .bounds
            .as_ref()
            .ok_or_else(|| OdprError::invariant("dataset has no trajectory metadata"))?;
        let mut returns = Vec::with_capacity(bounds.len());
        let mut per_transition = vec![0.0; self.len()];
        for &(start, len) in bounds {
            let g: f64 = self.transitions[start..start + len].iter().map(|t| t.reward as f64).sum();
            for slot in &mut per_transition[start..start + len] {
                *slot = g;
            }
            returns.push(g);
        }
        Ok(TrajectoryReturns { returns, per_transition })
    }

    /// If every state is a one-dimensional integral id, return the ids and
    /// the implied state count. The exact tabular paths use this view.
    pub fn integral_states(&self) -> Option<TabularStates> {
        if self.state_dim != 1 {
            return None;
        }
        let as_id = |x: f32| -> Option<usize> {
            if x.is_finite() && x >= 0.0 && x.fract() == 0.0 && x < 1e6 {
                Some(x as usize)
            } else {
                None
            }
        };
        let mut states = Vec::with_capacity(self.len());
        let mut next_states = Vec::with_capacity(self.len());
        let mut max_id = 0usize;
        for t in &self.transitions {
            let s = as_id(t.state[0])?;
            let ns = as_id(t.next_state[0])?;
            max_id = max_id.max(s).max(ns);
            states.push(s);
            next_states.push(ns);
        }
        Some(TabularStates { states, next_states, n_states: max_id + 1 })
    }

    /// Integral-action counterpart of [`integral_states`](Self::integral_states).
    pub fn integral_actions(&self) -> Option<(Vec<usize>, usize)> {
        if self.action_dim != 1 {
            return None;
        }
        let mut actions = Vec::with_capacity(self.len());
        let mut max_id = 0usize;
        for t in &self.transitions {
            let a = t.action[0];
            if !(a.is_finite() && a >= 0.0 && a.fract() == 0.0 && a < 1e6) {
                return None;
            }
            let a = a as usize;
            max_id = max_id.max(a);
            actions.push(a);
        }
        Some((actions, max_id + 1))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        w.write_all(&(self.state_dim as u32).to_le_bytes())?;
        w.write_all(&(self.action_dim as u32).to_le_bytes())?;
        w.write_all(&[self.bounds.is_some() as u8])?;
        w.write_all(&self.transition_block_bytes())?;
        if let Some(bounds) = &self.bounds {
            w.write_all(&(bounds.len() as u64).to_le_bytes())?;
            for &(start, len) in bounds {
                w.write_all(&(start as u64).to_le_bytes())?;
                w.write_all(&(len as u64).to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 8];
        read_exact(&mut r, &mut magic, "header")?;
        if &magic != MAGIC {
            return Err(OdprError::format("bad magic, not an ODPRDS01 dataset file"));
        }
        let n = read_u64(&mut r, "header")? as usize;
        let state_dim = read_u32(&mut r, "header")? as usize;
        let action_dim = read_u32(&mut r, "header")? as usize;
        let has_bounds = read_u8(&mut r, "header")?;
        if has_bounds > 1 {
            return Err(OdprError::format("has_bounds flag must be 0 or 1"));
        }
        let mut transitions = Vec::with_capacity(n);
        for i in 0..n {
            let ctx = format!("record {i}");
            let state = read_f32s(&mut r, state_dim, &ctx)?;
            let action = read_f32s(&mut r, action_dim, &ctx)?;
            let reward = read_f32s(&mut r, 1, &ctx)?[0];
            let next_state = read_f32s(&mut r, state_dim, &ctx)?;
            let terminal = match read_u8_at(&mut r, i)? {
                0 => false,
                1 => true,
                b => return Err(OdprError::format_at(i, format!("terminal byte must be 0 or 1, got {b}"))),
            };
            transitions.push(Transition { state, action, reward, next_state, terminal });
        }
        let bounds = if has_bounds == 1 {
            let m = read_u64(&mut r, "bounds")? as usize;
            let mut b = Vec::with_capacity(m);
            for _ in 0..m {
                let start = read_u64(&mut r, "bounds")? as usize;
                let len = read_u64(&mut r, "bounds")? as usize;
                b.push((start, len));
            }
            Some(b)
        } else {
            None
        };
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing)? != 0 {
            return Err(OdprError::format("trailing bytes after dataset payload"));
        }
        Dataset::new(transitions, bounds)
    }

    /// Import from CSV with a header row. Expected columns, in any order:
    /// `state_0..state_{d-1}`, `action_0..action_{k-1}`, `reward`,
    /// `next_state_0..next_state_{d-1}`, `terminal`, and optionally
    /// `trajectory` (an id; consecutive runs of equal ids form trajectories).
    pub fn from_csv(path: impl AsRef<Path>) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(path.as_ref())
            .map_err(|e| OdprError::format(format!("csv open failed: {e}")))?;
        let headers = rdr
            .headers()
            .map_err(|e| OdprError::format(format!("csv header: {e}")))?
            .clone();

        let mut state_cols = Vec::new();
        let mut action_cols = Vec::new();
        let mut next_cols = Vec::new();
        let mut reward_col = None;
        let mut terminal_col = None;
        let mut traj_col = None;
        for (idx, name) in headers.iter().enumerate() {
            if let Some(d) = name.strip_prefix("next_state_") {
                next_cols.push((parse_col_index(d, name)?, idx));
            } else if let Some(d) = name.strip_prefix("state_") {
                state_cols.push((parse_col_index(d, name)?, idx));
            } else if let Some(d) = name.strip_prefix("action_") {
                action_cols.push((parse_col_index(d, name)?, idx));
            } else if name == "reward" {
                reward_col = Some(idx);
            } else if name == "terminal" {
                terminal_col = Some(idx);
            } else if name == "trajectory" {
                traj_col = Some(idx);
            } else {
                return Err(OdprError::format(format!("unrecognized csv column '{name}'")));
            }
        }
        state_cols.sort();
        action_cols.sort();
        next_cols.sort();
        check_contiguous(&state_cols, "state")?;
        check_contiguous(&action_cols, "action")?;
        check_contiguous(&next_cols, "next_state")?;
        if state_cols.len() != next_cols.len() {
            return Err(OdprError::format("state and next_state column counts differ"));
        }
        if state_cols.is_empty() || action_cols.is_empty() {
            return Err(OdprError::format("csv must define state_* and action_* columns"));
        }
        let reward_col = reward_col.ok_or_else(|| OdprError::format("missing 'reward' column"))?;
        let terminal_col = terminal_col.ok_or_else(|| OdprError::format("missing 'terminal' column"))?;

        let mut transitions = Vec::new();
        let mut traj_ids: Vec<u64> = Vec::new();
        for (i, row) in rdr.records().enumerate() {
            let row = row.map_err(|e| OdprError::format_at(i, format!("csv parse: {e}")))?;
            let field = |idx: usize| -> Result<&str> {
                row.get(idx).ok_or_else(|| OdprError::format_at(i, "row too short"))
            };
            let f32_at = |idx: usize| -> Result<f32> {
                let s = field(idx)?;
                s.trim()
                    .parse::<f32>()
                    .map_err(|_| OdprError::format_at(i, format!("bad float '{s}'")))
            };
            let state: Vec<f32> = state_cols.iter().map(|&(_, c)| f32_at(c)).collect::<Result<_>>()?;
            let action: Vec<f32> = action_cols.iter().map(|&(_, c)| f32_at(c)).collect::<Result<_>>()?;
            let next_state: Vec<f32> = next_cols.iter().map(|&(_, c)| f32_at(c)).collect::<Result<_>>()?;
            let reward = f32_at(reward_col)?;
            let terminal = match field(terminal_col)?.trim() {
                "0" | "false" => false,
                "1" | "true" => true,
                s => return Err(OdprError::format_at(i, format!("bad terminal value '{s}'"))),
            };
            if let Some(tc) = traj_col {
                let s = field(tc)?;
                let id = s
                    .trim()
                    .parse::<u64>()
                    .map_err(|_| OdprError::format_at(i, format!("bad trajectory id '{s}'")))?;
                traj_ids.push(id);
            }
            transitions.push(Transition { state, action, reward, next_state, terminal });
        }
        let bounds = if traj_col.is_some() {
            Some(runs_to_bounds(&traj_ids))
        } else {
            None
        };
        Dataset::new(transitions, bounds)
    }

    /// Concatenate two datasets with identical dimensions. Trajectory
    /// metadata must be present on both or absent on both.
    pub fn mix(a: &Dataset, b: &Dataset) -> Result<Dataset> {
        if a.state_dim != b.state_dim || a.action_dim != b.action_dim {
            return Err(OdprError::invariant(format!(
                "dimension mismatch: ({}, {}) vs ({}, {})",
                a.state_dim, a.action_dim, b.state_dim, b.action_dim
            )));
        }
        let bounds = match (&a.bounds, &b.bounds) {
            (Some(ba), Some(bb)) => {
                let mut out = ba.clone();
                out.extend(bb.iter().map(|&(s, l)| (s + a.len(), l)));
                Some(out)
            }
            (None, None) => None,
            _ => {
                return Err(OdprError::invariant(
                    "inconsistent trajectory metadata: one dataset has bounds, the other does not",
                ))
            }
        };
        let mut transitions = a.transitions.clone();
        transitions.extend(b.transitions.iter().cloned());
        Dataset::new(transitions, bounds)
    }

    /// Keep a uniformly chosen fraction of transitions (without replacement,
    /// original order, trajectory metadata dropped). The kept count is
    /// `round(keep_fraction * n)`.
    pub fn strip_trajectories(&self, keep_fraction: f64, seed: u64) -> Result<Dataset> {
        if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
            return Err(OdprError::invalid(format!(
                "keep_fraction must be in (0, 1], got {keep_fraction}"
            )));
        }
        let k = (keep_fraction * self.len() as f64).round() as usize;
        if k == 0 {
            return Err(OdprError::invalid("keep_fraction keeps zero transitions"));
        }
        let mut idx: Vec<usize> = (0..self.len()).collect();
        let mut rng = stream_rng(seed, "strip");
        use rand::seq::SliceRandom;
        idx.shuffle(&mut rng);
        let mut keep: Vec<usize> = idx.into_iter().take(k).collect();
        keep.sort_unstable();
        let transitions = keep.iter().map(|&i| self.transitions[i].clone()).collect();
        Dataset::new(transitions, None)
    }
}

/// Tabular view of a dataset whose states are integral ids.
#[derive(Debug, Clone)]
pub struct TabularStates {
    pub states: Vec<usize>,
    pub next_states: Vec<usize>,
    pub n_states: usize,
}

fn validate_bounds(bounds: &[(usize, usize)], n: usize) -> Result<()> {
    if bounds.is_empty() {
        return Err(OdprError::invariant("trajectory bounds present but empty"));
    }
    let mut cursor = 0usize;
    for (i, &(start, len)) in bounds.iter().enumerate() {
        if len == 0 {
            return Err(OdprError::invariant(format!("trajectory {i} has zero length")));
        }
        if start != cursor {
            return Err(OdprError::invariant(format!(
                "trajectory bounds must partition the dataset: trajectory {i} starts at {start}, expected {cursor}"
            )));
        }
        cursor = start + len;
    }
    if cursor != n {
        return Err(OdprError::invariant(format!(
            "trajectory bounds cover {cursor} transitions, dataset has {n}"
        )));
    }
    Ok(())
}

fn runs_to_bounds(ids: &[u64]) -> Vec<(usize, usize)> {
    let mut bounds = Vec::new();
    let mut start = 0usize;
    for i in 1..=ids.len() {
        if i == ids.len() || ids[i] != ids[start] {
            bounds.push((start, i - start));
            start = i;
        }
    }
    bounds
}

fn parse_col_index(digits: &str, name: &str) -> Result<usize> {
    digits
        .parse::<usize>()
        .map_err(|_| OdprError::format(format!("bad column name '{name}'")))
}

fn check_contiguous(cols: &[(usize, usize)], what: &str) -> Result<()> {
    for (expect, &(got, _)) in cols.iter().enumerate() {
        if got != expect {
            return Err(OdprError::format(format!(
                "{what} columns must be numbered 0..{}, found index {got}",
                cols.len()
            )));
        }
    }
    Ok(())
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], ctx: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| OdprError::format(format!("unexpected end of file in {ctx}")))
}

fn read_u8(r: &mut impl Read, ctx: &str) -> Result<u8> {
    let mut b = [0u8; 1];
    read_exact(r, &mut b, ctx)?;
    Ok(b[0])
}

fn read_u8_at(r: &mut impl Read, record: usize) -> Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)
        .map_err(|_| OdprError::format_at(record, "unexpected end of file"))?;
    Ok(b[0])
}

fn read_u32(r: &mut impl Read, ctx: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, ctx)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read, ctx: &str) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b, ctx)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f32s(r: &mut impl Read, n: usize, ctx: &str) -> Result<Vec<f32>> {
    let mut out = Vec::with_capacity(n);
    let mut b = [0u8; 4];
    for _ in 0..n {
        read_exact(r, &mut b, ctx)?;
        out.push(f32::from_le_bytes(b));
    }
    Ok(out)
}
