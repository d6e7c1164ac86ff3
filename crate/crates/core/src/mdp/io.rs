//! Plain-text MDP format.
//!
//! ```text
//! # comment
//! <states> <actions> <gamma>
//! <s> <a> <s'> <probability> <reward>     (one line per listed triple)
//! terminal <s> <s> ...                    (final line, list may be empty)
//! ```
//!
//! Unlisted triples have probability zero. Blank lines and `#` comments are
//! ignored. Terminal rows need not be listed.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use super::model::TabularMdp;
use crate::error::{Error, Result};

pub fn parse_mdp(text: &str) -> Result<TabularMdp> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());

    let (line, header) =
        lines.next().ok_or(Error::Parse { line: 0, message: "missing header".into() })?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 3 {
        return Err(Error::Parse { line, message: "header must be `states actions gamma`".into() });
    }
    let ns: usize = field(fields[0], line, "states")?;
    let na: usize = field(fields[1], line, "actions")?;
    let gamma: f64 = field(fields[2], line, "gamma")?;
    if ns == 0 || na == 0 {
        return Err(Error::Parse { line, message: "state and action counts must be positive".into() });
    }

    let len = ns * na * ns;
    let mut transition = vec![0.0; len];
    let mut reward = vec![0.0; len];
    let mut terminal = vec![false; ns];
    let mut saw_terminal_line = false;

    for (line, body) in lines {
        if saw_terminal_line {
            return Err(Error::Parse { line, message: "content after terminal list".into() });
        }
        let fields: Vec<&str> = body.split_whitespace().collect();
        if fields[0] == "terminal" {
            saw_terminal_line = true;
            for f in &fields[1..] {
                let s: usize = field(f, line, "terminal state")?;
                if s >= ns {
                    return Err(Error::Parse { line, message: format!("terminal state {s} out of range") });
                }
                terminal[s] = true;
            }
            continue;
        }
        if fields.len() != 5 {
            return Err(Error::Parse { line, message: "expected `s a s' probability reward`".into() });
        }
        let s: usize = field(fields[0], line, "s")?;
        let a: usize = field(fields[1], line, "a")?;
        let next: usize = field(fields[2], line, "s'")?;
        if s >= ns || a >= na || next >= ns {
            return Err(Error::Parse { line, message: format!("triple ({s}, {a}, {next}) out of range") });
        }
        let idx = (s * na + a) * ns + next;
        transition[idx] = field(fields[3], line, "probability")?;
        reward[idx] = field(fields[4], line, "reward")?;
    }
    if !saw_terminal_line {
        return Err(Error::Parse { line: text.lines().count(), message: "missing `terminal` line".into() });
    }
    TabularMdp::new(ns, na, transition, reward, terminal, gamma)
}

pub fn load_mdp(path: impl AsRef<Path>) -> Result<TabularMdp> {
    parse_mdp(&std::fs::read_to_string(path)?)
}

/// Serializes the non-zero triples of non-terminal states.
pub fn format_mdp(mdp: &TabularMdp) -> String {
    let mut out = format!("{} {} {}\n", mdp.num_states(), mdp.num_actions(), mdp.gamma());
    for s in (0..mdp.num_states()).filter(|s| !mdp.is_terminal(*s)) {
        for a in 0..mdp.num_actions() {
            for next in 0..mdp.num_states() {
                let p = mdp.prob(s, a, next);
                if p != 0.0 {
                    let _ = writeln!(out, "{s} {a} {next} {p:?} {:?}", mdp.reward(s, a, next));
                }
            }
        }
    }
    out.push_str("terminal");
    for s in mdp.terminal_states() {
        let _ = write!(out, " {s}");
    }
    out.push('\n');
    out
}

fn field<T: FromStr>(text: &str, line: usize, what: &str) -> Result<T> {
    text.parse()
        .map_err(|_| Error::Parse { line, message: format!("cannot parse {what} from `{text}`") })
}
