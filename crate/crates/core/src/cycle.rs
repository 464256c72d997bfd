//! Clock-cycle cost model for statement trees.
//!
//! Timing follows a simple synchronous-hardware discipline: every assignment
//! takes exactly one clock cycle and everything else (control flow, expression
//! evaluation, loop bookkeeping) is free. The branches of a `Par` block start
//! in the same cycle, so the block lasts as long as its longest branch.
//!
//! Trees share identical subtrees through `Arc`, which keeps a schedule for a
//! 512×512 mesh (one cell update per interior point) small.

use std::fmt::Write as _;
use std::sync::Arc;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CycleError {
    #[error("mesh size must be at least 1")]
    EmptyMesh,
    #[error("sweep count must be at least 1")]
    NoSweeps,
    #[error("a cell update needs at least one assignment")]
    NoAssignments,
    #[error("clock frequency must be positive and finite, got {0}")]
    InvalidFrequency(f64),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Stmt {
    Assign,
    Seq(Vec<Arc<Stmt>>),
    Par(Vec<Arc<Stmt>>),
    Loop { trip_count: u64, body: Arc<Stmt> },
}

impl Stmt {
    pub fn seq(children: impl IntoIterator<Item = Stmt>) -> Self {
        Stmt::Seq(children.into_iter().map(Arc::new).collect())
    }

    pub fn par(children: impl IntoIterator<Item = Stmt>) -> Self {
        Stmt::Par(children.into_iter().map(Arc::new).collect())
    }

    pub fn repeat(trip_count: u64, body: Stmt) -> Self {
        Stmt::Loop {
            trip_count,
            body: Arc::new(body),
        }
    }

    /// `count` assignments in sequence.
    pub fn assignments(count: usize) -> Self {
        Stmt::seq(std::iter::repeat_n(Stmt::Assign, count))
    }

    /// Number of nodes, counting shared subtrees once per reference.
    pub fn node_count(&self) -> usize {
        1 + match self {
            Stmt::Assign => 0,
            Stmt::Seq(cs) | Stmt::Par(cs) => cs.iter().map(|c| c.node_count()).sum(),
            Stmt::Loop { body, .. } => body.node_count(),
        }
    }
}

/// Clock cycles taken by `s`.
///
/// # Panics
///
/// If the count overflows `u64`.
pub fn cycles(s: &Stmt) -> u64 {
    match s {
        Stmt::Assign => 1,
        Stmt::Seq(cs) => cs
            .iter()
            .map(|c| cycles(c))
            .try_fold(0u64, |acc, c| acc.checked_add(c))
            .expect("cycle count overflows u64"),
        Stmt::Par(cs) => cs.iter().map(|c| cycles(c)).max().unwrap_or(0),
        Stmt::Loop { trip_count, body } => trip_count
            .checked_mul(cycles(body))
            .expect("cycle count overflows u64"),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClockSpec {
    frequency_hz: f64,
}

impl ClockSpec {
    pub fn new(frequency_hz: f64) -> Result<Self, CycleError> {
        if !(frequency_hz > 0.0 && frequency_hz.is_finite()) {
            return Err(CycleError::InvalidFrequency(frequency_hz));
        }
        Ok(Self { frequency_hz })
    }

    pub fn frequency_hz(&self) -> f64 {
        self.frequency_hz
    }
}

/// Seconds taken by `s` at the given clock: cycles divided by frequency.
pub fn model_time(s: &Stmt, clk: ClockSpec) -> f64 {
    cycles(s) as f64 / clk.frequency_hz
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScheduleVariant {
    /// One cell update after another, row-major.
    Sequential,
    /// All red cell updates in one `Par`, then all black ones in another.
    RedBlack,
}

/// Builds SOR sweep schedules. Each cell update is a sequence of
/// `assigns_per_update` assignments; the default of 6 stands for four
/// neighbour accumulations, one scaling and one write-back.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScheduleBuilder {
    pub assigns_per_update: usize,
}

impl Default for ScheduleBuilder {
    fn default() -> Self {
        Self {
            assigns_per_update: 6,
        }
    }
}

impl ScheduleBuilder {
    pub fn new(assigns_per_update: usize) -> Self {
        Self { assigns_per_update }
    }

    /// `Loop(sweeps, body)` where the body is either a `Seq` over all `n²` cell
    /// updates or `Seq(Par(red updates), Par(black updates))`.
    pub fn build(
        &self,
        n: usize,
        variant: ScheduleVariant,
        sweeps: u64,
    ) -> Result<Stmt, CycleError> {
        if n == 0 {
            return Err(CycleError::EmptyMesh);
        }
        if sweeps == 0 {
            return Err(CycleError::NoSweeps);
        }
        if self.assigns_per_update == 0 {
            return Err(CycleError::NoAssignments);
        }
        let update = Arc::new(Stmt::assignments(self.assigns_per_update));
        let body = match variant {
            ScheduleVariant::Sequential => Stmt::Seq(vec![update; n * n]),
            ScheduleVariant::RedBlack => {
                let red = (n * n).div_ceil(2);
                let black = n * n / 2;
                Stmt::Seq(vec![
                    Arc::new(Stmt::Par(vec![update.clone(); red])),
                    Arc::new(Stmt::Par(vec![update; black])),
                ])
            }
        };
        Ok(Stmt::repeat(sweeps, body))
    }
}

/// [`ScheduleBuilder::build`] with six assignments per cell update.
pub fn build_sor_schedule(
    n: usize,
    variant: ScheduleVariant,
    sweeps: u64,
) -> Result<Stmt, CycleError> {
    ScheduleBuilder::default().build(n, variant, sweeps)
}

/// Line-oriented text form: one node per line (`assign`, `seq`, `par`,
/// `loop <trip_count>`), children indented two spaces below their parent.
pub fn to_text(s: &Stmt) -> String {
    fn go(s: &Stmt, depth: usize, out: &mut String) {
        let pad = "  ".repeat(depth);
        match s {
            Stmt::Assign => writeln!(out, "{pad}assign"),
            Stmt::Seq(_) => writeln!(out, "{pad}seq"),
            Stmt::Par(_) => writeln!(out, "{pad}par"),
            Stmt::Loop { trip_count, .. } => writeln!(out, "{pad}loop {trip_count}"),
        }
        .expect("writing to a String cannot fail");
        match s {
            Stmt::Assign => {}
            Stmt::Seq(cs) | Stmt::Par(cs) => cs.iter().for_each(|c| go(c, depth + 1, out)),
            Stmt::Loop { body, .. } => go(body, depth + 1, out),
        }
    }
    let mut out = String::new();
    go(s, 0, &mut out);
    out
}

/// Parses the output of [`to_text`]. Blank lines are ignored.
pub fn parse_text(text: &str) -> Result<Stmt, CycleError> {
    let mut lines = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let line = idx + 1;
        let indent = raw.len() - raw.trim_start_matches(' ').len();
        if indent % 2 != 0 {
            return Err(CycleError::Parse {
                line,
                message: "indentation must be a multiple of two spaces".into(),
            });
        }
        lines.push((line, indent / 2, raw.trim()));
    }
    let mut pos = 0;
    let root = parse_node(&lines, &mut pos, 0)?;
    if let Some(&(line, _, _)) = lines.get(pos) {
        return Err(CycleError::Parse {
            line,
            message: "more than one root statement".into(),
        });
    }
    Ok(root)
}

fn parse_node(
    lines: &[(usize, usize, &str)],
    pos: &mut usize,
    depth: usize,
) -> Result<Stmt, CycleError> {
    let Some(&(line, indent, text)) = lines.get(*pos) else {
        return Err(CycleError::Parse {
            line: lines.last().map_or(1, |l| l.0),
            message: "expected a statement".into(),
        });
    };
    if indent != depth {
        return Err(CycleError::Parse {
            line,
            message: format!("expected nesting depth {depth}, found {indent}"),
        });
    }
    *pos += 1;
    let mut children = Vec::new();
    while lines.get(*pos).is_some_and(|&(_, d, _)| d > depth) {
        children.push(Arc::new(parse_node(lines, pos, depth + 1)?));
    }
    let err = |message: String| CycleError::Parse { line, message };
    let mut words = text.split_whitespace();
    match (words.next(), words.next(), words.next()) {
        (Some("assign"), None, _) if children.is_empty() => Ok(Stmt::Assign),
        (Some("assign"), None, _) => Err(err("assign cannot have children".into())),
        (Some("seq"), None, _) => Ok(Stmt::Seq(children)),
        (Some("par"), None, _) => Ok(Stmt::Par(children)),
        (Some("loop"), Some(trip), None) => {
            let trip_count = trip
                .parse()
                .map_err(|_| err(format!("invalid trip count `{trip}`")))?;
            if children.len() != 1 {
                return Err(err(format!(
                    "loop needs exactly one body, found {}",
                    children.len()
                )));
            }
            Ok(Stmt::Loop {
                trip_count,
                body: children.pop().expect("one child"),
            })
        }
        _ => Err(err(format!("unrecognised statement `{text}`"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn three(f: fn(Vec<Arc<Stmt>>) -> Stmt) -> Stmt {
        f((0..3).map(|_| Arc::new(Stmt::Assign)).collect())
    }

    #[test]
    fn basic_block_costs() {
        assert_eq!(cycles(&three(Stmt::Par)), 1);
        assert_eq!(cycles(&three(Stmt::Seq)), 3);
        assert_eq!(cycles(&Stmt::Seq(vec![])), 0);
        assert_eq!(cycles(&Stmt::Par(vec![])), 0);
        assert_eq!(cycles(&Stmt::repeat(0, Stmt::Assign)), 0);
        assert_eq!(cycles(&Stmt::repeat(4, three(Stmt::Seq))), 12);
    }

    #[test]
    fn model_time_examples() {
        let clk = ClockSpec::new(100e6).unwrap();
        let s = Stmt::repeat(100, Stmt::Assign);
        assert!((model_time(&s, clk) - 1e-6).abs() <= f64::EPSILON * 1e-6);
        assert_eq!(model_time(&Stmt::Seq(vec![]), clk), 0.0);
        assert!(ClockSpec::new(0.0).is_err());
        assert!(ClockSpec::new(f64::INFINITY).is_err());
        assert!(ClockSpec::new(-5.0).is_err());
    }

    #[test]
    fn schedule_examples() {
        let one = build_sor_schedule(1, ScheduleVariant::Sequential, 1).unwrap();
        assert_eq!(cycles(&one), 6);
        let rb = build_sor_schedule(2, ScheduleVariant::RedBlack, 1).unwrap();
        assert_eq!(cycles(&rb), 12);
        assert_eq!(
            build_sor_schedule(0, ScheduleVariant::Sequential, 1),
            Err(CycleError::EmptyMesh)
        );
        assert_eq!(
            build_sor_schedule(4, ScheduleVariant::RedBlack, 0),
            Err(CycleError::NoSweeps)
        );
        assert_eq!(
            ScheduleBuilder::new(0).build(2, ScheduleVariant::Sequential, 1),
            Err(CycleError::NoAssignments)
        );
    }

    #[test]
    fn configurable_update_cost() {
        let builder = ScheduleBuilder::new(9);
        let seq = builder.build(3, ScheduleVariant::Sequential, 2).unwrap();
        let par = builder.build(3, ScheduleVariant::RedBlack, 2).unwrap();
        assert_eq!(cycles(&seq), 2 * 9 * 9);
        assert_eq!(cycles(&par), 2 * 2 * 9);
    }

    #[test]
    fn text_roundtrip() {
        let s = Stmt::repeat(
            3,
            Stmt::seq([
                Stmt::Assign,
                Stmt::par([Stmt::assignments(2), Stmt::Assign, Stmt::Par(vec![])]),
                Stmt::repeat(0, Stmt::Assign),
            ]),
        );
        let text = to_text(&s);
        assert!(text.starts_with("loop 3\n  seq\n    assign\n    par\n      seq\n"));
        assert_eq!(parse_text(&text).unwrap(), s);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let bad = "seq\n  assign\n   assign\n";
        assert!(matches!(
            parse_text(bad),
            Err(CycleError::Parse { line: 3, .. })
        ));
        assert!(matches!(
            parse_text("loop x\n  assign\n"),
            Err(CycleError::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse_text("loop 2\n"),
            Err(CycleError::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse_text("assign\n  assign\n"),
            Err(CycleError::Parse { .. })
        ));
        assert!(matches!(
            parse_text("assign\nassign\n"),
            Err(CycleError::Parse { line: 2, .. })
        ));
        assert!(matches!(
            parse_text("jump\n"),
            Err(CycleError::Parse { .. })
        ));
        assert!(parse_text("").is_err());
    }
}
