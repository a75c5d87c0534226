use std::fmt;

use serde::{Deserialize, Serialize};

use super::Grid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IssueKind {
    NonDenseIds,
    InvalidBounds,
    InvalidValue,
    DanglingReference,
    SelfLoop,
    DuplicateElement,
    NoSlack,
    MultipleSlack,
    Disconnected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Issue {
    pub kind: IssueKind,
    /// Element path in the grid document, e.g. `lines[3]`.
    pub path: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub issues: Vec<Issue>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.issues.is_empty()
    }

    fn push(&mut self, kind: IssueKind, path: impl Into<String>, message: impl Into<String>) {
        self.issues.push(Issue { kind, path: path.into(), message: message.into() });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, issue) in self.issues.iter().enumerate() {
            if k > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{}: {}", issue.path, issue.message)?;
        }
        Ok(())
    }
}

/// Lists every invariant violation of `grid`. An empty report means the grid
/// is usable by the solvers.
pub fn validate(grid: &Grid) -> ValidationReport {
    let mut report = ValidationReport::default();
    let n = grid.n_buses();

    if !(grid.base_mva.is_finite() && grid.base_mva > 0.0) {
        report.push(IssueKind::InvalidValue, "base_mva", "base_mva must be positive");
    }
    if n == 0 {
        report.push(IssueKind::InvalidValue, "buses", "grid has no buses");
    }

    for (k, bus) in grid.buses.iter().enumerate() {
        let path = format!("buses[{k}]");
        if bus.id != k {
            report.push(
                IssueKind::NonDenseIds,
                &path,
                format!("bus id {} at position {k}; ids must be exactly 0..{n}", bus.id),
            );
        }
        if !(bus.v_min_pu > 0.0 && bus.v_min_pu <= bus.v_max_pu) {
            report.push(
                IssueKind::InvalidBounds,
                &path,
                format!(
                    "bus {}: voltage bounds [{}, {}] violate 0 < v_min <= v_max",
                    bus.id, bus.v_min_pu, bus.v_max_pu
                ),
            );
        }
    }

    let in_range = |b: usize| b < n;
    for (k, line) in grid.lines.iter().enumerate() {
        let path = format!("lines[{k}]");
        if !in_range(line.from_bus) || !in_range(line.to_bus) {
            report.push(
                IssueKind::DanglingReference,
                &path,
                format!("line {k} references bus {} -> {} outside 0..{n}", line.from_bus, line.to_bus),
            );
        } else if line.from_bus == line.to_bus {
            report.push(IssueKind::SelfLoop, &path, format!("line {k} connects bus {} to itself", line.from_bus));
        }
        if !(line.tap_ratio > 0.0 && line.tap_ratio.is_finite()) {
            report.push(IssueKind::InvalidValue, &path, format!("line {k}: tap_ratio must be > 0"));
        }
        if !(line.s_max_pu > 0.0) {
            report.push(IssueKind::InvalidValue, &path, format!("line {k}: s_max_pu must be > 0"));
        }
        if !(line.angle_diff_min_rad <= 0.0 && 0.0 <= line.angle_diff_max_rad) {
            report.push(
                IssueKind::InvalidBounds,
                &path,
                format!("line {k}: angle bounds must satisfy min <= 0 <= max"),
            );
        }
        let finite = [line.y_series, line.y_shunt_from, line.y_shunt_to]
            .iter()
            .all(|y| y.re.is_finite() && y.im.is_finite());
        if !finite {
            report.push(IssueKind::InvalidValue, &path, format!("line {k}: non-finite admittance"));
        }
    }

    // One generator (of either kind), one load and one compensator per bus.
    let mut generator_at = vec![None::<String>; n];
    let mut check_gen = |report: &mut ValidationReport, bus: usize, path: String| {
        if !in_range(bus) {
            report.push(IssueKind::DanglingReference, &path, format!("references bus {bus} outside 0..{n}"));
        } else if let Some(prev) = &generator_at[bus] {
            report.push(IssueKind::DuplicateElement, &path, format!("bus {bus} already hosts generator {prev}"));
        } else {
            generator_at[bus] = Some(path);
        }
    };
    for (k, g) in grid.volt_gens.iter().enumerate() {
        let path = format!("volt_gens[{k}]");
        if !(g.q_min_pu <= g.q_max_pu) {
            report.push(IssueKind::InvalidBounds, &path, "q_min_pu > q_max_pu");
        }
        if let Some(v) = g.v_set_pu {
            if !(v > 0.0 && v.is_finite()) {
                report.push(IssueKind::InvalidValue, &path, "v_set_pu must be positive");
            }
        }
        check_gen(&mut report, g.bus, path);
    }
    for (k, g) in grid.stat_gens.iter().enumerate() {
        check_gen(&mut report, g.bus, format!("stat_gens[{k}]"));
    }

    let unique = |report: &mut ValidationReport, what: &str, buses: Vec<usize>| {
        let mut seen = vec![false; n];
        for (k, bus) in buses.into_iter().enumerate() {
            let path = format!("{what}[{k}]");
            if !in_range(bus) {
                report.push(IssueKind::DanglingReference, &path, format!("references bus {bus} outside 0..{n}"));
            } else if std::mem::replace(&mut seen[bus], true) {
                report.push(IssueKind::DuplicateElement, &path, format!("bus {bus} already hosts one of {what}"));
            }
        }
    };
    unique(&mut report, "loads", grid.loads.iter().map(|l| l.bus).collect());
    unique(&mut report, "compensators", grid.compensators.iter().map(|c| c.bus).collect());
    for (k, c) in grid.compensators.iter().enumerate() {
        if !(c.q_min_pu <= c.q_max_pu) {
            report.push(IssueKind::InvalidBounds, format!("compensators[{k}]"), "q_min_pu > q_max_pu");
        }
    }

    let slacks = grid.volt_gens.iter().filter(|g| g.is_slack).count();
    match slacks {
        0 => report.push(IssueKind::NoSlack, "volt_gens", "no generator is flagged is_slack"),
        1 => {}
        k => report.push(IssueKind::MultipleSlack, "volt_gens", format!("{k} generators flagged is_slack")),
    }

    if n > 0 && !is_connected(grid) {
        report.push(IssueKind::Disconnected, "lines", "the line graph does not connect every bus");
    }

    report
}

fn is_connected(grid: &Grid) -> bool {
    let n = grid.n_buses();
    let mut adj = vec![Vec::new(); n];
    for line in &grid.lines {
        if line.from_bus < n && line.to_bus < n {
            adj[line.from_bus].push(line.to_bus);
            adj[line.to_bus].push(line.from_bus);
        }
    }
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(b) = stack.pop() {
        for &nb in &adj[b] {
            if !std::mem::replace(&mut seen[nb], true) {
                stack.push(nb);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn valid_two_bus_is_clean() {
        assert!(validate(&fixtures::two_bus()).is_empty());
    }

    #[test]
    fn two_slack_flags() {
        let mut grid = fixtures::three_bus();
        for g in &mut grid.volt_gens {
            g.is_slack = true;
        }
        let report = validate(&grid);
        let multiple: Vec<_> = report.issues.iter().filter(|i| i.kind == IssueKind::MultipleSlack).collect();
        assert_eq!(multiple.len(), 1);
    }

    #[test]
    fn inverted_voltage_bounds_name_the_bus() {
        let mut grid = fixtures::small14();
        grid.buses[3].v_min_pu = 1.2;
        let report = validate(&grid);
        assert_eq!(report.issues.len(), 1);
        assert_eq!(report.issues[0].kind, IssueKind::InvalidBounds);
        assert_eq!(report.issues[0].path, "buses[3]");
        assert!(report.issues[0].message.contains("bus 3"));
    }

    #[test]
    fn disconnected_and_missing_slack() {
        let mut grid = fixtures::three_bus();
        grid.lines.retain(|l| l.to_bus != 2 && l.from_bus != 2);
        grid.volt_gens.iter_mut().for_each(|g| g.is_slack = false);
        let kinds: Vec<_> = validate(&grid).issues.into_iter().map(|i| i.kind).collect();
        assert!(kinds.contains(&IssueKind::Disconnected));
        assert!(kinds.contains(&IssueKind::NoSlack));
    }

    #[test]
    fn two_generators_on_one_bus() {
        let mut grid = fixtures::three_bus();
        let bus = grid.volt_gens[0].bus;
        grid.stat_gens.push(crate::grid::StatGenerator { bus });
        let report = validate(&grid);
        assert!(report.issues.iter().any(|i| i.kind == IssueKind::DuplicateElement && i.path.starts_with("stat_gens")));
    }

    #[test]
    fn zero_injection_buses_are_allowed() {
        let grid = fixtures::small14();
        let elems = grid.bus_elements();
        let empty = (0..grid.n_buses()).any(|b| {
            elems.volt_gen[b].is_none()
                && elems.stat_gen[b].is_none()
                && elems.load[b].is_none()
                && elems.compensator[b].is_none()
        });
        assert!(empty, "fixture should contain a junction bus");
        assert!(validate(&grid).is_empty());
    }
}
