use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::EvalReport;
use crate::bc::InitMode;
use crate::dataset::Task;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableLayout {
    /// Every init mode as a column, in the canonical order.
    Full,
    /// Only init modes that appear in the reports.
    Compact,
}

/// Task × init-mode matrix of held-out MSE. `None` marks a missing cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultsTable {
    pub tasks: Vec<Task>,
    pub modes: Vec<InitMode>,
    pub cells: Vec<Vec<Option<f64>>>,
}

impl ResultsTable {
    pub fn get(&self, task: Task, mode: InitMode) -> Option<f64> {
        let r = self.tasks.iter().position(|&t| t == task)?;
        let c = self.modes.iter().position(|&m| m == mode)?;
        self.cells[r][c]
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.tasks.len(), self.modes.len())
    }

    /// `task,<mode labels...>`; missing cells are empty.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("task");
        for m in &self.modes {
            s.push(',');
            s.push_str(m.table_label());
        }
        s.push('\n');
        for (task, row) in self.tasks.iter().zip(&self.cells) {
            s.push_str(task.as_str());
            for cell in row {
                s.push(',');
                if let Some(v) = cell {
                    let _ = write!(s, "{v:.6}");
                }
            }
            s.push('\n');
        }
        s
    }

    /// Aligned plain-text rendering; missing cells print as `-`.
    pub fn to_text(&self) -> String {
        let mut header = vec!["Task".to_string()];
        header.extend(self.modes.iter().map(|m| m.table_label().to_string()));
        let mut rows = vec![header];
        for (task, row) in self.tasks.iter().zip(&self.cells) {
            let mut r = vec![task.as_str().to_string()];
            r.extend(row.iter().map(|c| c.map_or("-".to_string(), |v| format!("{v:.4}"))));
            rows.push(r);
        }
        let widths: Vec<usize> = (0..rows[0].len())
            .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
            .collect();
        let mut s = String::new();
        for r in rows {
            let line: Vec<String> = r.iter().zip(&widths).map(|(v, w)| format!("{v:<w$}")).collect();
            s.push_str(line.join("  ").trim_end());
            s.push('\n');
        }
        s
    }
}

pub fn compile_results_table(reports: &[EvalReport], layout: TableLayout) -> Result<ResultsTable> {
    let mut cells: BTreeMap<(Task, InitMode), (f64, String)> = BTreeMap::new();
    for r in reports {
        let (Some(task), Some(mode)) = (r.task, r.init_mode) else {
            return Err(Error::Argument(format!(
                "report for checkpoint {} lacks a task or init mode label",
                r.checkpoint_id
            )));
        };
        let id = r.run_id.clone().unwrap_or_else(|| r.checkpoint_id.clone());
        match cells.get(&(task, mode)) {
            Some((v, other)) if *v != r.overall_mse => {
                return Err(Error::Conflict(format!(
                    "{task} / {} has differing values from runs {other} ({v}) and {id} ({})",
                    mode.table_label(),
                    r.overall_mse
                )));
            }
            Some(_) => {}
            None => {
                cells.insert((task, mode), (r.overall_mse, id));
            }
        }
    }
    let mut tasks: Vec<Task> = cells.keys().map(|(t, _)| *t).collect();
    tasks.dedup();
    let modes: Vec<InitMode> = match layout {
        TableLayout::Full if !reports.is_empty() => InitMode::TABLE_ORDER.to_vec(),
        _ => InitMode::TABLE_ORDER
            .into_iter()
            .filter(|m| cells.keys().any(|(_, cm)| cm == m))
            .collect(),
    };
    let cells = tasks
        .iter()
        .map(|&t| modes.iter().map(|&m| cells.get(&(t, m)).map(|(v, _)| *v)).collect())
        .collect();
    Ok(ResultsTable { tasks, modes, cells })
}
