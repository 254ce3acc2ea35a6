//! Plan and dual-solution files.
//!
//! A plan is line-delimited JSON: a header record with the multipliers and
//! totals, then one record per user with its level (or level mix) and
//! expected cost per cost kind.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{AllocationPlan, Assignment, DualSolution, ResponseMatrix};
use crate::synthdata::check_version;
use crate::{Error, Result, FORMAT_VERSION};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlanHeader {
    format_version: u32,
    kind: String,
    users: usize,
    lambda: Vec<f64>,
    spend: Vec<f64>,
    objective: f64,
}

#[derive(Serialize, Deserialize)]
struct PlanRecord {
    user: usize,
    #[serde(flatten)]
    assignment: Assignment,
    expected_cost: Vec<f64>,
}

pub fn write_plan<W: Write>(mut w: W, plan: &AllocationPlan, m: &ResponseMatrix) -> Result<()> {
    if plan.users() != m.users() {
        return Err(Error::invalid("plan and matrix cover different users"));
    }
    let header = PlanHeader {
        format_version: FORMAT_VERSION,
        kind: "plan".into(),
        users: plan.users(),
        lambda: plan.lambda.clone(),
        spend: plan.spend.clone(),
        objective: plan.objective,
    };
    serde_json::to_writer(&mut w, &header)?;
    writeln!(w)?;
    for (i, a) in plan.assignment.iter().enumerate() {
        let rec = PlanRecord {
            user: i,
            assignment: a.clone(),
            expected_cost: (0..m.constraints()).map(|k| a.expect(m.g_row(k, i))).collect(),
        };
        serde_json::to_writer(&mut w, &rec)?;
        writeln!(w)?;
    }
    Ok(())
}

pub fn read_plan<R: BufRead>(r: R) -> Result<AllocationPlan> {
    let mut lines = r.lines();
    let header: PlanHeader = match lines.next() {
        Some(line) => serde_json::from_str(&line?)?,
        None => return Err(Error::invalid("empty plan file")),
    };
    check_version(header.format_version)?;
    if header.kind != "plan" {
        return Err(Error::invalid(format!("expected a plan file, found {}", header.kind)));
    }
    let mut assignment = Vec::with_capacity(header.users);
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PlanRecord = serde_json::from_str(&line)?;
        if rec.user != assignment.len() {
            return Err(Error::invalid(format!("plan record {} out of order", rec.user)));
        }
        assignment.push(rec.assignment);
    }
    if assignment.len() != header.users {
        return Err(Error::invalid(format!(
            "plan header announces {} users, file has {}",
            header.users,
            assignment.len()
        )));
    }
    Ok(AllocationPlan {
        assignment,
        spend: header.spend,
        objective: header.objective,
        lambda: header.lambda,
    })
}

#[derive(Serialize, Deserialize)]
struct DualFile {
    format_version: u32,
    #[serde(flatten)]
    dual: DualSolution,
}

pub fn write_dual<W: Write>(mut w: W, dual: &DualSolution) -> Result<()> {
    let file = DualFile {
        format_version: FORMAT_VERSION,
        dual: dual.clone(),
    };
    serde_json::to_writer_pretty(&mut w, &file)?;
    writeln!(w)?;
    Ok(())
}

pub fn read_dual<R: std::io::Read>(r: R) -> Result<DualSolution> {
    let file: DualFile = serde_json::from_reader(r)?;
    check_version(file.format_version)?;
    if file.dual.lambda.iter().any(|l| !(*l >= 0.0)) {
        return Err(Error::invalid("dual file holds a negative multiplier"));
    }
    Ok(file.dual)
}
