//! JSON instance files and CSV trajectory writers.
//!
//! One file format covers the three instance kinds: an MDP needs `kernel` and
//! `cost`; an interval MDP swaps `cost` for `cost_lo`/`cost_hi`; a game adds
//! `coupling`, `discount_p2` and optionally `opponent` to an MDP. Matrices are
//! written as lists of rows and read either that way or as a flat row-major
//! list.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{CouplingForm, GameTrajectory, OpponentStrategy, SingleControllerGame};
use crate::interval::IntervalMatrix;
use crate::mdp::Mdp;
use crate::set_bellman::{IntervalMdp, TrajectoryRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixData {
    Rows(Vec<Vec<f64>>),
    Flat(Vec<f64>),
}

impl MatrixData {
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        MatrixData::Rows(m.row_iter().map(|r| r.iter().copied().collect()).collect())
    }

    pub fn to_matrix(&self, field: &'static str, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
        match self {
            MatrixData::Flat(v) => {
                if v.len() != rows * cols {
                    return Err(Error::dims(field, format!("{rows}x{cols} = {} entries", rows * cols), v.len()));
                }
                Ok(DMatrix::from_row_slice(rows, cols, v))
            }
            MatrixData::Rows(r) => {
                if r.len() != rows {
                    return Err(Error::dims(field, format!("{rows} rows"), r.len()));
                }
                if let Some((i, row)) = r.iter().enumerate().find(|(_, row)| row.len() != cols) {
                    return Err(Error::dims(field, format!("{cols} entries in row {i}"), row.len()));
                }
                Ok(DMatrix::from_fn(rows, cols, |i, j| r[i][j]))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceFile {
    pub num_states: usize,
    pub num_actions: usize,
    pub discount: f64,
    /// `S x (S*A)`, column `s*A + a` is the next-state distribution.
    pub kernel: MatrixData,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost: Option<MatrixData>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost_lo: Option<MatrixData>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost_hi: Option<MatrixData>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coupling: Option<MatrixData>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub discount_p2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coupling_form: Option<CouplingForm>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub opponent: Option<OpponentStrategy>,
    /// Free-form provenance (generator config, seed); ignored when loading.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<serde_json::Value>,
}

fn missing(field: &'static str) -> Error {
    Error::param(field, "missing field required for this instance kind")
}

impl InstanceFile {
    pub fn from_json(text: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("instance serializes")
    }

    fn base(kernel: &DMatrix<f64>, num_actions: usize, discount: f64) -> Self {
        InstanceFile {
            num_states: kernel.nrows(),
            num_actions,
            discount,
            kernel: MatrixData::from_matrix(kernel),
            cost: None,
            cost_lo: None,
            cost_hi: None,
            coupling: None,
            discount_p2: None,
            coupling_form: None,
            opponent: None,
            meta: None,
        }
    }

    pub fn from_mdp(mdp: &Mdp) -> Self {
        InstanceFile { cost: Some(MatrixData::from_matrix(mdp.cost())), ..Self::base(mdp.kernel(), mdp.num_actions(), mdp.discount()) }
    }

    pub fn from_interval_mdp(imdp: &IntervalMdp) -> Self {
        InstanceFile {
            cost_lo: Some(MatrixData::from_matrix(imdp.cost_box().lo())),
            cost_hi: Some(MatrixData::from_matrix(imdp.cost_box().hi())),
            ..Self::base(imdp.kernel(), imdp.num_actions(), imdp.discount())
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn for_game(
        kernel: &DMatrix<f64>,
        base_cost: &DMatrix<f64>,
        coupling: &DMatrix<f64>,
        form: CouplingForm,
        discount_p1: f64,
        discount_p2: f64,
        opponent: Option<OpponentStrategy>,
    ) -> Self {
        InstanceFile {
            cost: Some(MatrixData::from_matrix(base_cost)),
            coupling: Some(MatrixData::from_matrix(coupling)),
            discount_p2: Some(discount_p2),
            coupling_form: Some(form),
            opponent,
            ..Self::base(kernel, base_cost.ncols(), discount_p1)
        }
    }

    fn kernel_matrix(&self) -> Result<DMatrix<f64>> {
        self.kernel.to_matrix("kernel", self.num_states, self.num_states * self.num_actions)
    }

    fn sa_matrix(&self, field: &'static str, data: &Option<MatrixData>) -> Result<DMatrix<f64>> {
        data.as_ref().ok_or_else(|| missing(field))?.to_matrix(field, self.num_states, self.num_actions)
    }

    pub fn to_mdp(&self) -> Result<Mdp> {
        Mdp::new(self.kernel_matrix()?, self.sa_matrix("cost", &self.cost)?, self.discount)
    }

    /// Uses `cost_lo`/`cost_hi` when present, otherwise the degenerate box at `cost`.
    pub fn to_interval_mdp(&self) -> Result<IntervalMdp> {
        let kernel = self.kernel_matrix()?;
        match (&self.cost_lo, &self.cost_hi) {
            (None, None) => {
                let cost = self.sa_matrix("cost", &self.cost)?;
                Ok(IntervalMdp::from_mdp(&Mdp::new(kernel, cost, self.discount)?))
            }
            (lo, hi) => {
                let lo = self.sa_matrix("cost_lo", lo)?;
                let hi = self.sa_matrix("cost_hi", hi)?;
                IntervalMdp::new(kernel, IntervalMatrix::new(lo, hi)?, self.discount)
            }
        }
    }

    pub fn to_game(&self) -> Result<SingleControllerGame> {
        let discount_p2 = self.discount_p2.ok_or_else(|| missing("discount_p2"))?;
        SingleControllerGame::coupled(
            self.kernel_matrix()?,
            &self.sa_matrix("cost", &self.cost)?,
            &self.sa_matrix("coupling", &self.coupling)?,
            self.coupling_form.unwrap_or_default(),
            self.discount,
            discount_p2,
        )
    }
}

/// 17 significant digits; parses back to the same double.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn fmt_vec(v: &DVector<f64>) -> Vec<String> {
    v.iter().map(|x| fmt_f64(*x)).collect()
}

fn header(out: &mut String, meta: &[(&str, String)], columns: &str) {
    for (k, v) in meta {
        let _ = writeln!(out, "# {k}: {v}");
    }
    out.push_str(columns);
    out.push('\n');
}

/// Columns `step,state,value,box_lo,box_hi,dist_to_fixed_box`, one row per
/// step and state. `meta` lines go first as `# key: value`.
pub fn trajectory_csv(record: &TrajectoryRecord, meta: &[(&str, String)]) -> String {
    let mut out = String::new();
    header(&mut out, meta, "step,state,value,box_lo,box_hi,dist_to_fixed_box");
    for st in &record.steps {
        let d = fmt_f64(st.dist_to_fixed_box);
        for s in 0..st.value.len() {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                st.step,
                s,
                fmt_f64(st.value[s]),
                fmt_f64(st.vbox.lo()[s]),
                fmt_f64(st.vbox.hi()[s]),
                d
            );
        }
    }
    out
}

/// Columns `iter,state,v,box_lo,box_hi,contained,dist_to_fixed_box,opponent_kind`.
/// `contained` is per entry at tolerance `tol`.
pub fn game_csv(traj: &GameTrajectory, tol: f64, meta: &[(&str, String)]) -> String {
    let mut out = String::new();
    header(&mut out, meta, "iter,state,v,box_lo,box_hi,contained,dist_to_fixed_box,opponent_kind");
    for st in &traj.steps {
        let d = fmt_f64(st.dist_to_fixed_box);
        for s in 0..st.value.len() {
            let (v, lo, hi) = (st.value[s], st.vbox.lo()[s], st.vbox.hi()[s]);
            let inside = v >= lo - tol && v <= hi + tol;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                st.iter,
                s,
                fmt_f64(v),
                fmt_f64(lo),
                fmt_f64(hi),
                u8::from(inside),
                d,
                traj.opponent_kind
            );
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random::{random_mdp, seeded_rng};

    #[test]
    fn mdp_round_trip() {
        let mdp = random_mdp(&mut seeded_rng(1, 0), 3, 2, 0.8);
        let text = InstanceFile::from_mdp(&mdp).to_json();
        let back = InstanceFile::from_json(&text).unwrap().to_mdp().unwrap();
        assert_eq!(back, mdp);
    }

    #[test]
    fn flat_matrices_accepted() {
        let text = r#"{"num_states": 1, "num_actions": 2, "discount": 0.9,
                       "kernel": [1.0, 1.0], "cost": [1.0, 1.0]}"#;
        let mdp = InstanceFile::from_json(text).unwrap().to_mdp().unwrap();
        assert_eq!(mdp.num_actions(), 2);
    }

    #[test]
    fn errors_name_the_field() {
        let err = InstanceFile::from_json(r#"{"num_states": 1, "num_actions": 1, "kernel": [1.0]}"#).unwrap_err();
        assert!(err.to_string().contains("discount"), "{err}");
        let f = InstanceFile::from_json(r#"{"num_states": 2, "num_actions": 1, "discount": 0.5, "kernel": [1.0], "cost": [0, 0]}"#).unwrap();
        assert!(f.to_mdp().unwrap_err().to_string().contains("kernel"));
        let f = InstanceFile::from_json(r#"{"num_states": 1, "num_actions": 1, "discount": 0.5, "kernel": [1.0]}"#).unwrap();
        assert!(f.to_mdp().unwrap_err().to_string().contains("cost"));
        assert!(f.to_game().unwrap_err().to_string().contains("discount_p2"));
        assert!(InstanceFile::from_json(r#"{"num_states": 1, "num_actions": 1, "discount": 0.5, "kernel": [1.0], "costs": [1]}"#).is_err());
    }

    #[test]
    fn interval_inversion_rejected() {
        let text = r#"{"num_states": 1, "num_actions": 1, "discount": 0.5, "kernel": [[1.0]],
                       "cost_lo": [[2.0]], "cost_hi": [[1.0]]}"#;
        let err = InstanceFile::from_json(text).unwrap().to_interval_mdp().unwrap_err();
        assert!(matches!(err, Error::IntervalInversion { .. }));
    }

    #[test]
    fn interval_round_trip() {
        let mdp = random_mdp(&mut seeded_rng(2, 0), 2, 2, 0.5);
        let lo = mdp.cost().clone();
        let imdp = IntervalMdp::new(mdp.kernel().clone(), IntervalMatrix::new(lo.clone(), lo.add_scalar(0.25)).unwrap(), 0.5).unwrap();
        let back = InstanceFile::from_json(&InstanceFile::from_interval_mdp(&imdp).to_json()).unwrap().to_interval_mdp().unwrap();
        assert_eq!(back.cost_box(), imdp.cost_box());
    }

    #[test]
    fn numbers_round_trip_through_csv_format() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 1e308, 0.0] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
        }
    }
}
