//! CSV artifacts. Numbers are written with 17 significant digits so every
//! value round-trips exactly.

use std::io::Write;

use crate::engine::ChoiceRecord;
use crate::sim::{Heatmap, RoundRecord};

pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

fn finish<W: Write>(mut w: csv::Writer<W>) -> std::io::Result<()> {
    w.flush()
}

pub fn write_rounds<W: Write>(out: W, records: &[RoundRecord]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["round", "gamma", "mu", "theta", "joined", "payment", "loss"])?;
    for r in records {
        w.write_record([
            r.round.to_string(),
            num(r.gamma),
            num(r.realized_mu),
            num(r.client_theta),
            u8::from(r.joined).to_string(),
            num(r.payment),
            num(r.model_loss),
        ])?;
    }
    finish(w)
}

pub fn write_choices<W: Write>(out: W, history: &[ChoiceRecord]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["round", "gamma", "mu_l", "mu_r", "w_l", "predicted_cost", "converged"])?;
    for c in history {
        w.write_record([
            c.round.to_string(),
            num(c.gamma),
            num(c.mu_l),
            num(c.mu_r),
            num(c.w_l),
            num(c.predicted_cost),
            c.converged.to_string(),
        ])?;
    }
    finish(w)
}

/// Missing cells are written as empty fields.
pub fn write_heatmap<W: Write>(out: W, map: &Heatmap) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["mu", "gamma", "delta_theta_hat", "delta_cost"])?;
    for c in &map.cells {
        w.write_record([num(c.mu), num(c.gamma), opt(c.delta_theta_hat), opt(c.delta_cost)])?;
    }
    finish(w)
}
