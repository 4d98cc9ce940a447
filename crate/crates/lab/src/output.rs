//! CSV emitters. Floats use Rust's shortest round-trip formatting, so
//! files are byte-identical for identical inputs.

use std::path::Path;

use sgdpo_core::gradflow::{FieldPoint, Landscape};
use sgdpo_core::trainer::StepRecord;

use crate::error::{io_err, Result};
use crate::fsutil::write_atomic;

pub const HISTORY_HEADER: [&str; 6] = [
    "step",
    "loss",
    "chosen_reward",
    "rejected_reward",
    "margin",
    "lr",
];
pub const FIELD_HEADER: [&str; 4] = ["x1", "x2", "dx1", "dx2"];
pub const LANDSCAPE_HEADER: [&str; 3] = ["a", "b", "value"];

fn to_csv<I>(header: &[&str], rows: I) -> Result<Vec<u8>>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.into_inner()
        .map_err(|e| io_err("<csv buffer>")(e.into_error()))
}

pub fn history_csv(history: &[StepRecord]) -> Result<Vec<u8>> {
    to_csv(
        &HISTORY_HEADER,
        history.iter().map(|r| {
            vec![
                r.step.to_string(),
                r.loss.to_string(),
                r.chosen_reward.to_string(),
                r.rejected_reward.to_string(),
                r.margin.to_string(),
                r.lr.to_string(),
            ]
        }),
    )
}

pub fn field_csv(points: &[FieldPoint]) -> Result<Vec<u8>> {
    to_csv(
        &FIELD_HEADER,
        points.iter().map(|p| {
            vec![
                p.x1.to_string(),
                p.x2.to_string(),
                p.dx1.to_string(),
                p.dx2.to_string(),
            ]
        }),
    )
}

pub fn landscape_csv(l: &Landscape) -> Result<Vec<u8>> {
    to_csv(
        &LANDSCAPE_HEADER,
        l.rows()
            .map(|(a, b, v)| vec![a.to_string(), b.to_string(), v.to_string()]),
    )
}

pub fn losses_csv(losses: &[f64]) -> Result<Vec<u8>> {
    to_csv(
        &["step", "loss"],
        losses
            .iter()
            .enumerate()
            .map(|(i, l)| vec![i.to_string(), l.to_string()]),
    )
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    write_atomic(path, bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn history_layout() {
        let h = [StepRecord {
            step: 0,
            loss: 0.5,
            chosen_reward: -0.25,
            rejected_reward: -1.0,
            margin: 0.75,
            lr: 1e-3,
        }];
        let text = String::from_utf8(history_csv(&h).unwrap()).unwrap();
        assert_eq!(
            text,
            "step,loss,chosen_reward,rejected_reward,margin,lr\n0,0.5,-0.25,-1,0.75,0.001\n"
        );
    }

    #[test]
    fn floats_round_trip() {
        let p = [FieldPoint {
            x1: 0.1 + 0.2,
            x2: 1.0 / 3.0,
            dx1: 5e-324,
            dx2: -1.7976931348623157e308,
            truncated: false,
        }];
        let text = String::from_utf8(field_csv(&p).unwrap()).unwrap();
        let row: Vec<f64> = text
            .lines()
            .nth(1)
            .unwrap()
            .split(',')
            .map(|s| s.parse().unwrap())
            .collect();
        assert_eq!(row, vec![p[0].x1, p[0].x2, p[0].dx1, p[0].dx2]);
    }
}
