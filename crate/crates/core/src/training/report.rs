use std::io::Write;

use crate::metrics::SegScores;

pub const CSV_HEADER: &str = "epoch,task_loss,disp_loss,total_loss,metric,alpha,boundary_fraction";

/// Losses are means over the epoch's steps, taken before each update; the
/// metric and boundary fraction are measured after the epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub task_loss: f64,
    pub disp_loss: f64,
    pub total_loss: f64,
    /// Part mIoU, mean per-point Chamfer distance, or keypoint AP.
    pub metric: f64,
    pub alpha: f64,
    pub boundary_fraction: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub records: Vec<EpochRecord>,
    /// Boundary fraction of the initial points the sampler starts from.
    pub init_boundary_fraction: f64,
    /// Boundary fraction of the supervision points.
    pub target_boundary_fraction: f64,
    /// Mean distance between sampled points and their initial points.
    pub mean_displacement: f64,
    pub seg_scores: Option<SegScores>,
}

impl TrainReport {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    pub fn final_boundary_fraction(&self) -> Option<f64> {
        self.last().map(|r| r.boundary_fraction)
    }

    pub fn write_csv(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "{CSV_HEADER}")?;
        for r in &self.records {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                r.epoch, r.task_loss, r.disp_loss, r.total_loss, r.metric, r.alpha, r.boundary_fraction
            )?;
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ASCII output")
    }
}
