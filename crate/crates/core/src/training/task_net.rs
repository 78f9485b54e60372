//! Two-level encoder/decoder used as the downstream task. Level-1 features are
//! skipped into the upper decoder stage; the raw input level has no skip, so
//! per-point predictions are interpolated from the sampled points.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::TaskKind;
use crate::dispnet::layers::{
    group_backward, group_forward, idw_backward, idw_forward, GroupCache, Grouping, Interp, Linear, MlpCache,
    SharedMlp,
};
use crate::dispnet::ParamSet;
use crate::error::Result;
use crate::geom::{self, Point3};
use crate::matrix::Matrix;

const INTERP_K: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct TaskNet {
    task: TaskKind,
    sa1: SharedMlp,
    sa2: SharedMlp,
    fp21: SharedMlp,
    fp10: Option<SharedMlp>,
    head: Linear,
}

/// Neighborhoods for one set of level positions.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskGraph {
    g1: Grouping,
    g2: Grouping,
    i21: Interp,
    i10: Option<Interp>,
}

impl TaskGraph {
    pub fn build(pos0: &[Point3], pos1: &[Point3], pos2: &[Point3], k: usize, to_level0: bool) -> Result<Self> {
        Ok(Self {
            g1: Grouping::knn(pos0, pos1, k)?,
            g2: Grouping::knn(pos1, pos2, k)?,
            i21: Interp::knn(pos2, pos1, INTERP_K)?,
            i10: if to_level0 { Some(Interp::knn(pos1, pos0, INTERP_K)?) } else { None },
        })
    }
}

#[derive(Debug, Clone)]
pub struct TaskForward {
    /// Per-point logits at level 0, or predicted points (`M1 x 3`) for completion.
    pub output: Matrix,
    c1: GroupCache,
    f1: Matrix,
    c2: GroupCache,
    f2: Matrix,
    up21: Matrix,
    m21: MlpCache,
    up10: Option<Matrix>,
    m10: Option<MlpCache>,
}

fn xyz(points: &[Point3]) -> Matrix {
    Matrix::from_vec(points.len(), 3, points.iter().flatten().copied().collect()).expect("n x 3")
}

impl TaskNet {
    pub fn register(ps: &mut ParamSet, prefix: &str, task: TaskKind, classes: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sa1 = SharedMlp::new(ps, &format!("{prefix}.sa1"), 6, &[16, 32], &mut rng)?;
        let sa2 = SharedMlp::new(ps, &format!("{prefix}.sa2"), 3 + 32, &[32, 64], &mut rng)?;
        let fp21 = SharedMlp::new(ps, &format!("{prefix}.fp21"), 64 + 32, &[32], &mut rng)?;
        let (to_level0, outputs) = match task {
            TaskKind::Segmentation => (true, classes),
            TaskKind::Keypoint => (true, 1),
            TaskKind::Completion => (false, 3),
        };
        let fp10 = if to_level0 {
            Some(SharedMlp::new(ps, &format!("{prefix}.fp10"), 32, &[32], &mut rng)?)
        } else {
            None
        };
        let head = Linear::new(ps, &format!("{prefix}.head"), 32, outputs, &mut rng)?;
        Ok(Self { task, sa1, sa2, fp21, fp10, head })
    }

    pub fn task(&self) -> TaskKind {
        self.task
    }

    pub fn needs_level0(&self) -> bool {
        self.fp10.is_some()
    }

    pub fn forward(
        &self,
        ps: &ParamSet,
        graph: &TaskGraph,
        pos0: &[Point3],
        pos1: &[Point3],
        pos2: &[Point3],
    ) -> Result<TaskForward> {
        let (f1, c1) = group_forward(ps, &self.sa1, &graph.g1, pos1, pos0, Some(&xyz(pos0)))?;
        let (f2, c2) = group_forward(ps, &self.sa2, &graph.g2, pos2, pos1, Some(&f1))?;
        let up21 = idw_forward(pos1, pos2, &graph.i21, &f2);
        let m21 = self.fp21.forward(ps, up21.hcat(&f1)?);
        let (output, up10, m10) = match (&self.fp10, &graph.i10) {
            (Some(fp10), Some(i10)) => {
                let up10 = idw_forward(pos0, pos1, i10, m21.output());
                let m10 = fp10.forward(ps, up10.clone());
                (self.head.forward(ps, m10.output()), Some(up10), Some(m10))
            }
            _ => {
                let mut out = self.head.forward(ps, m21.output());
                for (r, p) in pos1.iter().enumerate() {
                    for (o, c) in out.row_mut(r).iter_mut().zip(p) {
                        *o += c;
                    }
                }
                (out, None, None)
            }
        };
        Ok(TaskForward { output, c1, f1, c2, f2, up21, m21, up10, m10 })
    }

    /// Accumulates parameter gradients and returns `(dL/dpos1, dL/dpos2)`.
    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &self,
        ps: &ParamSet,
        grads: &mut [f64],
        graph: &TaskGraph,
        pos0: &[Point3],
        pos1: &[Point3],
        pos2: &[Point3],
        fwd: &TaskForward,
        dout: &Matrix,
    ) -> (Vec<Point3>, Vec<Point3>) {
        let mut dpos1 = vec![[0.0; 3]; pos1.len()];
        let mut dpos2 = vec![[0.0; 3]; pos2.len()];
        let dg1 = match (&self.fp10, &graph.i10, &fwd.m10) {
            (Some(fp10), Some(i10), Some(m10)) => {
                let dm10 = self.head.backward(ps, grads, m10.output(), dout);
                let dup10 = fp10.backward(ps, grads, m10, dm10);
                let g1 = fwd.m21.output();
                let mut dg1 = Matrix::zeros(g1.rows(), g1.cols());
                let up10 = fwd.up10.as_ref().expect("level-0 cache");
                idw_backward(pos0, pos1, i10, g1, up10, &dup10, &mut dg1, None, Some(&mut dpos1));
                dg1
            }
            _ => {
                for (r, d) in dpos1.iter_mut().enumerate() {
                    *d = geom::add(d, &[dout.get(r, 0), dout.get(r, 1), dout.get(r, 2)]);
                }
                self.head.backward(ps, grads, fwd.m21.output(), dout)
            }
        };
        let dcat = self.fp21.backward(ps, grads, &fwd.m21, dg1);
        let up_cols = fwd.up21.cols();
        let mut dup21 = Matrix::zeros(dcat.rows(), up_cols);
        let mut df1 = Matrix::zeros(fwd.f1.rows(), fwd.f1.cols());
        for r in 0..dcat.rows() {
            let (a, b) = dcat.row(r).split_at(up_cols);
            dup21.row_mut(r).copy_from_slice(a);
            df1.row_mut(r).copy_from_slice(b);
        }
        let mut df2 = Matrix::zeros(fwd.f2.rows(), fwd.f2.cols());
        idw_backward(pos1, pos2, &graph.i21, &fwd.f2, &fwd.up21, &dup21, &mut df2, Some(&mut dpos1), Some(&mut dpos2));
        group_backward(ps, grads, &self.sa2, &graph.g2, &fwd.c2, &df2, Some(&mut dpos2), Some(&mut dpos1), Some(&mut df1));
        group_backward(ps, grads, &self.sa1, &graph.g1, &fwd.c1, &df1, Some(&mut dpos1), None, None);
        (dpos1, dpos2)
    }
}
