//! Two-level point encoder that maps an initial point subset to displaced
//! (or directly regressed) sample points.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{
    group_backward, group_forward, idw_backward, idw_forward, GroupCache, Grouping, Interp, Linear, MlpCache,
    SharedMlp,
};
use super::params::{ParamSet, TensorId};
use super::softproj::{soft_project_backward, soft_project_forward, SoftProjCache};
use crate::cloud::PointCloud;
use crate::error::{invalid, Result};
use crate::geom::{self, Point3};
use crate::matrix::Matrix;
use crate::sampling::{fps_indices, SampleResult};

const SA1_WIDTHS: [usize; 2] = [16, 32];
const SA2_WIDTHS: [usize; 2] = [32, 64];
const FP_WIDTH: usize = 32;
const INTERP_K: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DispMode {
    /// Output = init + head.
    Offset,
    /// Output = head.
    Coordinate,
    /// Output = head snapped onto the input cloud by soft projection.
    CoordinateSoftProjected,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DispNetConfig {
    /// Neighbors per group at both levels.
    pub k: usize,
    /// Cloud points blended by soft projection.
    pub proj_k: usize,
    pub init_temperature: f64,
}

impl Default for DispNetConfig {
    fn default() -> Self {
        Self { k: 8, proj_k: 8, init_temperature: 1.0 }
    }
}

impl DispNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return invalid("k must be at least 1");
        }
        if self.proj_k < 1 {
            return invalid("proj_k must be at least 1");
        }
        if !(self.init_temperature > 0.0) || !self.init_temperature.is_finite() {
            return invalid(format!("temperature must be positive, got {}", self.init_temperature));
        }
        Ok(())
    }
}

/// Layer handles into a [`ParamSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct DispNet {
    pub cfg: DispNetConfig,
    sa1: SharedMlp,
    sa2: SharedMlp,
    fp: SharedMlp,
    head: Linear,
    log_temp: TensorId,
}

/// Neighborhoods that depend only on the input cloud and the initial points.
#[derive(Debug, Clone, PartialEq)]
pub struct DispGraph {
    level1: Grouping,
    coarse: Vec<usize>,
    level2: Grouping,
    interp: Interp,
}

impl DispGraph {
    pub fn build(input: &[Point3], init: &[Point3], k: usize) -> Result<Self> {
        if init.is_empty() {
            return invalid("no initial points");
        }
        let level1 = Grouping::knn(input, init, k)?;
        let coarse = fps_indices(init, (init.len() / 4).max(1), 0)?;
        let coarse_pts: Vec<Point3> = coarse.iter().map(|&i| init[i]).collect();
        let level2 = Grouping::knn(init, &coarse_pts, k)?;
        let interp = Interp::knn(&coarse_pts, init, INTERP_K)?;
        Ok(Self { level1, coarse, level2, interp })
    }
}

/// Forward activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct DispOutput {
    pub points: Vec<Point3>,
    /// Raw head output before the mode is applied.
    pub head: Vec<Point3>,
    c1: GroupCache,
    coarse_pts: Vec<Point3>,
    h2: Matrix,
    c2: GroupCache,
    up: Matrix,
    fp: MlpCache,
    proj: Option<SoftProjCache>,
    mode: DispMode,
}

fn to_matrix(points: &[Point3]) -> Matrix {
    Matrix::from_vec(points.len(), 3, points.iter().flatten().copied().collect()).expect("n x 3")
}

fn to_points(m: &Matrix) -> Vec<Point3> {
    (0..m.rows()).map(|r| [m.get(r, 0), m.get(r, 1), m.get(r, 2)]).collect()
}

impl DispNet {
    /// Registers all tensors under `prefix`; the head starts at zero.
    pub fn register(ps: &mut ParamSet, prefix: &str, cfg: DispNetConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sa1 = SharedMlp::new(ps, &format!("{prefix}.sa1"), 3 + 3, &SA1_WIDTHS, &mut rng)?;
        let sa2 = SharedMlp::new(ps, &format!("{prefix}.sa2"), 3 + SA1_WIDTHS[1], &SA2_WIDTHS, &mut rng)?;
        let fp = SharedMlp::new(ps, &format!("{prefix}.fp"), SA2_WIDTHS[1] + SA1_WIDTHS[1], &[FP_WIDTH], &mut rng)?;
        let head = Linear::zeros(ps, &format!("{prefix}.head"), FP_WIDTH, 3)?;
        let log_temp = ps.add(&format!("{prefix}.log_temperature"), &[1], vec![cfg.init_temperature.ln()])?;
        Ok(Self { cfg, sa1, sa2, fp, head, log_temp })
    }

    pub fn head(&self) -> &Linear {
        &self.head
    }

    pub fn temperature(&self, ps: &ParamSet) -> f64 {
        ps.get(self.log_temp)[0].exp()
    }

    pub fn forward(
        &self,
        ps: &ParamSet,
        graph: &DispGraph,
        input: &PointCloud,
        init: &[Point3],
        mode: DispMode,
    ) -> Result<DispOutput> {
        let input_feats = to_matrix(input.points());
        let (h1, c1) = group_forward(ps, &self.sa1, &graph.level1, init, input.points(), Some(&input_feats))?;
        let coarse_pts: Vec<Point3> = graph.coarse.iter().map(|&i| init[i]).collect();
        let (h2, c2) = group_forward(ps, &self.sa2, &graph.level2, &coarse_pts, init, Some(&h1))?;
        let up = idw_forward(init, &coarse_pts, &graph.interp, &h2);
        let fp = self.fp.forward(ps, up.hcat(&h1)?);
        let head = to_points(&self.head.forward(ps, fp.output()));
        let (points, proj) = match mode {
            DispMode::Offset => (init.iter().zip(&head).map(|(a, b)| geom::add(a, b)).collect(), None),
            DispMode::Coordinate => (head.clone(), None),
            DispMode::CoordinateSoftProjected => {
                let (p, cache) = soft_project_forward(&head, input, self.cfg.proj_k, self.temperature(ps))?;
                (p, Some(cache))
            }
        };
        if points.iter().any(|p| !geom::is_finite(p)) {
            return invalid("displacement network produced non-finite points");
        }
        Ok(DispOutput { points, head, c1, coarse_pts, h2, c2, up, fp, proj, mode })
    }

    /// Accumulates parameter gradients for `dL/d(output points)`.
    pub fn backward(
        &self,
        ps: &ParamSet,
        grads: &mut [f64],
        graph: &DispGraph,
        input: &PointCloud,
        init: &[Point3],
        out: &DispOutput,
        dpoints: &[Point3],
    ) {
        let dhead: Vec<Point3> = match out.mode {
            DispMode::Offset | DispMode::Coordinate => dpoints.to_vec(),
            DispMode::CoordinateSoftProjected => {
                let t = self.temperature(ps);
                let cache = out.proj.as_ref().expect("projection cache");
                let (dh, dt) = soft_project_backward(&out.head, input, cache, t, dpoints);
                grads[ps.range(self.log_temp).start] += dt * t;
                dh
            }
        };
        let dcat = self.head.backward(ps, grads, out.fp.output(), &to_matrix(&dhead));
        let dcat = self.fp.backward(ps, grads, &out.fp, dcat);
        let up_w = out.up.cols();
        let mut dup = Matrix::zeros(dcat.rows(), up_w);
        let mut dh1 = Matrix::zeros(dcat.rows(), dcat.cols() - up_w);
        for r in 0..dcat.rows() {
            let (a, b) = dcat.row(r).split_at(up_w);
            dup.row_mut(r).copy_from_slice(a);
            dh1.row_mut(r).copy_from_slice(b);
        }
        let mut dh2 = Matrix::zeros(out.h2.rows(), out.h2.cols());
        idw_backward(init, &out.coarse_pts, &graph.interp, &out.h2, &out.up, &dup, &mut dh2, None, None);
        group_backward(ps, grads, &self.sa2, &graph.level2, &out.c2, &dh2, None, None, Some(&mut dh1));
        group_backward(ps, grads, &self.sa1, &graph.level1, &out.c1, &dh1, None, None, None);
    }
}

/// A standalone network with its own parameter store.
#[derive(Debug, Clone, PartialEq)]
pub struct DispNetParams {
    pub params: ParamSet,
    pub net: DispNet,
}

impl DispNetParams {
    pub fn new(cfg: DispNetConfig, seed: u64) -> Result<Self> {
        let mut params = ParamSet::new();
        let net = DispNet::register(&mut params, "disp", cfg, seed)?;
        Ok(Self { params, net })
    }
}

/// Runs the network on `init` (a subset of `input`) and returns the output points.
pub fn displacement_forward(
    input: &PointCloud,
    init: &SampleResult,
    params: &DispNetParams,
    mode: DispMode,
) -> Result<Vec<Point3>> {
    init.validate_subset(input)?;
    let graph = DispGraph::build(input.points(), &init.coordinates, params.net.cfg.k)?;
    Ok(params.net.forward(&params.params, &graph, input, &init.coordinates, mode)?.points)
}
