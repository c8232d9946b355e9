//! Finite-difference gradient checks of every building block on small random
//! instances, as run by `pdnet gradcheck`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::blocks::{Grouping, InvResMlp, LocalGroups, Pdsa, Plam, PointMetaBlock, SetAbstraction};
use crate::error::Result;
use crate::geometry::{canonicalize_sign, knn, norm, Point3, PointCloud};
use crate::network::{FeaturePropagation, Model, NetworkConfig, Task, Variant};
use crate::numerics::{grad_check, Fault, GradCheckOptions, GradCheckReport, ParamId, ParamStore, Session, Tensor, Var};
use crate::pdam::{Pdam, PdamConfig};

/// Block names in suite order.
pub const SUITE_BLOCKS: [&str; 10] = [
    "set-abstraction",
    "inv-res-mlp",
    "point-meta",
    "plam",
    "pdsa",
    "pdam",
    "pdam+normals",
    "feature-propagation",
    "classification-head",
    "segmentation-head",
];

#[derive(Clone, Debug, PartialEq)]
pub struct BlockCheck {
    pub block: &'static str,
    pub report: GradCheckReport,
    pub tolerance: f64,
    /// Whether the offset generator received a nonzero gradient (PDAM only).
    pub offset_gradient: Option<bool>,
}

impl BlockCheck {
    pub fn passed(&self) -> bool {
        self.report.passed(self.tolerance)
            && self.report.tensors.iter().any(|t| t.max_abs_grad > 0.0)
            && self.offset_gradient != Some(false)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SuiteOptions {
    pub tolerance: f64,
    pub seed: u64,
    /// Break the analytic backward on purpose.
    pub fault: Option<Fault>,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self { tolerance: 1e-4, seed: 0, fault: None }
    }
}

const POINTS: usize = 24;
const WIDTH: usize = 6;
const REFERENCES: usize = 4;
const NEIGHBORS: usize = 5;

struct Instance {
    rng: ChaCha8Rng,
    positions: Vec<Point3>,
    normals: Vec<Point3>,
}

impl Instance {
    fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let positions: Vec<Point3> = (0..POINTS).map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0))).collect();
        let normals = (0..POINTS)
            .map(|_| {
                let v: Point3 = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
                let l = norm(&v);
                canonicalize_sign(v.map(|x| x / l))
            })
            .collect();
        Self { rng, positions, normals }
    }

    fn tensor(&mut self, shape: &[usize]) -> Tensor {
        Tensor::from_fn(shape, |_| self.rng.random_range(-1.0..1.0))
    }

    /// Moves every parameter off its initialization so zero-initialized
    /// layers and biases are exercised too.
    fn perturb(&mut self, store: &mut ParamStore) {
        for id in store.ids().collect::<Vec<_>>() {
            let mut t = store.get(id).clone();
            t.data_mut().iter_mut().for_each(|v| *v += self.rng.random_range(-0.1..0.1));
            store.set(id, t).expect("same shape");
        }
    }

    fn groups(&self, centers: usize) -> Result<LocalGroups> {
        let c = &self.positions[..centers];
        LocalGroups::new(c, &self.positions, &knn(c, &self.positions, NEIGHBORS)?)
    }
}

fn check(
    block: &'static str,
    store: &mut ParamStore,
    targets: &[ParamId],
    opts: &SuiteOptions,
    forward: impl FnMut(&mut Session) -> Result<Var>,
) -> Result<BlockCheck> {
    let report = grad_check(
        store,
        targets,
        forward,
        &GradCheckOptions { seed: opts.seed, fault: opts.fault, ..GradCheckOptions::default() },
    )?;
    Ok(BlockCheck { block, report, tolerance: opts.tolerance, offset_gradient: None })
}

fn probe(s: &mut Session, v: Var, weights: &Tensor) -> Result<Var> {
    s.graph.dot_const(v, weights.clone())
}

fn tiny_network(task: Task) -> NetworkConfig {
    NetworkConfig {
        input_points: POINTS,
        width: WIDTH,
        blocks: [1, 1, 1, 1],
        strides: [1, 2, 2, 2],
        neighbor_k: NEIGHBORS,
        references: REFERENCES,
        head_hidden: [8, 8],
        ..NetworkConfig::variant(Variant::L, task, 3)
    }
}

fn head_check(block: &'static str, task: Task, opts: &SuiteOptions) -> Result<BlockCheck> {
    let mut inst = Instance::new(opts.seed ^ 0x5EED);
    let mut model = Model::build(tiny_network(task), opts.seed)?;
    inst.perturb(&mut model.store);
    let cloud = PointCloud::new(inst.positions.clone())?.with_normals(inst.normals.clone())?;
    let labels: Vec<usize> = match task {
        Task::Classification => vec![1],
        Task::Segmentation => (0..POINTS).map(|i| i % 3).collect(),
    };
    let targets = model.head.param_ids();
    let mut store = model.store.clone();
    check(block, &mut store, &targets, opts, |s| {
        let out = model.forward(s, &cloud)?;
        s.graph.cross_entropy(out.logits, &labels, 0.2)
    })
}

/// Runs every block check in [`SUITE_BLOCKS`] order.
pub fn gradient_suite(opts: &SuiteOptions) -> Result<Vec<BlockCheck>> {
    let mut out = Vec::with_capacity(SUITE_BLOCKS.len());
    let mut inst = Instance::new(opts.seed);
    let input_value = inst.tensor(&[POINTS, WIDTH]);
    let all = inst.groups(POINTS)?;
    let sub = inst.groups(POINTS / 4)?;

    let local = |block: &'static str, inst: &mut Instance, out: &mut Vec<BlockCheck>| -> Result<()> {
        let mut store = ParamStore::new();
        let input = store.add("input", input_value.clone())?;
        let (params, rows, cols): (Vec<ParamId>, usize, usize);
        enum B {
            Sa(SetAbstraction),
            Irm(InvResMlp),
            Pm(PointMetaBlock),
            Plam(Plam),
            Pdsa(Pdsa),
        }
        let b = match block {
            "set-abstraction" => B::Sa(SetAbstraction::new(&mut store, "sa", WIDTH, 5, 1)?),
            "inv-res-mlp" => B::Irm(InvResMlp::new(&mut store, "irm", WIDTH, 1)?),
            "point-meta" => B::Pm(PointMetaBlock::new(&mut store, "pm", WIDTH, 1)?),
            "plam" => B::Plam(Plam::new(&mut store, "plam", WIDTH, true, 1)?),
            _ => B::Pdsa(Pdsa::new(&mut store, "pdsa", WIDTH, 5, 4, Grouping::Knn { k: NEIGHBORS }, true, 1)?),
        };
        (params, rows, cols) = match &b {
            B::Sa(x) => (x.param_ids(), POINTS / 4, 5),
            B::Irm(x) => (x.param_ids(), POINTS, WIDTH),
            B::Pm(x) => (x.param_ids(), POINTS, WIDTH),
            B::Plam(x) => (x.param_ids(), POINTS, WIDTH),
            B::Pdsa(x) => (x.param_ids(), POINTS / 4, 5),
        };
        inst.perturb(&mut store);
        let weights = inst.tensor(&[rows, cols]);
        let targets = [vec![input], params].concat();
        let (pos, nrm) = (inst.positions.clone(), inst.normals.clone());
        out.push(check(block, &mut store, &targets, opts, |s| {
            let x = s.param(input);
            let y = match &b {
                B::Sa(m) => m.forward(s, x, &sub)?,
                B::Irm(m) => m.forward(s, x, &all)?,
                B::Pm(m) => m.forward(s, x, &all)?,
                B::Plam(m) => m.forward(s, x, &all, Some(&nrm))?,
                B::Pdsa(m) => m.forward(s, &pos, Some(&nrm), x)?.features,
            };
            probe(s, y, &weights)
        })?);
        Ok(())
    };
    for block in &SUITE_BLOCKS[..5] {
        local(block, &mut inst, &mut out)?;
    }

    for (block, with_normals) in [("pdam", false), ("pdam+normals", true)] {
        let mut store = ParamStore::new();
        let input = store.add("input", input_value.clone())?;
        let mut cfg = PdamConfig::new(POINTS, REFERENCES, WIDTH);
        cfg.with_normals = with_normals;
        let pdam = Pdam::new(&mut store, "pdam", cfg, 1)?;
        inst.perturb(&mut store);
        let weights = inst.tensor(&[POINTS, WIDTH]);
        let targets = [vec![input], pdam.param_ids()].concat();
        let (pos, nrm) = (inst.positions.clone(), inst.normals.clone());
        let mut c = check(block, &mut store, &targets, opts, |s| {
            let x = s.param(input);
            let (y, _) = pdam.forward(s, &pos, with_normals.then_some(&nrm[..]), x)?;
            probe(s, y, &weights)
        })?;
        let offset_weights = [pdam.offset_hidden.weight, pdam.offset_out.weight];
        c.offset_gradient = Some(
            offset_weights.iter().all(|&id| c.report.get(store.name(id)).is_some_and(|t| t.max_abs_grad > 0.0)),
        );
        out.push(c);
    }

    {
        let mut store = ParamStore::new();
        let coarse_n = POINTS / 4;
        let coarse = store.add("coarse", inst.tensor(&[coarse_n, 5]))?;
        let skip = store.add("skip", input_value.clone())?;
        let fp = FeaturePropagation::new(&mut store, "fp", 5, WIDTH, 7, 3, 1)?;
        inst.perturb(&mut store);
        let weights = inst.tensor(&[POINTS, 7]);
        let targets = [vec![coarse, skip], fp.param_ids()].concat();
        let pos = inst.positions.clone();
        out.push(check("feature-propagation", &mut store, &targets, opts, |s| {
            let c = s.param(coarse);
            let k = s.param(skip);
            let y = fp.forward(s, &pos[..coarse_n], c, &pos, Some(k))?;
            probe(s, y, &weights)
        })?);
    }

    out.push(head_check("classification-head", Task::Classification, opts)?);
    out.push(head_check("segmentation-head", Task::Segmentation, opts)?);
    Ok(out)
}

/// Fixed-width text table, one row per block.
pub fn format_table(checks: &[BlockCheck]) -> String {
    let mut out = format!("{:<22} {:>7} {:>6} {:>12} {:>8}\n", "block", "coords", "kinks", "max_rel_err", "result");
    for c in checks {
        out.push_str(&format!(
            "{:<22} {:>7} {:>6} {:>12.3e} {:>8}\n",
            c.block,
            c.report.coords(),
            c.report.kinks(),
            c.report.max_rel_error(),
            if c.passed() { "PASS" } else { "FAIL" }
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_block_passes_and_a_broken_backward_is_caught() {
        let checks = gradient_suite(&SuiteOptions::default()).unwrap();
        let names: Vec<_> = checks.iter().map(|c| c.block).collect();
        assert_eq!(names, SUITE_BLOCKS);
        for c in &checks {
            assert!(c.passed(), "{}: {:#?}", c.block, c.report);
        }
        assert_eq!(checks[5].offset_gradient, Some(true));
        assert_eq!(checks[6].offset_gradient, Some(true));

        let broken = gradient_suite(&SuiteOptions { fault: Some(Fault::ReluLeak), ..SuiteOptions::default() }).unwrap();
        assert!(broken.iter().any(|c| !c.passed()));
        let table = format_table(&broken);
        assert!(table.contains("FAIL"));
        assert_eq!(table.lines().count(), SUITE_BLOCKS.len() + 1);
    }
}
