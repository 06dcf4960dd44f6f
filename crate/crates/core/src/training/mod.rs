//! Reconstruction: rays are integrated through the field, refracted at the
//! accumulated surface point and intersected with the pattern plane; the
//! miss against the observed correspondence plus a depth-smoothness penalty
//! drives Adam.

mod config;
mod loss;
mod state;

pub use config::{TrainConfig, TRAIN_CONFIG_VERSION};
pub use loss::{correspondence_loss, depth_smoothness_loss};
pub use state::{read_state, write_state, StateError, TrainState};

use std::io::Write;
use std::path::Path;

use nalgebra::Point2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autodiff::{AutodiffError, Tape};
use crate::field::{coarse_samples, fine_samples, record_integration, NeRefNetwork, Slab};
use crate::geometry::{intersect_plane, PinholeCamera, ReferencePlane, RefractionConstants, Vec3};
use crate::grid::Grid;
use crate::optim::AdamState;
use crate::simulator::{inject_flow_noise, Scene, WarpField};
use loss::{record_pass_loss, PassInputs};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("no complete 2×2 patch with valid correspondences in the training views")]
    NoData,
    #[error("loss became non-finite at iteration {iteration}")]
    Diverged {
        iteration: u64,
        /// Parameters before the failing update.
        last_good: Box<NeRefNetwork>,
    },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

/// Pattern-plane targets of one camera; `None` where the warp is invalid.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingView {
    pub camera: PinholeCamera,
    pub targets: Grid<Option<Vec3>>,
}

/// Back-projects `pixel + d` through the water-free camera onto the plane.
pub fn build_targets(camera: &PinholeCamera, warp: &WarpField, plane: &ReferencePlane) -> Grid<Option<Vec3>> {
    Grid::from_fn(warp.disp.width, warp.disp.height, |col, row| {
        if !*warp.valid.get(col, row) {
            return None;
        }
        let [dx, dy] = *warp.disp.get(col, row);
        let p = Point2::new(col as f64 + 0.5 + dx, row as f64 + 0.5 + dy);
        match intersect_plane(&camera.pixel_to_ray(p), plane) {
            Ok((l, q)) if l > 0.0 => Some(q),
            _ => None,
        }
    })
}

/// Immutable inputs of a reconstruction run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingData {
    pub views: Vec<TrainingView>,
    /// Top of the water column (m); bounds the sampled slab.
    pub water_top: f64,
    pub plane: ReferencePlane,
    pub constants: RefractionConstants,
}

impl TrainingData {
    /// Renders the listed cameras of `scene` and derives their targets,
    /// optionally corrupting the warps with Gaussian flow noise of
    /// `noise` pixels.
    pub fn from_scene(scene: &Scene, cameras: &[usize], noise: f64, noise_seed: u64) -> Self {
        let views = cameras
            .iter()
            .map(|&i| {
                let warp = scene.render_view(i, true).warp;
                let warp = inject_flow_noise(&warp, noise, noise_seed.wrapping_add(i as u64));
                let camera = scene.cameras[i].camera.clone();
                TrainingView {
                    targets: build_targets(&camera, &warp, &scene.plane),
                    camera,
                }
            })
            .collect();
        Self {
            views,
            water_top: scene.surface.max_height(),
            plane: scene.plane,
            constants: scene.constants,
        }
    }

    pub fn slab(&self, margin: f64) -> Slab {
        Slab::around_water(self.water_top, margin)
    }

    /// Top-left pixels of every 2×2 window whose four rays all have targets
    /// and cross the slab.
    pub fn patches(&self, slab: &Slab) -> Vec<Patch> {
        let mut out = Vec::new();
        for (v, view) in self.views.iter().enumerate() {
            let (w, h) = (view.camera.width, view.camera.height);
            let usable = Grid::from_fn(w, h, |c, r| {
                view.targets.get(c, r).is_some() && slab.bounds(&view.camera.pixel_center_ray(c, r)).is_some()
            });
            for row in 0..h.saturating_sub(1) {
                for col in 0..w.saturating_sub(1) {
                    if *usable.get(col, row)
                        && *usable.get(col + 1, row)
                        && *usable.get(col, row + 1)
                        && *usable.get(col + 1, row + 1)
                    {
                        out.push(Patch {
                            view: v as u32,
                            col: col as u32,
                            row: row as u32,
                        });
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Patch {
    pub view: u32,
    pub col: u32,
    pub row: u32,
}

impl Patch {
    /// Pixels in loss order: top-left, top-right, bottom-left, bottom-right.
    pub fn pixels(&self) -> [(usize, usize); 4] {
        let (c, r) = (self.col as usize, self.row as usize);
        [(c, r), (c + 1, r), (c, r + 1), (c + 1, r + 1)]
    }
}

/// Losses of one optimization step, averaged over its valid rays.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub iteration: u64,
    pub l_corr: f64,
    pub l_ds: f64,
    pub l_tol: f64,
    pub lr: f64,
}

/// Loss value and (mean) gradient over a set of patches.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchGradient {
    pub l_corr: f64,
    pub l_ds: f64,
    pub l_tol: f64,
    /// Rays contributing to the loss.
    pub rays: usize,
    pub grad: Vec<f64>,
}

struct ChunkSums {
    corr: f64,
    smooth: f64,
    rays: usize,
    grad: Vec<f64>,
}

/// SplitMix64 finalizer, used to derive independent stream seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn stream_seed(seed: u64, a: u64, b: u64) -> u64 {
    mix(mix(mix(seed) ^ a) ^ b)
}

fn chunk_sums(
    network: &NeRefNetwork,
    data: &TrainingData,
    config: &TrainConfig,
    patches: &[Patch],
    seed: u64,
) -> Result<ChunkSums, AutodiffError> {
    let slab = data.slab(config.slab_margin);
    let mut rays = Vec::with_capacity(patches.len() * 4);
    let mut targets = Vec::with_capacity(rays.capacity());
    for p in patches {
        let view = &data.views[p.view as usize];
        for (c, r) in p.pixels() {
            rays.push(view.camera.pixel_center_ray(c, r));
            targets.push(view.targets.get(c, r).expect("patch pixels carry targets"));
        }
    }
    let bounds: Vec<(f64, f64)> = rays
        .iter()
        .map(|r| slab.bounds(r).expect("patch rays cross the slab"))
        .collect();
    let schedule = config.schedule();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs = PassInputs {
        rays: &rays,
        targets: &targets,
        plane: &data.plane,
        constants: &data.constants,
        huber_delta: config.huber_delta,
        pixel_pitch: config.pixel_pitch,
    };

    let mut tape = Tape::new(&network.params);
    let coarse = coarse_samples(&schedule, &bounds, &mut rng);
    let c_nodes = record_integration(
        &network.layout,
        &mut tape,
        &rays,
        &coarse.positions,
        &coarse.deltas,
        coarse.per_ray,
    );
    let mut passes = vec![record_pass_loss(&mut tape, &c_nodes, &inputs)];
    if schedule.fine_count > 0 {
        let weights = tape.value(c_nodes.weights).data.clone();
        let fine = fine_samples(&schedule, &bounds, &coarse, &weights, &mut rng);
        let f_nodes = record_integration(&network.layout, &mut tape, &rays, &fine.positions, &fine.deltas, fine.per_ray);
        passes.push(record_pass_loss(&mut tape, &f_nodes, &inputs));
    }
    let valid: Vec<usize> = (0..rays.len())
        .filter(|&i| passes.iter().all(|p| p.valid[i]))
        .collect();
    let mut out = ChunkSums {
        corr: 0.0,
        smooth: 0.0,
        rays: valid.len(),
        grad: vec![0.0; network.params.len()],
    };
    if valid.is_empty() {
        return Ok(out);
    }
    let mut seeds = Vec::new();
    for p in &passes {
        let c = tape.gather(p.corr, valid.clone());
        let c = tape.sum(c);
        let s = tape.gather(p.smooth, valid.clone());
        let s = tape.sum(s);
        out.corr += tape.value(c).data[0];
        out.smooth += tape.value(s).data[0];
        seeds.push((c, 1.0));
        seeds.push((s, config.lambda_ds));
    }
    tape.backward_into(&seeds, &mut out.grad)?;
    Ok(out)
}

/// Mean loss and gradient over `patches`, split into tapes of
/// `config.chunk_rays` rays and spread over `config.workers` threads.
///
/// Chunk `k` draws its samples from the stream `(seed, k)`; partial sums are
/// reduced in chunk order, so the result does not depend on the worker count.
pub fn batch_gradient(
    network: &NeRefNetwork,
    data: &TrainingData,
    config: &TrainConfig,
    patches: &[Patch],
    seed: u64,
) -> Result<BatchGradient, AutodiffError> {
    let chunks: Vec<&[Patch]> = patches.chunks((config.chunk_rays / 4).max(1)).collect();
    let workers = config.workers.max(1).min(chunks.len().max(1));
    let run = |k: usize| chunk_sums(network, data, config, chunks[k], stream_seed(seed, k as u64, 0));
    let mut results: Vec<Option<Result<ChunkSums, AutodiffError>>> = (0..chunks.len()).map(|_| None).collect();
    if workers <= 1 {
        for (k, slot) in results.iter_mut().enumerate() {
            *slot = Some(run(k));
        }
    } else {
        let done: Vec<Vec<(usize, Result<ChunkSums, AutodiffError>)>> = std::thread::scope(|s| {
            let handles: Vec<_> = (0..workers)
                .map(|w| {
                    let run = &run;
                    let n = chunks.len();
                    s.spawn(move || (w..n).step_by(workers).map(|k| (k, run(k))).collect::<Vec<_>>())
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
        });
        for (k, r) in done.into_iter().flatten() {
            results[k] = Some(r);
        }
    }
    let mut total = BatchGradient {
        l_corr: 0.0,
        l_ds: 0.0,
        l_tol: 0.0,
        rays: 0,
        grad: vec![0.0; network.params.len()],
    };
    for r in results {
        let r = r.expect("every chunk evaluated")?;
        total.l_corr += r.corr;
        total.l_ds += r.smooth;
        total.rays += r.rays;
        for (g, v) in total.grad.iter_mut().zip(&r.grad) {
            *g += v;
        }
    }
    if total.rays > 0 {
        let m = total.rays as f64;
        total.l_corr /= m;
        total.l_ds /= m;
        total.grad.iter_mut().for_each(|g| *g /= m);
    }
    total.l_tol = total.l_corr + config.lambda_ds * total.l_ds;
    Ok(total)
}

/// Optimization state of a run; advanced one epoch at a time.
pub struct Trainer<'a> {
    pub config: TrainConfig,
    pub data: &'a TrainingData,
    pub network: NeRefNetwork,
    pub adam: AdamState,
    /// Completed epochs.
    pub epoch: usize,
    pub history: Vec<LossRecord>,
    patches: Vec<Patch>,
}

impl<'a> Trainer<'a> {
    pub fn new(config: TrainConfig, data: &'a TrainingData) -> Result<Self, TrainError> {
        config.validate().map_err(|(f, m)| TrainError::Config(format!("{f}: {m}")))?;
        let network = NeRefNetwork::new(config.arch, &config.init);
        let adam = AdamState::new(config.adam, network.param_count());
        Self::assemble(config, data, network, adam, 0, Vec::new())
    }

    /// Continues from a saved state; the configuration must match the one
    /// the state was produced with.
    pub fn resume(config: TrainConfig, data: &'a TrainingData, state: TrainState) -> Result<Self, TrainError> {
        config.validate().map_err(|(f, m)| TrainError::Config(format!("{f}: {m}")))?;
        let network = NeRefNetwork::from_params(config.arch, state.params).map_err(TrainError::Config)?;
        if state.m.len() != network.param_count() || state.v.len() != network.param_count() {
            return Err(TrainError::Config("optimizer state does not match the architecture".into()));
        }
        let adam = AdamState {
            config: config.adam,
            step: state.step,
            m: state.m,
            v: state.v,
        };
        Self::assemble(config, data, network, adam, state.epoch, state.history)
    }

    fn assemble(
        config: TrainConfig,
        data: &'a TrainingData,
        network: NeRefNetwork,
        adam: AdamState,
        epoch: usize,
        history: Vec<LossRecord>,
    ) -> Result<Self, TrainError> {
        let patches = data.patches(&data.slab(config.slab_margin));
        if patches.is_empty() {
            return Err(TrainError::NoData);
        }
        Ok(Self {
            config,
            data,
            network,
            adam,
            epoch,
            history,
            patches,
        })
    }

    pub fn patch_count(&self) -> usize {
        self.patches.len()
    }

    pub fn state(&self) -> TrainState {
        TrainState {
            epoch: self.epoch,
            step: self.adam.step,
            params: self.network.params.clone(),
            m: self.adam.m.clone(),
            v: self.adam.v.clone(),
            history: self.history.clone(),
        }
    }

    /// One optimization step over `batch`.
    fn step(&mut self, batch: &[Patch]) -> Result<(), TrainError> {
        let iteration = self.adam.step + 1;
        let seed = stream_seed(self.config.seed, 1, iteration);
        let g = batch_gradient(&self.network, self.data, &self.config, batch, seed)?;
        let finite = g.l_tol.is_finite() && g.grad.iter().all(|v| v.is_finite());
        if !finite {
            return Err(TrainError::Diverged {
                iteration,
                last_good: Box::new(self.network.clone()),
            });
        }
        let lr = self.adam.effective_lr();
        if g.rays > 0 {
            self.adam
                .step(&mut self.network.params, &g.grad)
                .expect("gradient is parameter-shaped");
        } else {
            self.adam.step += 1;
        }
        self.history.push(LossRecord {
            iteration,
            l_corr: g.l_corr,
            l_ds: g.l_ds,
            l_tol: g.l_tol,
            lr,
        });
        Ok(())
    }

    /// One pass over every patch in a seeded random order.
    pub fn run_epoch(&mut self) -> Result<(), TrainError> {
        let mut order = self.patches.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(self.config.seed, 2, self.epoch as u64));
        order.shuffle(&mut rng);
        let per_batch = self.config.batch_rays / 4;
        for batch in order.chunks(per_batch) {
            self.step(batch)?;
        }
        self.epoch += 1;
        Ok(())
    }

    /// Runs until `config.epochs` epochs are complete, calling `on_epoch`
    /// after each one.
    pub fn run<E: From<TrainError>>(&mut self, mut on_epoch: impl FnMut(&Self) -> Result<(), E>) -> Result<(), E> {
        while self.epoch < self.config.epochs {
            self.run_epoch()?;
            on_epoch(self)?;
        }
        Ok(())
    }
}

/// Trains from scratch for `config.epochs` epochs.
pub fn train(config: &TrainConfig, data: &TrainingData) -> Result<(NeRefNetwork, Vec<LossRecord>), TrainError> {
    let mut t = Trainer::new(config.clone(), data)?;
    t.run(|_| Ok::<(), TrainError>(()))?;
    Ok((t.network, t.history))
}

/// CSV with header `iteration,L_corr,L_ds,L_tol,lr`.
pub fn write_history_csv<W: Write>(mut out: W, history: &[LossRecord]) -> std::io::Result<()> {
    writeln!(out, "iteration,L_corr,L_ds,L_tol,lr")?;
    for r in history {
        writeln!(out, "{},{:e},{:e},{:e},{:e}", r.iteration, r.l_corr, r.l_ds, r.l_tol, r.lr)?;
    }
    Ok(())
}

pub fn save_history_csv(path: &Path, history: &[LossRecord]) -> std::io::Result<()> {
    let mut buf = Vec::new();
    write_history_csv(&mut buf, history)?;
    std::fs::write(path, buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Architecture;
    use crate::simulator::{SceneConfig, WaveSurface};

    fn flat_scene(res: usize) -> Scene {
        Scene::from_config(&SceneConfig::desk("t", WaveSurface::flat(0.2), res), "t", Path::new(".")).unwrap()
    }

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            epochs: 1,
            batch_rays: 16,
            coarse_samples: 8,
            fine_samples: 0,
            stratified: false,
            chunk_rays: 8,
            arch: Architecture {
                depth: 2,
                width: 8,
                head_depth: 1,
                encoding_freqs: 1,
                skip_layer: 0,
                density_scale: 20.0,
            },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_warp_targets_are_the_dry_hits() {
        let sc = flat_scene(8);
        let cam = &sc.cameras[0].camera;
        let warp = WarpField {
            disp: Grid::filled(8, 8, [0.0; 2]),
            valid: Grid::filled(8, 8, true),
        };
        let t = build_targets(cam, &warp, &sc.plane);
        let dry = sc.render_view(0, false);
        for i in 0..64 {
            assert!((t.data[i].unwrap() - dry.pattern_point.data[i]).norm() < 1e-12);
        }
    }

    #[test]
    fn simulated_warp_targets_reproduce_the_traced_hits() {
        let sc = flat_scene(16);
        let data = TrainingData::from_scene(&sc, &[1, 5], 0.0, 0);
        for (v, &i) in data.views.iter().zip(&[1, 5]) {
            let truth = sc.render_view(i, true);
            for (k, q) in v.targets.data.iter().enumerate() {
                if let Some(q) = q {
                    assert!((q - truth.pattern_point.data[k]).norm() < 1e-3);
                }
            }
        }
    }

    #[test]
    fn loss_is_invariant_to_patch_order() {
        let sc = flat_scene(8);
        let data = TrainingData::from_scene(&sc, &[0, 4], 0.0, 0);
        let mut cfg = tiny_config();
        cfg.fine_samples = 4;
        let net = NeRefNetwork::new(cfg.arch, &cfg.init);
        let patches = data.patches(&data.slab(cfg.slab_margin));
        let batch: Vec<Patch> = patches.iter().step_by(7).copied().collect();
        let mut rev = batch.clone();
        rev.reverse();
        cfg.chunk_rays = 4 * batch.len();
        let a = batch_gradient(&net, &data, &cfg, &batch, 5).unwrap();
        let b = batch_gradient(&net, &data, &cfg, &rev, 5).unwrap();
        assert_eq!(a.rays, b.rays);
        assert!((a.l_tol - b.l_tol).abs() < 1e-10 * a.l_tol.abs().max(1.0));
        for (x, y) in a.grad.iter().zip(&b.grad) {
            assert!((x - y).abs() < 1e-10 * x.abs().max(1.0));
        }
    }

    #[test]
    fn worker_count_does_not_change_the_gradient() {
        let sc = flat_scene(8);
        let data = TrainingData::from_scene(&sc, &[0, 4], 0.0, 0);
        let mut cfg = tiny_config();
        cfg.stratified = true;
        cfg.fine_samples = 4;
        let net = NeRefNetwork::new(cfg.arch, &cfg.init);
        let patches = data.patches(&data.slab(cfg.slab_margin));
        let a = batch_gradient(&net, &data, &cfg, &patches[..20], 3).unwrap();
        cfg.workers = 3;
        let b = batch_gradient(&net, &data, &cfg, &patches[..20], 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn total_loss_gradient_matches_central_differences() {
        let sc = flat_scene(8);
        let data = TrainingData::from_scene(&sc, &[0, 4], 0.0, 0);
        let mut cfg = tiny_config();
        cfg.batch_rays = 4;
        cfg.chunk_rays = 4;
        let patches = data.patches(&data.slab(cfg.slab_margin));
        for seed in 0..2u64 {
            cfg.init.seed = seed;
            let mut net = NeRefNetwork::new(cfg.arch, &cfg.init);
            // off the ReLU kinks that zero hidden biases create
            for (i, l) in net.layout.trunk.clone().into_iter().enumerate() {
                for (j, b) in net.params[l.bias..l.bias + l.n_out].iter_mut().enumerate() {
                    *b = 0.01 * ((7 * i + 3 * j + seed as usize) % 11) as f64 - 0.05;
                }
            }
            let batch = [patches[(17 + 31 * seed as usize) % patches.len()]];
            let g = batch_gradient(&net, &data, &cfg, &batch, seed).unwrap();
            assert_eq!(g.rays, 4);
            let scale = g.grad.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let h = 1e-6;
            let mut probe = net.clone();
            for k in 0..net.params.len() {
                probe.params[k] = net.params[k] + h;
                let up = batch_gradient(&probe, &data, &cfg, &batch, seed).unwrap();
                probe.params[k] = net.params[k] - h;
                let down = batch_gradient(&probe, &data, &cfg, &batch, seed).unwrap();
                probe.params[k] = net.params[k];
                assert_eq!((up.rays, down.rays), (4, 4));
                let fd = (up.l_tol - down.l_tol) / (2.0 * h);
                let err = (g.grad[k] - fd).abs() / g.grad[k].abs().max(fd.abs()).max(1e-3 * scale);
                assert!(err < 1e-3, "param {k}: {} vs {fd}", g.grad[k]);
            }
        }
    }

    #[test]
    fn zero_epochs_leave_the_initialization() {
        let sc = flat_scene(8);
        let data = TrainingData::from_scene(&sc, &[0], 0.0, 0);
        let mut cfg = tiny_config();
        cfg.epochs = 0;
        let (net, hist) = train(&cfg, &data).unwrap();
        assert_eq!(net, NeRefNetwork::new(cfg.arch, &cfg.init));
        assert!(hist.is_empty());
    }

    #[test]
    fn resume_matches_a_straight_run() {
        let sc = flat_scene(8);
        let data = TrainingData::from_scene(&sc, &[0, 4], 0.0, 0);
        let mut cfg = tiny_config();
        cfg.stratified = true;
        cfg.fine_samples = 4;
        cfg.epochs = 2;
        let (straight, hist) = train(&cfg, &data).unwrap();
        let mut first = cfg.clone();
        first.epochs = 1;
        let mut t = Trainer::new(first, &data).unwrap();
        t.run(|_| Ok::<(), TrainError>(())).unwrap();
        let bytes = write_state(&t.state());
        let state = read_state(&bytes).unwrap();
        let mut t2 = Trainer::resume(cfg, &data, state).unwrap();
        t2.run(|_| Ok::<(), TrainError>(())).unwrap();
        assert_eq!(t2.network, straight);
        assert_eq!(t2.history, hist);
    }

    #[test]
    fn history_csv_has_the_expected_header() {
        let mut buf = Vec::new();
        let r = LossRecord {
            iteration: 1,
            l_corr: 0.5,
            l_ds: 0.25,
            l_tol: 0.5375,
            lr: 4e-4,
        };
        write_history_csv(&mut buf, &[r]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("iteration,L_corr,L_ds,L_tol,lr"));
        assert_eq!(lines.next(), Some("1,5e-1,2.5e-1,5.375e-1,4e-4"));
    }
}
