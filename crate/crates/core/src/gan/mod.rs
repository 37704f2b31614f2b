//! Training harness: adversarial losses, multi-scale loss assembly over the
//! generator's encoder taps, alternating optimizer steps, checkpointing and
//! loss logging.

pub mod checkpoint;
pub mod features;
pub mod net;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{CoreError, Result};
use crate::graph::{AggregatorKind, GraphConvParams, PerturbationConfig};
use crate::image::RgbImage;
use crate::losses::{patch_nce, tacm_loss, ContrastiveConfig};
use crate::matching::{correlation_matching_loss, CmNorm, PageRankConfig};
use crate::matrix::Matrix;
use crate::rng::{derive_seed, Rng};
use crate::scalar::Scalar;
use crate::synth::{pair_file_names, read_manifest};
use crate::tensor::{DiffTensor, Tape};

pub use net::{Adam, Discriminator, Generator, ParamStore, TensorBag, GENERATOR_TAP_COUNT};

/// Full training configuration with the reference hyperparameters as
/// defaults.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Structural-consistency weight (λ1).
    pub lambda1: f64,
    /// Correlation-matching weight (λ2).
    pub lambda2: f64,
    pub mask_ratio: f64,
    pub hops: usize,
    pub contrastive: ContrastiveConfig,
    pub seed: u64,
    pub ngf: usize,
    pub ndf: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub pagerank: PageRankConfig,
    pub cm_norm: CmNorm,
    pub aggregator: AggregatorKind,
    pub use_tacm: bool,
    pub use_tcpm: bool,
    pub use_pert: bool,
    pub ckpt_every: usize,
    pub sample_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 1,
            learning_rate: 2e-4,
            lambda1: 0.1,
            lambda2: 1.0,
            mask_ratio: 0.15,
            hops: 4,
            contrastive: ContrastiveConfig {
                negatives_per_anchor: 64,
                ..ContrastiveConfig::reference_defaults()
            },
            seed: 7,
            ngf: 8,
            ndf: 8,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            pagerank: PageRankConfig::default(),
            cm_norm: CmNorm::Frobenius,
            aggregator: AggregatorKind::PolynomialSum,
            use_tacm: true,
            use_tcpm: true,
            use_pert: true,
            ckpt_every: 10,
            sample_every: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(CoreError::Degenerate(
                "epochs and batch size must be positive".into(),
            ));
        }
        if self.learning_rate <= 0.0 {
            return Err(CoreError::Degenerate("learning rate must be positive".into()));
        }
        if self.lambda1 < 0.0 || self.lambda2 < 0.0 {
            return Err(CoreError::Degenerate("loss weights must be nonnegative".into()));
        }
        if !(0.0..=1.0).contains(&self.mask_ratio) {
            return Err(CoreError::Degenerate(format!(
                "mask ratio {} outside [0, 1]",
                self.mask_ratio
            )));
        }
        if self.contrastive.tap_layers.len() != GENERATOR_TAP_COUNT {
            return Err(CoreError::Degenerate(format!(
                "expected {GENERATOR_TAP_COUNT} tap layers, got {}",
                self.contrastive.tap_layers.len()
            )));
        }
        Ok(())
    }
}

/// Linear decay over the final half: the rate holds its initial value
/// through epoch `epochs/2` and falls linearly to exactly 0 at the final
/// epoch.
pub fn lr_at_epoch(cfg: &TrainConfig, epoch: usize) -> f64 {
    let last = cfg.epochs.saturating_sub(1);
    let start = cfg.epochs / 2;
    if epoch <= start || last == start {
        cfg.learning_rate
    } else {
        cfg.learning_rate * (last - epoch) as f64 / (last - start) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdvSide {
    Generator,
    Discriminator,
}

/// Saturating-free adversarial objectives on patch logits. The
/// discriminator side minimizes softplus(-z_real) + softplus(z_fake) (the
/// negated log-likelihood of the minimax statement); the generator side
/// minimizes softplus(-z_fake), the standard non-saturating surrogate for
/// maximizing log D(G(x)).
pub fn adversarial_loss<T: Scalar>(
    d_real: &DiffTensor<T>,
    d_fake: &DiffTensor<T>,
    side: AdvSide,
) -> Result<DiffTensor<T>> {
    match side {
        AdvSide::Discriminator => {
            let real_term = d_real.neg()?.softplus()?.mean_all()?;
            let fake_term = d_fake.softplus()?.mean_all()?;
            real_term.add(&fake_term)
        }
        AdvSide::Generator => d_fake.neg()?.softplus()?.mean_all(),
    }
}

/// Uniform spatial sample without replacement from a C×H×W tap. Returns the
/// gathered N×C rows and the flat indices so the same positions can be read
/// from the paired image's taps.
pub fn sample_patch_features<T: Scalar>(
    tap: &DiffTensor<T>,
    count: usize,
    seed: u64,
) -> Result<(DiffTensor<T>, Vec<usize>)> {
    if tap.shape().len() != 3 {
        return Err(CoreError::Shape {
            op: "sample_patch_features",
            detail: format!("rank-3 tap required, got {:?}", tap.shape()),
        });
    }
    let positions = tap.shape()[1] * tap.shape()[2];
    if count > positions {
        return Err(CoreError::Degenerate(format!(
            "cannot sample {count} of {positions} positions"
        )));
    }
    let idx = Rng::new(seed).sample_indices(positions, count);
    Ok((tap.gather_spatial(&idx)?, idx))
}

fn gather_rows_plain<T: Scalar>(buf: &[T], dims: [usize; 3], idx: &[usize]) -> Matrix<T> {
    let [c, h, w] = dims;
    Matrix::from_fn(idx.len(), c, |row, ch| buf[ch * h * w + idx[row]])
}

/// Scalar loss components of one generator objective.
#[derive(Debug, Clone)]
pub struct LossParts<T: Scalar> {
    pub adv: DiffTensor<T>,
    pub patchnce: DiffTensor<T>,
    pub struc: Option<DiffTensor<T>>,
    pub cm: Option<DiffTensor<T>>,
}

/// Weighted total: adv + patchnce + λ1·struc + λ2·cm. Ablation flags zero
/// out the disabled parts.
pub fn total_loss<T: Scalar>(parts: &LossParts<T>, cfg: &TrainConfig) -> Result<DiffTensor<T>> {
    let mut total = parts.adv.add(&parts.patchnce)?;
    if cfg.use_tacm {
        if let Some(struc) = &parts.struc {
            total = total.add(&struc.scale(T::from_f64(cfg.lambda1))?)?;
        }
    }
    if cfg.use_tcpm {
        if let Some(cm) = &parts.cm {
            total = total.add(&cm.scale(T::from_f64(cfg.lambda2))?)?;
        }
    }
    Ok(total)
}

fn gnn_weight_names(prefix: &str, scale: usize, kind: AggregatorKind, hops: usize) -> Vec<String> {
    (0..crate::graph::weight_count(kind, hops))
        .map(|k| format!("{prefix}.s{scale}.w{k}"))
        .collect()
}

/// Seeded init of per-scale aggregation weights under a name prefix.
pub fn init_gnn_params<T: Scalar>(
    store: &mut ParamStore<T>,
    prefix: &str,
    tap_dims: &[usize],
    kind: AggregatorKind,
    hops: usize,
    rng: &mut Rng,
) {
    for (scale, &d) in tap_dims.iter().enumerate() {
        for name in gnn_weight_names(prefix, scale, kind, hops) {
            let w = crate::graph::init_hop_weight(d, rng)
                .into_iter()
                .map(T::from_f64)
                .collect();
            store.insert(name, vec![d, d], w);
        }
    }
}

fn gnn_params_from_bag<T: Scalar>(
    bag: &TensorBag<T>,
    prefix: &str,
    scale: usize,
    kind: AggregatorKind,
    hops: usize,
) -> Result<GraphConvParams<T>> {
    let mut weights = Vec::new();
    for name in gnn_weight_names(prefix, scale, kind, hops) {
        weights.push(
            bag.get(&name)
                .ok_or_else(|| CoreError::Tape(format!("missing parameter {name}")))?
                .clone(),
        );
    }
    match kind {
        AggregatorKind::PolynomialSum => GraphConvParams::polynomial(hops, weights),
        AggregatorKind::SinglePower => {
            Ok(GraphConvParams::single_power(hops, weights.pop().unwrap()))
        }
    }
}

/// An in-flight generator pass: the tape plus every handle later phases
/// need.
pub struct GeneratorPass<T: Scalar> {
    pub tape: Tape<T>,
    pub gen_bag: TensorBag<T>,
    pub x: DiffTensor<T>,
    pub y_fake: DiffTensor<T>,
    pub taps_src: Vec<DiffTensor<T>>,
}

/// Record the generator forward pass on a fresh tape.
pub fn begin_generator_pass<T: Scalar>(
    generator: &Generator,
    gen_store: &ParamStore<T>,
    x_values: &[T],
    height: usize,
    width: usize,
) -> Result<GeneratorPass<T>> {
    let tape = Tape::new();
    let gen_bag = gen_store.register_all(&tape, true)?;
    let x = tape.constant(x_values.to_vec(), vec![3, height, width])?;
    let (y_fake, taps_src) = generator.forward(&gen_bag, &x)?;
    Ok(GeneratorPass {
        tape,
        gen_bag,
        x,
        y_fake,
        taps_src,
    })
}

/// Detached encoder taps of the real target image, recomputed from the
/// current weights at the start of each step. They enter the objective as
/// constants: no gradient flows into the real-image branch.
pub type RealTaps<T> = Vec<(Vec<T>, [usize; 3])>;

/// Finish the generator objective on an in-flight pass: multi-scale
/// PatchNCE, structural and correlation-matching terms, the adversarial
/// term against the (already updated) discriminator, and the weighted
/// total.
#[allow(clippy::too_many_arguments)]
pub fn finish_generator_pass<T: Scalar>(
    pass: &GeneratorPass<T>,
    generator: &Generator,
    discriminator: &Discriminator,
    disc_store: &ParamStore<T>,
    taps_real: &RealTaps<T>,
    cfg: &TrainConfig,
    step_seed: u64,
) -> Result<(LossParts<T>, DiffTensor<T>)> {
    let taps_fake = generator.encode(&pass.gen_bag, &pass.y_fake)?;

    let n_scales = GENERATOR_TAP_COUNT;
    let mut nce_in = Vec::with_capacity(n_scales);
    let mut nce_out = Vec::with_capacity(n_scales);
    let mut struc_sum: Option<DiffTensor<T>> = None;
    let mut cm_sum: Option<DiffTensor<T>> = None;

    for scale in 0..n_scales {
        let tap_src = &pass.taps_src[scale];
        let positions = tap_src.shape()[1] * tap_src.shape()[2];
        let count = cfg.contrastive.negatives_per_anchor.min(positions);
        let sample_seed = derive_seed(step_seed, 0x53_4150 ^ (scale as u64) << 8);
        let (f_he, idx) = sample_patch_features(tap_src, count, sample_seed)?;
        let f_vihc = taps_fake[scale].gather_spatial(&idx)?;

        nce_in.push(f_he.clone());
        nce_out.push(f_vihc.clone());

        let threshold = cfg.contrastive.thresholds[scale];
        if cfg.use_tacm {
            let gnn1 = gnn_params_from_bag(&pass.gen_bag, "gnn1", scale, cfg.aggregator, cfg.hops)?;
            let gnn2 = gnn_params_from_bag(&pass.gen_bag, "gnn2", scale, cfg.aggregator, cfg.hops)?;
            let pert = PerturbationConfig::new(
                cfg.mask_ratio,
                derive_seed(step_seed, 0x4D_41 ^ (scale as u64) << 8),
            )?;
            let breakdown = tacm_loss(
                &f_he,
                &f_vihc,
                &gnn1,
                &gnn2,
                threshold,
                &cfg.contrastive,
                &pert,
                cfg.use_pert,
            )?;
            struc_sum = Some(match struc_sum {
                Some(acc) => acc.add(&breakdown.struc)?,
                None => breakdown.struc,
            });
        }
        if cfg.use_tcpm {
            let (real_buf, real_dims) = &taps_real[scale];
            let f_real = gather_rows_plain(real_buf, *real_dims, &idx);
            let cm = correlation_matching_loss(
                &f_vihc,
                &f_real,
                threshold,
                &cfg.pagerank,
                cfg.cm_norm,
            )?;
            cm_sum = Some(match cm_sum {
                Some(acc) => acc.add(&cm)?,
                None => cm,
            });
        }
    }

    let inv_scales = T::from_f64(1.0 / n_scales as f64);
    let struc = match struc_sum {
        Some(s) => Some(s.scale(inv_scales)?),
        None => None,
    };
    let cm = match cm_sum {
        Some(s) => Some(s.scale(inv_scales)?),
        None => None,
    };
    let patchnce = patch_nce(&nce_in, &nce_out, &cfg.contrastive)?;

    let disc_bag = disc_store.register_all(&pass.tape, false)?;
    let d_fake = discriminator.forward(&disc_bag, &pass.y_fake)?;
    let adv = adversarial_loss(&d_fake, &d_fake, AdvSide::Generator)?;

    let parts = LossParts {
        adv,
        patchnce,
        struc,
        cm,
    };
    let total = total_loss(&parts, cfg)?;
    Ok((parts, total))
}

/// One logged row of the loss CSV.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRow {
    pub epoch: usize,
    pub step: usize,
    pub adv_d: f64,
    pub adv_g: f64,
    pub patchnce: f64,
    pub struc: f64,
    pub cm: f64,
    pub total: f64,
    pub lr: f64,
}

pub const LOSS_CSV_HEADER: &str = "epoch,step,adv_d,adv_g,patchnce,struc,cm,total,lr";

impl LossRow {
    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.epoch,
            self.step,
            self.adv_d,
            self.adv_g,
            self.patchnce,
            self.struc,
            self.cm,
            self.total,
            self.lr
        )
    }
}

/// In-memory weakly-paired dataset, images already scaled to [-1, 1].
#[derive(Debug, Clone)]
pub struct Dataset<T: Scalar> {
    pub height: usize,
    pub width: usize,
    pub pairs: Vec<PairTensors<T>>,
}

#[derive(Debug, Clone)]
pub struct PairTensors<T: Scalar> {
    pub he: Vec<T>,
    pub ihc: Vec<T>,
}

impl<T: Scalar> Dataset<T> {
    pub fn from_images(images: &[(RgbImage, RgbImage)]) -> Result<Self> {
        let Some((first, _)) = images.first() else {
            return Err(CoreError::Degenerate("empty dataset".into()));
        };
        let (height, width) = (first.height, first.width);
        let mut pairs = Vec::with_capacity(images.len());
        for (he, ihc) in images {
            if he.height != height || he.width != width || ihc.height != height || ihc.width != width
            {
                return Err(CoreError::Degenerate(
                    "all dataset images must share one size".into(),
                ));
            }
            pairs.push(PairTensors {
                he: he.to_unit_tensor(),
                ihc: ihc.to_unit_tensor(),
            });
        }
        Ok(Dataset {
            height,
            width,
            pairs,
        })
    }

    /// Load the pairs referenced by a synthesized-dataset manifest.
    pub fn load(manifest_path: &Path) -> Result<Self> {
        let rows = read_manifest(manifest_path)?;
        let dir = manifest_path
            .parent()
            .ok_or_else(|| CoreError::Format("manifest has no parent directory".into()))?;
        let mut images = Vec::with_capacity(rows.len());
        for row in &rows {
            let (he_name, ihc_name, _) = pair_file_names(row.index);
            images.push((
                RgbImage::load_png(&dir.join(he_name))?,
                RgbImage::load_png(&dir.join(ihc_name))?,
            ));
        }
        Dataset::from_images(&images)
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Mutable training state: both networks, their stores and optimizers.
pub struct TrainState<T: Scalar> {
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub gen_store: ParamStore<T>,
    pub disc_store: ParamStore<T>,
    pub adam_g: Adam,
    pub adam_d: Adam,
}

impl<T: Scalar> TrainState<T> {
    pub fn init(cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let generator = Generator::new(cfg.ngf);
        let discriminator = Discriminator::new(cfg.ndf);
        let mut gen_store = ParamStore::new();
        generator.init_params(&mut gen_store, &mut Rng::stream(cfg.seed, 0x47_454E));
        let dims = generator.tap_dims();
        init_gnn_params(
            &mut gen_store,
            "gnn1",
            &dims,
            cfg.aggregator,
            cfg.hops,
            &mut Rng::stream(cfg.seed, 0x47_4E31),
        );
        init_gnn_params(
            &mut gen_store,
            "gnn2",
            &dims,
            cfg.aggregator,
            cfg.hops,
            &mut Rng::stream(cfg.seed, 0x47_4E32),
        );
        let mut disc_store = ParamStore::new();
        discriminator.init_params(&mut disc_store, &mut Rng::stream(cfg.seed, 0x44_4953));
        Ok(TrainState {
            generator,
            discriminator,
            gen_store,
            disc_store,
            adam_g: Adam::new(cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2),
            adam_d: Adam::new(cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2),
        })
    }
}

/// Scalar loss summary of one optimization step (means over the batch).
#[derive(Debug, Clone, Copy)]
pub struct StepLosses {
    pub adv_d: f64,
    pub adv_g: f64,
    pub patchnce: f64,
    pub struc: f64,
    pub cm: f64,
    pub total: f64,
}

fn collect_grads<T: Scalar>(
    store: &ParamStore<T>,
    bag: &TensorBag<T>,
    accum: &mut BTreeMap<String, Vec<T>>,
) {
    for p in store.entries() {
        let Some(grad) = bag.get(&p.name).and_then(|t| t.grad()) else {
            continue;
        };
        match accum.get_mut(&p.name) {
            Some(acc) => {
                for (a, g) in acc.iter_mut().zip(&grad) {
                    *a = *a + *g;
                }
            }
            None => {
                accum.insert(p.name.clone(), grad);
            }
        }
    }
}

fn scale_grads<T: Scalar>(grads: &mut BTreeMap<String, Vec<T>>, factor: T) {
    for g in grads.values_mut() {
        for v in g.iter_mut() {
            *v = *v * factor;
        }
    }
}

/// One alternating D/G step over a batch. The discriminator updates first on
/// detached generator output; the generator objective then sees the updated
/// discriminator.
pub fn run_step<T: Scalar>(
    state: &mut TrainState<T>,
    batch: &[&PairTensors<T>],
    height: usize,
    width: usize,
    cfg: &TrainConfig,
    step_seed: u64,
    lr: f64,
) -> Result<StepLosses> {
    let inv_batch = 1.0 / batch.len() as f64;
    state.adam_g.lr = lr;
    state.adam_d.lr = lr;

    // Phase 1: generator forward per image.
    let mut passes = Vec::with_capacity(batch.len());
    for pair in batch {
        passes.push(begin_generator_pass(
            &state.generator,
            &state.gen_store,
            &pair.he,
            height,
            width,
        )?);
    }

    // Phase 2: discriminator step on real targets vs detached fakes.
    let mut adv_d_total = 0.0;
    {
        let tape_d = Tape::new();
        let disc_bag = state.disc_store.register_all(&tape_d, true)?;
        let mut loss_acc: Option<DiffTensor<T>> = None;
        for (pair, pass) in batch.iter().zip(&passes) {
            let y_real = tape_d.constant(pair.ihc.clone(), vec![3, height, width])?;
            let y_fake = tape_d.constant(pass.y_fake.values(), vec![3, height, width])?;
            let d_real = state.discriminator.forward(&disc_bag, &y_real)?;
            let d_fake = state.discriminator.forward(&disc_bag, &y_fake)?;
            let loss = adversarial_loss(&d_real, &d_fake, AdvSide::Discriminator)?;
            adv_d_total += loss.value_scalar().as_f64();
            loss_acc = Some(match loss_acc {
                Some(acc) => acc.add(&loss)?,
                None => loss,
            });
        }
        let loss = loss_acc
            .expect("non-empty batch")
            .scale(T::from_f64(inv_batch))?;
        tape_d.backward(&loss)?;
        let mut grads = BTreeMap::new();
        collect_grads(&state.disc_store, &disc_bag, &mut grads);
        state.adam_d.step(&mut state.disc_store, &grads);
    }

    // Phase 3: generator objective against the updated discriminator.
    let mut sums = StepLosses {
        adv_d: adv_d_total * inv_batch,
        adv_g: 0.0,
        patchnce: 0.0,
        struc: 0.0,
        cm: 0.0,
        total: 0.0,
    };
    let mut grads: BTreeMap<String, Vec<T>> = BTreeMap::new();
    for (i, (pair, pass)) in batch.iter().zip(&passes).enumerate() {
        let image_seed = derive_seed(step_seed, i as u64);
        let taps_real = state
            .generator
            .encode_infer(&state.gen_store, &pair.ihc, height, width)?;
        let (parts, total) = finish_generator_pass(
            pass,
            &state.generator,
            &state.discriminator,
            &state.disc_store,
            &taps_real,
            cfg,
            image_seed,
        )?;
        sums.adv_g += parts.adv.value_scalar().as_f64();
        sums.patchnce += parts.patchnce.value_scalar().as_f64();
        sums.struc += parts
            .struc
            .as_ref()
            .map_or(0.0, |s| s.value_scalar().as_f64());
        sums.cm += parts.cm.as_ref().map_or(0.0, |s| s.value_scalar().as_f64());
        sums.total += total.value_scalar().as_f64();
        pass.tape.backward(&total)?;
        collect_grads(&state.gen_store, &pass.gen_bag, &mut grads);
    }
    scale_grads(&mut grads, T::from_f64(inv_batch));
    state.adam_g.step(&mut state.gen_store, &grads);

    sums.adv_g *= inv_batch;
    sums.patchnce *= inv_batch;
    sums.struc *= inv_batch;
    sums.cm *= inv_batch;
    sums.total *= inv_batch;
    Ok(sums)
}

/// Artifacts of a finished run.
pub struct TrainRun<T: Scalar> {
    pub state: TrainState<T>,
    pub rows: Vec<LossRow>,
    pub out_dir: Option<PathBuf>,
}

fn write_sample_grid<T: Scalar>(
    state: &TrainState<T>,
    dataset: &Dataset<T>,
    path: &Path,
) -> Result<()> {
    let (h, w) = (dataset.height, dataset.width);
    let rows = dataset.pairs.len().min(2);
    let mut grid = RgbImage::filled(3 * w, rows * h, [0, 0, 0]);
    for (r, pair) in dataset.pairs.iter().take(rows).enumerate() {
        let fake = state
            .generator
            .infer_translate(&state.gen_store, &pair.he, h, w)?;
        let panels = [
            RgbImage::from_unit_tensor(&pair.he, h, w),
            RgbImage::from_unit_tensor(&fake, h, w),
            RgbImage::from_unit_tensor(&pair.ihc, h, w),
        ];
        for (p, panel) in panels.iter().enumerate() {
            for y in 0..h {
                for x in 0..w {
                    grid.set(p * w + x, r * h + y, panel.get(x, y));
                }
            }
        }
    }
    grid.save_png(path)
}

/// Full training loop. When `out_dir` is given, writes `loss_log.csv`,
/// periodic checkpoints (with optimizer state, so any logged step can be
/// replayed), sample grids, and `final.tagw`. Aborts with a diagnostic
/// checkpoint if any loss goes non-finite.
pub fn train<T: Scalar>(
    dataset: &Dataset<T>,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainRun<T>> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(CoreError::Degenerate("cannot train on an empty dataset".into()));
    }
    let mut state = TrainState::init(cfg)?;
    let mut rows = Vec::new();
    let mut csv = String::from(LOSS_CSV_HEADER);
    csv.push('\n');

    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;
    }

    let n = dataset.len();
    let steps_per_epoch = n.div_ceil(cfg.batch_size);
    for epoch in 0..cfg.epochs {
        let lr = lr_at_epoch(cfg, epoch);
        if let Some(dir) = out_dir {
            if epoch % cfg.ckpt_every == 0 {
                checkpoint::write_checkpoint(
                    &dir.join(format!("ckpt_epoch_{epoch:03}.tagw")),
                    &state.gen_store,
                    &state.disc_store,
                    &state.adam_g,
                    &state.adam_d,
                    epoch,
                )?;
            }
        }
        let mut order: Vec<usize> = (0..n).collect();
        Rng::stream(cfg.seed, 0x4F_5244 ^ epoch as u64).shuffle(&mut order);
        for step in 0..steps_per_epoch {
            let lo = step * cfg.batch_size;
            let hi = (lo + cfg.batch_size).min(n);
            let batch: Vec<&PairTensors<T>> =
                order[lo..hi].iter().map(|&i| &dataset.pairs[i]).collect();
            let step_seed = derive_seed(cfg.seed, ((epoch as u64) << 24) | step as u64);
            let losses = run_step(
                &mut state,
                &batch,
                dataset.height,
                dataset.width,
                cfg,
                step_seed,
                lr,
            )?;
            let finite = [
                losses.adv_d,
                losses.adv_g,
                losses.patchnce,
                losses.struc,
                losses.cm,
                losses.total,
            ]
            .iter()
            .all(|v| v.is_finite());
            if !finite {
                if let Some(dir) = out_dir {
                    let _ = checkpoint::write_checkpoint(
                        &dir.join(format!("diagnostic_epoch_{epoch:03}_step_{step:03}.tagw")),
                        &state.gen_store,
                        &state.disc_store,
                        &state.adam_g,
                        &state.adam_d,
                        epoch,
                    );
                    let _ = fs::write(dir.join("loss_log.csv"), &csv);
                }
                return Err(CoreError::NonFinite {
                    component: "loss",
                    epoch,
                    step,
                });
            }
            let row = LossRow {
                epoch,
                step,
                adv_d: losses.adv_d,
                adv_g: losses.adv_g,
                patchnce: losses.patchnce,
                struc: losses.struc,
                cm: losses.cm,
                total: losses.total,
                lr,
            };
            let _ = writeln!(csv, "{}", row.to_csv_line());
            rows.push(row);
        }
        if let Some(dir) = out_dir {
            if epoch % cfg.sample_every == 0 || epoch + 1 == cfg.epochs {
                write_sample_grid(&state, dataset, &dir.join(format!("sample_epoch_{epoch:03}.png")))?;
            }
        }
    }

    if let Some(dir) = out_dir {
        checkpoint::write_checkpoint(
            &dir.join("final.tagw"),
            &state.gen_store,
            &state.disc_store,
            &state.adam_g,
            &state.adam_d,
            cfg.epochs,
        )?;
        let csv_path = dir.join("loss_log.csv");
        fs::write(&csv_path, &csv).map_err(|e| CoreError::io(&csv_path, e))?;
    }

    Ok(TrainRun {
        state,
        rows,
        out_dir: out_dir.map(Path::to_path_buf),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lr_schedule_shape() {
        let cfg = TrainConfig {
            epochs: 30,
            learning_rate: 2e-4,
            ..Default::default()
        };
        // constant through the decay start, exactly lr there, exactly 0 at
        // the final epoch, non-increasing throughout
        assert_eq!(lr_at_epoch(&cfg, 0), 2e-4);
        assert_eq!(lr_at_epoch(&cfg, 15), 2e-4);
        assert_eq!(lr_at_epoch(&cfg, 29), 0.0);
        let mut prev = f64::INFINITY;
        for e in 0..30 {
            let lr = lr_at_epoch(&cfg, e);
            assert!(lr <= prev);
            prev = lr;
        }
    }

    #[test]
    fn adversarial_closed_forms() {
        let tape: Tape<f64> = Tape::new();
        // D(x) = 0.5 everywhere ⟺ zero logits: loss = 2 log 2
        let zeros = tape.constant(vec![0.0; 4], vec![1, 2, 2]).unwrap();
        let loss = adversarial_loss(&zeros, &zeros, AdvSide::Discriminator).unwrap();
        assert!((loss.value_scalar() - 2.0 * 2f64.ln()).abs() < 1e-12);

        // near-perfect discriminator: loss → 0
        let high = tape.constant(vec![30.0; 4], vec![1, 2, 2]).unwrap();
        let low = tape.constant(vec![-30.0; 4], vec![1, 2, 2]).unwrap();
        let loss = adversarial_loss(&high, &low, AdvSide::Discriminator).unwrap();
        assert!(loss.value_scalar() < 1e-12);
    }

    #[test]
    fn generator_loss_monotone_in_fake_score() {
        let tape: Tape<f64> = Tape::new();
        let mut prev = f64::INFINITY;
        // D(G(x)) rising from 0.1 to 0.9 ⟺ logits rising
        for p in [0.1f64, 0.3, 0.5, 0.7, 0.9] {
            let logit = (p / (1.0 - p)).ln();
            let t = tape.constant(vec![logit; 4], vec![1, 2, 2]).unwrap();
            let loss = adversarial_loss(&t, &t, AdvSide::Generator)
                .unwrap()
                .value_scalar();
            assert!(loss < prev, "{loss} !< {prev}");
            prev = loss;
        }
    }

    #[test]
    fn total_loss_arithmetic() {
        let tape: Tape<f64> = Tape::new();
        let one = || tape.constant(vec![1.0], vec![]).unwrap();
        let parts = LossParts {
            adv: one(),
            patchnce: one(),
            struc: Some(one()),
            cm: Some(one()),
        };
        let cfg = TrainConfig::default(); // λ1 = 0.1, λ2 = 1
        let total = total_loss(&parts, &cfg).unwrap();
        assert!((total.value_scalar() - 3.1).abs() < 1e-12);

        let off = TrainConfig {
            use_tacm: false,
            use_tcpm: false,
            ..TrainConfig::default()
        };
        let total = total_loss(&parts, &off).unwrap();
        assert!((total.value_scalar() - 2.0).abs() < 1e-12);

        // λ1 = λ2 = 0 reproduces the baseline objective
        let zeroed = TrainConfig {
            lambda1: 0.0,
            lambda2: 0.0,
            ..TrainConfig::default()
        };
        let total = total_loss(&parts, &zeroed).unwrap();
        assert!((total.value_scalar() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn sample_patch_features_contract() {
        let tape: Tape<f64> = Tape::new();
        let tap = tape
            .constant((0..2 * 4 * 4).map(|i| i as f64).collect(), vec![2, 4, 4])
            .unwrap();
        // full sample is a permutation of all locations
        let (_, idx) = sample_patch_features(&tap, 16, 9).unwrap();
        let mut sorted = idx.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..16).collect::<Vec<_>>());

        // same seed, same indices
        let (_, idx2) = sample_patch_features(&tap, 16, 9).unwrap();
        assert_eq!(idx, idx2);

        // gathered rows equal direct indexing
        let (rows, idx) = sample_patch_features(&tap, 5, 123).unwrap();
        let v = tap.values();
        for (r, &pos) in idx.iter().enumerate() {
            for c in 0..2 {
                assert_eq!(rows.values()[r * 2 + c], v[c * 16 + pos]);
            }
        }

        assert!(sample_patch_features(&tap, 17, 1).is_err());
    }
}
