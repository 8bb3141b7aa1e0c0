use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::ops::Range;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{loss_on_tape, warmup_schedule, Adam, TrainConfig, TrainError};
use crate::data::{FoldSplit, WindowSample};
use crate::graph::GeneratedAdjacency;
use crate::model::{ModelError, forward_batch, forward_on_tape, GraphContext, ModelConfig, ModelParams};
use crate::numcore::{NumError, Tape, Tensor};

const EVAL_BATCH: usize = 64;

/// Stacked window samples.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    /// `[S, N, T, C]`
    pub x: Tensor,
    /// `[S, N, F, C]`
    pub y: Tensor,
    /// Channel index of the evaluation target.
    pub incidence: usize,
}

fn stack(parts: &[&Tensor]) -> Tensor {
    let mut shape = vec![parts.len()];
    shape.extend_from_slice(parts[0].shape());
    let data: Vec<f64> = parts.iter().flat_map(|t| t.data().iter().copied()).collect();
    Tensor::new(shape, data).expect("equal shapes")
}

fn gather(t: &Tensor, idx: &[usize]) -> Tensor {
    let per: usize = t.shape()[1..].iter().product();
    let mut shape = t.shape().to_vec();
    shape[0] = idx.len();
    let mut data = Vec::with_capacity(idx.len() * per);
    for &i in idx {
        data.extend_from_slice(&t.data()[i * per..(i + 1) * per]);
    }
    Tensor::new(shape, data).expect("gathered")
}

/// Keeps channel `c` of the last axis.
pub fn select_channel(t: &Tensor, c: usize) -> Tensor {
    let k = *t.shape().last().expect("rank >= 1");
    let mut shape = t.shape().to_vec();
    *shape.last_mut().expect("rank >= 1") = 1;
    let data = t.data().iter().skip(c).step_by(k).copied().collect();
    Tensor::new(shape, data).expect("sliced")
}

impl SampleSet {
    pub fn from_windows(samples: &[WindowSample], incidence: usize) -> Option<Self> {
        if samples.is_empty() {
            return None;
        }
        let xs: Vec<&Tensor> = samples.iter().map(|s| &s.x).collect();
        let ys: Vec<&Tensor> = samples.iter().map(|s| &s.y).collect();
        Some(Self {
            x: stack(&xs),
            y: stack(&ys),
            incidence,
        })
    }

    pub fn len(&self) -> usize {
        self.x.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn nodes(&self) -> usize {
        self.x.shape()[1]
    }

    pub fn inputs(&self, idx: &[usize]) -> Tensor {
        gather(&self.x, idx)
    }

    /// Targets matching a model's output width: every channel, or only the
    /// incidence channel for single-output models.
    pub fn targets(&self, idx: &[usize], d_out: usize) -> Tensor {
        let y = gather(&self.y, idx);
        if d_out == 1 && y.shape()[3] != 1 {
            select_channel(&y, self.incidence)
        } else {
            y
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_mae: Option<f64>,
    pub val_rmse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub steps: Vec<StepRecord>,
    pub best_step: Option<usize>,
    pub best_val_mae: Option<f64>,
}

impl TrainHistory {
    pub fn to_csv_string(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
        let mut s = String::from("step,lr,train_loss,val_mae,val_rmse\n");
        for r in &self.steps {
            s.push_str(&format!(
                "{},{:?},{:?},{},{}\n",
                r.step,
                r.lr,
                r.train_loss,
                opt(r.val_mae),
                opt(r.val_rmse)
            ));
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), TrainError> {
        let mut f = fs::File::create(path).map_err(|e| TrainError::io(path, e))?;
        f.write_all(self.to_csv_string().as_bytes())
            .map_err(|e| TrainError::io(path, e))
    }

    pub fn evaluations(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.steps
            .iter()
            .filter_map(|r| r.val_mae.map(|m| (r.step, m)))
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub history: TrainHistory,
}

/// Forecasts for samples `range`; `[S, N, F, D_o]`.
pub fn predict(
    cfg: &ModelConfig,
    params: &ModelParams,
    data: &SampleSet,
    range: Range<usize>,
    ctx: &GraphContext,
) -> Result<Tensor, TrainError> {
    Ok(predict_with_snapshots(cfg, params, data, range, ctx)?.0)
}

/// Forecasts plus, per sample, the generated adjacency of every block.
pub fn predict_with_snapshots(
    cfg: &ModelConfig,
    params: &ModelParams,
    data: &SampleSet,
    range: Range<usize>,
    ctx: &GraphContext,
) -> Result<(Tensor, Vec<Vec<GeneratedAdjacency>>), TrainError> {
    let idx: Vec<usize> = range.collect();
    let mut outs = Vec::new();
    let mut snaps: Vec<Vec<GeneratedAdjacency>> = Vec::new();
    for chunk in idx.chunks(EVAL_BATCH) {
        let (y, s) = forward_batch(cfg, params, &data.inputs(chunk), ctx)?;
        outs.push(y);
        for i in 0..chunk.len() {
            snaps.push(s.iter().map(|block| block[i].clone()).collect());
        }
    }
    let refs: Vec<&Tensor> = outs.iter().collect();
    let per: usize = refs[0].shape()[1..].iter().product();
    let mut shape = refs[0].shape().to_vec();
    shape[0] = idx.len();
    let values: Vec<f64> = refs.iter().flat_map(|t| t.data().iter().copied()).collect();
    debug_assert_eq!(values.len(), per * idx.len());
    Ok((Tensor::new(shape, values)?, snaps))
}

/// MAE and RMSE on the incidence channel of `range`.
pub fn validation_scores(
    cfg: &ModelConfig,
    params: &ModelParams,
    data: &SampleSet,
    range: Range<usize>,
    ctx: &GraphContext,
) -> Result<(f64, f64), TrainError> {
    let pred = predict(cfg, params, data, range.clone(), ctx)?;
    let idx: Vec<usize> = range.collect();
    let target = data.targets(&idx, cfg.d_out());
    let inc = if cfg.d_out() == 1 { 0 } else { data.incidence };
    let (p, t) = (select_channel(&pred, inc), select_channel(&target, inc));
    let u = p.len() as f64;
    let mut abs = 0.0;
    let mut sq = 0.0;
    for (a, b) in p.data().iter().zip(t.data()) {
        abs += (a - b).abs();
        sq += (a - b) * (a - b);
    }
    Ok((abs / u, (sq / u).sqrt()))
}

/// Contiguous chunks of the training range, in a seeded order per epoch.
struct BatchPlan {
    chunks: Vec<Vec<usize>>,
    order: Vec<usize>,
    cursor: usize,
    rng: ChaCha8Rng,
}

impl BatchPlan {
    fn new(range: Range<usize>, batch: usize, seed: u64) -> Self {
        let idx: Vec<usize> = range.collect();
        let chunks: Vec<Vec<usize>> = idx.chunks(batch).map(<[usize]>::to_vec).collect();
        let order = (0..chunks.len()).collect();
        let rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_ba7c);
        let mut plan = Self {
            chunks,
            order,
            cursor: 0,
            rng,
        };
        plan.order.shuffle(&mut plan.rng);
        plan
    }

    fn next(&mut self) -> &[usize] {
        if self.cursor == self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let c = self.order[self.cursor];
        self.cursor += 1;
        &self.chunks[c]
    }
}

/// Trains from a seeded initialization and returns the parameters with the
/// lowest validation MAE among the evaluated steps.
pub fn train(
    tc: &TrainConfig,
    mc: &ModelConfig,
    fold: &FoldSplit,
    data: &SampleSet,
    ctx: &GraphContext,
    seed: u64,
) -> Result<TrainOutcome, TrainError> {
    tc.validate()?;
    if fold.train.is_empty() || fold.val.is_empty() || fold.val.end > data.len() {
        return Err(TrainError::EmptySplit);
    }
    let mut params = ModelParams::init(mc, seed)?;
    let mut history = TrainHistory::default();
    if tc.max_steps == 0 {
        return Ok(TrainOutcome { params, history });
    }
    let mut best = params.clone();
    let mut opt = Adam::default();
    let mut plan = BatchPlan::new(fold.train.clone(), tc.batch_size, seed);
    for step in 1..=tc.max_steps {
        let lr = warmup_schedule(step, tc);
        let idx = plan.next().to_vec();
        let mut tape = Tape::new();
        let vars = params.bind(&mut tape, true);
        let x = tape.constant(data.inputs(&idx));
        let y = tape.constant(data.targets(&idx, mc.d_out()));
        let out = match forward_on_tape(&mut tape, mc, &vars, x, ctx) {
            Ok(trace) => trace.output,
            Err(ModelError::Num(NumError::NonFinite { .. })) => return Err(TrainError::Diverged { step }),
            Err(e) => return Err(e.into()),
        };
        let l = loss_on_tape(&mut tape, out, y, tc.loss_kind)?;
        let train_loss = tape.value(l).item().expect("scalar");
        if !train_loss.is_finite() {
            return Err(TrainError::Diverged { step });
        }
        let mut g = tape.backward(l)?;
        let grads: BTreeMap<String, Tensor> = vars
            .iter()
            .filter_map(|(name, &v)| g.take(v).map(|t| (name.clone(), t)))
            .collect();
        opt.update(&mut params, &grads, lr);
        if !params.is_finite() {
            return Err(TrainError::Diverged { step });
        }

        let mut rec = StepRecord {
            step,
            lr,
            train_loss,
            val_mae: None,
            val_rmse: None,
        };
        if step % tc.eval_every == 0 || step == tc.max_steps {
            let (mae, rmse) = validation_scores(mc, &params, data, fold.val.clone(), ctx)?;
            rec.val_mae = Some(mae);
            rec.val_rmse = Some(rmse);
            if history.best_val_mae.map_or(true, |b| mae < b) {
                history.best_val_mae = Some(mae);
                history.best_step = Some(step);
                best = params.clone();
            }
        }
        history.steps.push(rec);
        if let (Some(p), Some(b)) = (tc.patience, history.best_step) {
            if step - b >= p {
                break;
            }
        }
    }
    Ok(TrainOutcome {
        params: best,
        history,
    })
}
