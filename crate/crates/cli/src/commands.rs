use std::path::Path;

use gaf_core::data::{make_dataset, LabeledDataset};
use gaf_core::metrics::{self, EvalReport};
use gaf_core::rng;
use gaf_core::trainer::{log_row, LOG_HEADER};
use gaf_core::transport::{self, SampleSettings};
use gaf_core::{Checkpoint, DenseArray, GafModel, Trainer};
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::output::{class_color, mix, points_csv, rows_f64, scatter_ppm, Input, OutDir};
use crate::CliError;

/// Latent counters, one per consumer, so commands never share noise.
const LATENT_SAMPLE: u64 = 0;
const LATENT_TRANSPORT: u64 = 1 << 32;

fn runtime(e: gaf_core::Error) -> CliError {
    CliError::Runtime(e.to_string())
}

pub struct Context<'a> {
    pub config: ExperimentConfig,
    pub checkpoint: Option<&'a Path>,
    pub out: OutDir,
}

impl Context<'_> {
    fn dataset(&self) -> Result<LabeledDataset, CliError> {
        make_dataset(&self.config.data).map_err(runtime)
    }

    fn heldout(&self, data: &LabeledDataset) -> Result<LabeledDataset, CliError> {
        data.heldout(self.config.seeds().heldout).map_err(runtime)
    }

    fn load_checkpoint(&self) -> Result<Option<(Checkpoint, Input)>, CliError> {
        let Some(path) = self.checkpoint else { return Ok(None) };
        let ck = Checkpoint::load(path).map_err(runtime)?;
        Ok(Some((ck, Input::file("checkpoint", path)?)))
    }

    /// The checkpointed model, or a fresh initialization from the config.
    fn model(&self) -> Result<(GafModel<f32>, Vec<Input>), CliError> {
        match self.load_checkpoint()? {
            Some((ck, input)) => {
                if ck.model.num_classes != self.config.data.classes || ck.model.data_dim != self.config.data.dim {
                    return Err(CliError::Config("checkpoint model does not match the data section".into()));
                }
                let m = GafModel::from_parts(ck.model, ck.params).map_err(runtime)?;
                Ok((m, vec![input]))
            }
            None => Ok((GafModel::new(self.config.model.clone()).map_err(runtime)?, Vec::new())),
        }
    }

    fn settings(&self) -> SampleSettings {
        self.config.sample.settings()
    }

    fn latents(&self, counter: u64, rows: usize) -> Result<DenseArray<f32>, CliError> {
        let d = self.config.data.dim;
        DenseArray::matrix(rows, d, rng::latents(self.config.seeds().eval, counter, rows, d)).map_err(runtime)
    }
}

pub fn train(mut ctx: Context) -> Result<(), CliError> {
    let data = ctx.dataset()?;
    let cfg = ctx.config.clone();
    let (mut trainer, inputs) = match ctx.load_checkpoint()? {
        Some((mut ck, input)) => {
            let mut a = ck.train.clone();
            let b = &cfg.train;
            a.iterations = b.iterations;
            a.checkpoint_interval = b.checkpoint_interval;
            a.log_interval = b.log_interval;
            if &a != b || ck.model != cfg.model {
                return Err(CliError::Config(
                    "checkpoint was trained with a different model or train config".into(),
                ));
            }
            ck.train = a;
            (Trainer::from_checkpoint(ck).map_err(runtime)?, vec![input])
        }
        None => (
            Trainer::new(GafModel::new(cfg.model.clone()).map_err(runtime)?, cfg.train.clone()).map_err(runtime)?,
            Vec::new(),
        ),
    };
    ctx.out.write("dataset.gafd", &data.to_bytes().map_err(runtime)?)?;

    let mut log = String::from(LOG_HEADER);
    log.push('\n');
    let (interval, every) = (cfg.train.log_interval, cfg.train.checkpoint_interval);
    let until = cfg.train.iterations;
    let mut snapshots = Vec::new();
    trainer
        .run_until(&data, until, |t, l| {
            let it = t.iteration();
            if (interval > 0 && it % interval == 0) || it == until {
                log.push_str(&log_row(it, l));
                log.push('\n');
            }
            if every > 0 && it % every == 0 && it != until {
                snapshots.push((it, t.checkpoint().to_bytes()?));
            }
            Ok(())
        })
        .map_err(runtime)?;
    for (it, bytes) in snapshots {
        ctx.out.write(&format!("checkpoint_{it:08}.gaf"), &bytes)?;
    }
    ctx.out.write("loss.csv", log.as_bytes())?;
    ctx.out.write("checkpoint.gaf", &trainer.checkpoint().to_bytes().map_err(runtime)?)?;
    ctx.out.finish("train", &cfg, inputs)
}

pub fn sample(mut ctx: Context) -> Result<(), CliError> {
    let data = ctx.dataset()?;
    let (model, inputs) = ctx.model()?;
    let s = ctx.settings();
    let count = ctx.config.sample.count;
    let mut scatter = Vec::new();
    for c in 0..ctx.config.data.classes {
        let z = ctx.latents(LATENT_SAMPLE + c as u64, count)?;
        let x = data.denormalize(&transport::generate(&model, c, &z, &s).map_err(runtime)?).map_err(runtime)?;
        let header = header_with("class", x.row_len());
        let csv = points_csv(&header, rows_f64(&x).map(|r| (c.to_string(), r)));
        ctx.out.write(&format!("samples_class{c}.csv"), csv.as_bytes())?;
        scatter.extend(rows_f64(&x).map(|r| ([r[0], *r.get(1).unwrap_or(&0.0)], class_color(c))));
    }
    ctx.out.write("samples.ppm", &scatter_ppm(&scatter, 256))?;
    let cfg = ctx.config.clone();
    ctx.out.finish("sample", &cfg, inputs)
}

fn header_with(first: &str, d: usize) -> String {
    let mut h = first.to_owned();
    for e in 0..d {
        h.push_str(&format!(",x_{e}"));
    }
    h
}

fn xy(r: &[f64]) -> [f64; 2] {
    [r[0], *r.get(1).unwrap_or(&0.0)]
}

pub fn interp(mut ctx: Context) -> Result<(), CliError> {
    let data = ctx.dataset()?;
    let (model, inputs) = ctx.model()?;
    let tr = ctx.config.transport.clone();
    let [i, j] = tr.pair;
    let alphas = transport::uniform_alphas(tr.alpha_steps).map_err(|e| CliError::Config(e.to_string()))?;
    let z = ctx.latents(LATENT_TRANSPORT, tr.latents)?;
    let frames = transport::interpolate_pair(&model, i, j, &alphas, &z, &ctx.settings()).map_err(runtime)?;
    let mut rows = Vec::new();
    let mut scatter = Vec::new();
    for (&a, f) in alphas.iter().zip(&frames) {
        let x = data.denormalize(f).map_err(runtime)?;
        for (l, r) in rows_f64(&x).enumerate() {
            scatter.push((xy(&r), mix(class_color(i), class_color(j), a)));
            rows.push((format!("{a},{l}"), r));
        }
    }
    let header = header_with("alpha,latent", data.dim());
    ctx.out.write("interp.csv", points_csv(&header, rows).as_bytes())?;
    ctx.out.write("interp.ppm", &scatter_ppm(&scatter, 256))?;
    let cfg = ctx.config.clone();
    ctx.out.finish("interp", &cfg, inputs)
}

#[derive(Serialize)]
struct ChainedReport {
    steps: usize,
    mean_closure: f64,
    max_closure: f64,
}

#[derive(Serialize)]
struct CycleReport {
    cycle: Vec<usize>,
    latents: usize,
    alpha_steps: usize,
    closure_distance: f64,
    mean_closure: f64,
    chained: Option<ChainedReport>,
}

pub fn cycle(mut ctx: Context) -> Result<(), CliError> {
    let data = ctx.dataset()?;
    let (model, inputs) = ctx.model()?;
    let tr = ctx.config.transport.clone();
    let s = ctx.settings();
    let z = ctx.latents(LATENT_TRANSPORT, tr.latents)?;
    let result = transport::cyclic_transport(&model, &tr.cycle, &z, tr.alpha_steps, &s).map_err(runtime)?;
    let mut rows = Vec::new();
    for f in &result.frames {
        let x = data.denormalize(&f.state).map_err(runtime)?;
        for (l, r) in rows_f64(&x).enumerate() {
            rows.push((format!("{},{},{},{},{l}", f.leg, f.from, f.to, f.alpha), r));
        }
    }
    let header = header_with("leg,from,to,alpha,latent", data.dim());
    ctx.out.write("cycle.csv", points_csv(&header, rows).as_bytes())?;
    let chained = if tr.chained {
        let (_, d) = transport::chained_cycle(&model, &tr.cycle, &z, &s).map_err(runtime)?;
        Some(ChainedReport {
            steps: s.steps,
            mean_closure: d.iter().sum::<f64>() / d.len() as f64,
            max_closure: d.iter().copied().fold(0.0, f64::max),
        })
    } else {
        None
    };
    let report = CycleReport {
        cycle: tr.cycle.clone(),
        latents: tr.latents,
        alpha_steps: tr.alpha_steps,
        closure_distance: result.max_closure(),
        mean_closure: result.closure.iter().sum::<f64>() / result.closure.len() as f64,
        chained,
    };
    ctx.out.write_json("cycle_report.json", &report)?;
    let cfg = ctx.config.clone();
    ctx.out.finish("cycle", &cfg, inputs)
}

pub fn bary(mut ctx: Context) -> Result<(), CliError> {
    let data = ctx.dataset()?;
    let (model, inputs) = ctx.model()?;
    let tr = ctx.config.transport.clone();
    let [i, j, k] = tr.bary_classes;
    let z = ctx.latents(LATENT_TRANSPORT, tr.latents)?;
    let cells =
        transport::barycentric_grid(&model, (i, j, k), tr.resolution, &z, &ctx.settings()).map_err(runtime)?;
    let mut rows = Vec::new();
    let mut scatter = Vec::new();
    for c in &cells {
        let x = data.denormalize(&c.state).map_err(runtime)?;
        let color = {
            let (ci, cj, ck) = (class_color(i), class_color(j), class_color(k));
            let f = |n: usize| (c.alpha * ci[n] as f64 + c.beta * cj[n] as f64 + c.gamma * ck[n] as f64).round() as u8;
            [f(0), f(1), f(2)]
        };
        for (l, r) in rows_f64(&x).enumerate() {
            scatter.push((xy(&r), color));
            rows.push((format!("{},{},{},{},{},{l}", c.row, c.col, c.alpha, c.beta, c.gamma), r));
        }
    }
    let header = header_with("row,col,alpha,beta,gamma,latent", data.dim());
    ctx.out.write("bary.csv", points_csv(&header, rows).as_bytes())?;
    ctx.out.write("bary.ppm", &scatter_ppm(&scatter, 256))?;
    let cfg = ctx.config.clone();
    ctx.out.finish("bary", &cfg, inputs)
}

pub fn eval(mut ctx: Context) -> Result<(), CliError> {
    let data = ctx.dataset()?;
    let held = ctx.heldout(&data)?;
    let (model, inputs) = ctx.model()?;
    let report = metrics::evaluate(&model, &held, &ctx.settings(), &ctx.config.eval_settings()).map_err(runtime)?;
    ctx.out.write_json("eval.json", &report)?;
    let csv = format!("{}\n{}\n", EvalReport::csv_header(data.num_classes()), report.csv_row());
    ctx.out.write("eval.csv", csv.as_bytes())?;
    let cfg = ctx.config.clone();
    ctx.out.finish("eval", &cfg, inputs)
}

pub fn steps_sweep(mut ctx: Context) -> Result<(), CliError> {
    let data = ctx.dataset()?;
    let held = ctx.heldout(&data)?;
    let (model, inputs) = ctx.model()?;
    let ev = ctx.config.eval_settings();
    let n = data.num_classes();
    let mut csv = String::from("steps");
    for c in 0..n {
        csv.push_str(&format!(",energy_{c}"));
    }
    csv.push_str(",energy_mean\n");
    for &steps in &ctx.config.eval.sweep_steps {
        let s = SampleSettings {
            steps,
            ..ctx.settings()
        };
        let mut row = vec![steps.to_string()];
        let mut sum = 0.0;
        for c in 0..n {
            let gen = metrics::class_samples(&model, c, ev.samples, ev.seed, &s).map_err(runtime)?;
            let ed = metrics::energy_distance(&gen, &held.class_points(c).map_err(runtime)?).map_err(runtime)?;
            sum += ed;
            row.push(ed.to_string());
        }
        row.push((sum / n as f64).to_string());
        csv.push_str(&row.join(","));
        csv.push('\n');
    }
    ctx.out.write("steps_sweep.csv", csv.as_bytes())?;
    let cfg = ctx.config.clone();
    ctx.out.finish("steps-sweep", &cfg, inputs)
}
