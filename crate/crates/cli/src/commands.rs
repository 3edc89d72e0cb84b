use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde_json::json;

use tokenunify::objectives::{
    alternating_distribution, mean_loss_next_per_token, pretrain, schedule_weights, AlternatingConfig,
    CurriculumConfig, LossSpec, NextAllAggregation, PretrainConfig, Schedule, StepSize, Temperature,
};
use tokenunify::predictors::{
    grad_check, write_checkpoint, LinearSoftmaxConfig, LinearSoftmaxPredictor, PredictorModel, Resampler,
    ResamplerConfig, TabularPredictor,
};
use tokenunify::report::ExperimentReport;
use tokenunify::rng::{seeded, stream};
use tokenunify::seg_metrics::{evaluate, LabelVolume, LogBase};
use tokenunify::theory_lab::{
    altopt_convergence_experiment, ar_convergence_experiment, complementarity_check,
    error_accumulation_experiment, lad_scaling_experiment, AltOptConfig, ArConfig, ArProcess, ErrorAccumConfig,
    JointDistribution, LadLassoConfig, LadOptions, TestObjective, VarianceMode,
};
use tokenunify::token_core::{
    load_corpus, make_path, sample_mask, tokenize_volume, write_corpus, CorpusRecord, MarkovChain, PathKind,
    TokenSequence, Volume,
};

use crate::config::{key, ConfigError, Key, RunConfig};
use crate::output::Outcome;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Core(#[from] tokenunify::Error),
    #[error("{0}")]
    Usage(String),
}

type Run = fn(&RunConfig) -> Result<Outcome, CliError>;

pub struct Command {
    pub name: &'static str,
    pub about: &'static str,
    pub keys: &'static [Key],
    pub run: Run,
}

/// Keys accepted by every subcommand.
pub const COMMON_KEYS: &[Key] = &[key("seed", "0"), key("out_dir", "")];

pub const COMMANDS: &[Command] = &[
    Command {
        name: "pretrain",
        about: "Train a tabular or linear-softmax model with the curriculum or alternating schedule",
        keys: &[
            key("corpus", ""),
            key("transition", "0.8,0.15,0.05;0.1,0.7,0.2;0.3,0.3,0.4"),
            key("synthetic_sequences", "256"),
            key("synthetic_len", "24"),
            key("heldout_sequences", "512"),
            key("model", "tabular"),
            key("dim", "8"),
            key("init_scale", "0.01"),
            key("iterations", "2000"),
            key("schedule", "curriculum"),
            key("t1_frac", "0.3"),
            key("t2_frac", "0.7"),
            key("tau_start", "1"),
            key("tau_end", "1"),
            key("transition_period", "1000"),
            key("p_next_all", "0.1"),
            key("warmup_iters", ""),
            key("lr", "1"),
            key("step_size", "constant"),
            key("mask_ratio", "0.5"),
            key("path", "raster"),
            key("batch_size", "4"),
            key("next_all", "exact"),
            key("next_all_fraction", "0.25"),
        ],
        run: run_pretrain,
    },
    Command {
        name: "schedule",
        about: "Print curriculum or alternating loss weights",
        keys: &[
            key("t", ""),
            key("mode", "curriculum"),
            key("total_iters", "1000"),
            key("t1_frac", "0.3"),
            key("t2_frac", "0.7"),
            key("tau_start", "1"),
            key("tau_end", "1"),
            key("transition_period", "1000"),
            key("p_next_all", "0.1"),
        ],
        run: run_schedule,
    },
    Command {
        name: "err-accum",
        about: "Monte-Carlo check of the error-accumulation bounds",
        keys: &[
            key("k_grid", "4,16,64,256,1024"),
            key("sigma2", "1"),
            key("variance_mode", "both"),
            key("trials", "10000"),
        ],
        run: run_err_accum,
    },
    Command {
        name: "ar-conv",
        about: "Held-out one-step MSE of least-squares AR(p) fits to a geometric AR process",
        keys: &[
            key("ar_c", "0.5"),
            key("ar_r", "0.5"),
            key("noise_var", "1"),
            key("p_grid", "1,2,4,8,16"),
            key("series_len", "100000"),
        ],
        run: run_ar_conv,
    },
    Command {
        name: "lad-scaling",
        about: "Estimation error of the smoothed LAD-Lasso as the sample size grows",
        keys: &[
            key("n_grid", "200,400,800,1600,3200"),
            key("p", "256"),
            key("s", "4"),
            key("sigma", "1"),
            key("c0", "1.5"),
            key("signal", "5"),
            key("trials", "20"),
            key("epsilon", "1e-6"),
            key("tol", "1e-9"),
            key("max_iter", "20000"),
        ],
        run: run_lad_scaling,
    },
    Command {
        name: "altopt-conv",
        about: "Convergence rate of SGD with alternating gradient modes",
        keys: &[
            key("t_grid", "100,1000,10000"),
            key("eta0", ""),
            key("dims", "10"),
            key("curvature_min", "0.5"),
            key("curvature_max", "2"),
            key("amplitude", "0.3"),
            key("frequency", "2"),
            key("sigma_mode2", "1"),
            key("transition_period", "1000"),
            key("p_next_all", "0.1"),
            key("init_scale", "3"),
            key("trials", "50"),
        ],
        run: run_altopt,
    },
    Command {
        name: "mi-check",
        about: "Exact information-complementarity check on random enumerable generators",
        keys: &[
            key("generators", "100"),
            key("max_len", "6"),
            key("max_vocab", "3"),
            key("spread", "1.5"),
            key("rho", "0.5"),
            key("weights", "1,1,1"),
        ],
        run: run_mi_check,
    },
    Command {
        name: "metrics",
        about: "VOI and adjusted Rand error between two label volumes",
        keys: &[key("pred", ""), key("gt", ""), key("log_base", "natural")],
        run: run_metrics,
    },
    Command {
        name: "resampler-check",
        about: "Structural checks of the latent-query resampler",
        keys: &[
            key("num_latents", "4"),
            key("dim", "8"),
            key("num_layers", "2"),
            key("ffw_hidden", "16"),
            key("frames", "2"),
            key("tokens_per_frame", "5"),
            key("weight_scale", "20"),
        ],
        run: run_resampler_check,
    },
    Command {
        name: "grad-check",
        about: "Compare analytic and finite-difference gradients on random instances",
        keys: &[
            key("model", "both"),
            key("instances", "20"),
            key("max_len", "8"),
            key("max_vocab", "4"),
            key("dim", "3"),
            key("h", "1e-5"),
            key("mask_ratio", "0.4"),
            key("init_scale", "0.5"),
        ],
        run: run_grad_check,
    },
    Command {
        name: "tokenize",
        about: "Quantize EMVOL1 volumes into a JSON-lines token corpus",
        keys: &[key("input", ""), key("patch", "4,4,4"), key("vocab", "16"), key("output", "corpus.jsonl")],
        run: run_tokenize,
    },
];

pub fn find(name: &str) -> Option<&'static Command> {
    COMMANDS.iter().find(|c| c.name == name)
}

fn seed(cfg: &RunConfig) -> Result<u64, CliError> {
    Ok(cfg.u64("seed")?)
}

/// Report JSON, raw CSV and pass/fail bookkeeping shared by the experiments.
fn report_outcome(name: &str, report: &ExperimentReport) -> Outcome {
    let mut out = Outcome::default();
    out.file(format!("{name}.report.json"), report.to_json() + "\n");
    if !report.raw.columns.is_empty() {
        out.file(format!("{name}.raw.csv"), report.raw.to_csv());
    }
    out.failures = report.failures().into_iter().map(String::from).collect();
    out.note("pass", json!(report.pass));
    if !report.slopes.is_empty() {
        out.note("slopes", json!(report.slopes));
    }
    out
}

fn path_kind(cfg: &RunConfig) -> Result<PathKind, CliError> {
    Ok(match cfg.choice("path", &["raster", "permutation"])? {
        "raster" => PathKind::Raster,
        _ => PathKind::SeededPermutation,
    })
}

fn temperature(cfg: &RunConfig) -> Result<Temperature, CliError> {
    let (start, end) = (cfg.f64("tau_start")?, cfg.f64("tau_end")?);
    Ok(if start == end {
        Temperature::Constant(start)
    } else {
        Temperature::Linear { start, end }
    })
}

fn alternating(cfg: &RunConfig) -> Result<AlternatingConfig, CliError> {
    let c = AlternatingConfig {
        transition_period: cfg.f64("transition_period")?,
        p_next_all: cfg.f64("p_next_all")?,
    };
    c.validate()?;
    Ok(c)
}

fn curriculum(cfg: &RunConfig, total_iters: usize) -> Result<CurriculumConfig, CliError> {
    let mut c = CurriculumConfig::new(total_iters);
    c.t1_frac = cfg.f64("t1_frac")?;
    c.t2_frac = cfg.f64("t2_frac")?;
    c.temperature = temperature(cfg)?;
    c.validate()?;
    Ok(c)
}

fn parse_transition(raw: &str) -> Result<Vec<Vec<f64>>, CliError> {
    raw.split(';')
        .map(|row| {
            row.split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|_| CliError::Usage(format!("bad transition row `{row}`")))
        })
        .collect()
}

fn run_pretrain(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let seed = seed(cfg)?;
    let iterations = cfg.usize("iterations")?;
    let schedule = match cfg.choice("schedule", &["curriculum", "alternating"])? {
        "curriculum" => Schedule::Curriculum(curriculum(cfg, iterations)?),
        _ => Schedule::Alternating {
            config: alternating(cfg)?,
            // empty means a tenth of the run
            warmup_iters: if cfg.str("warmup_iters").is_empty() {
                iterations / 10
            } else {
                cfg.usize("warmup_iters")?
            },
        },
    };
    let lr = cfg.f64("lr")?;
    let train_cfg = PretrainConfig {
        iterations,
        schedule,
        step_size: match cfg.choice("step_size", &["constant", "inv_sqrt"])? {
            "constant" => StepSize::Constant(lr),
            _ => StepSize::InvSqrt(lr),
        },
        mask_ratio: cfg.f64("mask_ratio")?,
        path_kind: path_kind(cfg)?,
        batch_size: cfg.usize("batch_size")?,
        next_all: match cfg.choice("next_all", &["exact", "subsample"])? {
            "exact" => NextAllAggregation::Exact,
            _ => NextAllAggregation::Subsample {
                fraction: cfg.f64("next_all_fraction")?,
            },
        },
        seed,
    };
    train_cfg.validate()?;

    let mut rng = seeded(seed);
    let (train, heldout, entropy_rate) = if cfg.str("corpus").is_empty() {
        let chain = MarkovChain::stationary_start(parse_transition(cfg.str("transition"))?)?;
        let len = cfg.usize("synthetic_len")?;
        let train: Vec<TokenSequence> =
            (0..cfg.usize("synthetic_sequences")?).map(|_| chain.sample(len, &mut rng)).collect();
        let heldout: Vec<TokenSequence> =
            (0..cfg.usize("heldout_sequences")?).map(|_| chain.sample(len, &mut rng)).collect();
        (train, heldout, Some(chain.entropy_rate()))
    } else {
        let records = load_corpus(cfg.str("corpus"))?;
        let train: Vec<TokenSequence> = records.into_iter().map(|r| r.sequence).collect();
        (train.clone(), train, None)
    };
    let vocab = train
        .iter()
        .map(|s| s.vocab_size() as usize)
        .max()
        .ok_or_else(|| CliError::Usage("training corpus is empty".into()))?;

    let init_scale = cfg.f64("init_scale")?;
    let mut model: Box<dyn PredictorModel> = match cfg.choice("model", &["tabular", "linear"])? {
        "tabular" => Box::new(TabularPredictor::random(vocab, init_scale, &mut rng)),
        _ => Box::new(LinearSoftmaxPredictor::random(
            LinearSoftmaxConfig {
                vocab_size: vocab,
                dim: cfg.usize("dim")?,
            },
            init_scale,
            &mut rng,
        )),
    };
    let log = pretrain(&train, model.as_mut(), &train_cfg)?;
    let loss = mean_loss_next_per_token(model.as_ref(), &heldout, train_cfg.path_kind, seed)?;

    let mut report = ExperimentReport::new("pretrain", &train_cfg);
    report.grid = vec![iterations as f64];
    report.measured.insert("loss_next_per_token".into(), vec![loss]);
    if let Some(last) = log.records.last() {
        report.measured.insert("final_loss_combined".into(), vec![last.loss_combined]);
    }
    if let Some(h) = entropy_rate {
        report.bounds.insert("entropy_rate".into(), vec![h]);
        report
            .pass
            .insert("loss_next_within_5pct_of_entropy_rate".into(), (loss - h).abs() <= 0.05 * h);
    }
    let mut out = report_outcome("pretrain", &report);
    out.file("pretrain.train_log.csv", log.to_csv());
    let mut ckpt = Vec::new();
    write_checkpoint(model.as_ref(), &mut ckpt)?;
    out.file("pretrain.model.ckpt", ckpt);
    out.note("loss_next_per_token", loss);
    if let Some(h) = entropy_rate {
        out.note("entropy_rate", h);
    }
    Ok(out)
}

fn run_schedule(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let total = cfg.usize("total_iters")?;
    let curriculum_mode = cfg.choice("mode", &["curriculum", "alternating"])? == "curriculum";
    let weights_at: Box<dyn Fn(usize) -> Result<[f64; 3], CliError>> = if curriculum_mode {
        let c = curriculum(cfg, total)?;
        Box::new(move |t| Ok(schedule_weights(t, &c)?.weights))
    } else {
        let a = alternating(cfg)?;
        Box::new(move |t| Ok(alternating_distribution(t, &a)?))
    };
    let mut csv = String::from("t,alpha,beta,gamma\n");
    for t in 0..total {
        let [a, b, g] = weights_at(t)?;
        csv += &format!("{t},{a:.17e},{b:.17e},{g:.17e}\n");
    }
    let mut out = Outcome::default();
    out.file("schedule.csv", csv);
    if !cfg.str("t").is_empty() {
        let t = cfg.usize("t")?;
        let w = weights_at(t)?;
        out.note("t", t);
        out.note("weights", json!(w));
        out.file("schedule.json", serde_json::to_string_pretty(&json!({ "t": t, "weights": w })).unwrap() + "\n");
    }
    Ok(out)
}

fn run_err_accum(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let c = ErrorAccumConfig {
        k_grid: cfg.list("k_grid", "a list of integers")?,
        sigma2: cfg.f64("sigma2")?,
        variance_mode: match cfg.choice("variance_mode", &["constant", "decaying", "both"])? {
            "constant" => VarianceMode::Constant,
            "decaying" => VarianceMode::Decaying,
            _ => VarianceMode::Both,
        },
        trials: cfg.usize("trials")?,
        seed: seed(cfg)?,
    };
    Ok(report_outcome("err-accum", &error_accumulation_experiment(&c)?))
}

fn run_ar_conv(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let c = ArConfig {
        process: ArProcess::geometric(cfg.f64("ar_c")?, cfg.f64("ar_r")?, cfg.f64("noise_var")?)?,
        p_grid: cfg.list("p_grid", "a list of integers")?,
        series_len: cfg.usize("series_len")?,
        seed: seed(cfg)?,
    };
    Ok(report_outcome("ar-conv", &ar_convergence_experiment(&c)?))
}

fn run_lad_scaling(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let c = LadLassoConfig {
        n_grid: cfg.list("n_grid", "a list of integers")?,
        p: cfg.usize("p")?,
        s: cfg.usize("s")?,
        sigma: cfg.f64("sigma")?,
        c0: cfg.f64("c0")?,
        signal: cfg.f64("signal")?,
        trials: cfg.usize("trials")?,
        seed: seed(cfg)?,
        options: LadOptions {
            epsilon: cfg.f64("epsilon")?,
            tol: cfg.f64("tol")?,
            max_iter: cfg.usize("max_iter")?,
            ..LadOptions::default()
        },
    };
    Ok(report_outcome("lad-scaling", &lad_scaling_experiment(&c)?))
}

fn run_altopt(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let dims = cfg.usize("dims")?;
    if dims == 0 {
        return Err(CliError::Usage("dims must be positive".into()));
    }
    let (lo, hi) = (cfg.f64("curvature_min")?, cfg.f64("curvature_max")?);
    let objective = TestObjective {
        curvatures: (0..dims)
            .map(|k| if dims == 1 { lo } else { lo + (hi - lo) * k as f64 / (dims - 1) as f64 })
            .collect(),
        amplitude: cfg.f64("amplitude")?,
        frequency: cfg.f64("frequency")?,
    };
    let eta0 = if cfg.str("eta0").is_empty() {
        1.0 / objective.smoothness()
    } else {
        cfg.f64("eta0")?
    };
    let c = AltOptConfig {
        t_grid: cfg.list("t_grid", "a list of integers")?,
        eta0,
        objective,
        sigma_mode2: cfg.f64("sigma_mode2")?,
        modes: alternating(cfg)?,
        init_scale: cfg.f64("init_scale")?,
        trials: cfg.usize("trials")?,
        seed: seed(cfg)?,
    };
    Ok(report_outcome("altopt-conv", &altopt_convergence_experiment(&c)?))
}

fn run_mi_check(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let (max_len, max_vocab) = (cfg.usize("max_len")?, cfg.usize("max_vocab")?);
    if max_len < 2 || max_vocab < 2 {
        return Err(CliError::Usage("max_len and max_vocab must be at least 2".into()));
    }
    let weights: Vec<f64> = cfg.list("weights", "a list of three reals")?;
    let weights: [f64; 3] = weights
        .try_into()
        .map_err(|_| CliError::Usage("weights needs exactly three values".into()))?;
    let spread = cfg.f64("spread")?;
    let mut rng = seeded(seed(cfg)?);
    let joints = (0..cfg.usize("generators")?)
        .map(|_| {
            let k = rng.random_range(2..=max_len);
            let v = rng.random_range(2..=max_vocab);
            JointDistribution::random(k, v, spread, &mut rng)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(report_outcome("mi-check", &complementarity_check(&joints, cfg.f64("rho")?, weights)?))
}

fn run_metrics(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let (pred, gt) = (cfg.str("pred"), cfg.str("gt"));
    if pred.is_empty() || gt.is_empty() {
        return Err(CliError::Usage("metrics needs --pred and --gt".into()));
    }
    let base = match cfg.choice("log_base", &["natural", "two"])? {
        "natural" => LogBase::Natural,
        _ => LogBase::Two,
    };
    let m = evaluate(&LabelVolume::load(pred)?, &LabelVolume::load(gt)?, base)?;
    let mut out = Outcome::default();
    let value = serde_json::to_value(m).expect("metrics serialize");
    out.file("metrics.json", serde_json::to_string_pretty(&value).unwrap() + "\n");
    if let serde_json::Value::Object(map) = value {
        out.summary.extend(map);
    }
    Ok(out)
}

fn gaussian(rng: &mut impl Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

fn run_resampler_check(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let seed = seed(cfg)?;
    let rc = ResamplerConfig {
        num_latents: cfg.usize("num_latents")?,
        dim: cfg.usize("dim")?,
        num_layers: cfg.usize("num_layers")?,
        ffw_hidden: cfg.usize("ffw_hidden")?,
        seed,
    };
    let (frames, per_frame) = (cfg.usize("frames")?, cfg.usize("tokens_per_frame")?);
    let scale = cfg.f64("weight_scale")?;
    let mut rng = seeded(seed);
    let d = rc.dim;
    let features: Vec<DMatrix<f64>> = (0..frames).map(|_| gaussian(&mut rng, per_frame, d)).collect();
    let time = gaussian(&mut rng, frames, d);
    let latents = gaussian(&mut rng, rc.num_latents, d);

    let identity = Resampler::new(ResamplerConfig { num_layers: 0, ..rc.clone() })?;
    let identity_ok = identity.forward(&features, &time, &latents)? == latents;

    let mut model = Resampler::new(rc.clone())?;
    for layer in &mut model.layers {
        for w in [&mut layer.wq, &mut layer.wk, &mut layer.wv, &mut layer.wo, &mut layer.w1, &mut layer.w2] {
            *w *= scale;
        }
    }
    let base = model.forward(&features, &time, &latents)?;

    // shuffle feature rows within every frame and frames together with their time rows
    let mut frame_order: Vec<usize> = (0..frames).collect();
    frame_order.shuffle(&mut rng);
    let shuffled: Vec<DMatrix<f64>> = frame_order
        .iter()
        .map(|&f| {
            let mut rows: Vec<usize> = (0..per_frame).collect();
            rows.shuffle(&mut rng);
            DMatrix::from_fn(per_frame, d, |r, c| features[f][(rows[r], c)])
        })
        .collect();
    let shuffled_time = DMatrix::from_fn(frames, d, |r, c| time[(frame_order[r], c)]);
    let kv_err = (model.forward(&shuffled, &shuffled_time, &latents)? - &base).abs().max();

    let mut latent_order: Vec<usize> = (0..rc.num_latents).collect();
    latent_order.shuffle(&mut rng);
    let permuted = DMatrix::from_fn(rc.num_latents, d, |r, c| latents[(latent_order[r], c)]);
    let out_p = model.forward(&features, &time, &permuted)?;
    let eq_err = (0..rc.num_latents)
        .flat_map(|r| (0..d).map(move |c| (r, c)))
        .map(|(r, c)| (out_p[(r, c)] - base[(latent_order[r], c)]).abs())
        .fold(0.0, f64::max);

    let mut report = ExperimentReport::new("resampler-check", &rc);
    report.measured.insert("kv_permutation_error".into(), vec![kv_err]);
    report.measured.insert("latent_equivariance_error".into(), vec![eq_err]);
    report.pass.insert("zero_layer_identity".into(), identity_ok);
    report.pass.insert("kv_permutation_within_1e-9".into(), kv_err <= 1e-9);
    report.pass.insert("latent_equivariance_within_1e-9".into(), eq_err <= 1e-9);
    Ok(report_outcome("resampler-check", &report))
}

fn run_grad_check(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let seed = seed(cfg)?;
    let which = cfg.choice("model", &["both", "linear", "tabular"])?;
    let (max_len, max_vocab) = (cfg.usize("max_len")?, cfg.usize("max_vocab")?);
    if max_len < 2 || max_vocab < 2 {
        return Err(CliError::Usage("max_len and max_vocab must be at least 2".into()));
    }
    let (h, ratio, init_scale, dim) = (cfg.f64("h")?, cfg.f64("mask_ratio")?, cfg.f64("init_scale")?, cfg.usize("dim")?);
    let instances = cfg.usize("instances")?;

    let mut report = ExperimentReport::new("grad-check", &cfg.to_json());
    report.raw = tokenunify::report::RawTable::new(&["instance", "model", "loss", "max_rel_error"]);
    let mut worst = 0.0f64;
    let losses = ["random", "next", "next_all"];
    for i in 0..instances {
        let mut rng = stream(seed, i as u64);
        let v = rng.random_range(2..=max_vocab as u32);
        let k = rng.random_range(2..=max_len);
        let seq = TokenSequence::new((0..k).map(|_| rng.random_range(0..v)).collect(), v)?;
        let mask = sample_mask(k, ratio, &mut rng)?;
        let path = make_path(k, PathKind::SeededPermutation, &mut rng)?;
        let mut models: Vec<(f64, Box<dyn PredictorModel>)> = Vec::new();
        if which != "tabular" {
            let lc = LinearSoftmaxConfig { vocab_size: v as usize, dim };
            models.push((0.0, Box::new(LinearSoftmaxPredictor::random(lc, init_scale, &mut rng))));
        }
        if which != "linear" {
            models.push((1.0, Box::new(TabularPredictor::random(v as usize, init_scale, &mut rng))));
        }
        for (model_id, model) in &mut models {
            for (loss_id, spec) in
                [LossSpec::Random(&mask), LossSpec::Next(&path), LossSpec::NextAll(&path)].into_iter().enumerate()
            {
                let r = grad_check(model.as_mut(), spec, &seq, h)?;
                worst = worst.max(r.max_rel_error);
                report.raw.push(vec![i as f64, *model_id, loss_id as f64, r.max_rel_error]);
            }
        }
    }
    report.measured.insert("max_rel_error".into(), vec![worst]);
    report.pass.insert("max_rel_error_below_1e-4".into(), worst < 1e-4);
    let mut out = report_outcome("grad-check", &report);
    out.note("losses", json!(losses));
    out.note("max_rel_error", worst);
    Ok(out)
}

fn run_tokenize(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let inputs: Vec<String> = cfg.list("input", "a list of paths")?;
    if inputs.is_empty() {
        return Err(CliError::Usage("tokenize needs --input".into()));
    }
    let patch: Vec<usize> = cfg.list("patch", "one or three integers")?;
    let patch: [usize; 3] = match patch[..] {
        [p] => [p; 3],
        [a, b, c] => [a, b, c],
        _ => return Err(CliError::Usage("patch needs one or three sizes".into())),
    };
    let vocab: u32 = cfg.get("vocab", "a positive integer")?;
    let records = inputs
        .iter()
        .map(|path| {
            let sequence = tokenize_volume(&Volume::load(path)?, patch, vocab)?;
            Ok(CorpusRecord { id: path.clone(), sequence })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let mut bytes = Vec::new();
    write_corpus(&mut bytes, &records)?;
    let name = cfg.str("output");
    if name.is_empty() || name.contains(['/', '\\']) {
        return Err(CliError::Usage("output must be a plain file name inside out_dir".into()));
    }
    let mut out = Outcome::default();
    out.file(name, bytes);
    out.note("sequences", records.len());
    out.note("tokens_per_sequence", records[0].sequence.len());
    Ok(out)
}
