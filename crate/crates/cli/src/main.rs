//! `deproj`: synthesize data, train, run baselines and evaluate.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use deproj_core::baselines::LinearGaussianModel;
use deproj_core::checkpoint::Container;
use deproj_core::config::Config;
use deproj_core::data::{synth_moving_digits, ClipDataset, PairSet};
use deproj_core::eval::{best_of_k, emit_csv, emit_montage, EvalCurve, KnnSampler, Method, Sampler};
use deproj_core::model::{Model, ModelConfig, Variant};
use deproj_core::pipeline::{load_glyphs, prepare_splits, synth_config, Splits};
use deproj_core::project;
use deproj_core::rng::{self, Purpose};
use deproj_core::tensor::Tensor;
use deproj_core::trainer::{history_csv, train_with, tune_beta, Checkpoint, TrainConfig, TuneConfig};

#[derive(Parser)]
#[command(name = "deproj", version, about = "Recover signals collapsed by a known linear projection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render the bouncing-glyph dataset
    Synth(Common),
    /// Train the model selected by model.variant
    Train(Common),
    /// Search beta so the validation KL lands in the configured band
    TuneBeta(Common),
    /// Draw candidates for the first test examples
    Sample(Common),
    /// Best-of-k curve and montage for one method
    Eval(Common),
    /// Fit the linear-Gaussian baseline and evaluate it
    BaselineLmmse(Common),
    /// Evaluate the nearest-neighbour baseline
    BaselineKnn(Common),
    /// Render test projections next to their signals
    Montage(Common),
}

#[derive(Args, Clone)]
struct Common {
    /// key=value configuration file
    #[arg(long)]
    config: PathBuf,
    /// Output directory; every artifact is written here
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the seed the command consumes (data, train or eval)
    #[arg(long)]
    seed: Option<u64>,
    /// Model or baseline file to read instead of the default under --out
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// cvae, det, knn or lmmse
    #[arg(long)]
    method: Option<String>,
    /// Comma-separated increasing candidate counts, e.g. 1,2,5,10
    #[arg(long)]
    k_list: Option<String>,
    /// Worker threads; 1 is the deterministic reference mode
    #[arg(long)]
    threads: Option<usize>,
    /// Dataset file (default <out>/dataset.dpjk)
    #[arg(long)]
    data: Option<PathBuf>,
    /// Extra config override, repeatable
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

enum Failure {
    Usage(String),
    Run(deproj_core::Error),
}

impl From<deproj_core::Error> for Failure {
    fn from(e: deproj_core::Error) -> Self {
        Failure::Run(e)
    }
}

type Outcome<T> = std::result::Result<T, Failure>;

fn require_file(path: &Path, what: &str) -> Outcome<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::Usage(format!("{what} {} does not exist", path.display())))
    }
}

struct Ctx {
    cfg: Config,
    base: PathBuf,
    args: Common,
}

impl Ctx {
    fn new(args: Common, seed_key: &str) -> Outcome<Self> {
        require_file(&args.config, "config file")?;
        let text = fs::read_to_string(&args.config)
            .map_err(|e| deproj_core::Error::io(format!("reading {}", args.config.display()), e))?;
        let mut cfg = Config::parse(&text)?;
        for o in &args.overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Failure::Usage(format!("--set expects KEY=VALUE, got `{o}`")))?;
            cfg.set(k.trim(), v)?;
        }
        if let Some(seed) = args.seed {
            cfg.set(seed_key, &seed.to_string())?;
        }
        if let Some(t) = args.threads {
            cfg.set("train.threads", &t.to_string())?;
        }
        if let Some(m) = &args.method {
            Method::parse(m).map_err(|e| Failure::Usage(e.to_string()))?;
            cfg.set("eval.method", m)?;
        }
        if let Some(k) = &args.k_list {
            cfg.set("eval.k_list", k).map_err(|e| Failure::Usage(e.to_string()))?;
        }
        fs::create_dir_all(&args.out)
            .map_err(|e| deproj_core::Error::io(format!("creating {}", args.out.display()), e))?;
        let base = args
            .config
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default();
        Ok(Ctx { cfg, base, args })
    }

    fn out(&self, name: &str) -> PathBuf {
        self.args.out.join(name)
    }

    fn threads(&self) -> usize {
        self.cfg.int("train.threads").max(1) as usize
    }

    fn splits(&self) -> Outcome<Splits> {
        let path = self.args.data.clone().unwrap_or_else(|| self.out("dataset.dpjk"));
        require_file(&path, "dataset")?;
        let ds = ClipDataset::load(&path)?;
        Ok(prepare_splits(&ds, &self.cfg)?)
    }

    fn test_set(&self, splits: &Splits) -> Outcome<PairSet> {
        let n = self.cfg.count("eval.test_examples", 0)?;
        Ok(if n == 0 { splits.test.clone() } else { splits.test.truncated(n) })
    }

    fn ks(&self) -> Outcome<Vec<usize>> {
        Ok(self.cfg.counts("eval.k_list", 1)?)
    }

    fn method(&self) -> Outcome<Method> {
        Ok(Method::parse(self.cfg.string("eval.method"))?)
    }

    fn write(&self, name: &str, bytes: impl AsRef<[u8]>) -> Outcome<PathBuf> {
        let path = self.out(name);
        fs::write(&path, bytes).map_err(|e| deproj_core::Error::io(format!("writing {}", path.display()), e))?;
        Ok(path)
    }
}

fn synth(args: Common) -> Outcome<()> {
    let ctx = Ctx::new(args, "data.seed")?;
    let glyphs = load_glyphs(&ctx.cfg, &ctx.base)?;
    let ds = synth_moving_digits(&glyphs, &synth_config(&ctx.cfg)?)?;
    let path = ctx.out("dataset.dpjk");
    ds.save(&path)?;
    println!(
        "synth: {} clips of {:?} (seed {}) -> {}",
        ds.len(),
        ds.clip_shape(),
        ds.seed(),
        path.display()
    );
    Ok(())
}

fn model_path(ctx: &Ctx, variant: Variant) -> PathBuf {
    ctx.args
        .checkpoint
        .clone()
        .unwrap_or_else(|| ctx.out(&format!("model_{}.dpjk", variant.name())))
}

fn train_cmd(args: Common) -> Outcome<()> {
    let ctx = Ctx::new(args, "train.seed")?;
    let splits = ctx.splits()?;
    let mc = ModelConfig::from_config(&ctx.cfg)?;
    let tc = TrainConfig::from_config(&ctx.cfg)?;
    let seed = ctx.cfg.seed("train.seed");
    let every = ctx.cfg.count("train.checkpoint_every", 0)?;
    let name = mc.variant.name();
    let extra = vec![
        ("config_hash".to_string(), ctx.cfg.hash()),
        ("data_seed".to_string(), ctx.cfg.seed("data.seed").to_string()),
    ];
    println!(
        "train: {name}, {} train / {} val pairs, {} parameters",
        splits.train.len(),
        splits.val.len(),
        deproj_core::model::ModelParams::<f32>::zeros(&mc)?.numel()
    );
    let mut ckpt = train_with(&mc, &tc, &splits.train, Some(&splits.val), seed, &mut |c| {
        let h = c.history.last().expect("epoch recorded");
        let v = h.val.expect("validation set given");
        println!(
            "epoch {:>3} step {:>6}  train total {:.6} recon {:.6} kl {:.4}  val total {:.6} recon {:.6} kl {:.4}",
            h.epoch, c.adam.t, h.train.total, h.train.recon, h.train.kl, v.total, v.recon, v.kl
        );
        if every > 0 && (h.epoch + 1) % every == 0 {
            let mut c = c.clone();
            c.extra = extra.clone();
            c.save(&ctx.out(&format!("model_{name}_epoch{:03}.dpjk", h.epoch + 1)))?;
        }
        Ok(())
    })?;
    ckpt.extra = extra;
    let path = ctx.out(&format!("model_{name}.dpjk"));
    ckpt.save(&path)?;
    ctx.write(&format!("history_{name}.csv"), history_csv(&ckpt.history))?;
    println!("train: wrote {}", path.display());
    Ok(())
}

fn tune_cmd(args: Common) -> Outcome<()> {
    let ctx = Ctx::new(args, "train.seed")?;
    let splits = ctx.splits()?;
    let mc = ModelConfig::from_config(&ctx.cfg)?;
    if mc.variant != Variant::Cvae {
        return Err(Failure::Usage("tune-beta needs model.variant=cvae".into()));
    }
    let tc = TrainConfig::from_config(&ctx.cfg)?;
    let tune = TuneConfig::from_config(&ctx.cfg)?;
    let s = tune_beta(&mc, &tc, &splits.train, &splits.val, &tune, ctx.cfg.seed("train.seed"))?;
    let mut csv = String::from("probe,beta,val_kl\n");
    for (i, p) in s.trace.iter().enumerate() {
        println!("probe {:>2} beta {:<12} val kl {:.4}", i + 1, p.beta, p.val_kl);
        csv.push_str(&format!("{},{:?},{:.6}\n", i + 1, p.beta, p.val_kl));
    }
    ctx.write("beta_search.csv", csv)?;
    if let Some(w) = &s.warning {
        eprintln!("warning: {w}");
    }
    println!("beta={:?} val_kl={:.4} in_band={}", s.beta, s.val_kl, s.in_band);
    Ok(())
}

enum Source {
    Model(Model),
    Knn,
    Lmmse(LinearGaussianModel),
}

impl Source {
    fn load(ctx: &Ctx, method: Method) -> Outcome<Self> {
        Ok(match method {
            Method::Cvae | Method::Det => {
                let variant = if method == Method::Cvae { Variant::Cvae } else { Variant::Det };
                let path = model_path(ctx, variant);
                require_file(&path, "checkpoint")?;
                let model = Checkpoint::load(&path)?.model;
                if model.config().variant != variant {
                    return Err(Failure::Usage(format!(
                        "{} holds a {} model, --method is {}",
                        path.display(),
                        model.config().variant.name(),
                        method
                    )));
                }
                Source::Model(model)
            }
            Method::Knn => Source::Knn,
            Method::Lmmse => {
                let path = ctx.args.checkpoint.clone().unwrap_or_else(|| ctx.out("lmmse.dpjk"));
                require_file(&path, "LMMSE model")?;
                Source::Lmmse(LinearGaussianModel::from_container(&Container::load(&path)?)?)
            }
        })
    }

    fn sampler<'a>(&'a self, train: &'a PairSet) -> Box<dyn Sampler + 'a> {
        match self {
            Source::Model(m) => Box::new(m),
            Source::Knn => Box::new(KnnSampler(train)),
            Source::Lmmse(l) => Box::new(l),
        }
    }
}

/// Candidates of the first `eval.montage_examples` test pairs, drawn from
/// the same per-example streams the curve uses.
fn montage_rows(ctx: &Ctx, sampler: &dyn Sampler, test: &PairSet, per_row: usize) -> Outcome<Vec<Vec<Tensor<f32>>>> {
    let n = ctx.cfg.count("eval.montage_examples", 0)?.min(test.len());
    let seed = ctx.cfg.seed("eval.seed");
    let mut rows = Vec::with_capacity(n);
    for (i, p) in test.pairs()[..n].iter().enumerate() {
        let mut rng = rng::stream(seed, Purpose::Eval, i as u64);
        let mut row = vec![p.x.clone(), p.y.clone()];
        row.extend(sampler.candidates(&p.x, per_row, &mut rng)?);
        rows.push(row);
    }
    Ok(rows)
}

fn run_eval(ctx: &Ctx, method: Method, splits: &Splits, source: &Source) -> Outcome<EvalCurve> {
    let test = ctx.test_set(splits)?;
    let ks = ctx.ks()?;
    let sampler = source.sampler(&splits.train);
    let curve = best_of_k(
        method.name(),
        sampler.as_ref(),
        &test,
        &ks,
        ctx.cfg.seed("eval.seed"),
        ctx.threads(),
    )?;
    for r in &curve.rows {
        println!(
            "{method} k={:<4} best signal psnr {:.3} dB  mean reprojection psnr {:.3} dB",
            r.k, r.best_signal_psnr, r.mean_reprojection_psnr
        );
    }
    let csv = ctx.out(&format!("eval_{method}.csv"));
    emit_csv(&curve, &csv)?;
    let per_row = *ks.last().expect("non-empty k list");
    let rows = montage_rows(ctx, sampler.as_ref(), &test, per_row.min(4))?;
    if !rows.is_empty() {
        emit_montage(&rows, &ctx.out(&format!("montage_{method}.pgm")))?;
    }
    println!("eval: wrote {}", csv.display());
    Ok(curve)
}

fn eval_cmd(args: Common) -> Outcome<()> {
    let ctx = Ctx::new(args, "eval.seed")?;
    let method = ctx.method()?;
    let splits = ctx.splits()?;
    let source = Source::load(&ctx, method)?;
    run_eval(&ctx, method, &splits, &source)?;
    Ok(())
}

fn lmmse_cmd(args: Common) -> Outcome<()> {
    let ctx = Ctx::new(args, "eval.seed")?;
    let splits = ctx.splits()?;
    let model = LinearGaussianModel::fit(splits.train.pairs(), ctx.cfg.float("eval.ridge"))?;
    let path = ctx.out("lmmse.dpjk");
    model.to_container().save(&path)?;
    println!(
        "lmmse: fit on {} pairs, posterior factor rank {} -> {}",
        splits.train.len(),
        model.factor().ncols(),
        path.display()
    );
    run_eval(&ctx, Method::Lmmse, &splits, &Source::Lmmse(model))?;
    Ok(())
}

fn knn_cmd(args: Common) -> Outcome<()> {
    let ctx = Ctx::new(args, "eval.seed")?;
    let splits = ctx.splits()?;
    run_eval(&ctx, Method::Knn, &splits, &Source::Knn)?;
    Ok(())
}

fn sample_cmd(args: Common) -> Outcome<()> {
    let ctx = Ctx::new(args, "eval.seed")?;
    let method = ctx.method()?;
    let splits = ctx.splits()?;
    let source = Source::load(&ctx, method)?;
    let test = ctx.test_set(&splits)?;
    let k = *ctx.ks()?.last().expect("non-empty k list");
    let rows = montage_rows(&ctx, source.sampler(&splits.train).as_ref(), &test, k)?;
    if rows.is_empty() {
        return Err(Failure::Usage("eval.montage_examples is 0, nothing to sample".into()));
    }
    let mut c = Container::default();
    c.push_meta("kind", "samples");
    c.push_meta("method", method.name());
    for (i, row) in rows.iter().enumerate() {
        c.push_tensor(format!("x/{i}"), row[0].clone());
        c.push_tensor(format!("y/{i}"), row[1].clone());
        for (j, s) in row[2..].iter().enumerate() {
            c.push_tensor(format!("sample/{i}/{j}"), s.clone());
        }
    }
    c.save(&ctx.out(&format!("samples_{method}.dpjk")))?;
    emit_montage(&rows, &ctx.out(&format!("samples_{method}.pgm")))?;
    println!("sample: {} examples x {k} candidates ({method})", rows.len());
    Ok(())
}

fn montage_cmd(args: Common) -> Outcome<()> {
    let ctx = Ctx::new(args, "eval.seed")?;
    let splits = ctx.splits()?;
    let n = ctx.cfg.count("eval.montage_examples", 1)?.min(splits.test.len());
    let rows: Vec<Vec<Tensor<f32>>> = splits.test.pairs()[..n]
        .iter()
        .map(|p| {
            let reproj = project(&p.y, splits.test.spec())?;
            Ok(vec![p.x.clone(), reproj, p.y.clone()])
        })
        .collect::<deproj_core::Result<_>>()?;
    let path = ctx.out("montage_data.pgm");
    emit_montage(&rows, &path)?;
    println!("montage: {n} test examples -> {}", path.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train_cmd(a),
        Command::TuneBeta(a) => tune_cmd(a),
        Command::Sample(a) => sample_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::BaselineLmmse(a) => lmmse_cmd(a),
        Command::BaselineKnn(a) => knn_cmd(a),
        Command::Montage(a) => montage_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: usage: {msg}");
            eprintln!("{}", <Cli as clap::CommandFactory>::command().render_usage());
            ExitCode::from(2)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {}: {e}", e.code());
            ExitCode::from(1)
        }
    }
}
