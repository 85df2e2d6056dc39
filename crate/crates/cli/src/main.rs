use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use lightdepth_core::bench::{
    bench_complexity, count_flops, count_params, curves_to_csv, FLOP_TOLERANCE, PARAM_WINDOW, TARGET_FLOPS, TARGET_PARAMS,
};
use lightdepth_core::config::Ablation;
use lightdepth_core::depth::{disp_to_depth, Model};
use lightdepth_core::io::{checkpoint, netpbm, settings};
use lightdepth_core::nn::Ctx;
use lightdepth_core::tensor::bilinear_resize;
use lightdepth_core::training::{evaluate, train, Dataset, EvalReport};
use lightdepth_core::{verify, Error, Result};

#[derive(Parser)]
#[command(name = "lightdepth", version, about = "Self-supervised monocular depth: training, evaluation and accounting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ModelArgs {
    /// Flat key = value settings file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Model input size, WxH.
    #[arg(long, value_parser = parse_size)]
    input: Option<(usize, usize)>,
    /// Remove or weaken one encoder component.
    #[arg(long, value_parser = parse_ablation)]
    ablate: Option<Ablation>,
    /// Number of disparity scales (1 to 3).
    #[arg(long)]
    scales: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Train on synthetic scenes; writes trace.csv and model.ckpt under --out.
    Train {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value = "run")]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on held-out synthetic scenes.
    Eval {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Also write the report as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Predict depth for one P5/P6 image and write a 16-bit millimeter PGM.
    Infer {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        image: PathBuf,
        #[arg(long, default_value = "depth.pgm")]
        out: PathBuf,
    },
    /// Run the property suite; exits 1 if any check fails.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write results as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Time the spectral filter against dot-product attention.
    Bench {
        /// Token counts (powers of two, increasing).
        #[arg(long, value_delimiter = ',', default_value = "256,1024,4096,16384,65536")]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 16)]
        channels: usize,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Count parameters and FLOPs of the full-size model.
    Count {
        #[arg(long, value_parser = parse_size, default_value = "640x192")]
        input: (usize, usize),
        #[arg(long, value_parser = parse_ablation)]
        ablate: Option<Ablation>,
        #[arg(long)]
        scales: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_size(s: &str) -> std::result::Result<(usize, usize), String> {
    settings::parse_size(s).ok_or_else(|| format!("expected WxH, got '{s}'"))
}

fn parse_ablation(s: &str) -> std::result::Result<Ablation, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn load_settings(args: &ModelArgs) -> Result<settings::Settings> {
    let mut s = match &args.config {
        Some(path) => settings::load(path)?,
        None => settings::Settings::toy(),
    };
    if let Some(seed) = args.seed {
        s.train.seed = seed;
    }
    s.model.seed = s.train.seed;
    if let Some(size) = args.input {
        s.model.input_size = size;
        (s.train.scene.height, s.train.scene.width) = size;
    }
    if args.ablate.is_some() {
        s.model.ablation = args.ablate;
    }
    if let Some(scales) = args.scales {
        s.model.scales = scales;
    }
    Ok(s)
}

fn print_eval(label: &str, e: &EvalReport) {
    let m = &e.metrics;
    println!(
        "{label}: loss {:.6}  abs_rel {:.4}  sq_rel {:.4}  rmse {:.4}  rmse_log {:.4}  d1 {:.4}  d2 {:.4}  d3 {:.4}  spearman {:.4}",
        e.total, m.abs_rel, m.sq_rel, m.rmse, m.rmse_log, m.delta1, m.delta2, m.delta3, e.spearman
    );
}

fn write(path: &Path, contents: &str) -> Result<()> {
    Ok(std::fs::write(path, contents)?)
}

fn run_train(args: &ModelArgs, out: &Path) -> Result<()> {
    let mut s = load_settings(args)?;
    std::fs::create_dir_all(out)?;
    s.train.trace = Some(out.join("trace.csv"));
    s.train.checkpoint = Some(out.join("model.ckpt"));
    let model = Model::<f32>::new(&s.model)?;
    let data = Dataset::build(s.train.data_seed, s.train.train_scenes, s.train.eval_scenes, &s.train.scene)?;
    println!("training {} steps on {} triplets ({} held out)", s.train.steps, data.train.len(), data.eval.len());
    let outcome = train(&model, &data, &s.train)?;
    print_eval("initial", &outcome.initial);
    print_eval("final", &outcome.last);
    println!(
        "held-out objective {:.6} -> {:.6}; wrote {} and {}",
        outcome.initial_objective,
        outcome.final_objective,
        out.join("trace.csv").display(),
        out.join("model.ckpt").display()
    );
    Ok(())
}

fn run_eval(args: &ModelArgs, path: &Path, out: Option<&Path>) -> Result<()> {
    let s = load_settings(args)?;
    let model = Model::<f32>::new(&s.model)?;
    checkpoint::load(path, &model.store)?;
    let data = Dataset::build(s.train.data_seed, s.train.train_scenes, s.train.eval_scenes, &s.train.scene)?;
    let report = evaluate(&model, &data.eval, &s.train.loss, &s.train.eval)?;
    print_eval("held-out", &report);
    if let Some(out) = out {
        let m = report.metrics;
        let csv = format!(
            "loss,abs_rel,sq_rel,rmse,rmse_log,delta1,delta2,delta3,spearman\n{},{},{},{},{},{},{},{},{}\n",
            report.total, m.abs_rel, m.sq_rel, m.rmse, m.rmse_log, m.delta1, m.delta2, m.delta3, report.spearman
        );
        write(out, &csv)?;
    }
    Ok(())
}

fn run_infer(args: &ModelArgs, ckpt: Option<&Path>, image: &Path, out: &Path) -> Result<()> {
    let s = load_settings(args)?;
    let model = Model::<f32>::new(&s.model)?;
    if let Some(path) = ckpt {
        checkpoint::load(path, &model.store)?;
    }
    let img = netpbm::read_image::<f32>(image)?;
    let [_, c, h, w] = img.dims4("input image")?;
    let img = if c == 1 { lightdepth_core::tensor::concat(&[&img, &img, &img], 1)? } else { img };
    let (mh, mw) = s.model.input_size;
    let resized = if (h, w) == (mh, mw) { img } else { bilinear_resize(&img, mh, mw)? };
    let disparities = model.disparities(&resized, &Ctx::eval())?;
    let disp = if (h, w) == (mh, mw) { disparities[0].clone() } else { bilinear_resize(&disparities[0], h, w)? };
    let depth = disp_to_depth(&disp, s.train.loss.min_depth, s.train.loss.max_depth)?;
    netpbm::write_depth_pgm(out, &depth)?;
    let d = depth.to_vec();
    let (lo, hi) = d.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    println!("wrote {} ({w}x{h}, depth {lo:.3}..{hi:.3} m)", out.display());
    Ok(())
}

fn run_verify(seed: u64, out: Option<&Path>) -> Result<bool> {
    let results = verify::run_all(seed);
    for r in &results {
        println!("{r}");
    }
    if let Some(out) = out {
        let mut csv = String::from("check,passed,detail\n");
        for r in &results {
            csv.push_str(&format!("\"{}\",{},\"{}\"\n", r.name, r.passed, r.detail.replace('"', "'")));
        }
        write(out, &csv)?;
    }
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect();
    if failed.is_empty() {
        println!("all {} checks passed", results.len());
        Ok(true)
    } else {
        eprintln!("failed checks: {}", failed.join("; "));
        Ok(false)
    }
}

fn run_bench(sizes: &[usize], channels: usize, repeats: usize, out: Option<&Path>) -> Result<()> {
    let (spectral, attention) = bench_complexity(sizes, channels, repeats)?;
    println!("{:>8} {:>14} {:>14} {:>14} {:>14}", "tokens", "spectral s", "spectral ops", "attention s", "attention ops");
    for (a, b) in spectral.points.iter().zip(&attention.points) {
        println!("{:>8} {:>14.6} {:>14} {:>14.6} {:>14}", a.tokens, a.seconds, a.ops, b.seconds, b.ops);
    }
    for c in [&spectral, &attention] {
        println!("{}: log-log slope time {:.3}, ops {:.3}", c.name, c.time_slope(), c.op_slope());
    }
    if let Some(out) = out {
        write(out, &curves_to_csv(&[&spectral, &attention]))?;
    }
    Ok(())
}

fn run_count(input: (usize, usize), ablate: Option<Ablation>, scales: Option<usize>, out: Option<&Path>) -> Result<()> {
    let mut config = lightdepth_core::config::ModelConfig { input_size: input, ..Default::default() }.with_ablation(ablate);
    if let Some(scales) = scales {
        config.scales = scales;
    }
    let model = Model::<f32>::new(&config)?;
    let (h, w) = input;
    let report = count_flops(&model, h, w)?;
    let params = count_params(&model.store);
    println!("input {w}x{h}");
    println!(
        "parameters: {params} (depth {}, pose {}); reference {:.1}M, accepted window [{:.1}M, {:.1}M]",
        report.depth_params,
        report.pose_params,
        TARGET_PARAMS / 1e6,
        PARAM_WINDOW.0 / 1e6,
        PARAM_WINDOW.1 / 1e6
    );
    println!(
        "depth FLOPs: {:.3}G as 2*MAC + FFT (reference {:.1}G +/- {:.0}%), {:.3}G as 1*MAC + FFT",
        report.flops() as f64 / 1e9,
        TARGET_FLOPS / 1e9,
        FLOP_TOLERANCE * 100.0,
        report.flops_single_mac() as f64 / 1e9
    );
    println!("pose FLOPs per frame pair: {:.3}G (2*MAC)", report.pose_total().flops() as f64 / 1e9);
    if let Some(out) = out {
        write(out, &report.to_csv())?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Train { model, out } => run_train(model, out).map(|_| true),
        Command::Eval { model, checkpoint, out } => run_eval(model, checkpoint, out.as_deref()).map(|_| true),
        Command::Infer { model, checkpoint, image, out } => run_infer(model, checkpoint.as_deref(), image, out).map(|_| true),
        Command::Verify { seed, out } => run_verify(*seed, out.as_deref()),
        Command::Bench { sizes, channels, repeats, out } => run_bench(sizes, *channels, *repeats, out.as_deref()).map(|_| true),
        Command::Count { input, ablate, scales, out } => run_count(*input, *ablate, *scales, out.as_deref()).map(|_| true),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
