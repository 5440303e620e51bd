//! splitveil command line: train, relabel, retrain, partition, audit,
//! serve, and evaluate split models, plus the end-to-end pipeline.
//!
//! Every subcommand prints machine-readable `key = value` lines (comment
//! lines start with `#`). Exit code is 0 on success and nonzero when a
//! stage fails; `analyze-leakage --enforce` additionally exits 3 when the
//! audit refuses the client half.

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use splitveil::data::model_file::{read_model_file, write_model_file, ModelFile};
use splitveil::data::{default_mnist_dir, filter_binary, load_mnist_train, split, Dataset};
use splitveil::error::Error;
use splitveil::eval::{average_accuracy, average_accuracy_over, cs_probe, storage_cost};
use splitveil::labeling::{recover_output, SecureDataset, SignalMode};
use splitveil::leakage::{
    count_leakage, reconstruction_attack, AttackVerdict, KernelGeometry, LeakageMode,
};
use splitveil::nn::{Architecture, LayerSpec, Model, Sample, TrainConfig, Trainer};
use splitveil::pipeline::{parse_config, run_pipeline, PipelineConfig};
use splitveil::protocol::{client_infer, serve, ServeLimits, MAX_PAYLOAD};
use splitveil::secure::{partition, retrain, ClientHalf, PartitionManifest, ServerHalf};
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "splitveil",
    version,
    about = "Split-inference training, auditing, and serving"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the base (unprotected) model and write it to disk.
    TrainBase(TrainBaseArgs),
    /// Draw complement signals and write the flipped-label table as CSV.
    Relabel(RelabelArgs),
    /// Retrain with the complement signal, preserving base layers.
    RetrainSecure(RetrainSecureArgs),
    /// Split a secure model into client and server halves.
    Partition(PartitionArgs),
    /// Count equations vs unknowns, or attack a client half directly.
    AnalyzeLeakage(AnalyzeLeakageArgs),
    /// Price the published half's storage and per-inference traffic.
    ReportCosts(ReportCostsArgs),
    /// Host a server half behind a TCP endpoint.
    Serve(ServeArgs),
    /// Run one remote inference against a serving endpoint.
    Infer(InferArgs),
    /// Measure average accuracy of a model on the validation split.
    Eval(EvalArgs),
    /// Probe how much the client half's activations reveal the signal.
    ProbeCs(ProbeCsArgs),
    /// Run the whole study from a config file.
    Pipeline(PipelineArgs),
}

/// Where the data lives and how it is filtered and split.
#[derive(Args)]
struct DataOpts {
    /// Directory with the IDX training files ($MNIST_DIR or data/mnist).
    #[arg(long, default_value_os_t = default_mnist_dir())]
    data_dir: PathBuf,
    /// First kept digit (relabeled 0).
    #[arg(long, default_value_t = 0)]
    digit_a: u32,
    /// Second kept digit (relabeled 1).
    #[arg(long, default_value_t = 1)]
    digit_b: u32,
    /// Fraction of the filtered set used for training.
    #[arg(long, default_value_t = 0.8)]
    train_fraction: f64,
    #[arg(long, default_value_t = 7)]
    split_seed: u64,
}

impl DataOpts {
    fn load(&self) -> Result<(Dataset<f64>, Dataset<f64>)> {
        let all = load_mnist_train::<f64>(&self.data_dir)
            .with_context(|| format!("loading data from {}", self.data_dir.display()))?;
        let filtered = filter_binary(&all, self.digit_a, self.digit_b)?;
        Ok(split(filtered, self.train_fraction, self.split_seed)?)
    }
}

/// Optimizer and architecture knobs shared by the training subcommands.
#[derive(Args)]
struct TrainOpts {
    /// Hidden layer widths, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [128usize, 64, 32])]
    hidden: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    learning_rate: f64,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 42)]
    init_seed: u64,
    #[arg(long, default_value_t = 43)]
    shuffle_seed: u64,
}

impl TrainOpts {
    fn config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            momentum: self.momentum,
            frozen_prefix: 0,
            dropout: 0.5,
            shuffle_seed: self.shuffle_seed,
        }
    }
}

#[derive(Args)]
struct TrainBaseArgs {
    #[command(flatten)]
    data: DataOpts,
    #[command(flatten)]
    train: TrainOpts,
    /// Output model file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RelabelArgs {
    #[command(flatten)]
    data: DataOpts,
    #[arg(long, default_value_t = 99)]
    signal_seed: u64,
    /// Which side of the split to relabel.
    #[arg(long, value_enum, default_value_t = Side::Train)]
    side: Side,
    /// Output CSV (index,true_label,cs,new_label).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Side {
    Train,
    Validation,
}

#[derive(Args)]
struct RetrainSecureArgs {
    #[command(flatten)]
    data: DataOpts,
    #[command(flatten)]
    train: TrainOpts,
    /// Base layers to keep bitwise frozen (0 trains from scratch).
    #[arg(long)]
    preserve: usize,
    /// Base model file; required when --preserve is nonzero.
    #[arg(long)]
    base: Option<PathBuf>,
    #[arg(long, default_value_t = 99)]
    signal_seed: u64,
    /// Output model file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PartitionArgs {
    /// Full secure model to split.
    #[arg(long)]
    model: PathBuf,
    /// Split layer: the client half is layers 1..=k.
    #[arg(long)]
    k: usize,
    #[arg(long)]
    client_out: PathBuf,
    #[arg(long)]
    server_out: PathBuf,
}

#[derive(Args)]
struct AnalyzeLeakageArgs {
    /// Client half to attack; omit for pure equation counting.
    #[arg(long)]
    client: Option<PathBuf>,
    #[command(flatten)]
    data: DataOpts,
    /// Probe inputs drawn from the validation split (attack mode).
    #[arg(long, default_value_t = 20)]
    probes: usize,
    #[arg(long, default_value_t = 777)]
    seed: u64,
    /// Exit with status 3 if any probe reconstructs uniquely.
    #[arg(long)]
    enforce: bool,

    /// Kernel height (counting mode).
    #[arg(long)]
    kernel_h: Option<usize>,
    /// Kernel width; defaults to --kernel-h.
    #[arg(long)]
    kernel_w: Option<usize>,
    #[arg(long, default_value_t = 3)]
    channels: usize,
    #[arg(long, default_value_t = 96)]
    kernels: usize,
    #[arg(long, default_value_t = 4)]
    stride: usize,
    #[arg(long, value_enum, default_value_t = CountMode::ExampleConsistent)]
    mode: CountMode,
}

#[derive(Clone, Copy, ValueEnum)]
enum CountMode {
    /// Count unknowns over the full region reachable by kernel shifts.
    ExampleConsistent,
    /// Count unknowns over a single kernel row's span.
    AsPrinted,
}

impl From<CountMode> for LeakageMode {
    fn from(m: CountMode) -> Self {
        match m {
            CountMode::ExampleConsistent => LeakageMode::ExampleConsistent,
            CountMode::AsPrinted => LeakageMode::AsPrinted,
        }
    }
}

#[derive(Args)]
struct ReportCostsArgs {
    /// Model file to price (full, client, or server role).
    #[arg(long, conflicts_with = "conv")]
    model: Option<PathBuf>,
    /// Price a convolution front instead: KH,KW,CHANNELS,KERNELS,STRIDE.
    #[arg(long, value_delimiter = ',')]
    conv: Option<Vec<usize>>,
    /// Layers 1..=k priced; defaults to every layer in the file.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, default_value_t = 64)]
    bits_per_param: u64,
    /// Values crossing the wire per inference; defaults to the priced
    /// half's output width when a model file is given.
    #[arg(long)]
    links: Option<u64>,
    #[arg(long, default_value_t = 64)]
    bits_per_link: u64,
    /// Channel bandwidth in bits per second.
    #[arg(long, default_value_t = 1 << 20)]
    bandwidth: u64,
}

#[derive(Args)]
struct ServeArgs {
    /// Server-role model file.
    #[arg(long)]
    model: PathBuf,
    /// Endpoint to bind, e.g. 127.0.0.1:7878 (port 0 picks one).
    #[arg(long)]
    listen: String,
    /// Largest accepted frame payload in bytes.
    #[arg(long, default_value_t = MAX_PAYLOAD)]
    max_payload: u32,
}

#[derive(Args)]
struct InferArgs {
    /// Client-role model file.
    #[arg(long)]
    model: PathBuf,
    /// Serving endpoint, e.g. 127.0.0.1:7878.
    #[arg(long)]
    server: String,
    /// Validation-set index (plain integer) or a raw comma-separated
    /// pixel vector.
    #[arg(long)]
    input: String,
    /// Complement signal for this inference.
    #[arg(long, value_parser = clap::value_parser!(u32).range(0..=1))]
    cs: u32,
    #[command(flatten)]
    data: DataOpts,
}

#[derive(Args)]
struct EvalArgs {
    /// Full-role model file (base or secure).
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataOpts,
    /// Seed for the validation signals (secure models only).
    #[arg(long, default_value_t = 99)]
    signal_seed: u64,
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    #[arg(long, default_value_t = 100)]
    sample_size: usize,
    #[arg(long, default_value_t = 1234)]
    seed: u64,
}

#[derive(Args)]
struct ProbeCsArgs {
    /// Client-role model file.
    #[arg(long)]
    client: PathBuf,
    #[command(flatten)]
    data: DataOpts,
    #[arg(long, default_value_t = 400)]
    samples: usize,
    #[arg(long, default_value_t = 555)]
    seed: u64,
}

#[derive(Args)]
struct PipelineArgs {
    /// Pipeline config file (flat key = value text).
    #[arg(long, required_unless_present = "print_template")]
    config: Option<PathBuf>,
    /// Print a commented default config and exit.
    #[arg(long, conflicts_with = "config")]
    print_template: bool,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::TrainBase(args) => cmd_train_base(args),
        Command::Relabel(args) => cmd_relabel(args),
        Command::RetrainSecure(args) => cmd_retrain_secure(args),
        Command::Partition(args) => cmd_partition(args),
        Command::AnalyzeLeakage(args) => cmd_analyze_leakage(args),
        Command::ReportCosts(args) => cmd_report_costs(args),
        Command::Serve(args) => cmd_serve(args),
        Command::Infer(args) => cmd_infer(args),
        Command::Eval(args) => cmd_eval(args),
        Command::ProbeCs(args) => cmd_probe_cs(args),
        Command::Pipeline(args) => cmd_pipeline(args),
    }
}

fn cmd_train_base(args: TrainBaseArgs) -> Result<()> {
    let (train, val) = args.data.load()?;
    let arch = Architecture::new(train.input_dim(), args.train.hidden.clone(), train.n_classes);
    let model = arch.build::<f64>(args.train.init_seed)?;
    let samples: Vec<Sample<f64>> = (0..train.len())
        .map(|i| Sample {
            input: train.images[i].as_slice(),
            signal: None,
            target: train.labels[i],
        })
        .collect();
    let mut trainer = Trainer::new(model, args.train.config())?;
    let losses = trainer.train_epochs(&samples, args.train.epochs)?;
    let model = trainer.into_model();
    write_model_file(&args.out, &ModelFile::full(&model)?)?;
    println!("train_samples = {}", train.len());
    println!("validation_samples = {}", val.len());
    println!("epochs = {}", args.train.epochs);
    println!("final_loss = {}", losses.last().copied().unwrap_or(f64::NAN));
    println!("layers = {}", model.layer_count());
    println!("model = {}", args.out.display());
    Ok(())
}

fn cmd_relabel(args: RelabelArgs) -> Result<()> {
    let (train, val) = args.data.load()?;
    let ds = match args.side {
        Side::Train => train,
        Side::Validation => val,
    };
    let mode = SignalMode::Binary { cs_width: 1 };
    let secure = SecureDataset::relabel(ds, mode, args.signal_seed)?;
    let mut csv = String::from("index,true_label,cs,new_label\n");
    let mut flipped = 0usize;
    for i in 0..secure.len() {
        let (truth, cs, new) = (
            secure.base().labels[i],
            secure.signals()[i],
            secure.new_labels()[i],
        );
        if truth != new {
            flipped += 1;
        }
        csv.push_str(&format!("{i},{truth},{cs},{new}\n"));
    }
    std::fs::write(&args.out, csv)?;
    println!("samples = {}", secure.len());
    println!("flipped = {flipped}");
    println!("signal_seed = {}", args.signal_seed);
    println!("table = {}", args.out.display());
    Ok(())
}

/// Reads the architecture back out of a trained full model.
fn arch_of(model: &Model<f64>) -> Result<Architecture> {
    let m = model.layer_count();
    let mut hidden = Vec::with_capacity(m - 1);
    for i in 1..m {
        hidden.push(model.dense(i)?.out_dim);
    }
    Ok(Architecture::new(
        model.input_dim()?,
        hidden,
        model.n_classes(),
    ))
}

fn cmd_retrain_secure(args: RetrainSecureArgs) -> Result<()> {
    let (train, _) = args.data.load()?;
    let mode = SignalMode::Binary { cs_width: 1 };
    let secure_train = SecureDataset::relabel(train, mode, args.signal_seed)?;

    let base = match (&args.base, args.preserve) {
        (None, 0) => None,
        (None, p) => bail!("--preserve {p} needs --base; only --preserve 0 trains fresh"),
        (Some(path), _) => Some(read_model_file(path)?.into_model()?),
    };
    let arch = match &base {
        Some(model) => arch_of(model)?,
        None => Architecture::new(
            secure_train.base().input_dim(),
            args.train.hidden.clone(),
            secure_train.base().n_classes,
        ),
    };
    let (model, losses) = retrain(
        base.as_ref(),
        args.preserve,
        &arch,
        &secure_train,
        &args.train.config(),
        args.train.epochs,
        args.train.init_seed,
    )?;
    write_model_file(&args.out, &ModelFile::full(&model)?)?;
    println!("preserve = {}", args.preserve);
    println!("epochs = {}", args.train.epochs);
    println!("final_loss = {}", losses.last().copied().unwrap_or(f64::NAN));
    println!(
        "concat_layer = {}",
        model.concat().map_or(0, |c| c.layer)
    );
    println!("model = {}", args.out.display());
    Ok(())
}

fn print_manifest(m: &PartitionManifest) {
    println!("partition_k = {}", m.partition_k);
    println!("concat_layer = {}", m.concat_layer);
    println!("cs_width = {}", m.cs_width);
    println!("total_layers = {}", m.total_layers);
    println!("n_classes = {}", m.n_classes);
    println!("client_out_dim = {}", m.client_out_dim);
    println!("client_sha256 = {}", m.client_sha256);
    println!("server_sha256 = {}", m.server_sha256);
}

fn cmd_partition(args: PartitionArgs) -> Result<()> {
    let model = read_model_file(&args.model)?.into_model()?;
    let (client, server, manifest) = partition(&model, args.k)?;
    write_model_file(&args.client_out, &client.to_file()?)?;
    write_model_file(&args.server_out, &server.to_file()?)?;
    print_manifest(&manifest);
    println!("client = {}", args.client_out.display());
    println!("server = {}", args.server_out.display());
    Ok(())
}

fn cmd_analyze_leakage(args: AnalyzeLeakageArgs) -> Result<()> {
    match &args.client {
        None => {
            let Some(kh) = args.kernel_h else {
                bail!("counting mode needs --kernel-h (or give --client to attack a model)");
            };
            let geometry = KernelGeometry::new(
                kh,
                args.kernel_w.unwrap_or(kh),
                args.channels,
                args.kernels,
                args.stride,
            )?;
            let report = count_leakage(&geometry, args.mode.into());
            println!("equations = {}", report.equations);
            println!("unknowns = {}", report.unknowns);
            println!("secure = {}", report.secure);
            println!("max_safe_kernels = {}", report.max_safe_kernels);
            Ok(())
        }
        Some(path) => {
            let client = ClientHalf::from_file(read_model_file(path)?)?;
            let (_, val) = args.data.load()?;
            attack_report(&client, &val, args.probes, args.seed, args.enforce)
        }
    }
}

/// Attacks `client` with probe inputs and prints per-probe verdicts plus a
/// summary. With `enforce`, a unique verdict exits with status 3.
fn attack_report(
    client: &ClientHalf<f64>,
    val: &Dataset<f64>,
    probes: usize,
    seed: u64,
    enforce: bool,
) -> Result<()> {
    use rand::{Rng, SeedableRng};
    if probes == 0 {
        bail!("--probes must be positive");
    }
    if val.input_dim() != client.input_dim() {
        bail!(
            "validation inputs have {} features, the client half expects {}",
            val.input_dim(),
            client.input_dim()
        );
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let n = probes.min(val.len());
    let chosen = rand::seq::index::sample(&mut rng, val.len(), n);
    let mode = SignalMode::Binary {
        cs_width: client.concat().cs_width,
    };
    let first = &client.layers()[0];
    let concat_at_input = client.concat().layer == 1;

    let (mut unique, mut under, mut inconsistent) = (0usize, 0usize, 0usize);
    let mut min_nullity = usize::MAX;
    let mut min_err = f64::INFINITY;
    for (probe_no, i) in chosen.iter().enumerate() {
        let x = val.images[i].as_slice();
        let cs = u32::from(rng.random_bool(0.5));
        let encoded = splitveil::labeling::encode_signal::<f64>(cs, mode)?;
        let assembled: Vec<f64> = if concat_at_input {
            x.iter().chain(&encoded).copied().collect()
        } else {
            x.to_vec()
        };
        let d1 = first.forward(&assembled)?;
        let outcome = reconstruction_attack(client, &d1, x)?;
        let line = match outcome.verdict {
            AttackVerdict::Unique => {
                unique += 1;
                "unique".to_string()
            }
            AttackVerdict::Underdetermined { rank, nullity } => {
                under += 1;
                min_nullity = min_nullity.min(nullity);
                format!("underdetermined rank={rank} nullity={nullity}")
            }
            AttackVerdict::Inconsistent => {
                inconsistent += 1;
                "inconsistent".to_string()
            }
        };
        if let Some(err) = outcome.relative_error {
            min_err = min_err.min(err);
            println!("probe_{probe_no} = {line} relative_error={err}");
        } else {
            println!("probe_{probe_no} = {line}");
        }
    }
    println!("probes = {n}");
    println!("unique = {unique}");
    println!("underdetermined = {under}");
    println!("inconsistent = {inconsistent}");
    if min_nullity != usize::MAX {
        println!("min_nullity = {min_nullity}");
    }
    if min_err.is_finite() {
        println!("min_relative_error = {min_err}");
    }
    let gate = if unique == 0 { "passed" } else { "refused" };
    println!("gate = {gate}");
    if enforce && unique > 0 {
        std::process::exit(3);
    }
    Ok(())
}

fn cmd_report_costs(args: ReportCostsArgs) -> Result<()> {
    let (specs, upto, auto_links): (Vec<LayerSpec<f64>>, usize, Option<u64>) =
        match (&args.model, &args.conv) {
            (Some(path), None) => {
                let file = read_model_file(path)?;
                let layers: Vec<LayerSpec<f64>> = file
                    .layers()
                    .iter()
                    .cloned()
                    .map(LayerSpec::Dense)
                    .collect();
                let upto = args.k.unwrap_or(layers.len());
                let links = if upto == 0 {
                    None
                } else {
                    file.layers().get(upto - 1).map(|l| l.out_dim as u64)
                };
                (layers, upto, links)
            }
            (None, Some(dims)) => {
                let [kh, kw, c, kc, s] = dims.as_slice() else {
                    bail!("--conv takes exactly five numbers: KH,KW,CHANNELS,KERNELS,STRIDE");
                };
                let d = splitveil::nn::ConvDescriptor::new(*kh, *kw, *c, *kc, *s)?;
                (vec![LayerSpec::Conv(d)], 1, None)
            }
            _ => bail!("give exactly one of --model or --conv"),
        };
    let mut report = storage_cost(&specs, upto, args.bits_per_param)?;
    println!("layers_priced = {upto}");
    println!("param_count = {}", report.param_count);
    println!("bits_per_param = {}", report.bits_per_param);
    println!("storage_bytes = {}", report.storage_bytes);
    if let Some(links) = args.links.or(auto_links) {
        report = report.with_comm(links, args.bits_per_link, args.bandwidth)?;
        println!("link_count = {}", report.link_count);
        println!("bits_per_link = {}", report.bits_per_link);
        println!("bandwidth_bits_per_s = {}", report.bandwidth_bits_per_s);
        println!("comm_seconds = {}", report.comm_seconds);
    }
    Ok(())
}

fn cmd_serve(args: ServeArgs) -> Result<()> {
    let half = ServerHalf::from_file(read_model_file(&args.model)?)?;
    println!("in_dim = {}", half.in_dim());
    println!("n_classes = {}", half.n_classes());
    let running = serve(
        half,
        args.listen.as_str(),
        ServeLimits {
            max_payload: args.max_payload,
        },
    )?;
    println!("listening = {}", running.local_addr());
    // The line above is the readiness signal for scripts; make sure it is
    // out before blocking.
    use std::io::Write;
    std::io::stdout().flush()?;
    loop {
        std::thread::park();
    }
}

fn cmd_infer(args: InferArgs) -> Result<()> {
    let client = ClientHalf::from_file(read_model_file(&args.model)?)?;
    let mode = SignalMode::Binary {
        cs_width: client.concat().cs_width,
    };
    let (vector, expected): (Vec<f64>, Option<u32>) =
        if let Ok(index) = args.input.parse::<usize>() {
            let (_, val) = args.data.load()?;
            if index >= val.len() {
                bail!("index {index} is out of range for {} validation samples", val.len());
            }
            (val.images[index].as_slice().to_vec(), Some(val.labels[index]))
        } else {
            let parsed: std::result::Result<Vec<f64>, _> = args
                .input
                .split(',')
                .map(|part| part.trim().parse::<f64>())
                .collect();
            let vector =
                parsed.with_context(|| "input is neither an index nor a pixel vector")?;
            (vector, None)
        };
    let label = client_infer(&client, &vector, args.cs, mode, args.server.as_str())?;
    println!("cs = {}", args.cs);
    println!("label = {label}");
    if let Some(truth) = expected {
        println!("expected = {truth}");
    }
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let model = read_model_file(&args.model)?.into_model()?;
    let (_, val) = args.data.load()?;
    let sample_size = args.sample_size.min(val.len());

    if model.concat().is_some() {
        let mode = SignalMode::Binary { cs_width: 1 };
        let secure_val = SecureDataset::relabel(val, mode, args.signal_seed)?;
        let preds: Vec<u32> = (0..secure_val.len())
            .map(|i| {
                let x = secure_val.base().images[i].as_slice();
                let fuzzed = model.predict(x, Some(secure_val.encoded_signal(i)))?;
                recover_output(fuzzed, secure_val.signals()[i])
            })
            .collect::<std::result::Result<_, Error>>()?;
        let report = average_accuracy(
            |i| Ok(preds[i]),
            &secure_val,
            args.trials,
            sample_size,
            args.seed,
        )?;
        println!("trials = {}", report.trials);
        println!("sample_size = {}", report.sample_size);
        println!("average_accuracy = {}", report.average_accuracy);
        for s in 0..2u32 {
            let eligible: Vec<usize> = (0..secure_val.len())
                .filter(|&i| secure_val.signals()[i] == s)
                .collect();
            let restricted = average_accuracy_over(
                |i| Ok(preds[i]),
                &secure_val,
                &eligible,
                args.trials,
                sample_size.min(eligible.len()),
                args.seed,
            )?;
            println!("aa_cs{s} = {}", restricted.average_accuracy);
        }
    } else {
        let preds: Vec<u32> = (0..val.len())
            .map(|i| model.predict(val.images[i].as_slice(), None))
            .collect::<std::result::Result<_, Error>>()?;
        let secure_val = SecureDataset::relabel(
            val,
            SignalMode::Binary { cs_width: 1 },
            args.signal_seed,
        )?;
        let report = average_accuracy(
            |i| Ok(preds[i]),
            &secure_val,
            args.trials,
            sample_size,
            args.seed,
        )?;
        println!("trials = {}", report.trials);
        println!("sample_size = {}", report.sample_size);
        println!("average_accuracy = {}", report.average_accuracy);
    }
    Ok(())
}

fn cmd_probe_cs(args: ProbeCsArgs) -> Result<()> {
    let client = ClientHalf::from_file(read_model_file(&args.client)?)?;
    let (_, val) = args.data.load()?;
    let accuracy = cs_probe(&client, &val, args.samples, args.seed)?;
    println!("# chance level is 0.5; values well above it mean the");
    println!("# activations leak the signal for this trained instance.");
    println!("samples = {}", args.samples);
    println!("probe_accuracy = {accuracy}");
    Ok(())
}

fn cmd_pipeline(args: PipelineArgs) -> Result<()> {
    if args.print_template {
        print!("{}", PipelineConfig::template());
        return Ok(());
    }
    let path = args.config.expect("clap enforces --config");
    let text = std::fs::read_to_string(&path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let cfg = parse_config(&text)?;
    let artifacts = run_pipeline(&cfg)?;
    println!("out_dir = {}", artifacts.out_dir.display());
    println!("report = {}", artifacts.report_path.display());
    println!("accuracy_csv = {}", artifacts.accuracy_csv.display());
    println!("training_csv = {}", artifacts.training_csv.display());
    println!("costs_csv = {}", artifacts.costs_csv.display());
    println!("leakage_csv = {}", artifacts.leakage_csv.display());
    println!("base_model = {}", artifacts.base_model_path.display());
    println!(
        "base_average_accuracy = {}",
        artifacts.base_accuracy.average_accuracy
    );
    for run in &artifacts.runs {
        let p = run.preserve;
        println!(
            "preserve_{p}_average_accuracy = {}",
            run.accuracy.average_accuracy
        );
        println!(
            "preserve_{p}_gate = {}",
            if run.gate_passed { "passed" } else { "refused" }
        );
        match &run.client_half_path {
            Some(path) => println!("preserve_{p}_client = {}", path.display()),
            None => println!("preserve_{p}_client = (withheld by leakage gate)"),
        }
        println!("preserve_{p}_server = {}", run.server_half_path.display());
    }
    Ok(())
}
