use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use graphkernel::graphdata::{load_graphs, save_graphs, Dataset, PatientGraph, Vocabulary};
use graphkernel::interpret::{cmd_explain, cmd_match, perturb_graph};
use graphkernel::kernelspace::{GramMatrix, KernelVariant};
use graphkernel::syndata::{cohort_graphs, cohort_stats, generate_cohort, split, CohortConfig, NoiseConfig};
use graphkernel::trainer::{evaluate, log_to_csv, train, Checkpoint, TrainConfig};
use graphkernel::{Error, ErrorKind};

#[derive(Parser)]
#[command(name = "graphkernel", version, about = "Graph kernel network for patient event graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort split into train/val/test JSONL files.
    Generate(GenerateArgs),
    /// Train a model; the first --input is the training set, the second the validation set.
    Train(TrainArgs),
    /// Compute ACC, AUROC and macro-F1 on a labelled graph file.
    Eval(EvalArgs),
    /// Export the kernel gram matrix of a graph file.
    Gram(GramArgs),
    /// Predict labels and decision values for a graph file.
    Predict(EvalArgs),
    /// Node matching heatmap between two graphs.
    Match(MatchArgs),
    /// Most similar training cases and top support vectors for a query graph.
    Explain(ExplainArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum NoiseLevel {
    None,
    Moderate,
    High,
}

#[derive(Args)]
struct GenerateArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1000)]
    patients: usize,
    #[arg(long, value_enum, default_value_t = NoiseLevel::Moderate)]
    noise: NoiseLevel,
    #[arg(long, default_value_t = 1.0)]
    motif_strength: f64,
    #[arg(long, default_value_t = 0.75)]
    success_rate: f64,
}

#[derive(Args)]
struct TrainArgs {
    /// Training graphs, then validation graphs.
    #[arg(long, num_args = 1, required = true)]
    input: Vec<PathBuf>,
    /// Vocabulary file; built from the training graphs when absent.
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Training log CSV.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    kernel: Option<KernelArg>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    clusters: Option<usize>,
    #[arg(long)]
    margin: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    svm_c: Option<f64>,
    /// Start from the full-size defaults (6 layers, 256 dims, 256 clusters) instead of the desk-scale ones.
    #[arg(long)]
    full_scale: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum KernelArg {
    Cosine,
    Euclidean,
}

impl From<KernelArg> for KernelVariant {
    fn from(k: KernelArg) -> Self {
        match k {
            KernelArg::Cosine => KernelVariant::Cosine,
            KernelArg::Euclidean => KernelVariant::Euclidean,
        }
    }
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    input: PathBuf,
    /// Must match the checkpoint vocabulary when given.
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GramArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Destination; a `.csv` extension selects CSV, anything else the binary format.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MatchArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Graph file(s). With one file the first two graphs are matched; with
    /// two, the first graph of each.
    #[arg(long, num_args = 1, required = true)]
    input: Vec<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Output prefix: writes `<out>.heatmap.csv` and `<out>.nodes.csv`.
    #[arg(long)]
    out: PathBuf,
    /// Match graph a against a copy with random node codes and no edges.
    #[arg(long)]
    perturb: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ExplainArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    top_k: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>().map(Error::kind) {
        Some(ErrorKind::Usage) => 2,
        Some(ErrorKind::Numeric) => 4,
        _ => 3,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cmd: Command) -> anyhow::Result<()> {
    match cmd {
        Command::Generate(a) => generate(a),
        Command::Train(a) => run_train(a),
        Command::Eval(a) => run_eval(a),
        Command::Gram(a) => run_gram(a),
        Command::Predict(a) => run_predict(a),
        Command::Match(a) => run_match(a),
        Command::Explain(a) => run_explain(a),
    }
}

fn write_out(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text).map_err(Error::from).with_context(|| format!("writing {}", path.display()))
}

fn generate(a: GenerateArgs) -> anyhow::Result<()> {
    let cfg = CohortConfig {
        n_patients: a.patients,
        motif_strength: a.motif_strength,
        success_rate: a.success_rate,
        noise: match a.noise {
            NoiseLevel::None => NoiseConfig::NONE,
            NoiseLevel::Moderate => NoiseConfig::MODERATE,
            NoiseLevel::High => NoiseConfig::HIGH,
        },
        seed: a.seed,
        ..CohortConfig::default()
    };
    let cohort = generate_cohort(&cfg)?;
    let graphs = cohort_graphs(&cohort, &cfg)?;
    let (tr, va, te) = split(&graphs, 0.8, 0.1, a.seed);
    fs::create_dir_all(&a.out).map_err(Error::from)?;
    cohort.vocab.save(a.out.join("vocab.txt"))?;
    for (name, part) in [("train", &tr), ("val", &va), ("test", &te)] {
        save_graphs(a.out.join(format!("{name}.jsonl")), part, &cohort.vocab)?;
    }
    let stats = cohort_stats(&graphs);
    write_out(&a.out.join("stats.txt"), &stats)?;
    print!("{stats}");
    Ok(())
}

fn read_vocab(path: Option<&PathBuf>) -> anyhow::Result<Option<Vocabulary>> {
    path.map(|p| Vocabulary::load(p).with_context(|| format!("reading {}", p.display())))
        .transpose()
}

fn read_graphs(path: &Path, vocab: Option<&Vocabulary>) -> anyhow::Result<Dataset> {
    load_graphs(path, vocab).with_context(|| format!("reading {}", path.display()))
}

fn run_train(a: TrainArgs) -> anyhow::Result<()> {
    if a.input.len() != 2 {
        return Err(Error::Config("train needs --input <train> --input <validation>".into()).into());
    }
    let mut cfg = if a.full_scale { TrainConfig::default() } else { TrainConfig::desk() };
    macro_rules! set {
        ($($f:ident => $field:ident),*) => {$(if let Some(v) = a.$f { cfg.$field = v.into(); })*};
    }
    set!(seed => seed, layers => layers, dim => dim, clusters => clusters, margin => margin,
         batch => batch_size, lr => lr, epochs => epochs, svm_c => svm_c, kernel => kernel);

    let vocab = read_vocab(a.vocab.as_ref())?;
    let train_set = read_graphs(&a.input[0], vocab.as_ref())?;
    let val = read_graphs(&a.input[1], Some(&train_set.vocab)).with_context(|| {
        if a.vocab.is_none() {
            "validation codes must appear in the training graphs unless --vocab is given"
        } else {
            "validation graphs do not match the vocabulary"
        }
    })?;
    let outcome = train(&train_set, &val.graphs, &cfg)?;
    outcome.checkpoint.save(&a.checkpoint)?;
    if let Some(out) = &a.out {
        write_out(out, &log_to_csv(&outcome.log))?;
    }
    println!(
        "trained {} epochs (kept epoch {}), {} support vectors",
        outcome.epoch_losses().len(),
        outcome.best_epoch,
        outcome.checkpoint.svm.support.len()
    );
    Ok(())
}

/// Loads the checkpoint and the graphs, using the checkpoint vocabulary.
fn load_inputs(checkpoint: &Path, input: &Path, vocab: Option<&PathBuf>) -> anyhow::Result<(Checkpoint, Dataset)> {
    let ck = Checkpoint::load(checkpoint).with_context(|| format!("reading {}", checkpoint.display()))?;
    if let Some(v) = read_vocab(vocab)? {
        ck.check_vocabulary(&Dataset {
            vocab: v,
            graphs: Vec::new(),
        })?;
    }
    let data = read_graphs(input, Some(&ck.vocab))?;
    Ok((ck, data))
}

fn run_eval(a: EvalArgs) -> anyhow::Result<()> {
    let (ck, data) = load_inputs(&a.checkpoint, &a.input, a.vocab.as_ref())?;
    let ev = evaluate(&ck, &data)?;
    let m = &ev.metrics;
    println!("n\t{}\nACC\t{:.4}\nAUROC\t{:.4}\nmacro-F1\t{:.4}", m.n, m.acc, m.auroc, m.macro_f1);
    if let Some(out) = &a.out {
        write_out(out, &serde_json::to_string_pretty(m)?)?;
    }
    Ok(())
}

fn run_predict(a: EvalArgs) -> anyhow::Result<()> {
    let (ck, data) = load_inputs(&a.checkpoint, &a.input, a.vocab.as_ref())?;
    let mut csv = String::from("id,predicted,decision\n");
    for p in ck.predict(&data)? {
        csv.push_str(&format!("{},{},{}\n", p.id, p.predicted, p.decision));
    }
    match &a.out {
        Some(out) => write_out(out, &csv)?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn run_gram(a: GramArgs) -> anyhow::Result<()> {
    let (ck, data) = load_inputs(&a.checkpoint, &a.input, a.vocab.as_ref())?;
    if data.graphs.is_empty() {
        return Err(Error::Empty("graph file").into());
    }
    let refs: Vec<&PatientGraph> = data.graphs.iter().collect();
    let emb = graphkernel::model::embed(&refs, &ck.params, &ck.model, 64)?;
    let ids = data.graphs.iter().map(|g| g.id.clone()).collect();
    let gram = GramMatrix::from_embeddings(&emb, ids, &ck.model.kernel)?;
    let report = gram.report();
    if a.out.extension().is_some_and(|e| e == "csv") {
        write_out(&a.out, &gram.to_csv()?)?;
    } else {
        fs::write(&a.out, gram.to_bytes()).map_err(Error::from)?;
    }
    println!(
        "m\t{}\nsymmetry error\t{:e}\ndiagonal error\t{:e}\nmin eigenvalue\t{:e}",
        gram.len(),
        report.symmetry_error,
        report.diagonal_error,
        report.min_eigenvalue
    );
    Ok(())
}

fn run_match(a: MatchArgs) -> anyhow::Result<()> {
    let ck = Checkpoint::load(&a.checkpoint).with_context(|| format!("reading {}", a.checkpoint.display()))?;
    if let Some(v) = read_vocab(a.vocab.as_ref())? {
        ck.check_vocabulary(&Dataset {
            vocab: v,
            graphs: Vec::new(),
        })?;
    }
    let first = read_graphs(&a.input[0], Some(&ck.vocab))?.graphs;
    let ga = first.first().cloned().ok_or(Error::Empty("graph file"))?;
    let gb = if a.perturb {
        perturb_graph(&ga, ck.vocab.len(), &mut ChaCha8Rng::seed_from_u64(a.seed))
    } else {
        match a.input.len() {
            1 => first.get(1).cloned().ok_or(Error::Empty("second graph"))?,
            2 => read_graphs(&a.input[1], Some(&ck.vocab))?
                .graphs
                .into_iter()
                .next()
                .ok_or(Error::Empty("graph file"))?,
            _ => bail!(Error::Config("match takes one or two --input files".into())),
        }
    };
    let report = cmd_match(&ck, &ga, &gb)?;
    let heat = PathBuf::from(format!("{}.heatmap.csv", a.out.display()));
    let nodes = PathBuf::from(format!("{}.nodes.csv", a.out.display()));
    write_out(&heat, &report.heatmap_csv())?;
    write_out(&nodes, &report.nodes_csv(&ga, &gb, |c| ck.vocab.code(c).to_string()))?;
    match report.diagonal_rate {
        Some(r) => println!("diagonal argmax rate\t{r:.4}"),
        None => println!("graphs differ in size; no diagonal rate"),
    }
    Ok(())
}

fn run_explain(a: ExplainArgs) -> anyhow::Result<()> {
    let (ck, data) = load_inputs(&a.checkpoint, &a.input, a.vocab.as_ref())?;
    let query = data.graphs.first().ok_or(Error::Empty("graph file"))?;
    let report = cmd_explain(&ck, query, a.top_k)?;
    let json = serde_json::to_string_pretty(&report)?;
    match &a.out {
        Some(out) => write_out(out, &json)?,
        None => println!("{json}"),
    }
    Ok(())
}
