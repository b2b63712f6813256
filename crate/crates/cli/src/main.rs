use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{ArgGroup, Args, Parser, Subcommand};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use stkit::codec::{
    decode_box_text, decode_span, decode_tube, dequantize, encode_box_text, encode_span, encode_tube, parse_tokens,
    quantize, render_tokens, BBox, CoordVocab, Keyframe, SpatioTemporalTube, TemporalSpan,
};
use stkit::forge::{forge_batch, parse_annotations, ForgeTask};
use stkit::lape::{build_rho_with, downsample_rho, downsample_rho_image, EmbeddingTables};
use stkit::metrics::{
    aggregate_all, check_ground_truth, emit_caption_pairs, parse_records, reports_json, reports_table,
};
use stkit::numkit::{io as tio, Rng, Tensor};
use stkit::selftest::{self, Fault};
use stkit::stp::{stp_forward_with, StpBranches, StpConfig, StpParams};
use stkit::Exec;

const EXIT_SELFTEST: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_EMPTY: u8 = 3;

#[derive(Parser)]
#[command(
    name = "stkit",
    version,
    about = "Spatio-temporal grounding toolkit",
    after_help = "Defaults: m_w = m_h = m_t = 100 anchors; packer grid w1 = h1 = 27, n = 100 frames, \
k1 = 9, k2 = 3, sigma = 20 (1620 temporal + 900 spatial = 2520 tokens).\n\
Exit codes: 0 success, 1 selftest failure, 2 usage or schema error, 3 empty output."
)]
struct Cli {
    /// Run every loop on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert between coordinates and coordinate tokens.
    Codec(CodecArgs),
    /// Build the positional tensor and resize it onto a feature grid.
    Lape(LapeArgs),
    /// Run the spatial-temporal packer over a feature tensor.
    Pack(PackArgs),
    /// Score predictions against ground truth.
    Eval(EvalArgs),
    /// Generate templated instruction samples from annotations.
    Forge(ForgeArgs),
    /// Run the embedded invariant suite.
    Selftest(SelftestArgs),
}

#[derive(Args, Clone, Copy)]
struct VocabArgs {
    /// Width anchors.
    #[arg(long, default_value_t = 100)]
    m_w: usize,
    /// Height anchors.
    #[arg(long, default_value_t = 100)]
    m_h: usize,
    /// Time anchors.
    #[arg(long, default_value_t = 100)]
    m_t: usize,
}

impl VocabArgs {
    fn vocab(self) -> anyhow::Result<CoordVocab> {
        Ok(CoordVocab::new(
            self.m_w,
            self.m_h,
            self.m_t,
            CoordVocab::default().base_vocab_size,
        )?)
    }
}

#[derive(Args)]
#[command(group(ArgGroup::new("op").required(true)))]
struct CodecArgs {
    /// Anchor index of a coordinate in [0, 1].
    #[arg(long, group = "op", allow_hyphen_values = true)]
    quantize: Option<f64>,
    /// Coordinate of an anchor index.
    #[arg(long, group = "op")]
    dequantize: Option<usize>,
    /// Anchor count for --quantize / --dequantize.
    #[arg(long, default_value_t = 100)]
    m: usize,
    /// Box "x0,y0,x1,y1" to tokens.
    #[arg(long, group = "op", allow_hyphen_values = true)]
    encode_box: Option<String>,
    /// Four box tokens to "x0,y0,x1,y1".
    #[arg(long, group = "op")]
    decode_box: Option<String>,
    /// Span "start,end" to two time tokens.
    #[arg(long, group = "op", allow_hyphen_values = true)]
    encode_span: Option<String>,
    /// Two time tokens to "start,end".
    #[arg(long, group = "op")]
    decode_span: Option<String>,
    /// Tube JSON (`[[t, [x0,y0,x1,y1]], ...]` or `{"span", "keyframes"}`; `@file` reads a file) to tube text.
    #[arg(long, group = "op")]
    encode_tube: Option<String>,
    /// Tube text (`@file` reads a file) to tube JSON.
    #[arg(long, group = "op")]
    decode_tube: Option<String>,
    /// Split text into tokens and plain text, with diagnostics.
    #[arg(long, group = "op")]
    parse: Option<String>,
    #[command(flatten)]
    vocab: VocabArgs,
}

#[derive(Args)]
struct LapeArgs {
    /// Seed for the embedding tables.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Embedding width D.
    #[arg(long, default_value_t = 8)]
    dim: usize,
    /// Use all-zero tables.
    #[arg(long, conflicts_with = "tables_dir")]
    zero_tables: bool,
    /// Load tables saved with --save-tables.
    #[arg(long)]
    tables_dir: Option<PathBuf>,
    /// Save the tables used.
    #[arg(long)]
    save_tables: Option<PathBuf>,
    /// Target grid "w1,h1,n" (video) or "w1,h1" with --image.
    #[arg(long, default_value = "27,27,100")]
    target: String,
    /// Resize only the first time slice bilinearly.
    #[arg(long)]
    image: bool,
    /// Output tensor file.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    vocab: VocabArgs,
}

#[derive(Args)]
struct PackArgs {
    /// Input feature tensor [w1, h1, n, D].
    #[arg(long, required_unless_present = "random_input", conflicts_with = "random_input")]
    input: Option<PathBuf>,
    /// Use seeded Gaussian features instead of --input.
    #[arg(long)]
    random_input: bool,
    /// Seed for random input and parameters.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Feature width D (random input / parameters).
    #[arg(long, default_value_t = 8)]
    dim: usize,
    /// Feature grid width.
    #[arg(long, default_value_t = 27)]
    w1: usize,
    /// Feature grid height.
    #[arg(long, default_value_t = 27)]
    h1: usize,
    /// Sampled frames.
    #[arg(long, default_value_t = 100)]
    n: usize,
    /// First-stage spatial grid.
    #[arg(long, default_value_t = 9)]
    k1: usize,
    /// Spatial-stream grid.
    #[arg(long, default_value_t = 3)]
    k2: usize,
    /// Temporal-stream frames.
    #[arg(long, default_value_t = 20)]
    sigma: usize,
    /// Attention heads.
    #[arg(long, default_value_t = 1)]
    heads: usize,
    /// Drop the spatial stream.
    #[arg(long, conflicts_with = "no_packer_t")]
    no_packer_s: bool,
    /// Drop the temporal stream.
    #[arg(long)]
    no_packer_t: bool,
    /// Share first-stage parameters with the spatial stream.
    #[arg(long)]
    tie_params: bool,
    /// Load parameters saved with --save-params.
    #[arg(long)]
    params_dir: Option<PathBuf>,
    /// Save the parameters used.
    #[arg(long)]
    save_params: Option<PathBuf>,
    /// Output directory for f_s.stt, f_t.stt and summary.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Ground-truth JSONL.
    #[arg(long)]
    gt: PathBuf,
    /// Prediction JSONL.
    #[arg(long)]
    pred: PathBuf,
    /// Write the report JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write ELC caption pairs (JSONL) here.
    #[arg(long)]
    captions: Option<PathBuf>,
    #[command(flatten)]
    vocab: VocabArgs,
}

#[derive(Args)]
struct ForgeArgs {
    /// STVG, ELC, SVG, DGC, REC or RC.
    #[arg(long)]
    task: String,
    #[arg(long)]
    seed: u64,
    /// Annotation JSONL.
    #[arg(long)]
    input: PathBuf,
    /// Output JSONL (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    vocab: VocabArgs,
}

#[derive(Args)]
struct SelftestArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, hide = true)]
    inject_fault: Option<String>,
}

enum Outcome {
    Ok,
    Empty,
    SelftestFailed,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let exec = if cli.sequential {
        Exec::Sequential
    } else {
        Exec::default()
    };
    let result = match cli.command {
        Command::Codec(a) => codec(a),
        Command::Lape(a) => lape(a, exec),
        Command::Pack(a) => pack(a, exec),
        Command::Eval(a) => eval(a),
        Command::Forge(a) => forge(a, exec),
        Command::Selftest(a) => run_selftest(a, exec),
    };
    match result {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::Empty) => ExitCode::from(EXIT_EMPTY),
        Ok(Outcome::SelftestFailed) => ExitCode::from(EXIT_SELFTEST),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_USAGE)
        }
    }
}

fn text_arg(s: &str) -> anyhow::Result<String> {
    match s.strip_prefix('@') {
        Some(path) => fs::read_to_string(path).with_context(|| format!("reading {path}")),
        None => Ok(s.to_string()),
    }
}

fn floats<const N: usize>(s: &str) -> anyhow::Result<[f64; N]> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .with_context(|| format!("expected {N} comma-separated numbers, got {s:?}"))?;
    v.try_into()
        .map_err(|_| anyhow::anyhow!("expected {N} comma-separated numbers, got {s:?}"))
}

fn tube_json(t: &SpatioTemporalTube) -> Value {
    let kf: Vec<Value> = t
        .keyframes()
        .iter()
        .map(|k| json!([k.time, k.bbox.to_array()]))
        .collect();
    json!({ "span": [t.span().start(), t.span().end()], "keyframes": kf })
}

fn tube_from_json(v: &Value) -> anyhow::Result<SpatioTemporalTube> {
    let (span, kf) = match v {
        Value::Array(_) => (None, v.clone()),
        Value::Object(o) => (
            o.get("span").cloned(),
            o.get("keyframes").cloned().unwrap_or(Value::Null),
        ),
        _ => bail!("tube JSON must be an array of keyframes or an object"),
    };
    let kf: Vec<(f64, [f64; 4])> = serde_json::from_value(kf).context("keyframes must be [[t, [x0,y0,x1,y1]], ...]")?;
    let keyframes = kf
        .into_iter()
        .map(|(time, b)| {
            Ok(Keyframe {
                time,
                bbox: BBox::from_array(b)?,
            })
        })
        .collect::<stkit::Result<Vec<_>>>()?;
    Ok(match span {
        Some(s) => {
            let [a, b]: [f64; 2] = serde_json::from_value(s).context("span must be [start, end]")?;
            SpatioTemporalTube::new(TemporalSpan::new(a, b)?, keyframes)?
        }
        None => SpatioTemporalTube::from_keyframes(keyframes)?,
    })
}

fn codec(a: CodecArgs) -> anyhow::Result<Outcome> {
    let vocab = a.vocab.vocab()?;
    let out = if let Some(x) = a.quantize {
        quantize(x, a.m)?.to_string()
    } else if let Some(i) = a.dequantize {
        dequantize(i, a.m)?.to_string()
    } else if let Some(s) = &a.encode_box {
        encode_box_text(&BBox::from_array(floats::<4>(s)?)?, &vocab)?
    } else if let Some(s) = &a.decode_box {
        let b = decode_box_text(s, &vocab)?.to_array();
        format!("{},{},{},{}", b[0], b[1], b[2], b[3])
    } else if let Some(s) = &a.encode_span {
        let [x, y] = floats::<2>(s)?;
        render_tokens(&encode_span(&TemporalSpan::new(x, y)?, &vocab)?)
    } else if let Some(s) = &a.decode_span {
        let parsed = parse_tokens(s, &vocab);
        let tokens: Vec<_> = parsed.tokens().collect();
        let span = decode_span(&tokens, &vocab)?;
        format!("{},{}", span.start(), span.end())
    } else if let Some(s) = &a.encode_tube {
        let v: Value = serde_json::from_str(&text_arg(s)?).context("tube JSON")?;
        encode_tube(&tube_from_json(&v)?, &vocab)?
    } else if let Some(s) = &a.decode_tube {
        tube_json(&decode_tube(text_arg(s)?.trim_end(), &vocab)?).to_string()
    } else if let Some(s) = &a.parse {
        let parsed = parse_tokens(&text_arg(s)?, &vocab);
        for d in &parsed.diagnostics {
            eprintln!("warning: byte {}: {}", d.pos, d.message);
        }
        serde_json::to_string(&parsed)?
    } else {
        unreachable!("clap requires one operation")
    };
    println!("{out}");
    Ok(Outcome::Ok)
}

fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let bytes = fs::read(path)?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

fn dims_list(s: &str) -> anyhow::Result<Vec<usize>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .with_context(|| format!("bad extent in {s:?}"))
        })
        .collect()
}

fn lape(a: LapeArgs, exec: Exec) -> anyhow::Result<Outcome> {
    let (tables, vocab) = if let Some(dir) = &a.tables_dir {
        let (t, m_w, m_h, m_t) = EmbeddingTables::load(dir)?;
        (t, VocabArgs { m_w, m_h, m_t }.vocab()?)
    } else {
        let vocab = a.vocab.vocab()?;
        let t = if a.zero_tables {
            EmbeddingTables::zeros(&vocab, a.dim)?
        } else {
            EmbeddingTables::random(&vocab, a.dim, &mut Rng::new(a.seed))?
        };
        (t, vocab)
    };
    if let Some(dir) = &a.save_tables {
        tables.save(dir, &vocab)?;
    }
    let rho = build_rho_with(&tables, &vocab, exec)?;
    let target = dims_list(&a.target)?;
    let out = match (a.image, target.as_slice()) {
        (false, &[w, h, n]) => downsample_rho(&rho, w, h, n)?,
        (true, &[w, h]) | (true, &[w, h, _]) => downsample_rho_image(&rho, w, h)?,
        _ => bail!("--target needs w1,h1,n (or w1,h1 with --image), got {:?}", a.target),
    };
    tio::save(&a.out, &out)?;
    let summary = json!({
        "dims": out.dims(),
        "min": out.min(),
        "max": out.max(),
        "sha256": sha256_file(&a.out)?,
    });
    println!("{summary}");
    Ok(Outcome::Ok)
}

fn pack(a: PackArgs, exec: Exec) -> anyhow::Result<Outcome> {
    let cfg = StpConfig {
        w1: a.w1,
        h1: a.h1,
        n: a.n,
        k1: a.k1,
        k2: a.k2,
        sigma: a.sigma,
    };
    cfg.validate()?;
    let root = Rng::new(a.seed);
    let input = match &a.input {
        Some(path) => tio::load(path).with_context(|| format!("loading {}", path.display()))?,
        None => root.split(0).normal_tensor(&[a.w1, a.h1, a.n, a.dim], 1.0)?,
    };
    let params = match &a.params_dir {
        Some(dir) => StpParams::load(dir)?,
        None => {
            let dim = input.dims().last().copied().unwrap_or(a.dim);
            StpParams::random(dim, &mut root.split(1), a.tie_params)?.with_heads(a.heads)?
        }
    };
    if let Some(dir) = &a.save_params {
        params.save(dir, a.params_dir.is_none().then_some(a.seed))?;
    }
    let branches = match (a.no_packer_s, a.no_packer_t) {
        (true, _) => StpBranches::TemporalOnly,
        (_, true) => StpBranches::SpatialOnly,
        _ => StpBranches::Both,
    };
    let out = stp_forward_with(&input, &cfg, &params, branches, exec)?;
    fs::create_dir_all(&a.out)?;
    let mut files = serde_json::Map::new();
    for (name, t) in [("f_s", &out.f_s), ("f_t", &out.f_t)] {
        if let Some(t) = t {
            let path = a.out.join(format!("{name}.stt"));
            tio::save(&path, t)?;
            files.insert(name.into(), json!({ "dims": t.dims(), "sha256": sha256_file(&path)? }));
        }
    }
    let cells = |t: &Option<Tensor>| t.as_ref().map_or(0, |t| t.len() / t.dims()[3]);
    let summary = json!({
        "config": { "w1": cfg.w1, "h1": cfg.h1, "n": cfg.n, "k1": cfg.k1, "k2": cfg.k2, "sigma": cfg.sigma },
        "dim": params.dim(),
        "heads": params.stage1.heads,
        "tied": params.is_tied(),
        "spatial_tokens": cells(&out.f_s),
        "temporal_tokens": cells(&out.f_t),
        "token_total": out.token_count(),
        "outputs": files,
    });
    fs::write(a.out.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    println!("{summary}");
    Ok(Outcome::Ok)
}

fn read_records(path: &Path, what: &str) -> anyhow::Result<Vec<stkit::metrics::PredictionRecord>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let (records, issues) = parse_records(&text);
    if !issues.is_empty() {
        for i in &issues {
            eprintln!("{}: {i}", path.display());
        }
        bail!("{} schema violation(s) in {what} file", issues.len());
    }
    if records.is_empty() {
        bail!("{what} file {} has no records", path.display());
    }
    Ok(records)
}

fn eval(a: EvalArgs) -> anyhow::Result<Outcome> {
    let vocab = a.vocab.vocab()?;
    let gt = read_records(&a.gt, "ground-truth")?;
    let problems = check_ground_truth(&gt);
    if !problems.is_empty() {
        for p in &problems {
            eprintln!("{p}");
        }
        bail!("{} unusable ground-truth record(s)", problems.len());
    }
    let preds = read_records(&a.pred, "prediction")?;
    let reports = aggregate_all(&gt, &preds, &vocab)?;
    print!("{}", reports_table(&reports));
    if let Some(path) = &a.out {
        fs::write(path, serde_json::to_string_pretty(&reports_json(&reports))?)?;
    }
    if let Some(path) = &a.captions {
        let rows = emit_caption_pairs(&gt, &preds, &vocab, io::BufWriter::new(fs::File::create(path)?))?;
        eprintln!("{rows} caption pair(s) written to {}", path.display());
    }
    Ok(Outcome::Ok)
}

fn forge(a: ForgeArgs, exec: Exec) -> anyhow::Result<Outcome> {
    let task: ForgeTask = a.task.parse()?;
    let vocab = a.vocab.vocab()?;
    let text = fs::read_to_string(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let (anns, bad) = parse_annotations(&text);
    for s in &bad {
        eprintln!("skipped: {}", s.reason);
    }
    let out = forge_batch(&anns, task, &vocab, a.seed, exec);
    for s in &out.skipped {
        eprintln!("skipped {}: {}", s.id, s.reason);
    }
    let mut body = String::new();
    for s in &out.samples {
        body.push_str(&s.to_json_line());
        body.push('\n');
    }
    match &a.out {
        Some(path) => fs::write(path, &body)?,
        None => io::stdout().lock().write_all(body.as_bytes())?,
    }
    eprintln!(
        "{}: {} sample(s), {} skipped",
        task,
        out.samples.len(),
        out.skipped.len() + bad.len()
    );
    Ok(if out.samples.is_empty() {
        Outcome::Empty
    } else {
        Outcome::Ok
    })
}

fn run_selftest(a: SelftestArgs, exec: Exec) -> anyhow::Result<Outcome> {
    let fault = a.inject_fault.as_deref().map(str::parse::<Fault>).transpose()?;
    let report = selftest::run(a.seed, fault, exec);
    print!("{}", report.table());
    Ok(if report.passed() {
        Outcome::Ok
    } else {
        Outcome::SelftestFailed
    })
}
