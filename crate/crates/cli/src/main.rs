//! `spkid`: corpus generation, back-end fitting, enrollment, training,
//! identification and scoring from the command line.
//!
//! Every failure prints a single `error[<kind>]: <message>` line on stderr
//! and exits with status 1 (2 for usage errors).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use spkid::io::{
    load_checkpoint, read_archive, read_rttm, save_checkpoint, write_archive, write_rttm,
    Checkpoint, EmbeddingArchive, EmbeddingRecord, ExperimentConfig,
};
use spkid::synth::{derive_seed, sample_speaker_embedding, ChannelModel, SyntheticWorld};
use spkid::trainer::{make_training_examples, train, Conversation, ExamplePool, Utterance};
use spkid::{
    apply_projection, compute_ser, estimate_profile, fit_lda, identify_meeting, median_smooth,
    merge_segments, trajectory_to_segments, window_accuracy, Embedding, Identifier,
    LabelTrajectory, MeetingWindow, ProjectionModel, RmcModel, ScoreReport, SpeakerProfile,
};

/// Separates the speaker from the utterance index in training record ids.
const UTTERANCE_SEP: char = '#';
/// Separates meeting and speaker in training-meeting window ids.
const MEETING_SEP: char = '/';
/// Seed stream for training meetings, apart from the per-meeting streams
/// of the evaluation meetings.
const TRAIN_MEETING_STREAM: u64 = u64::MAX;

#[derive(Parser)]
#[command(
    name = "spkid",
    version,
    about = "Continuous speaker identification for meetings"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus: training archive, enrollment draws,
    /// evaluation meetings with reference RTTMs and rosters.
    Synth(SynthArgs),
    /// Fit the mean + LDA back-end on a labeled archive.
    FitBackend(FitBackendArgs),
    /// Average enrollment embeddings into one profile per speaker.
    Enroll(EnrollArgs),
    /// Train an identification model and write a checkpoint.
    Train(TrainArgs),
    /// Label every window of a meeting and write hypothesis segments.
    Identify(IdentifyArgs),
    /// Speaker Error Rate (and optionally window accuracy) of a hypothesis.
    Score(ScoreArgs),
    /// Identify and score a meeting for median filters of 1, 3, ..., K taps.
    SweepMedian(SweepArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides `paths.output_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FitBackendArgs {
    /// Archive whose ids are `<speaker>` or `<speaker>#<utterance>`.
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    lda_dim: Option<usize>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EnrollArgs {
    /// Enrollment archive; records sharing an id form one speaker.
    #[arg(long)]
    archive: PathBuf,
    #[arg(long)]
    backend: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    profiles: PathBuf,
    #[arg(long)]
    backend: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Profile count range per training sequence, `MIN:MAX`.
    #[arg(long, value_parser = parse_range)]
    seq_len_range: Option<(usize, usize)>,
    #[arg(long)]
    context: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    examples: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum System {
    Cosine,
    Rmc,
}

#[derive(Args, Clone)]
struct IdentifyInputs {
    /// Window archive of one meeting.
    #[arg(long)]
    meeting: PathBuf,
    #[arg(long)]
    profiles: PathBuf,
    /// One speaker id per line; defaults to every profile in the archive.
    #[arg(long)]
    roster: Option<PathBuf>,
    #[arg(long)]
    backend: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "cosine")]
    system: System,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    context: Option<usize>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct IdentifyArgs {
    #[command(flatten)]
    inputs: IdentifyInputs,
    #[arg(long)]
    taps: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long = "ref")]
    reference: PathBuf,
    #[arg(long)]
    hyp: PathBuf,
    #[arg(long, default_value_t = 0.25)]
    collar: f64,
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    ignore_overlap: bool,
    /// Trajectory file for window accuracy (needs `--roster`).
    #[arg(long)]
    trajectory: Option<PathBuf>,
    #[arg(long)]
    roster: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    inputs: IdentifyInputs,
    #[arg(long = "ref")]
    reference: PathBuf,
    #[arg(long, default_value_t = 7)]
    max_taps: usize,
    #[arg(long, default_value_t = 0.25)]
    collar: f64,
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    ignore_overlap: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

struct Failure {
    kind: &'static str,
    message: String,
}

impl Failure {
    fn new(kind: &'static str, message: impl Into<String>) -> Self {
        Failure {
            kind,
            message: message.into(),
        }
    }
}

impl From<spkid::Error> for Failure {
    fn from(e: spkid::Error) -> Self {
        use spkid::Error as E;
        let kind = match &e {
            E::DegenerateEmbedding(_) | E::NonFinite(_) | E::Singular(_) => "numeric",
            E::DimensionMismatch { .. } => "dimension",
            E::InvalidArgument(_) | E::LabelOutOfRange { .. } => "invalid",
            E::Parse { .. } => "parse",
            E::Format(_) => "format",
            E::Io(_) | E::File { .. } => "io",
        };
        Failure::new(kind, e.to_string())
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Failure + '_ {
    move |e| Failure::new("io", format!("{}: {e}", path.display()))
}

type CliResult<T> = std::result::Result<T, Failure>;

fn parse_range(s: &str) -> std::result::Result<(usize, usize), String> {
    let (a, b) = s.split_once(':').ok_or("expected MIN:MAX")?;
    let lo = a.trim().parse().map_err(|_| format!("bad minimum '{a}'"))?;
    let hi = b.trim().parse().map_err(|_| format!("bad maximum '{b}'"))?;
    if lo > hi {
        return Err(format!("empty range {lo}:{hi}"));
    }
    Ok((lo, hi))
}

fn load_config(path: Option<&Path>) -> CliResult<ExperimentConfig> {
    Ok(match path {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    })
}

fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

/// Writes the resolved configuration next to a command's outputs.
fn echo_config(cfg: &ExperimentConfig, dir: &Path) -> CliResult<()> {
    ensure_dir(dir)?;
    cfg.save(&dir.join("config.toml"))?;
    Ok(())
}

/// Speaker of a training-archive id: `speaker#k` for utterances,
/// `meeting/speaker` for meeting windows.
fn speaker_of(id: &str) -> &str {
    if let Some((_, s)) = id.split_once(MEETING_SEP) {
        return s;
    }
    id.split_once(UTTERANCE_SEP).map_or(id, |(s, _)| s)
}

fn load_backend(path: Option<&Path>) -> CliResult<Option<ProjectionModel>> {
    path.map(|p| {
        let text = fs::read_to_string(p).map_err(io_err(p))?;
        serde_json::from_str(&text)
            .map_err(|e| Failure::new("format", format!("{}: {e}", p.display())))
    })
    .transpose()
}

fn process(backend: Option<&ProjectionModel>, e: Embedding) -> CliResult<Embedding> {
    Ok(match backend {
        Some(b) => apply_projection(b, &e)?,
        None => e,
    })
}

fn read_lines(path: &Path) -> CliResult<Vec<String>> {
    Ok(fs::read_to_string(path)
        .map_err(io_err(path))?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(io_err(path))
}

fn run_synth(args: SynthArgs) -> CliResult<()> {
    let mut cfg = load_config(args.config.as_deref())?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(o) = args.out {
        cfg.paths.output_dir = o;
    }
    let corpus = &cfg.corpus;
    if corpus.roster_size < 2 || corpus.roster_size > corpus.eval_speakers {
        return Err(Failure::new(
            "invalid",
            "roster_size must be between 2 and eval_speakers",
        ));
    }
    if corpus.train_meetings > 0 && corpus.roster_size > corpus.train_speakers {
        return Err(Failure::new(
            "invalid",
            "roster_size exceeds train_speakers",
        ));
    }
    let out = cfg.paths.output_dir.clone();
    ensure_dir(&out.join("meetings"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let channel = if corpus.channel.enabled {
        Some(ChannelModel::random(
            corpus.dim,
            corpus.channel.rotation,
            corpus.channel.max_condition,
            corpus.channel.noise,
            &mut rng,
        )?)
    } else {
        None
    };
    let n_total = corpus.train_speakers + corpus.eval_speakers;
    let world = SyntheticWorld::new(n_total, corpus.dim, corpus.spread, channel, &mut rng)?;

    let pool = world.pool(0..corpus.train_speakers, &corpus.pool, &mut rng)?;
    let mut records = Vec::with_capacity(pool.window_count());
    let mut utt_index: BTreeMap<&str, usize> = BTreeMap::new();
    let (win, shift) = (corpus.meeting.win, corpus.meeting.shift);
    for u in pool.utterances() {
        let k = utt_index.entry(u.speaker_id.as_str()).or_insert(0);
        let id = format!("{}{UTTERANCE_SEP}{k}", u.speaker_id);
        *k += 1;
        for (w, e) in u.windows.iter().enumerate() {
            let start = w as f64 * shift;
            records.push(EmbeddingRecord::new(id.clone(), start, start + win, e));
        }
    }
    let mut trng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, TRAIN_MEETING_STREAM));
    for m in 0..corpus.train_meetings {
        let roster: Vec<usize> =
            index::sample(&mut trng, corpus.train_speakers, corpus.roster_size).into_vec();
        let id = format!("train{m:04}");
        let meeting = world.meeting(&id, &roster, &corpus.meeting, &mut trng)?;
        for (w, spk) in meeting.windows.iter().zip(&meeting.window_speakers) {
            let rid = format!("{id}{MEETING_SEP}{spk}");
            records.push(EmbeddingRecord::new(rid, w.start, w.end, &w.embedding));
        }
    }
    write_archive(
        &EmbeddingArchive::new(corpus.dim, records)?,
        &out.join("train.xvec"),
    )?;

    let mut enroll = Vec::new();
    for spk in &world.speakers {
        for _ in 0..corpus.meeting.enroll_draws.max(1) {
            let e = sample_speaker_embedding(spk, &mut rng)?;
            enroll.push(EmbeddingRecord::new(spk.speaker_id.clone(), 0.0, 0.0, &e));
        }
    }
    write_archive(
        &EmbeddingArchive::new(corpus.dim, enroll)?,
        &out.join("enroll.xvec"),
    )?;

    for m in 0..corpus.eval_meetings {
        let mut mrng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, m as u64));
        let roster: Vec<usize> = index::sample(&mut mrng, corpus.eval_speakers, corpus.roster_size)
            .into_iter()
            .map(|i| corpus.train_speakers + i)
            .collect();
        let id = format!("meeting{m:03}");
        let meeting = world.meeting(&id, &roster, &corpus.meeting, &mut mrng)?;
        let records = meeting
            .windows
            .iter()
            .map(|w| EmbeddingRecord::new(id.clone(), w.start, w.end, &w.embedding))
            .collect();
        let dir = out.join("meetings");
        write_archive(
            &EmbeddingArchive::new(corpus.dim, records)?,
            &dir.join(format!("{id}.xvec")),
        )?;
        write_rttm(&meeting.reference, &dir.join(format!("{id}.rttm")))?;
        write_text(
            &dir.join(format!("{id}.roster")),
            &(meeting.speaker_ids().join("\n") + "\n"),
        )?;
    }
    echo_config(&cfg, &out)?;
    println!(
        "synth: {} training windows, {} speakers, {} meetings -> {}",
        pool.window_count(),
        n_total,
        corpus.eval_meetings,
        out.display()
    );
    Ok(())
}

fn run_fit_backend(args: FitBackendArgs) -> CliResult<()> {
    let mut cfg = load_config(args.config.as_deref())?;
    if args.lda_dim.is_some() {
        cfg.backend.lda_dim = args.lda_dim;
    }
    let archive = read_archive(&args.train)?;
    let data = archive
        .records
        .iter()
        .map(|r| Ok((r.embedding()?, speaker_of(&r.id).to_string())))
        .collect::<CliResult<Vec<_>>>()?;
    let d_out = cfg.backend.lda_dim.unwrap_or(archive.dim);
    let model = fit_lda(&data, d_out)?;
    let json =
        serde_json::to_string_pretty(&model).map_err(|e| Failure::new("format", e.to_string()))?;
    write_text(&args.out, &json)?;
    if let Some(dir) = args.out.parent() {
        echo_config(&cfg, dir)?;
    }
    println!(
        "fit-backend: {} -> {} dims from {} embeddings",
        model.d_in,
        model.d_out,
        data.len()
    );
    Ok(())
}

fn run_enroll(args: EnrollArgs) -> CliResult<()> {
    let backend = load_backend(args.backend.as_deref())?;
    let archive = read_archive(&args.archive)?;
    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<String, Vec<Embedding>> = BTreeMap::new();
    for r in &archive.records {
        let spk = speaker_of(&r.id).to_string();
        let e = process(backend.as_ref(), r.embedding()?)?;
        groups
            .entry(spk.clone())
            .or_insert_with(|| {
                order.push(spk);
                Vec::new()
            })
            .push(e);
    }
    let mut records = Vec::with_capacity(order.len());
    let mut dim = 0;
    for spk in &order {
        let p = estimate_profile(spk, &groups[spk])?;
        dim = p.vector.dim();
        records.push(EmbeddingRecord::new(spk.clone(), 0.0, 0.0, &p.vector));
    }
    if records.is_empty() {
        return Err(Failure::new("invalid", "enrollment archive is empty"));
    }
    write_archive(&EmbeddingArchive::new(dim, records)?, &args.out)?;
    println!("enroll: {} profiles", order.len());
    Ok(())
}

fn load_profiles(path: &Path) -> CliResult<Vec<SpeakerProfile>> {
    read_archive(path)?
        .records
        .iter()
        .map(|r| {
            Ok(SpeakerProfile {
                speaker_id: r.id.clone(),
                vector: r.embedding()?,
            })
        })
        .collect()
}

fn run_train(args: TrainArgs) -> CliResult<()> {
    let mut cfg = load_config(args.config.as_deref())?;
    if let Some((lo, hi)) = args.seq_len_range {
        cfg.training.seq_len_min = lo;
        cfg.training.seq_len_max = hi;
    }
    if let Some(c) = args.context {
        cfg.training.context = c;
    }
    if let Some(s) = args.seed {
        cfg.training.seed = s;
    }
    if let Some(e) = args.epochs {
        cfg.training.epochs = e;
    }
    if let Some(n) = args.examples {
        cfg.training.examples = n;
    }
    let backend = load_backend(args.backend.as_deref())?;
    let profiles = load_profiles(&args.profiles)?;
    let archive = read_archive(&args.train)?;

    // Consecutive records with the same id form one utterance; records of
    // one training meeting form one conversation.
    let mut utterances: Vec<Utterance> = Vec::new();
    let mut conversations: Vec<Conversation> = Vec::new();
    let mut last: Option<&str> = None;
    for r in &archive.records {
        let e = process(backend.as_ref(), r.embedding()?)?;
        let speaker = speaker_of(&r.id).to_string();
        match r.id.split_once(MEETING_SEP) {
            Some((meeting, _)) => {
                if last != Some(meeting) {
                    conversations.push(Conversation {
                        windows: Vec::new(),
                        speakers: Vec::new(),
                    });
                    last = Some(meeting);
                }
                let c = conversations.last_mut().expect("started");
                c.windows.push(e);
                c.speakers.push(speaker);
            }
            None => {
                if last == Some(r.id.as_str()) {
                    utterances.last_mut().expect("started").windows.push(e);
                } else {
                    utterances.push(Utterance {
                        speaker_id: speaker,
                        windows: vec![e],
                    });
                    last = Some(r.id.as_str());
                }
            }
        }
    }
    let speakers: std::collections::BTreeSet<&str> = utterances
        .iter()
        .map(|u| u.speaker_id.as_str())
        .chain(
            conversations
                .iter()
                .flat_map(|c| c.speakers.iter().map(String::as_str)),
        )
        .collect();
    let profiles: Vec<SpeakerProfile> = profiles
        .into_iter()
        .filter(|p| speakers.contains(p.speaker_id.as_str()))
        .collect();
    let dim = profiles
        .first()
        .map(|p| p.vector.dim())
        .ok_or_else(|| Failure::new("invalid", "no profiles for the training speakers"))?;
    let pool = ExamplePool::new(utterances, profiles)?.with_conversations(conversations)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.training.seed);
    let examples = make_training_examples(&pool, &cfg.training, cfg.training.examples, &mut rng)?;
    let model = RmcModel::new(cfg.model.to_rmc(dim, cfg.training.seed))?;
    let (model, log) = train(model, &examples, &cfg.training)?;

    ensure_dir(&args.out)?;
    let checkpoint = Checkpoint {
        model,
        training: Some(cfg.training.clone()),
        seed: cfg.training.seed,
    };
    save_checkpoint(&checkpoint, &args.out.join("model.ckpt"))?;
    write_text(&args.out.join("train.log"), &log.to_text())?;
    echo_config(&cfg, &args.out)?;
    if let Some(r) = log.last() {
        println!(
            "train: epoch {} loss {:.4} accuracy {:.4}",
            r.epoch, r.loss, r.accuracy
        );
    }
    Ok(())
}

struct Identified {
    trajectory: LabelTrajectory,
    roster: Vec<String>,
    config: ExperimentConfig,
}

fn identify(inputs: &IdentifyInputs, taps: Option<usize>) -> CliResult<Identified> {
    let mut cfg = load_config(inputs.config.as_deref())?;
    if let Some(c) = inputs.context {
        cfg.training.context = c;
    }
    if let Some(t) = taps {
        cfg.scoring.taps = t;
    }
    let backend = load_backend(inputs.backend.as_deref())?;
    let mut profiles = load_profiles(&inputs.profiles)?;
    if let Some(path) = &inputs.roster {
        let ids = read_lines(path)?;
        profiles = ids
            .iter()
            .map(|id| {
                profiles
                    .iter()
                    .find(|p| &p.speaker_id == id)
                    .cloned()
                    .ok_or_else(|| {
                        Failure::new("invalid", format!("no profile for roster speaker {id}"))
                    })
            })
            .collect::<CliResult<_>>()?;
    }
    let archive = read_archive(&inputs.meeting)?;
    let meeting_id = archive
        .records
        .first()
        .map(|r| r.id.clone())
        .ok_or_else(|| Failure::new("invalid", "meeting archive is empty"))?;
    let mut windows = archive
        .records
        .iter()
        .map(|r| {
            Ok(MeetingWindow {
                start: r.start,
                end: r.end,
                embedding: process(backend.as_ref(), r.embedding()?)?,
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    windows.sort_by(|a, b| a.start.total_cmp(&b.start));

    let checkpoint;
    let identifier = match inputs.system {
        System::Cosine => Identifier::Cosine,
        System::Rmc => {
            let path = inputs
                .checkpoint
                .as_ref()
                .ok_or_else(|| Failure::new("usage", "--system rmc needs --checkpoint"))?;
            checkpoint = load_checkpoint(path)?;
            Identifier::Model(&checkpoint.model)
        }
    };
    let trajectory = identify_meeting(
        identifier,
        &meeting_id,
        &windows,
        &profiles,
        cfg.training.context,
    )?;
    let trajectory = median_smooth(&trajectory, cfg.scoring.taps)?;
    Ok(Identified {
        trajectory,
        roster: profiles.into_iter().map(|p| p.speaker_id).collect(),
        config: cfg,
    })
}

fn hypothesis(id: &Identified) -> CliResult<spkid::Timeline> {
    let segments = trajectory_to_segments(&id.trajectory, &id.roster, None)?;
    Ok(merge_segments(&segments, id.config.scoring.gap)?)
}

fn run_identify(args: IdentifyArgs) -> CliResult<()> {
    let result = identify(&args.inputs, args.taps)?;
    ensure_dir(&args.out)?;
    let mid = &result.trajectory.meeting_id;
    write_rttm(&hypothesis(&result)?, &args.out.join(format!("{mid}.rttm")))?;
    let json = serde_json::to_string_pretty(&result.trajectory)
        .map_err(|e| Failure::new("format", e.to_string()))?;
    write_text(&args.out.join(format!("{mid}.trajectory.json")), &json)?;
    echo_config(&result.config, &args.out)?;
    println!("identify: {} windows of {mid}", result.trajectory.len());
    Ok(())
}

fn run_score(args: ScoreArgs) -> CliResult<()> {
    if !(args.collar >= 0.0) {
        return Err(Failure::new("invalid", "collar must be >= 0"));
    }
    let reference = read_rttm(&args.reference)?;
    let mut hyp = read_rttm(&args.hyp)?;
    if hyp.segments.is_empty() {
        hyp.meeting_id = reference.meeting_id.clone();
    }
    let report: ScoreReport = compute_ser(&reference, &hyp, args.collar, args.ignore_overlap)?;
    let accuracy = match (&args.trajectory, &args.roster) {
        (Some(t), Some(r)) => {
            let text = fs::read_to_string(t).map_err(io_err(t))?;
            let traj: LabelTrajectory = serde_json::from_str(&text)
                .map_err(|e| Failure::new("format", format!("{}: {e}", t.display())))?;
            Some(window_accuracy(&traj, &reference, &read_lines(r)?)?)
        }
        (None, None) => None,
        _ => {
            return Err(Failure::new(
                "usage",
                "--trajectory and --roster go together",
            ))
        }
    };
    let mut line = format!(
        "meeting={} ser={:.4}% scored={:.3}s error={:.3}s collar={} ignore_overlap={}",
        reference.meeting_id,
        report.ser_percent(),
        report.scored_time,
        report.speaker_error_time,
        args.collar,
        args.ignore_overlap
    );
    if let Some(a) = accuracy {
        line.push_str(&format!(" accuracy={:.4}", a));
    }
    println!("{line}");
    if let Some(out) = &args.out {
        let json = serde_json::json!({ "report": report, "window_accuracy": accuracy });
        write_text(
            out,
            &serde_json::to_string_pretty(&json).expect("json value"),
        )?;
    }
    Ok(())
}

fn run_sweep(args: SweepArgs) -> CliResult<()> {
    if args.max_taps == 0 {
        return Err(Failure::new("invalid", "--max-taps must be at least 1"));
    }
    let reference = read_rttm(&args.reference)?;
    let mut table = String::from("taps\tser_percent\n");
    for taps in (1..=args.max_taps).step_by(2) {
        let result = identify(&args.inputs, Some(taps))?;
        let report = compute_ser(
            &reference,
            &hypothesis(&result)?,
            args.collar,
            args.ignore_overlap,
        )?;
        table.push_str(&format!("{taps}\t{:.4}\n", report.ser_percent()));
    }
    print!("{table}");
    if let Some(out) = &args.out {
        write_text(out, &table)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                e.exit();
            }
            let text = e.to_string();
            let first = text
                .lines()
                .find(|l| !l.trim().is_empty())
                .unwrap_or("invalid arguments")
                .trim_start_matches("error: ");
            eprintln!("error[usage]: {first}");
            return ExitCode::from(2);
        }
    };
    let result = match cli.command {
        Command::Synth(a) => run_synth(a),
        Command::FitBackend(a) => run_fit_backend(a),
        Command::Enroll(a) => run_enroll(a),
        Command::Train(a) => run_train(a),
        Command::Identify(a) => run_identify(a),
        Command::Score(a) => run_score(a),
        Command::SweepMedian(a) => run_sweep(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let message = f.message.replace('\n', " ");
            eprintln!("error[{}]: {message}", f.kind);
            ExitCode::FAILURE
        }
    }
}
