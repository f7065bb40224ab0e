//! Command implementations behind the `vigil` binary.
//!
//! Results go to stdout as JSON, diagnostics to stderr. Exit codes:
//! 0 success, 1 domain negative (unknown face, no face found by `detect`,
//! failed scenario assertion), 2 input error, 3 internal error.
//! `recognize` reports a frame without any face as 2.

use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use vigil_core::controller::{self, ControllerConfig};
use vigil_core::fisherface::{load_corpus, train, FisherModel, TrainConfig, Verdict};
use vigil_core::gsm::{open_device, MockModem, ModemScript};
use vigil_core::node_sim::{run_scenario, Fleet, NodeConfig, NodeKind, ScenarioScript};
use vigil_core::testbed::{self, run_scenario_file, ScenarioFile, Testbed};
use vigil_core::vision::{detect_faces, face_crop, largest_face};
use vigil_core::{CascadeModel, DetectParams, GrayImage};

pub const EXIT_OK: u8 = 0;
pub const EXIT_NEGATIVE: u8 = 1;
pub const EXIT_INPUT: u8 = 2;
pub const EXIT_INTERNAL: u8 = 3;
pub const EXIT_NO_FACE: u8 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "vigil",
    version,
    about = "Building surveillance controller and tools"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Start the controller: pollers, pipeline, stream and dashboard API.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Serial device path of the GSM modem, or `mock`.
        #[arg(long)]
        modem: String,
    },
    /// Train a face model from a `<corpus>/<person>/<image>` directory.
    Train(TrainArgs),
    /// List the faces found in an image.
    Detect {
        image: PathBuf,
        #[arg(long)]
        cascade: PathBuf,
        #[command(flatten)]
        detect: DetectArgs,
    },
    /// Name the largest face in an image, or report it unknown.
    Recognize {
        image: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Face detector; without it the whole image is taken as the face.
        #[arg(long)]
        cascade: Option<PathBuf>,
        #[command(flatten)]
        detect: DetectArgs,
    },
    /// Run simulated sensor nodes until interrupted.
    Node(NodeArgs),
    /// Run a scenario file against a self-contained testbed.
    Scenario {
        file: PathBuf,
        /// Keep fixtures and storage here instead of a temporary directory.
        #[arg(long)]
        workdir: Option<PathBuf>,
    },
    /// Write the synthetic cascade, a trained model and camera frames.
    GenFixtures { dir: PathBuf },
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Crop the largest detected face of each image before training.
    #[arg(long)]
    pub cascade: Option<PathBuf>,
    #[arg(long, default_value_t = 24)]
    pub face_width: u32,
    #[arg(long, default_value_t = 24)]
    pub face_height: u32,
    #[arg(long)]
    pub pca_dim: Option<usize>,
    /// Fixed rejection distance instead of the derived one.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long, default_value_t = 1.5)]
    pub threshold_margin: f64,
    #[command(flatten)]
    pub detect: DetectArgs,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[arg(long, default_value_t = 1.1)]
    pub scale_factor: f64,
    #[arg(long, default_value_t = 2)]
    pub step: u32,
    #[arg(long, default_value_t = 0)]
    pub min_size: u32,
    #[arg(long)]
    pub max_size: Option<u32>,
    #[arg(long, default_value_t = 2)]
    pub min_neighbors: u32,
}

impl DetectArgs {
    fn params(&self) -> DetectParams {
        DetectParams {
            scale_factor: self.scale_factor,
            step: self.step,
            min_size: self.min_size,
            max_size: self.max_size,
            min_neighbors: self.min_neighbors,
            ..DetectParams::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Pir,
    Fire,
}

#[derive(Debug, Args)]
pub struct NodeArgs {
    /// TOML file with `[[node]]` tables; replaces the single-node flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "pir")]
    pub kind: KindArg,
    #[arg(long, default_value_t = 0)]
    pub port: u16,
    #[arg(long)]
    pub id: Option<String>,
    #[arg(long, default_value_t = 50.0)]
    pub fire_threshold: f64,
    /// Timed stimuli applied once the nodes are up.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
}

/// A failure with the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    fn input(message: impl std::fmt::Display) -> Self {
        Self {
            code: EXIT_INPUT,
            message: message.to_string(),
        }
    }

    fn internal(message: impl std::fmt::Display) -> Self {
        Self {
            code: EXIT_INTERNAL,
            message: message.to_string(),
        }
    }
}

type Outcome = Result<u8, Failure>;

fn emit(value: &impl Serialize) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(Failure::internal)?;
    println!("{text}");
    Ok(())
}

fn runtime() -> Result<tokio::runtime::Runtime, Failure> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(Failure::internal)
}

pub fn run(cli: Cli) -> ExitCode {
    let result = match cli.command {
        Command::Run { config, modem } => cmd_run(&config, &modem),
        Command::Train(args) => cmd_train(&args),
        Command::Detect {
            image,
            cascade,
            detect,
        } => cmd_detect(&image, &cascade, &detect.params()),
        Command::Recognize {
            image,
            model,
            cascade,
            detect,
        } => cmd_recognize(&image, &model, cascade.as_deref(), &detect.params()),
        Command::Node(args) => cmd_node(&args),
        Command::Scenario { file, workdir } => cmd_scenario(&file, workdir.as_deref()),
        Command::GenFixtures { dir } => cmd_gen_fixtures(&dir),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn load_cascade(path: &Path) -> Result<CascadeModel, Failure> {
    CascadeModel::load(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

fn load_image(path: &Path) -> Result<GrayImage, Failure> {
    GrayImage::open(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

fn check_params(params: &DetectParams) -> Result<(), Failure> {
    params.validate().map_err(Failure::input)
}

pub fn cmd_train(args: &TrainArgs) -> Outcome {
    let params = args.detect.params();
    check_params(&params)?;
    let cascade = args.cascade.as_deref().map(load_cascade).transpose()?;
    let extract = |img: &GrayImage| match &cascade {
        None => Some(img.clone()),
        Some(c) => {
            let faces = detect_faces(img, c, &params).ok()?;
            let face = largest_face(&faces)?;
            img.crop(face.x, face.y, face.w, face.h).ok()
        }
    };
    let (ts, corpus) = load_corpus(&args.corpus, args.face_width, args.face_height, extract)
        .map_err(|e| Failure::input(format!("{}: {e}", args.corpus.display())))?;
    if ts.class_count() < 2 {
        return Err(Failure::input(format!(
            "{}: need at least two people with usable images, found {}",
            args.corpus.display(),
            ts.class_count()
        )));
    }
    let config = TrainConfig {
        pca_dim: args.pca_dim,
        reject_threshold: args.threshold,
        threshold_margin: args.threshold_margin,
        ..TrainConfig::new(args.face_width, args.face_height)
    };
    let model = train(&ts, &config).map_err(Failure::input)?;
    model
        .save(&args.out)
        .map_err(|e| Failure::internal(format!("{}: {e}", args.out.display())))?;
    emit(&json!({
        "model": args.out,
        "classes": corpus.classes,
        "class_count": ts.class_count(),
        "samples": ts.total_samples(),
        "pca_dim": model.pca_eigenvalues.len(),
        "pca_eigenvalues": model.pca_eigenvalues,
        "eigenvalues": model.eigenvalues,
        "reject_threshold": model.reject_threshold,
    }))?;
    Ok(EXIT_OK)
}

pub fn cmd_detect(image: &Path, cascade: &Path, params: &DetectParams) -> Outcome {
    check_params(params)?;
    let cascade = load_cascade(cascade)?;
    let img = load_image(image)?;
    let faces = detect_faces(&img, &cascade, params).map_err(Failure::input)?;
    emit(&json!({ "image": image, "faces": faces }))?;
    Ok(if faces.is_empty() {
        EXIT_NEGATIVE
    } else {
        EXIT_OK
    })
}

pub fn cmd_recognize(
    image: &Path,
    model: &Path,
    cascade: Option<&Path>,
    params: &DetectParams,
) -> Outcome {
    check_params(params)?;
    let model = FisherModel::load(model)
        .map_err(|e| Failure::input(format!("{}: {e}", model.display())))?;
    let cascade = cascade.map(load_cascade).transpose()?;
    let img = load_image(image)?;
    let face = match &cascade {
        Some(c) => {
            let faces = detect_faces(&img, c, params).map_err(Failure::input)?;
            match largest_face(&faces) {
                Some(f) => Some(*f),
                None => {
                    emit(&json!({ "image": image, "verdict": "no_face" }))?;
                    return Ok(EXIT_NO_FACE);
                }
            }
        }
        None => None,
    };
    let crop = match &face {
        Some(f) => face_crop(&img, f, model.face_width, model.face_height),
        None => img.resize_nearest(model.face_width, model.face_height),
    }
    .map_err(Failure::input)?;
    let result = model.recognize_crop(&crop).map_err(Failure::input)?;
    let (verdict, code) = match &result.verdict {
        Verdict::Known { .. } => ("known", EXIT_OK),
        Verdict::Unknown { .. } => ("unknown", EXIT_NEGATIVE),
    };
    let distance = match &result.verdict {
        Verdict::Known { distance, .. } => *distance,
        Verdict::Unknown { min_distance } => *min_distance,
    };
    emit(&json!({
        "image": image,
        "verdict": verdict,
        "label": result.label(),
        "distance": distance,
        "threshold": model.reject_threshold,
        "face": face,
        "distances": result.distances,
    }))?;
    Ok(code)
}

fn node_configs(args: &NodeArgs) -> Result<Vec<NodeConfig>, Failure> {
    #[derive(serde::Deserialize)]
    #[serde(deny_unknown_fields)]
    struct NodeFile {
        node: Vec<NodeConfig>,
    }
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
        let file: NodeFile = toml::from_str(&text)
            .map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
        return Ok(file.node);
    }
    let kind = match args.kind {
        KindArg::Pir => NodeKind::Pir,
        KindArg::Fire => NodeKind::Fire,
    };
    let id = args.id.clone().unwrap_or_else(|| match kind {
        NodeKind::Pir => "pir1".into(),
        NodeKind::Fire => "fire1".into(),
    });
    let base = match kind {
        NodeKind::Pir => NodeConfig::pir(&id, "PIR node"),
        NodeKind::Fire => NodeConfig::fire(&id, "Fire node"),
    };
    Ok(vec![NodeConfig {
        addr: SocketAddr::new(IpAddr::V4(Ipv4Addr::UNSPECIFIED), args.port),
        fire_threshold: args.fire_threshold,
        ..base
    }])
}

pub fn cmd_node(args: &NodeArgs) -> Outcome {
    let configs = node_configs(args)?;
    let script = match &args.scenario {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Failure::input(format!("{}: {e}", p.display())))?;
            Some(
                ScenarioScript::from_toml(&text)
                    .map_err(|e| Failure::input(format!("{}: {e}", p.display())))?,
            )
        }
        None => None,
    };
    runtime()?.block_on(async move {
        let mut fleet = Fleet::start(configs).await.map_err(Failure::input)?;
        let listing: Vec<_> = fleet
            .nodes()
            .map(|n| json!({ "node_id": n.id(), "kind": n.kind(), "url": n.status_url() }))
            .collect();
        emit(&json!({ "nodes": listing }))?;
        if let Some(script) = &script {
            let report = run_scenario(script, &fleet, |_, text| {
                tracing::warn!("no modem attached; ignoring SMS {text:?}")
            })
            .await
            .map_err(Failure::input)?;
            emit(&report)?;
        }
        let _ = tokio::signal::ctrl_c().await;
        fleet.stop_all().await;
        Ok(EXIT_OK)
    })
}

pub fn cmd_run(config: &Path, modem: &str) -> Outcome {
    let cfg = ControllerConfig::load(config).map_err(Failure::input)?;
    runtime()?.block_on(async move {
        let (mock, handle) = if modem == "mock" {
            let (mock, stream) = MockModem::spawn(ModemScript::default());
            let handle = controller::start(cfg, stream).await;
            (Some(mock), handle)
        } else {
            let dev = open_device(modem)
                .await
                .map_err(|e| Failure::input(format!("{modem}: {e}")))?;
            (None, controller::start(cfg, dev).await)
        };
        let handle = handle.map_err(|e| match e {
            controller::ControllerError::Io(_) => Failure::internal(e),
            other => Failure::input(other),
        })?;
        emit(&json!({
            "api": format!("http://{}/api/nodes", handle.api_addr()),
            "stream": format!("http://{}/stream", handle.stream_addr()),
            "modem": modem,
        }))?;
        let _ = tokio::signal::ctrl_c().await;
        handle.shutdown().await;
        if let Some(mock) = mock {
            eprint!("{}", mock.transcript().text());
            mock.stop();
        }
        Ok(EXIT_OK)
    })
}

pub fn cmd_scenario(file: &Path, workdir: Option<&Path>) -> Outcome {
    let text = std::fs::read_to_string(file)
        .map_err(|e| Failure::input(format!("{}: {e}", file.display())))?;
    let scenario = ScenarioFile::from_toml(&text)
        .map_err(|e| Failure::input(format!("{}: {e}", file.display())))?;
    let tmp;
    let dir = match workdir {
        Some(d) => d.to_path_buf(),
        None => {
            tmp = tempfile::tempdir().map_err(Failure::internal)?;
            tmp.path().to_path_buf()
        }
    };
    runtime()?.block_on(async move {
        let bed = Testbed::start(&dir, scenario.setup.clone())
            .await
            .map_err(Failure::internal)?;
        let outcome = run_scenario_file(&bed, &scenario).await;
        bed.shutdown().await;
        let outcome = outcome.map_err(Failure::input)?;
        for a in outcome.assertions.iter().filter(|a| !a.passed) {
            eprintln!(
                "assertion {} failed by {} ms: {}",
                a.index, a.deadline_ms, a.detail
            );
        }
        emit(&outcome)?;
        Ok(if outcome.passed {
            EXIT_OK
        } else {
            EXIT_NEGATIVE
        })
    })
}

pub fn cmd_gen_fixtures(dir: &Path) -> Outcome {
    let fx = testbed::write_fixtures(dir)
        .map_err(|e| Failure::internal(format!("{}: {e}", dir.display())))?;
    emit(&json!({
        "cascade": fx.cascade,
        "model": fx.model,
        "known_frames": fx.known_frames,
        "unknown_frames": fx.unknown_frames,
        "empty_frames": fx.empty_frames,
        "known_label": fx.known_label,
    }))?;
    Ok(EXIT_OK)
}
