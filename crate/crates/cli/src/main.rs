use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use splitwire::codec::{self, Width};
use splitwire::config::Config;
use splitwire::distill::{self, eckart_young_bound, toy_fixture, train_toy};
use splitwire::latency::{self, crossover_rate, total_delay, Strategy};
use splitwire::netspec::{self, fixtures, NetworkSpec};
use splitwire::pipeline::{self, gate_metrics, run_session, synthetic_images, SessionMode};
use splitwire::tensor::Tensor;
use splitwire::wire::{self, MessageType, WireMessage};
use splitwire::Error;

#[derive(Parser)]
#[command(name = "splitwire", version, about = "Split-computing toolkit for edge-assisted detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// Experiment document (JSON).
    #[arg(long, env = "SPLITWIRE_CONFIG")]
    config: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Delay and gain for every strategy over a list of uplink rates.
    Sweep {
        #[command(flatten)]
        config: ConfigArg,
        /// Rates in Mbps: `1,2,5` or `start:stop:step`.
        #[arg(long)]
        rates: String,
        #[arg(long, default_value = "8", value_parser = parse_width)]
        width: Width,
        /// Filter drop probability for SCNF; defaults to the config's filter model.
        #[arg(long)]
        p_drop: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Delay breakdown at one rate and the SC/PO and SC/LC break-even rates.
    Delay {
        #[command(flatten)]
        config: ConfigArg,
        /// Rate in Mbps; defaults to the config's channel.
        #[arg(long)]
        rate: Option<f64>,
        #[arg(long, default_value = "8", value_parser = parse_width)]
        width: Width,
    },
    /// Quantize or dequantize a tensor file.
    Codec {
        #[command(subcommand)]
        action: CodecAction,
    },
    /// Trace layer shapes and count parameters.
    Netspec {
        /// Fixture name, a name from --config, or a JSON file.
        #[arg(long)]
        spec: String,
        /// Input shape as CxHxW.
        #[arg(long)]
        input: String,
        #[arg(long, env = "SPLITWIRE_CONFIG")]
        config: Option<PathBuf>,
    },
    /// Train a toy head against its teacher and write the loss history.
    Distill {
        #[arg(long)]
        fixture: String,
        /// Defaults to the fixture's schedule length.
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the edge server.
    Serve {
        #[arg(long, default_value = "127.0.0.1:7878")]
        addr: String,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Send synthetic bottleneck tensors through the pipeline.
    Client {
        #[arg(long, default_value = "127.0.0.1:7878")]
        addr: String,
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Charge the channel and tail from the models instead of using a socket.
        #[arg(long)]
        simulated: bool,
    },
    /// Monte Carlo drop rate, recall and ROC-AUC of the filter gate.
    FilterMetrics {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long, default_value_t = 100_000)]
        n: usize,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the config threshold.
        #[arg(long)]
        threshold: Option<f64>,
    },
}

#[derive(Subcommand)]
enum CodecAction {
    /// Tensor (JSON or 32-bit frame) to an 8- or 16-bit frame.
    Quantize {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "8", value_parser = parse_codec_width)]
        width: Width,
    },
    /// Quantized frame to a 32-bit frame, or to JSON when `--out` ends in `.json`.
    Dequantize {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_width(s: &str) -> Result<Width, String> {
    s.parse::<u32>()
        .ok()
        .and_then(|b| Width::from_bits(b).ok())
        .ok_or_else(|| format!("width must be 8, 16 or 32, got {s}"))
}

fn parse_codec_width(s: &str) -> Result<Width, String> {
    match parse_width(s)? {
        Width::W32 => Err("quantize width must be 8 or 16".into()),
        w => Ok(w),
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Argument(_) => 2,
        Error::Transport { .. } => 4,
        _ => 3,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("splitwire: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cmd: Command) -> splitwire::Result<()> {
    match cmd {
        Command::Sweep {
            config,
            rates,
            width,
            p_drop,
            out,
        } => cmd_sweep(&config.config, &rates, width, p_drop, &out),
        Command::Delay {
            config,
            rate,
            width,
        } => cmd_delay(&config.config, rate, width),
        Command::Codec { action } => match action {
            CodecAction::Quantize { input, out, width } => cmd_quantize(&input, &out, width),
            CodecAction::Dequantize { input, out } => cmd_dequantize(&input, &out),
        },
        Command::Netspec {
            spec,
            input,
            config,
        } => cmd_netspec(&spec, &input, config.as_deref()),
        Command::Distill {
            fixture,
            epochs,
            seed,
            out,
        } => cmd_distill(&fixture, epochs, seed, &out),
        Command::Serve { addr, config } => cmd_serve(&addr, &config.config),
        Command::Client {
            addr,
            config,
            n,
            out,
            seed,
            simulated,
        } => cmd_client(&addr, &config.config, n, &out, seed, simulated),
        Command::FilterMetrics {
            config,
            n,
            seed,
            threshold,
        } => cmd_filter_metrics(&config.config, n, seed, threshold),
    }
}

fn create(path: &Path) -> splitwire::Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn parse_rates(s: &str) -> splitwire::Result<Vec<f64>> {
    let bad = || Error::Argument(format!("cannot parse rates {s:?}"));
    let mbps: Vec<f64> = if s.contains(':') {
        let parts: Vec<f64> = s
            .split(':')
            .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<splitwire::Result<_>>()?;
        let [start, stop, step] = parts[..] else {
            return Err(bad());
        };
        if !(step > 0.0 && stop >= start) {
            return Err(bad());
        }
        let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
        (0..count).map(|i| start + i as f64 * step).collect()
    } else {
        s.split(',')
            .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<splitwire::Result<_>>()?
    };
    Ok(mbps.into_iter().map(|r| r * 1e6).collect())
}

fn cmd_sweep(
    config: &Path,
    rates: &str,
    width: Width,
    p_drop: Option<f64>,
    out: &Path,
) -> splitwire::Result<()> {
    let cfg = Config::load(config)?;
    let rates = parse_rates(rates)?;
    let p_drop = p_drop.unwrap_or_else(|| cfg.filter.expected_drop_rate());
    let rows = latency::sweep(&cfg.profile, &cfg.channel, &cfg.sizes, width, &rates, p_drop)?;
    latency::write_sweep_csv(create(out)?, &rows)?;
    println!("wrote {} rows to {}", rows.len(), out.display());
    Ok(())
}

fn cmd_delay(config: &Path, rate: Option<f64>, width: Width) -> splitwire::Result<()> {
    let cfg = Config::load(config)?;
    let ch = match rate {
        Some(mbps) => cfg.channel.at_rate(mbps * 1e6),
        None => cfg.channel,
    };
    ch.validate()?;
    let p_drop = cfg.filter.expected_drop_rate();
    println!("rate_mbps: {}", ch.rate_bps / 1e6);
    println!("p_drop: {p_drop:.4}");
    for s in Strategy::ALL {
        let d = total_delay(s, &cfg.profile, &ch, &cfg.sizes, width, p_drop)?;
        println!(
            "{:<4} total {:.4} s (head {:.4}, uplink {:.4}, server {:.4}, filter {:.4})",
            s.code(),
            d.total,
            d.t_head,
            d.t_uplink,
            d.t_server,
            d.t_filter
        );
    }
    for other in [Strategy::PureOffloading, Strategy::LocalComputing] {
        match crossover_rate(
            &cfg.profile,
            &ch,
            &cfg.sizes,
            width,
            Strategy::SplitComputing,
            other,
            (1e3, 1e9),
            p_drop,
        ) {
            Ok(r) => println!("SC = {other} at {:.4} Mbps", r / 1e6),
            Err(Error::NoCrossover(_)) => println!("SC = {other}: no crossover in 0.001..1000 Mbps"),
            Err(e) => return Err(e),
        }
    }
    Ok(())
}

/// Reads a JSON tensor or any tensor-carrying frame.
fn read_tensor(path: &Path) -> splitwire::Result<Tensor> {
    let bytes = fs::read(path)?;
    if bytes.starts_with(&wire::MAGIC) {
        let msg = wire::decode_message(&bytes)?;
        return codec::dequantize(&msg.to_quantized()?);
    }
    serde_json::from_slice(&bytes)
        .map_err(|e| Error::Codec(format!("{}: not a tensor file: {e}", path.display())))
}

fn cmd_quantize(input: &Path, out: &Path, width: Width) -> splitwire::Result<()> {
    let t = read_tensor(input)?;
    let q = codec::quantize(&t, width);
    let back = codec::dequantize(&q)?;
    let max_err = t
        .data()
        .iter()
        .zip(back.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f32, f32::max);
    let msg = WireMessage::from_quantized(&q)?;
    let written = wire::write_message(&mut create(out)?, &msg)?;
    let reference = codec::framed_size(t.shape(), Width::W32);
    let report = codec::data_size(&q, reference)?;
    println!("shape: {}", t.shape());
    println!("width: {}", width.bits());
    println!("payload_bytes: {}", report.payload_bytes);
    println!("header_bytes: {}", report.header_bytes);
    println!("total_bytes: {}", report.total_bytes);
    println!("ratio_vs_32bit: {:.6}", report.ratio_vs_reference);
    println!("max_abs_error: {max_err:e}");
    if width == Width::W8 {
        println!("half_scale: {:e}", q.scale / 2.0);
    }
    if q.saturated {
        println!("saturated: true");
    }
    log::debug!("wrote {written} bytes to {}", out.display());
    Ok(())
}

fn cmd_dequantize(input: &Path, out: &Path) -> splitwire::Result<()> {
    let bytes = fs::read(input)?;
    let msg = wire::decode_message(&bytes)?;
    if !matches!(msg.msg_type, MessageType::QTensor8 | MessageType::QTensor16) {
        return Err(Error::Codec(format!(
            "{}: expected a quantized tensor frame, got {:?}",
            input.display(),
            msg.msg_type
        )));
    }
    let q = msg.to_quantized()?;
    let t = codec::dequantize(&q)?;
    if out.extension().is_some_and(|e| e == "json") {
        let mut w = create(out)?;
        serde_json::to_writer(&mut w, &t).map_err(|e| Error::Io(e.into()))?;
        w.flush()?;
    } else {
        let frame = WireMessage::from_quantized(&codec::passthrough32(&t))?;
        wire::write_message(&mut create(out)?, &frame)?;
    }
    let report = codec::data_size(&q, codec::framed_size(t.shape(), Width::W32))?;
    println!("shape: {}", t.shape());
    println!("width: {}", q.width.bits());
    println!("total_bytes: {}", report.total_bytes);
    println!("ratio_vs_32bit: {:.6}", report.ratio_vs_reference);
    Ok(())
}

fn find_spec(name: &str, config: Option<&Path>) -> splitwire::Result<NetworkSpec> {
    if let Some(spec) = fixtures::fixture(name) {
        return Ok(spec);
    }
    if let Some(path) = config {
        if let Some(spec) = Config::load(path)?.netspecs.get(name) {
            return Ok(spec.clone());
        }
    }
    let path = Path::new(name);
    if !path.is_file() {
        return Err(Error::Argument(format!(
            "unknown network {name:?}; fixtures are {}",
            fixtures::NAMES.join(", ")
        )));
    }
    let text = fs::read_to_string(path)?;
    let spec: NetworkSpec = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{name}: {e}")))?;
    spec.validate().map_err(|e| Error::Config(format!("{name}: {e}")))?;
    Ok(spec)
}

fn cmd_netspec(spec: &str, input: &str, config: Option<&Path>) -> splitwire::Result<()> {
    let net = find_spec(spec, config)?;
    let shape = netspec::parse_shape(input).map_err(|e| Error::Argument(e.to_string()))?;
    let tr = netspec::trace(&net, &shape)?;
    println!("network: {}", net.name);
    println!("input: {}", tr.input);
    for (i, (layer, s)) in net.layers.iter().zip(&tr.shapes).enumerate() {
        let mark = if layer.bottleneck { " [bottleneck]" } else { "" };
        println!("{i:>3}  {:<60} {s}{mark}", format!("{:?}", layer.op));
    }
    println!("output: {}", tr.output());
    println!("params: {}", tr.params);
    if let Some(b) = &tr.bottleneck {
        println!("bottleneck: {b}");
        println!("ratio: {:.4}", netspec::tensor_ratio(b, &tr.input));
    }
    Ok(())
}

fn cmd_distill(name: &str, epochs: Option<usize>, seed: u64, out: &Path) -> splitwire::Result<()> {
    let mut fx = toy_fixture(name, seed)?;
    if let Some(e) = epochs {
        fx.config.epochs = e;
    }
    let outcome = train_toy(&fx.teacher, &fx.student, &fx.dataset, &fx.config)?;
    distill::write_history_csv(create(out)?, &outcome.history)?;
    println!("fixture: {name}");
    println!("epochs: {}", outcome.history.len());
    println!("final_loss: {:e}", outcome.final_loss);
    if let Some((a, x, b)) = &fx.oracle {
        let bound = eckart_young_bound(a, x, *b);
        println!("oracle_bound: {bound:e}");
        if bound > 0.0 {
            println!("ratio_to_bound: {:.6}", outcome.final_loss / bound);
        }
    }
    Ok(())
}

fn cmd_serve(addr: &str, config: &Path) -> splitwire::Result<()> {
    let cfg = Config::load(config)?;
    let server = pipeline::Server::bind(addr, cfg.profile, cfg.server)?;
    println!("listening on {}", server.local_addr()?);
    std::io::stdout().flush()?;
    server.run()
}

fn cmd_client(
    addr: &str,
    config: &Path,
    n: usize,
    out: &Path,
    seed: Option<u64>,
    simulated: bool,
) -> splitwire::Result<()> {
    if n == 0 {
        return Err(Error::Argument("--n must be at least 1".into()));
    }
    let cfg = Config::load(config)?;
    let seed = seed.unwrap_or(cfg.seed);
    let images = synthetic_images(&cfg.session.bottleneck_shape, n, &cfg.filter, seed)?;
    let mode = if simulated {
        SessionMode::Simulated
    } else {
        SessionMode::Socket {
            addr: addr.to_string(),
        }
    };
    let log = run_session(&images, &cfg.profile, &cfg.channel, &cfg.filter, &mode, seed)?;
    log.write_csv(create(out)?)?;
    println!("images: {}", log.records.len());
    println!("filtered: {}", log.records.iter().filter(|r| r.filtered).count());
    println!("bytes_sent: {}", log.total_bytes());
    println!("mean_total_s: {:.6}", log.mean_total());
    Ok(())
}

fn cmd_filter_metrics(
    config: &Path,
    n: usize,
    seed: Option<u64>,
    threshold: Option<f64>,
) -> splitwire::Result<()> {
    let cfg = Config::load(config)?;
    let mut fm = cfg.filter;
    if let Some(t) = threshold {
        fm.threshold = t;
        fm.validate()?;
    }
    let m = gate_metrics(&fm, n, seed.unwrap_or(cfg.seed))?;
    let opt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"));
    println!("n: {}", m.n);
    println!("threshold: {}", fm.threshold);
    println!("drop_rate: {:.4}", m.drop_rate);
    println!("expected_drop_rate: {:.4}", fm.expected_drop_rate());
    println!("recall_nonempty: {}", opt(m.recall_nonempty));
    println!("false_negative_rate: {}", opt(m.false_negative_rate));
    println!("auc: {}", opt(m.empirical_auc));
    println!("analytic_auc: {:.4}", fm.analytic_auc());
    Ok(())
}

