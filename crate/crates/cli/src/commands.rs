use std::ffi::OsString;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::warn;
use softseg::bench::bench_decompose;
use softseg::io::{
    format_palette, load_image, load_layers, load_palette, load_weights, load_weights_for, parse_hex, save_layers,
    save_png, to_hex, weights_hash, ExportOptions,
};
use softseg::layers::{decompose, recolor, DecomposeOptions, GuidedFilterParams, LayerMask, MaskMode};
use softseg::metrics::{score, EvalReport};
use softseg::palette::extract_palette;
use softseg::trainer::synthetic::{write_scenes, SceneParams};
use softseg::trainer::{image_files, train, TrainConfig};
use softseg::unmixer::{models_from_palette, unmix_image, UnmixConfig};
use softseg::{Error, Result};

use crate::server::{serve, ServerConfig, DEFAULT_PIXEL_BUDGET};

#[derive(Debug, Parser)]
#[command(name = "softseg", version, about = "Decompose images into palette-anchored RGBA layers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Extract a K-color palette with K-means.
    Palette {
        image: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Palette file to write; printed to stdout otherwise.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Decompose an image with trained networks.
    Decompose {
        image: PathBuf,
        #[arg(long)]
        palette: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        #[command(flatten)]
        filter: FilterArgs,
        /// Alpha edit as LAYER:FILE, repeatable. FILE is a grayscale image.
        #[arg(long = "mask", value_name = "LAYER:FILE")]
        masks: Vec<String>,
        #[arg(long, value_enum, default_value_t = MaskModeArg::Multiply)]
        mask_mode: MaskModeArg,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        sixteen_bit: bool,
    },
    /// Per-pixel optimization baseline, no networks involved.
    Unmix {
        image: PathBuf,
        #[arg(long)]
        palette: PathBuf,
        /// Sparsity weight.
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        #[arg(long)]
        max_iters: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train both networks from a TOML or JSON config.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score a layer directory against the original image.
    Eval { original: PathBuf, layers: PathBuf },
    /// Swap one layer's palette color, keeping its residues.
    Recolor {
        layers: PathBuf,
        #[arg(long)]
        layer: usize,
        /// New color as #RRGGBB.
        #[arg(long)]
        color: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Decompose every image of a directory with one fixed palette.
    Frames {
        dir: PathBuf,
        #[arg(long)]
        palette: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        #[command(flatten)]
        filter: FilterArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Time alpha and color estimation at several square sizes.
    Bench {
        #[arg(long, value_delimiter = ',', default_value = "256,512,1024")]
        sizes: Vec<usize>,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
        #[arg(long)]
        json: bool,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long, env = "SOFTSEG_WEIGHTS")]
        weights: PathBuf,
        #[arg(long, env = "SOFTSEG_PORT", default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = DEFAULT_PIXEL_BUDGET)]
        pixel_budget: usize,
    },
    /// Write procedurally generated training scenes.
    Synth {
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 4)]
        colors: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    /// Smooth alphas with a guided filter before color estimation.
    #[arg(long)]
    guided_filter: bool,
    #[arg(long, default_value_t = 4)]
    gf_radius: usize,
    #[arg(long, default_value_t = 1e-4)]
    gf_eps: f64,
}

impl FilterArgs {
    fn params(&self) -> Option<GuidedFilterParams> {
        self.guided_filter.then_some(GuidedFilterParams {
            radius: self.gf_radius,
            eps: self.gf_eps,
        })
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum MaskModeArg {
    Multiply,
    Set,
}

impl From<MaskModeArg> for MaskMode {
    fn from(m: MaskModeArg) -> Self {
        match m {
            MaskModeArg::Multiply => MaskMode::Multiply,
            MaskModeArg::Set => MaskMode::Set,
        }
    }
}

/// Parses `argv` and runs the command. Returns 0 on success, 1 on usage
/// errors and 2 on runtime failures.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            let report = serde_json::json!({"error": e.to_string(), "kind": error_kind(&e)});
            eprintln!("{report}");
            2
        }
    }
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::Dimension { .. } => "dimension",
        Error::InvalidArgument(_) => "invalid_argument",
        Error::NonFiniteGradient { .. } => "non_finite_gradient",
        Error::PaletteSize { .. } => "palette_size",
        Error::NotNormalized { .. } => "not_normalized",
        Error::LayerIndex { .. } => "layer_index",
        Error::PaletteParse { .. } => "palette_parse",
        Error::Image { .. } => "image",
        Error::Weights(_) => "weights",
        Error::Dataset(_) => "dataset",
        Error::Diverged { .. } => "diverged",
        Error::Io { .. } => "io",
        Error::Json(_) => "json",
    }
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn parse_mask(spec: &str, mode: MaskMode, size: (usize, usize)) -> Result<LayerMask> {
    let (layer, file) = spec
        .split_once(':')
        .ok_or_else(|| Error::InvalidArgument(format!("mask `{spec}` is not LAYER:FILE")))?;
    let layer = layer
        .parse()
        .map_err(|_| Error::InvalidArgument(format!("mask layer `{layer}` is not an index")))?;
    let img = load_image(file)?;
    if (img.width(), img.height()) != size {
        return Err(Error::InvalidArgument(format!(
            "mask {file} is {}×{}, image is {}×{}",
            img.width(),
            img.height(),
            size.0,
            size.1
        )));
    }
    Ok(LayerMask {
        layer,
        mask: img.gray(),
        mode,
    })
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Palette { image, k, seed, out } => {
            let palette = extract_palette(&load_image(&image)?, k, seed)?;
            let text = format_palette(&palette);
            match out {
                Some(path) => {
                    std::fs::write(&path, text).map_err(|e| io_err(&path, e))?;
                    for c in palette.colors() {
                        println!("{}", to_hex(*c));
                    }
                }
                None => print!("{text}"),
            }
        }
        Command::Decompose {
            image,
            palette,
            weights,
            filter,
            masks,
            mask_mode,
            out,
            sixteen_bit,
        } => {
            let img = load_image(&image)?;
            let palette = load_palette(&palette)?;
            let weights = load_weights_for(&weights, palette.len())?;
            let masks = masks
                .iter()
                .map(|m| parse_mask(m, mask_mode.into(), (img.width(), img.height())))
                .collect::<Result<_>>()?;
            let opts = DecomposeOptions {
                guided_filter: filter.params(),
                masks,
            };
            let stack = decompose(&img, &palette, &weights, &opts)?;
            let export = ExportOptions {
                sixteen_bit,
                options: opts.to_json(),
                weights_hash: Some(weights_hash(&weights)),
            };
            println!("{}", save_layers(&stack, &out, &export)?.display());
        }
        Command::Unmix {
            image,
            palette,
            sigma,
            max_iters,
            out,
        } => {
            let img = load_image(&image)?;
            let palette = load_palette(&palette)?;
            let mut cfg = UnmixConfig {
                sparsity_weight: sigma,
                ..Default::default()
            };
            if let Some(n) = max_iters {
                cfg.max_iters = n;
            }
            let result = unmix_image(&img, &models_from_palette(&palette), &cfg)?;
            eprintln!(
                "{} pixels, {} not converged, mean energy {:.5}, mean residual {:.2e}",
                result.summary.pixels,
                result.summary.not_converged,
                result.summary.mean_energy,
                result.summary.mean_residual
            );
            let export = ExportOptions {
                options: serde_json::json!({"method": "unmix", "config": cfg}),
                ..Default::default()
            };
            println!("{}", save_layers(&result.layers, &out, &export)?.display());
        }
        Command::Train {
            config,
            steps,
            dataset,
            out,
            seed,
        } => {
            let mut cfg = TrainConfig::load(&config)?;
            if let Some(s) = steps {
                cfg.steps = s;
            }
            if let Some(d) = dataset {
                cfg.dataset_path = d;
            }
            if let Some(o) = out {
                cfg.out_dir = Some(o);
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let outcome = train(&cfg)?;
            let (first, last) = outcome.loss_trend(0.1);
            eprintln!("{} steps, mean loss first 10% {first:.5}, last 10% {last:.5}", outcome.log.len());
            if let Some(step) = outcome.diverged_at {
                return Err(Error::Diverged { step });
            }
        }
        Command::Eval { original, layers } => {
            let img = load_image(&original)?;
            let (stack, _) = load_layers(&layers)?;
            let name = original.file_name().unwrap_or_default().to_string_lossy().into_owned();
            let report = EvalReport::from_scores(vec![score(name, &img, &stack)?])?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            eprint!("{}", report.table());
        }
        Command::Recolor {
            layers,
            layer,
            color,
            out,
        } => {
            let (stack, _) = load_layers(&layers)?;
            let color = parse_hex(&color)
                .ok_or_else(|| Error::InvalidArgument(format!("`{color}` is not a #RRGGBB color")))?;
            save_png(&recolor(&stack, layer, color)?, &out)?;
        }
        Command::Frames {
            dir,
            palette,
            weights,
            filter,
            out,
        } => {
            let palette = load_palette(&palette)?;
            let weights = load_weights_for(&weights, palette.len())?;
            let hash = weights_hash(&weights);
            let opts = DecomposeOptions {
                guided_filter: filter.params(),
                masks: Vec::new(),
            };
            let mut done = 0usize;
            for path in image_files(&dir)? {
                let img = match load_image(&path) {
                    Ok(img) => img,
                    Err(e) => {
                        warn!("skipping {e}");
                        continue;
                    }
                };
                let stem = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
                let stack = decompose(&img, &palette, &weights, &opts)?;
                let export = ExportOptions {
                    options: opts.to_json(),
                    weights_hash: Some(hash.clone()),
                    ..Default::default()
                };
                save_layers(&stack, out.join(&stem), &export)?;
                done += 1;
            }
            if done == 0 {
                return Err(Error::Dataset(format!("{} contains no readable frames", dir.display())));
            }
            eprintln!("{done} frames written to {}", out.display());
        }
        Command::Bench {
            sizes,
            weights,
            repeats,
            json,
        } => {
            let weights = load_weights(&weights)?;
            let report = bench_decompose(&weights, &sizes, repeats)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                print!("{}", report.table());
            }
        }
        Command::Serve {
            weights,
            port,
            host,
            pixel_budget,
        } => {
            let weights = load_weights(&weights)?;
            let addr: SocketAddr = format!("{host}:{port}")
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("`{host}:{port}` is not a socket address")))?;
            let config = ServerConfig {
                pixel_budget,
                ..Default::default()
            };
            let rt = tokio::runtime::Runtime::new().map_err(|e| io_err(Path::new("tokio runtime"), e))?;
            rt.block_on(serve(weights, addr, config)).map_err(|e| io_err(Path::new(&addr.to_string()), e))?;
        }
        Command::Synth {
            out,
            count,
            size,
            colors,
            seed,
        } => {
            let params = SceneParams {
                width: size,
                height: size,
                colors,
                ..Default::default()
            };
            write_scenes(&out, &params, count, seed)?;
            eprintln!("{count} scenes written to {}", out.display());
        }
    }
    Ok(())
}
