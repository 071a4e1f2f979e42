//! Subcommand implementations. Each writes its outputs plus a `run.json`
//! record: next to a directory output as `run.json`, next to a file output
//! as `<file>.run.json`.

use std::path::{Path, PathBuf};

use serde_json::json;
use tryon_core::checkpoint::weights_hash;
use tryon_core::dataset::{build_dataset, load_dataset, InputSpec};
use tryon_core::encoder::{encode_json, encoder_losses_csv, train_encoder, EncoderCheckpoint};
use tryon_core::error::write_file;
use tryon_core::eval::{
    ablation_report, mean_defined, plan_transfer, sensitivity_correlation, transfer_experiment, Metrics,
    TransferReport,
};
use tryon_core::image::Image;
use tryon_core::imitator::{imitator_losses_csv, train_imitator, ImitatorCheckpoint, RenderCache};
use tryon_core::perceptual::FeatureEncoder;
use tryon_core::renderer::{default_swatch, Renderer};
use tryon_core::sampler::{builtin_presets, fit_gaussian, load_presets, sample_params, SamplerConfig};
use tryon_core::scene::{generate_synthetic_scene, load_scene, load_scene_dirs, Scene};
use tryon_core::schema::{load_schema, params_document, parse_params_document, ParameterSchema};

use crate::config::{required, RunConfig};
use crate::{CliError, Command, Common};

type Result<T> = std::result::Result<T, CliError>;

fn base_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    if let Some(s) = common.seed {
        cfg.seed = Some(s);
    }
    if let Some(r) = common.renderer {
        cfg.renderer_id = Some(r);
    }
    if let Some(o) = &common.out {
        cfg.paths.out = Some(o.clone());
    }
    if let Some(s) = &common.swatch {
        cfg.paths.swatch = Some(s.clone());
    }
    Ok(cfg)
}

fn set<T: Clone>(slot: &mut T, value: &Option<T>) {
    if let Some(v) = value {
        *slot = v.clone();
    }
}

fn set_opt<T: Clone>(slot: &mut Option<T>, value: &Option<T>) {
    if value.is_some() {
        *slot = value.clone();
    }
}

/// Provenance of one run; free of timestamps so reruns are identical.
fn write_run_record(path: &Path, command: &str, cfg: &RunConfig, extra: serde_json::Value) -> Result<()> {
    let mut doc = json!({
        "command": command,
        "config_hash": cfg.hash(),
        "seed": cfg.seed,
        "versions": {
            "tryon": env!("CARGO_PKG_VERSION"),
            "schema_hash": cfg.renderer_id.map(|r| load_schema(r).hash()),
        },
        "config": serde_json::to_value(cfg).expect("config serializes"),
    });
    if let (Some(obj), serde_json::Value::Object(more)) = (doc.as_object_mut(), extra) {
        obj.extend(more);
    }
    let mut text = serde_json::to_string_pretty(&doc).expect("record serializes");
    text.push('\n');
    Ok(write_file(path, text.as_bytes())?)
}

fn file_record(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".run.json");
    out.with_file_name(name)
}

fn renderer_for(cfg: &RunConfig) -> Result<Renderer> {
    Ok(Renderer::for_id(cfg.renderer()?, cfg.paths.swatch.as_deref())?)
}

fn sampler_for(cfg: &RunConfig, schema: &ParameterSchema, seed: u64) -> Result<SamplerConfig> {
    let mut s = if cfg.sampler.uniform {
        SamplerConfig::uniform(schema, seed)
    } else {
        let bank = match &cfg.paths.presets {
            Some(p) => load_presets(p, schema)?,
            None => builtin_presets(schema),
        };
        fit_gaussian(&bank, schema)?
    };
    if let Some(mix) = cfg.sampler.uniform_mix {
        s.uniform_mix = mix;
    }
    s.seed = seed;
    s.validate(schema)?;
    Ok(s)
}

fn scenes_from(cfg: &RunConfig) -> Result<Vec<Scene>> {
    let dir = required(&cfg.paths.scenes, "scenes (--scenes or paths.scenes)")?;
    let scenes = load_scene_dirs(dir)?;
    if scenes.is_empty() {
        return Err(tryon_core::Error::data(format!("no scene directories under {}", dir.display())).into());
    }
    Ok(scenes)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    Ok(write_file(path, text.as_bytes())?)
}

pub fn execute(command: Command) -> Result<()> {
    match command {
        Command::GenScenes { common, n, size } => {
            let mut cfg = base_config(&common)?;
            set(&mut cfg.scenes.n, &n);
            set(&mut cfg.scenes.size, &size);
            gen_scenes(&cfg)
        }
        Command::SampleParams {
            common,
            n,
            presets,
            uniform_mix,
        } => {
            let mut cfg = base_config(&common)?;
            set(&mut cfg.dataset.n, &n);
            set_opt(&mut cfg.paths.presets, &presets);
            set_opt(&mut cfg.sampler.uniform_mix, &uniform_mix);
            sample(&cfg)
        }
        Command::Render {
            common,
            scene,
            lip_mask,
            hair_mask,
            params,
        } => {
            let cfg = base_config(&common)?;
            render(&cfg, &scene, lip_mask.as_deref(), hair_mask.as_deref(), &params)
        }
        Command::MakeDataset {
            common,
            scenes,
            n,
            presets,
            uniform_mix,
        } => {
            let mut cfg = base_config(&common)?;
            set_opt(&mut cfg.paths.scenes, &scenes);
            set(&mut cfg.dataset.n, &n);
            set_opt(&mut cfg.paths.presets, &presets);
            set_opt(&mut cfg.sampler.uniform_mix, &uniform_mix);
            make_dataset(&cfg)
        }
        Command::TrainImitator {
            common,
            dataset,
            epochs,
            batch,
            lr,
            lambda2,
        } => {
            let mut cfg = base_config(&common)?;
            set_opt(&mut cfg.paths.dataset, &dataset);
            set(&mut cfg.imitator.epochs, &epochs);
            set(&mut cfg.imitator.batch, &batch);
            set(&mut cfg.imitator.lr, &lr);
            set(&mut cfg.imitator.lambda2, &lambda2);
            imitator(&mut cfg)
        }
        Command::TrainEncoder {
            common,
            dataset,
            imitator,
            init,
            mode,
            epochs,
            batch,
            lr,
            lambda3,
        } => {
            let mut cfg = base_config(&common)?;
            set_opt(&mut cfg.paths.dataset, &dataset);
            set_opt(&mut cfg.paths.imitator, &imitator);
            set(&mut cfg.encoder.mode, &mode);
            set(&mut cfg.encoder.epochs, &epochs);
            set(&mut cfg.encoder.batch, &batch);
            set(&mut cfg.encoder.lr, &lr);
            set(&mut cfg.encoder.lambda3, &lambda3);
            encoder(&mut cfg, init.as_deref())
        }
        Command::Encode {
            common,
            encoder,
            reference,
            lip_mask,
            hair_mask,
        } => {
            let mut cfg = base_config(&common)?;
            set_opt(&mut cfg.paths.encoder, &encoder);
            encode(&cfg, &reference, &lip_mask, &hair_mask)
        }
        Command::EvalTransfer {
            common,
            encoder,
            scenes,
            n,
            presets,
        } => {
            let mut cfg = base_config(&common)?;
            set_opt(&mut cfg.paths.encoder, &encoder);
            set_opt(&mut cfg.paths.scenes, &scenes);
            set(&mut cfg.eval.n, &n);
            set_opt(&mut cfg.paths.presets, &presets);
            eval_transfer(&cfg)
        }
        Command::EvalAblation {
            common,
            condition,
            scenes,
            n,
            presets,
        } => {
            let mut cfg = base_config(&common)?;
            if !condition.is_empty() {
                cfg.eval.conditions = condition;
            }
            set_opt(&mut cfg.paths.scenes, &scenes);
            set(&mut cfg.eval.n, &n);
            set_opt(&mut cfg.paths.presets, &presets);
            eval_ablation(&cfg)
        }
        Command::SensCorr {
            common,
            imitator,
            scenes,
            probes,
        } => {
            let mut cfg = base_config(&common)?;
            set_opt(&mut cfg.paths.imitator, &imitator);
            set_opt(&mut cfg.paths.scenes, &scenes);
            set(&mut cfg.eval.probes_per_dim, &probes);
            sens_corr(&cfg)
        }
        Command::Serve { common, port, encoder } => {
            let cfg = base_config(&common)?;
            serve(&cfg, port, &encoder)
        }
    }
}

fn gen_scenes(cfg: &RunConfig) -> Result<()> {
    let seed = cfg.seed()?;
    let out = required(&cfg.paths.out, "out")?;
    let mut ids = Vec::with_capacity(cfg.scenes.n);
    for i in 0..cfg.scenes.n {
        let s = generate_synthetic_scene(seed.wrapping_add(i as u64), cfg.scenes.size)?;
        s.save_dir(&out.join(&s.id))?;
        ids.push(s.id);
    }
    log::info!("wrote {} scenes to {}", ids.len(), out.display());
    write_run_record(&out.join("run.json"), "gen-scenes", cfg, json!({ "scene_ids": ids }))
}

fn sample(cfg: &RunConfig) -> Result<()> {
    let seed = cfg.seed()?;
    let schema = load_schema(cfg.renderer()?);
    let out = required(&cfg.paths.out, "out")?;
    let s = sampler_for(cfg, &schema, seed)?;
    let draws = sample_params(&s, &schema, cfg.dataset.n)?;
    let docs: Vec<_> = draws.iter().map(|g| params_document(&schema, g)).collect();
    write_text(out, &(serde_json::to_string_pretty(&docs).expect("serializes") + "\n"))?;
    write_run_record(&file_record(out), "sample-params", cfg, json!({ "sampler": s }))
}

fn render(cfg: &RunConfig, scene: &Path, lip: Option<&Path>, hair: Option<&Path>, params: &Path) -> Result<()> {
    let r = renderer_for(cfg)?;
    let out = required(&cfg.paths.out, "out")?;
    let scene = load_scene(scene, lip, hair)?;
    let text = String::from_utf8(tryon_core::error::read_file(params)?)
        .map_err(|e| tryon_core::Error::decode(params, e))?;
    let g = parse_params_document(&r.schema, &text)?;
    r.render(&scene, &g)?.save(out)?;
    write_run_record(
        &file_record(out),
        "render",
        cfg,
        json!({ "params": params_document(&r.schema, &g), "scene_id": scene.id }),
    )
}

fn input_for(cfg: &RunConfig) -> Result<InputSpec> {
    Ok(cfg
        .dataset
        .input
        .clone()
        .unwrap_or_else(|| InputSpec::default_for(cfg.renderer_id.expect("renderer checked"))))
}

fn make_dataset(cfg: &RunConfig) -> Result<()> {
    let seed = cfg.seed()?;
    let r = renderer_for(cfg)?;
    let out = required(&cfg.paths.out, "out")?;
    let input = input_for(cfg)?;
    let scenes = scenes_from(cfg)?
        .iter()
        .map(|s| input.prepare_quantized(s))
        .collect::<tryon_core::Result<Vec<_>>>()?;
    let s = sampler_for(cfg, &r.schema, seed)?;
    let (manifest, _) = build_dataset(&r, &scenes, &input, &s, cfg.dataset.n, seed, Some(out))?;
    log::info!("dataset of {} renders ({} skipped) in {}", manifest.n, manifest.skipped, out.display());
    write_run_record(&out.join("run.json"), "make-dataset", cfg, json!({}))
}

fn imitator(cfg: &mut RunConfig) -> Result<()> {
    let seed = cfg.seed()?;
    cfg.imitator.seed = seed;
    let dir = required(&cfg.paths.dataset, "dataset")?.to_path_buf();
    let out = required(&cfg.paths.out, "out")?.to_path_buf();
    let (manifest, set) = load_dataset(&dir)?;
    if let Some(r) = cfg.renderer_id {
        if r != manifest.renderer_id {
            return Err(CliError::Usage(format!("dataset is for {}, not {r}", manifest.renderer_id)));
        }
    }
    cfg.renderer_id = Some(manifest.renderer_id);
    let r = renderer_for(cfg)?;
    let mut cache = RenderCache::from_env();
    let ck = train_imitator(&set, &r, &cfg.imitator, &mut cache, &mut |e| log::info!("{e:?}"))?;
    ck.save(&out)?;
    write_run_record(
        &out.join("run.json"),
        "train-imitator",
        cfg,
        json!({
            "weights": weights_hash(&ck.imitator.params),
            "losses": imitator_losses_csv(&ck.meta.loss_history),
        }),
    )
}

fn encoder(cfg: &mut RunConfig, init: Option<&Path>) -> Result<()> {
    let seed = cfg.seed()?;
    cfg.encoder.seed = seed;
    let dir = required(&cfg.paths.dataset, "dataset")?.to_path_buf();
    let out = required(&cfg.paths.out, "out")?.to_path_buf();
    let (manifest, set) = load_dataset(&dir)?;
    cfg.renderer_id = Some(manifest.renderer_id);
    let imi = match (&cfg.paths.imitator, cfg.encoder.mode.uses_rendering()) {
        (Some(p), true) => Some(ImitatorCheckpoint::load(p)?),
        (None, true) => return Err(CliError::Usage("the rendering loss needs --imitator".into())),
        (_, false) => None,
    };
    let init = init.map(EncoderCheckpoint::load).transpose()?;
    let ck = train_encoder(
        &set,
        imi.as_ref().map(|c| &c.imitator),
        &cfg.encoder,
        init.as_ref(),
        &mut |e| log::info!("{e:?}"),
    )?;
    ck.save(&out)?;
    write_run_record(
        &out.join("run.json"),
        "train-encoder",
        cfg,
        json!({
            "weights": weights_hash(&ck.encoder.params),
            "losses": encoder_losses_csv(&ck.meta.loss_history),
        }),
    )
}

fn encode(cfg: &RunConfig, references: &[PathBuf], lips: &[PathBuf], hairs: &[PathBuf]) -> Result<()> {
    let ck = EncoderCheckpoint::load(required(&cfg.paths.encoder, "encoder")?)?;
    for (flag, list) in [("--lip-mask", lips), ("--hair-mask", hairs)] {
        if !list.is_empty() && list.len() != references.len() {
            return Err(CliError::Usage(format!(
                "{flag} given {} times for {} references",
                list.len(),
                references.len()
            )));
        }
    }
    let refs = references
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let s = load_scene(p, lips.get(i).map(PathBuf::as_path), hairs.get(i).map(PathBuf::as_path))?;
            ck.encoder.prepare_reference(&s)
        })
        .collect::<tryon_core::Result<Vec<Image>>>()?;
    let r = ck.encoder.encode_reference(&refs.iter().collect::<Vec<_>>())?;
    let text = encode_json(&ck.encoder.schema, &r);
    match &cfg.paths.out {
        Some(out) => {
            write_text(out, &text)?;
            let mut rec = cfg.clone();
            rec.renderer_id = Some(ck.meta.renderer_id);
            write_run_record(&file_record(out), "encode", &rec, json!({ "references": references }))
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn transfer_for(
    cfg: &RunConfig,
    r: &Renderer,
    scenes: &[Scene],
    ck: &EncoderCheckpoint,
    condition: &str,
    seed: u64,
) -> Result<TransferReport> {
    let s = sampler_for(cfg, &r.schema, seed)?;
    let plan = plan_transfer(r, &s, scenes.len(), cfg.eval.n, seed)?;
    let metrics = Metrics::new(FeatureEncoder::seeded_random(cfg.eval.feature_seed));
    let mut estimate = |_: usize, reference: &Scene| {
        let img = ck.encoder.prepare_reference(reference)?;
        Ok(ck.encoder.encode_reference(&[&img])?.g)
    };
    Ok(transfer_experiment(r, scenes, &plan, &ck.encoder.input, &metrics, condition, &mut estimate)?)
}

fn records_csv(rep: &TransferReport) -> String {
    let mut s = String::from("sample_id,condition,psnr_db,ssim,perceptual\n");
    for r in &rep.records {
        s.push_str(&format!("{},{},{},{},{}\n", r.sample_id, r.condition, r.psnr_db, r.ssim, r.perceptual));
    }
    s
}

fn eval_transfer(cfg: &RunConfig) -> Result<()> {
    let seed = cfg.seed()?;
    let ck = EncoderCheckpoint::load(required(&cfg.paths.encoder, "encoder")?)?;
    let mut cfg = cfg.clone();
    cfg.renderer_id = Some(ck.meta.renderer_id);
    let out = required(&cfg.paths.out, "out")?.to_path_buf();
    let r = renderer_for(&cfg)?;
    let scenes = scenes_from(&cfg)?;
    let condition = serde_json::to_value(ck.meta.cfg.mode).expect("mode serializes");
    let rep = transfer_for(&cfg, &r, &scenes, &ck, condition.as_str().unwrap_or("encoder"), seed)?;
    write_text(&out.join("records.csv"), &records_csv(&rep))?;
    write_text(
        &out.join("summary.json"),
        &(serde_json::to_string_pretty(&json!({ "summary": rep.summary, "failed": rep.failed })).expect("serializes")
            + "\n"),
    )?;
    log::info!("{:?}", rep.summary);
    write_run_record(&out.join("run.json"), "eval-transfer", &cfg, json!({}))
}

fn eval_ablation(cfg: &RunConfig) -> Result<()> {
    let seed = cfg.seed()?;
    if cfg.eval.conditions.is_empty() {
        return Err(CliError::Usage("eval-ablation needs at least one --condition name=dir".into()));
    }
    let out = required(&cfg.paths.out, "out")?.to_path_buf();
    let cks = cfg
        .eval
        .conditions
        .iter()
        .map(|c| EncoderCheckpoint::load(&c.encoder))
        .collect::<tryon_core::Result<Vec<_>>>()?;
    let id = cks[0].meta.renderer_id;
    if cks.iter().any(|c| c.meta.renderer_id != id) {
        return Err(tryon_core::Error::data("ablation conditions mix renderers").into());
    }
    let mut cfg = cfg.clone();
    cfg.renderer_id = Some(id);
    let r = renderer_for(&cfg)?;
    let scenes = scenes_from(&cfg)?;
    let mut summaries = Vec::with_capacity(cks.len());
    let mut records = String::new();
    for (c, ck) in cfg.eval.conditions.iter().zip(&cks) {
        let rep = transfer_for(&cfg, &r, &scenes, ck, &c.name, seed)?;
        let csv = records_csv(&rep);
        records.push_str(if records.is_empty() { &csv } else { csv.split_once('\n').map_or("", |x| x.1) });
        summaries.push(rep.summary);
    }
    let (csv, md) = ablation_report(&summaries);
    write_text(&out.join("ablation.csv"), &csv)?;
    write_text(&out.join("ablation.md"), &md)?;
    write_text(&out.join("records.csv"), &records)?;
    print!("{md}");
    write_run_record(&out.join("run.json"), "eval-ablation", &cfg, json!({}))
}

fn sens_corr(cfg: &RunConfig) -> Result<()> {
    let seed = cfg.seed()?;
    let ck = ImitatorCheckpoint::load(required(&cfg.paths.imitator, "imitator")?)?;
    let mut cfg = cfg.clone();
    cfg.renderer_id = Some(ck.meta.renderer_id);
    let out = required(&cfg.paths.out, "out")?.to_path_buf();
    let r = renderer_for(&cfg)?;
    let imi = &ck.imitator;
    let scenes = scenes_from(&cfg)?
        .iter()
        .map(|s| imi.input.prepare_quantized(s))
        .collect::<tryon_core::Result<Vec<_>>>()?;
    let render = |s: &Scene, u: &[f64]| Ok(r.render_normalized(s, u)?.quantized());
    let imitate = |s: &Scene, u: &[f64]| imi.imitate_normalized(s, u);
    let m = r.schema.m();
    let corr = sensitivity_correlation(&render, &imitate, &scenes, m, cfg.eval.probes_per_dim, seed)?;
    let names: Vec<&str> = r.schema.names().collect();
    let doc = json!({ "names": names, "correlation": corr, "mean": mean_defined(&corr) });
    write_text(&out.join("sens_corr.json"), &(serde_json::to_string_pretty(&doc).expect("serializes") + "\n"))?;
    write_run_record(&out.join("run.json"), "sens-corr", &cfg, json!({}))
}

fn serve(cfg: &RunConfig, port: u16, encoders: &[PathBuf]) -> Result<()> {
    let swatch = match &cfg.paths.swatch {
        Some(p) => Image::load(p)?,
        None => default_swatch(),
    };
    let mut store = tryon_service::SessionStore::new(swatch);
    let mut paths: Vec<&Path> = encoders.iter().map(PathBuf::as_path).collect();
    if let Some(p) = &cfg.paths.encoder {
        paths.push(p);
    }
    for p in paths {
        store = store.with_encoder(EncoderCheckpoint::load(p)?);
    }
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| tryon_core::Error::io("tokio runtime", e))?;
    let addr = std::net::SocketAddr::from(([127, 0, 0, 1], port));
    rt.block_on(tryon_service::serve(addr, std::sync::Arc::new(store)))
        .map_err(|e| tryon_core::Error::io(format!("127.0.0.1:{port}"), e))?;
    Ok(())
}
