//! `lipscope regions`: linear-region atlas of a trained network on a 2D
//! slice.

use std::fs;
use std::path::{Path, PathBuf};

use lipscope::network::Network;
use lipscope::region::PatternMatrix;
use lipscope::regionviz::{self, ColorMode, RegionScan, SlicePlane};
use lipscope::tasks::{Dataset, SinusoidTask};

use crate::config::Variant;
use crate::run::{self, LoadedRun};
use crate::Failure;

pub const DEFAULT_RESOLUTION: usize = 200;

/// The plane spanned by a sinusoid run's embedding, over the latent square.
pub fn embedding_plane(omega: f64, seed: u64, resolution: usize) -> SlicePlane {
    let task = SinusoidTask::new(omega, seed);
    let e = &task.embedding;
    SlicePlane {
        origin: vec![0.0; e.rows()],
        axes: [e.column(0), e.column(1)],
        extent: [-1.0, 1.0, -1.0, 1.0],
        resolution: [resolution, resolution],
    }
}

pub fn load_plane(path: &Path) -> Result<SlicePlane, Failure> {
    let text = run::read_text(path).map_err(|e| Failure::Config(e.to_string()))?;
    let plane: SlicePlane = serde_json::from_str(&text)
        .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    plane
        .validate()
        .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    Ok(plane)
}

fn check_dims(plane: &SlicePlane, net: &Network) -> Result<(), Failure> {
    if plane.origin.len() != net.input_dim() {
        return Err(Failure::Config(format!(
            "plane: lives in dimension {}, the network expects {}",
            plane.origin.len(),
            net.input_dim()
        )));
    }
    Ok(())
}

pub struct Atlas {
    pub scan: RegionScan,
    pub files: Vec<PathBuf>,
}

/// Scans `net` on `plane` and writes `regions.csv`, `regions_lipschitz.svg`
/// and, with a pattern matrix, `regions_bound.svg` into `out`.
pub fn write_atlas(
    net: &Network,
    plane: &SlicePlane,
    pm: Option<&PatternMatrix>,
    data: Option<&Dataset>,
    bp_budget: usize,
    out: &Path,
    title: &str,
) -> Result<Atlas, Failure> {
    check_dims(plane, net)?;
    fs::create_dir_all(out).map_err(|e| Failure::Io(format!("cannot create {}: {e}", out.display())))?;
    let scan = regionviz::scan_regions(net, plane, pm, data, bp_budget)?;
    let points = data.map(|d| d.inputs.clone()).unwrap_or_default();
    let mut files = vec![out.join("regions.csv"), out.join("regions_lipschitz.svg")];
    run::write_text(&files[0], &regionviz::regions_csv(&scan))?;
    run::write_text(
        &files[1],
        &regionviz::emit_svg(&scan, &points, &ColorMode::Lipschitz, &format!("{title}: local Lipschitz constant")),
    )?;
    if pm.is_some() {
        let p = out.join("regions_bound.svg");
        run::write_text(
            &p,
            &regionviz::emit_svg(&scan, &points, &ColorMode::Bound, &format!("{title}: basis-pursuit bound")),
        )?;
        files.push(p);
    }
    Ok(Atlas { scan, files })
}

fn default_plane(run: &LoadedRun) -> Result<SlicePlane, Failure> {
    match run.spec.variant {
        Variant::Sinusoid { omega, .. } => Ok(embedding_plane(omega, run.spec.seed, DEFAULT_RESOLUTION)),
        Variant::CorruptedBlobs { .. } => Err(Failure::Config(
            "plane: corrupted-blob runs have no canonical plane; pass --plane".into(),
        )),
    }
}

pub fn cmd_regions(
    source: &Path,
    plane: Option<&Path>,
    out: Option<&Path>,
    bp_budget: usize,
) -> Result<Vec<PathBuf>, Failure> {
    let plane = plane.map(load_plane).transpose()?;
    if run::is_run_dir(source) {
        let run = run::load_run(source)?;
        let plane = match plane {
            Some(p) => p,
            None => default_plane(&run)?,
        };
        let net = &run.log.final_network;
        let pm = PatternMatrix::from_frozen(net, &run.data, run.log.config.loss)?;
        let out = out.unwrap_or(source);
        let atlas = write_atlas(net, &plane, Some(&pm), Some(&run.data), bp_budget, out, &run.spec.name())?;
        return Ok(atlas.files);
    }
    let text = run::read_text(source)?;
    let net = Network::from_json(&text).map_err(|e| Failure::Config(format!("{}: {e}", source.display())))?;
    let plane = plane.ok_or_else(|| Failure::Config("plane: a network file needs --plane".into()))?;
    let out = match out {
        Some(o) => o.to_path_buf(),
        None => source.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    let stem = source
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let atlas = write_atlas(&net, &plane, None, None, bp_budget, &out, &stem)?;
    Ok(atlas.files)
}
