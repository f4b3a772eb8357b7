use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matching::CorrespondenceSet;
use crate::pnm::{encode_pgm, encode_ppm, write_bytes};
use crate::tensor::Tensor;

/// Machine-readable companion of an overlay: the attention set, the
/// correspondence and which key indices were added by nearest-neighbor
/// search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlaySidecar {
    pub grid: usize,
    pub omega: Vec<usize>,
    pub correspondence: CorrespondenceSet,
    pub nn_added: Vec<usize>,
}

/// Paths written by [`export_overlay`].
#[derive(Debug, Clone, PartialEq)]
pub struct OverlayFiles {
    pub view: PathBuf,
    pub attention: PathBuf,
    pub sidecar: PathBuf,
}

/// Writes `<stem>_view.ppm`, `<stem>_attention.pgm` (the rescaled map
/// upsampled to the view size) and `<stem>.json` into `dir`.
pub fn export_overlay(
    view: &Tensor,
    rescaled: &Tensor,
    omega: &[usize],
    corr: &CorrespondenceSet,
    dir: &Path,
    stem: &str,
) -> Result<OverlayFiles> {
    let [_, v, vw] = view.dims3("export_overlay view")?;
    let [g, gw] = rescaled.dims2("export_overlay attention")?;
    if v != vw || g != gw || g == 0 || v % g != 0 {
        return Err(Error::shape(
            "export_overlay",
            format!("view {v}x{vw} and attention grid {g}x{gw} must be square with the grid dividing the view"),
        ));
    }
    if let Some(bad) = omega.iter().find(|&&i| i >= g * g) {
        return Err(Error::invalid("omega", format!("index {bad} outside a {g}x{g} grid")));
    }
    let cell = v / g;
    let upsampled = Tensor::from_fn(&[v, v], |p| {
        let (y, x) = (p / v, p % v);
        rescaled.data()[(y / cell) * g + x / cell]
    });
    let mut nn_added: Vec<usize> = corr.entries.iter().filter_map(|e| e.nn_added).collect();
    nn_added.sort_unstable();
    nn_added.dedup();
    let sidecar = OverlaySidecar {
        grid: g,
        omega: omega.to_vec(),
        correspondence: corr.clone(),
        nn_added,
    };
    let files = OverlayFiles {
        view: dir.join(format!("{stem}_view.ppm")),
        attention: dir.join(format!("{stem}_attention.pgm")),
        sidecar: dir.join(format!("{stem}.json")),
    };
    write_bytes(&files.view, &encode_ppm(view)?)?;
    write_bytes(&files.attention, &encode_pgm(&upsampled)?)?;
    let mut json = serde_json::to_string_pretty(&sidecar)?;
    json.push('\n');
    write_bytes(&files.sidecar, json.as_bytes())?;
    Ok(files)
}

pub fn read_sidecar(path: &Path) -> Result<OverlaySidecar> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
