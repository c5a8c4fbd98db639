//! Directory-exchange protocol for external upscalers.
//!
//! Layout inside the exchange directory:
//!
//! ```text
//! <dir>/request.txt      one line per tile: `NNNNNN.png <factor>`
//! <dir>/in/NNNNNN.png    lossless input tiles, numbered in batch order
//! <dir>/out/NNNNNN.png   outputs, same names, exactly factor× the input dims
//! ```
//!
//! The command is invoked with the exchange directory as its sole argument
//! and must exit 0. Concurrent batches must use distinct exchange
//! directories.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::process::ExternalCommand;
use crate::raster::PixelGrid;

fn exchange_name(index: usize) -> String {
    format!("{index:06}.png")
}

/// Write the `in/` tiles and `request.txt` for a batch. Returns the input
/// file paths in batch order.
pub fn write_exchange_inputs(
    tiles: &[(String, PixelGrid)],
    factor: u32,
    exchange_dir: &Path,
) -> Result<Vec<PathBuf>> {
    let in_dir = exchange_dir.join("in");
    let out_dir = exchange_dir.join("out");
    fs::create_dir_all(&in_dir).map_err(|e| Error::io(&in_dir, e))?;
    fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;

    let mut request = String::new();
    let mut paths = Vec::with_capacity(tiles.len());
    for (index, (_, grid)) in tiles.iter().enumerate() {
        let name = exchange_name(index);
        let path = in_dir.join(&name);
        grid.save_png(&path)?;
        request.push_str(&format!("{name} {factor}\n"));
        paths.push(path);
    }
    let request_path = exchange_dir.join("request.txt");
    fs::write(&request_path, request).map_err(|e| Error::io(&request_path, e))?;
    Ok(paths)
}

/// Upscale a batch of tiles through an external command speaking the
/// exchange protocol.
///
/// Each tile is validated on the way back: a missing output, an output whose
/// dimensions are not exactly factor× the input, or a nonzero command exit
/// all fail with the offending tile id.
pub fn external_upscale(
    tiles: &[(String, PixelGrid)],
    factor: u32,
    exchange_dir: &Path,
    command: &ExternalCommand,
) -> Result<Vec<PixelGrid>> {
    if factor == 0 {
        return Err(Error::ZeroFactor);
    }
    write_exchange_inputs(tiles, factor, exchange_dir)?;
    command.run_on_dir(exchange_dir)?;

    let out_dir = exchange_dir.join("out");
    let mut results = Vec::with_capacity(tiles.len());
    for (index, (tile_id, input)) in tiles.iter().enumerate() {
        let path = out_dir.join(exchange_name(index));
        if !path.exists() {
            return Err(Error::MissingUpscaleOutput {
                tile_id: tile_id.clone(),
                path,
            });
        }
        let output = PixelGrid::load_png(&path)?;
        let want_w = input.width() * factor;
        let want_h = input.height() * factor;
        if output.width() != want_w || output.height() != want_h {
            return Err(Error::UpscaleDimensionMismatch {
                tile_id: tile_id.clone(),
                want_w,
                want_h,
                got_w: output.width(),
                got_h: output.height(),
            });
        }
        results.push(output);
    }
    Ok(results)
}

/// Serve one exchange request with the built-in nearest-neighbor upscaler.
///
/// This is the reference implementation of the consumer side of the
/// protocol: read `request.txt`, upscale every listed input, write the
/// outputs. Returns the number of tiles processed. Useful for plumbing tests
/// and as a template for wiring in a real super-resolution engine.
pub fn serve_exchange_nn(exchange_dir: &Path) -> Result<usize> {
    let request_path = exchange_dir.join("request.txt");
    let request = fs::read_to_string(&request_path).map_err(|e| Error::io(&request_path, e))?;
    let out_dir = exchange_dir.join("out");
    fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;

    let mut served = 0;
    for line in request.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let (Some(name), Some(factor)) = (parts.next(), parts.next()) else {
            return Err(Error::io(
                &request_path,
                std::io::Error::new(
                    std::io::ErrorKind::InvalidData,
                    format!("malformed request line: {line:?}"),
                ),
            ));
        };
        let factor: u32 = factor.parse().map_err(|_| {
            Error::io(
                &request_path,
                std::io::Error::new(
                    std::io::ErrorKind::InvalidData,
                    format!("bad factor in request line: {line:?}"),
                ),
            )
        })?;
        let grid = PixelGrid::load_png(&exchange_dir.join("in").join(name))?;
        grid.nn_upscale(factor)?.save_png(&out_dir.join(name))?;
        served += 1;
    }
    Ok(served)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_tiles(n: usize, w: u32, h: u32) -> Vec<(String, PixelGrid)> {
        let mut rng = StdRng::seed_from_u64(77);
        (0..n)
            .map(|i| {
                let data: Vec<u8> = (0..w as usize * h as usize * 3)
                    .map(|_| rng.random())
                    .collect();
                (format!("tile_{i}"), PixelGrid::new(w, h, data).unwrap())
            })
            .collect()
    }

    #[test]
    fn serve_round_trip_matches_nn() {
        let dir = tempfile::tempdir().unwrap();
        let tiles = random_tiles(3, 13, 9);
        write_exchange_inputs(&tiles, 4, dir.path()).unwrap();
        assert_eq!(serve_exchange_nn(dir.path()).unwrap(), 3);
        for (i, (_, grid)) in tiles.iter().enumerate() {
            let out = PixelGrid::load_png(&dir.path().join("out").join(exchange_name(i))).unwrap();
            assert_eq!(out, grid.nn_upscale(4).unwrap());
        }
    }

    #[test]
    fn request_manifest_format() {
        let dir = tempfile::tempdir().unwrap();
        let tiles = random_tiles(2, 4, 4);
        write_exchange_inputs(&tiles, 2, dir.path()).unwrap();
        let manifest = std::fs::read_to_string(dir.path().join("request.txt")).unwrap();
        assert_eq!(manifest, "000000.png 2\n000001.png 2\n");
    }
}
