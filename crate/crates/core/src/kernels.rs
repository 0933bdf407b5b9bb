//! Host-side accumulation kernels and the ensemble analytics built on the overlap grid.

use std::borrow::Borrow;
use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::io::Cursor;

use image::{ImageFormat, RgbaImage};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::device_model::KernelVariant;
use crate::raster::{RasterSurface, SurfaceId};

/// Rows below this many pixels are accumulated without spawning parallel work.
const PARALLEL_MIN_CELLS: usize = 1 << 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("no surfaces")]
    NoSurfaces,
    #[error("surface {index} is {actual_width}x{actual_height}, expected {width}x{height}")]
    DimMismatch { index: usize, width: u32, height: u32, actual_width: u32, actual_height: u32 },
    #[error("basemap is {actual_width}x{actual_height}, grid is {width}x{height}")]
    BasemapMismatch { width: u32, height: u32, actual_width: u32, actual_height: u32 },
    #[error("need at least 2 surfaces, got {0}")]
    TooFewSurfaces(usize),
    #[error("tau must be in (0, 1], got {0}")]
    InvalidTau(f64),
}

/// Per-pixel overlap counts over a set of surfaces.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccumulationGrid {
    width: u32,
    height: u32,
    counts: Vec<u32>,
    n_inputs: u32,
}

impl AccumulationGrid {
    pub fn zeros(width: u32, height: u32) -> Self {
        AccumulationGrid { width, height, counts: vec![0; (width as usize) * (height as usize)], n_inputs: 0 }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn n_inputs(&self) -> u32 {
        self.n_inputs
    }

    pub fn max_count(&self) -> u32 {
        self.counts.iter().copied().max().unwrap_or(0)
    }
}

/// Streams surfaces into an accumulation grid with the memory layout of a kernel variant.
///
/// `image1`, `image2` and `buffer2` read the running total from one buffer and write it to the
/// other, swapping after every surface; `buffer1` updates a single buffer in place. All produce
/// the same counts.
#[derive(Debug, Clone)]
pub struct Accumulator {
    width: u32,
    height: u32,
    variant: KernelVariant,
    front: Vec<u32>,
    back: Vec<u32>,
    n_inputs: u32,
}

impl Accumulator {
    pub fn new(width: u32, height: u32, variant: KernelVariant) -> Self {
        let cells = (width as usize) * (height as usize);
        let back = if variant == KernelVariant::Buffer1 { Vec::new() } else { vec![0; cells] };
        Accumulator { width, height, variant, front: vec![0; cells], back, n_inputs: 0 }
    }

    pub fn add(&mut self, surface: &RasterSurface) -> Result<(), KernelError> {
        if surface.width() != self.width || surface.height() != self.height {
            return Err(KernelError::DimMismatch {
                index: self.n_inputs as usize,
                width: self.width,
                height: self.height,
                actual_width: surface.width(),
                actual_height: surface.height(),
            });
        }
        let cells = surface.cells();
        let chunk = (self.width as usize).max(1);
        let parallel = cells.len() >= PARALLEL_MIN_CELLS;
        if self.variant == KernelVariant::Buffer1 {
            let step = |(acc, src): (&mut [u32], &[u8])| {
                for (a, &v) in acc.iter_mut().zip(src) {
                    *a += u32::from(v > 0);
                }
            };
            if parallel {
                self.front.par_chunks_mut(chunk).zip(cells.par_chunks(chunk)).for_each(step);
            } else {
                self.front.chunks_mut(chunk).zip(cells.chunks(chunk)).for_each(step);
            }
        } else {
            let step = |((out, prev), src): ((&mut [u32], &[u32]), &[u8])| {
                for ((o, &p), &v) in out.iter_mut().zip(prev).zip(src) {
                    *o = p + u32::from(v > 0);
                }
            };
            if parallel {
                self.back
                    .par_chunks_mut(chunk)
                    .zip(self.front.par_chunks(chunk))
                    .zip(cells.par_chunks(chunk))
                    .for_each(step);
            } else {
                self.back.chunks_mut(chunk).zip(self.front.chunks(chunk)).zip(cells.chunks(chunk)).for_each(step);
            }
            std::mem::swap(&mut self.front, &mut self.back);
        }
        self.n_inputs += 1;
        Ok(())
    }

    pub fn finish(self) -> AccumulationGrid {
        AccumulationGrid { width: self.width, height: self.height, counts: self.front, n_inputs: self.n_inputs }
    }
}

pub fn accumulate<S: Borrow<RasterSurface>>(surfaces: &[S], variant: KernelVariant) -> Result<AccumulationGrid, KernelError> {
    let first = surfaces.first().ok_or(KernelError::NoSurfaces)?.borrow();
    let mut acc = Accumulator::new(first.width(), first.height(), variant);
    for s in surfaces {
        acc.add(s.borrow())?;
    }
    Ok(acc.finish())
}

/// `bins[k]` is the number of pixels flooded by exactly `k` inputs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct OverlapHistogram {
    pub bins: Vec<u64>,
}

impl OverlapHistogram {
    pub fn total(&self) -> u64 {
        self.bins.iter().sum()
    }
}

pub fn overlap_histogram(grid: &AccumulationGrid) -> OverlapHistogram {
    let mut bins = vec![0u64; grid.n_inputs as usize + 1];
    for &c in &grid.counts {
        bins[c as usize] += 1;
    }
    OverlapHistogram { bins }
}

/// RGBA raster, row-major, top row first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompositeImage {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u8>,
}

impl CompositeImage {
    pub fn pixel(&self, x: u32, y: u32) -> [u8; 4] {
        let i = ((y as usize) * (self.width as usize) + x as usize) * 4;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2], self.pixels[i + 3]]
    }

    pub fn to_png(&self) -> Vec<u8> {
        let img = RgbaImage::from_raw(self.width, self.height, self.pixels.clone()).expect("pixel count matches");
        let mut out = Cursor::new(Vec::new());
        img.write_to(&mut out, ImageFormat::Png).expect("in-memory encode");
        out.into_inner()
    }
}

/// Overlay colour for an overlap count: blue hue at full value, saturation `count / n`,
/// transparent where nothing is flooded.
pub fn overlap_colour(count: u32, n_inputs: u32) -> [u8; 4] {
    if count == 0 || n_inputs == 0 {
        return [0, 0, 0, 0];
    }
    let s = f64::from(count.min(n_inputs)) / f64::from(n_inputs);
    let rg = (255.0 * (1.0 - s)).round() as u8;
    [rg, rg, 255, 255]
}

pub fn composite_map(grid: &AccumulationGrid, basemap: Option<&CompositeImage>) -> Result<CompositeImage, KernelError> {
    if let Some(base) = basemap {
        if base.width != grid.width || base.height != grid.height {
            return Err(KernelError::BasemapMismatch {
                width: grid.width,
                height: grid.height,
                actual_width: base.width,
                actual_height: base.height,
            });
        }
    }
    let mut pixels = Vec::with_capacity(grid.counts.len() * 4);
    for (i, &c) in grid.counts.iter().enumerate() {
        let overlay = overlap_colour(c, grid.n_inputs);
        match basemap {
            Some(base) if overlay[3] == 0 => pixels.extend_from_slice(&base.pixels[i * 4..i * 4 + 4]),
            _ => pixels.extend_from_slice(&overlay),
        }
    }
    Ok(CompositeImage { width: grid.width, height: grid.height, pixels })
}

/// Flooded pixels packed into 64-bit words.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FloodMask {
    width: u32,
    height: u32,
    words: Vec<u64>,
}

impl FloodMask {
    pub fn from_surface(s: &RasterSurface) -> Self {
        let mut words = vec![0u64; s.cells().len().div_ceil(64)];
        for (i, &v) in s.cells().iter().enumerate() {
            if v > 0 {
                words[i / 64] |= 1 << (i % 64);
            }
        }
        FloodMask { width: s.width(), height: s.height(), words }
    }

    /// `(|A ∩ B|, |A ∪ B|)`.
    fn overlap(&self, other: &FloodMask) -> (u64, u64) {
        self.words.iter().zip(&other.words).fold((0, 0), |(i, u), (a, b)| {
            (i + u64::from((a & b).count_ones()), u + u64::from((a | b).count_ones()))
        })
    }
}

/// Jaccard index as an exact fraction; two empty masks are identical.
#[derive(Debug, Clone, Copy)]
struct Similarity {
    num: u64,
    den: u64,
}

impl Similarity {
    fn of(a: &FloodMask, b: &FloodMask) -> Self {
        match a.overlap(b) {
            (_, 0) => Similarity { num: 1, den: 1 },
            (num, den) => Similarity { num, den },
        }
    }

    fn value(self) -> f64 {
        self.num as f64 / self.den as f64
    }

    fn at_least(self, tau: f64) -> bool {
        self.value() >= tau
    }
}

impl PartialEq for Similarity {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Similarity {}

impl PartialOrd for Similarity {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Similarity {
    fn cmp(&self, other: &Self) -> Ordering {
        (u128::from(self.num) * u128::from(other.den)).cmp(&(u128::from(other.num) * u128::from(self.den)))
    }
}

fn check_dims(surfaces: &[&RasterSurface]) -> Result<(), KernelError> {
    let Some(first) = surfaces.first() else { return Ok(()) };
    for (index, s) in surfaces.iter().enumerate() {
        if s.width() != first.width() || s.height() != first.height() {
            return Err(KernelError::DimMismatch {
                index,
                width: first.width(),
                height: first.height(),
                actual_width: s.width(),
                actual_height: s.height(),
            });
        }
    }
    Ok(())
}

pub fn jaccard(a: &RasterSurface, b: &RasterSurface) -> Result<f64, KernelError> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(KernelError::DimMismatch {
            index: 1,
            width: a.width(),
            height: a.height(),
            actual_width: b.width(),
            actual_height: b.height(),
        });
    }
    Ok(Similarity::of(&FloodMask::from_surface(a), &FloodMask::from_surface(b)).value())
}

/// Surfaces sorted by id, with their masks and the full similarity matrix.
struct SimilarityTable {
    ids: Vec<SurfaceId>,
    sims: Vec<Vec<Similarity>>,
}

impl SimilarityTable {
    fn build<S: Borrow<RasterSurface>>(surfaces: &[S]) -> Result<Self, KernelError> {
        let mut order: Vec<&RasterSurface> = surfaces.iter().map(Borrow::borrow).collect();
        check_dims(&order)?;
        order.sort_by(|a, b| a.id().cmp(b.id()));
        let masks: Vec<FloodMask> = order.par_iter().map(|s| FloodMask::from_surface(s)).collect();
        let sims: Vec<Vec<Similarity>> = (0..masks.len())
            .into_par_iter()
            .map(|i| masks.iter().map(|m| Similarity::of(&masks[i], m)).collect())
            .collect();
        Ok(SimilarityTable { ids: order.into_iter().map(|s| s.id().clone()).collect(), sims })
    }
}

/// Complete-linkage agglomerative clustering under Jaccard similarity.
///
/// Two clusters may merge when every cross pair has similarity at least `tau`. Among the
/// mergeable pairs the most similar merges first; ties go to the pair whose smallest member ids
/// sort first. Clusters come back with sorted members, ordered by their smallest id.
pub fn cluster_surfaces<S: Borrow<RasterSurface>>(surfaces: &[S], tau: f64) -> Result<Vec<Vec<SurfaceId>>, KernelError> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(KernelError::InvalidTau(tau));
    }
    let table = SimilarityTable::build(surfaces)?;
    // Members are indices into the id-sorted table, so members[0] is the cluster's smallest id.
    let mut clusters: Vec<Vec<usize>> = (0..table.ids.len()).map(|i| vec![i]).collect();
    let mut linkage: Vec<Vec<Similarity>> = table.sims.clone();
    loop {
        let mut best: Option<(usize, usize)> = None;
        for a in 0..clusters.len() {
            for b in a + 1..clusters.len() {
                let s = linkage[a][b];
                if !s.at_least(tau) {
                    continue;
                }
                // Clusters stay ordered by smallest member, so scanning (a, b) in order already
                // visits ties in tie-break order; only a strictly better pair replaces the best.
                if best.is_none_or(|(ba, bb)| s > linkage[ba][bb]) {
                    best = Some((a, b));
                }
            }
        }
        let Some((a, b)) = best else { break };
        let absorbed = clusters.remove(b);
        clusters[a].extend(absorbed);
        clusters[a].sort_unstable();
        let row_b = linkage.remove(b);
        for row in linkage.iter_mut() {
            row.remove(b);
        }
        for k in 0..clusters.len() {
            if k != a {
                let old_b = if k < b { row_b[k] } else { row_b[k + 1] };
                let merged = linkage[a][k].min(old_b);
                linkage[a][k] = merged;
                linkage[k][a] = merged;
            }
        }
    }
    Ok(clusters.into_iter().map(|c| c.into_iter().map(|i| table.ids[i].clone()).collect()).collect())
}

/// `1 - mean Jaccard similarity to every other surface`, per surface id.
pub fn outlier_scores<S: Borrow<RasterSurface>>(surfaces: &[S]) -> Result<BTreeMap<SurfaceId, f64>, KernelError> {
    if surfaces.len() < 2 {
        return Err(KernelError::TooFewSurfaces(surfaces.len()));
    }
    let table = SimilarityTable::build(surfaces)?;
    let n = table.ids.len();
    Ok(table
        .ids
        .iter()
        .enumerate()
        .map(|(i, id)| {
            let sum: f64 = (0..n).filter(|&j| j != i).map(|j| table.sims[i][j].value()).sum();
            (id.clone(), 1.0 - sum / (n - 1) as f64)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn surface(id: &str, w: u32, h: u32, cells: Vec<u8>) -> RasterSurface {
        RasterSurface::new(SurfaceId::new(id), id, w, h, cells).unwrap()
    }

    fn brute_counts(surfaces: &[RasterSurface]) -> Vec<u32> {
        let len = surfaces[0].cells().len();
        (0..len).map(|p| surfaces.iter().filter(|s| s.cells()[p] > 0).count() as u32).collect()
    }

    fn brute_jaccard(a: &RasterSurface, b: &RasterSurface) -> f64 {
        let (mut i, mut u) = (0u32, 0u32);
        for (&x, &y) in a.cells().iter().zip(b.cells()) {
            i += u32::from(x > 0 && y > 0);
            u += u32::from(x > 0 || y > 0);
        }
        if u == 0 {
            1.0
        } else {
            f64::from(i) / f64::from(u)
        }
    }

    fn random_surfaces(rng: &mut ChaCha8Rng, count: usize, w: u32, h: u32) -> Vec<RasterSurface> {
        (0..count)
            .map(|k| {
                let density: f64 = rng.random_range(0.05..0.9);
                let cells = (0..w * h).map(|_| if rng.random_bool(density) { rng.random_range(1..=255) } else { 0 }).collect();
                surface(&format!("s{k:03}"), w, h, cells)
            })
            .collect()
    }

    #[test]
    fn all_flooded_single_surface() {
        let s = surface("a", 3, 2, vec![9; 6]);
        for v in KernelVariant::ALL {
            let g = accumulate(std::slice::from_ref(&s), v).unwrap();
            assert!(g.counts().iter().all(|&c| c == 1));
        }
    }

    #[test]
    fn variants_agree_with_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let surfaces = random_surfaces(&mut rng, 50, 64, 64);
        let oracle = brute_counts(&surfaces);
        for v in KernelVariant::ALL {
            let g = accumulate(&surfaces, v).unwrap();
            assert_eq!(g.counts(), &oracle[..], "{v}");
            assert_eq!(g.n_inputs(), 50);
        }
    }

    #[test]
    fn large_grids_take_the_parallel_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let surfaces = random_surfaces(&mut rng, 3, 300, 300);
        let oracle = brute_counts(&surfaces);
        for v in KernelVariant::ALL {
            assert_eq!(accumulate(&surfaces, v).unwrap().counts(), &oracle[..]);
        }
    }

    #[test]
    fn disjoint_halves() {
        let a = surface("a", 4, 2, vec![1, 1, 1, 1, 0, 0, 0, 0]);
        let b = surface("b", 4, 2, vec![0, 0, 0, 0, 1, 1, 1, 1]);
        let g = accumulate(&[a, b], KernelVariant::Image1).unwrap();
        assert!(g.counts().iter().all(|&c| c <= 1));
        assert_eq!(overlap_histogram(&g).bins, vec![0, 8, 0]);
    }

    #[test]
    fn mismatched_dims() {
        let a = surface("a", 2, 2, vec![0; 4]);
        let b = surface("b", 4, 1, vec![0; 4]);
        assert!(matches!(accumulate(&[a, b], KernelVariant::Buffer1), Err(KernelError::DimMismatch { index: 1, .. })));
        assert_eq!(accumulate::<RasterSurface>(&[], KernelVariant::Buffer1), Err(KernelError::NoSurfaces));
    }

    #[test]
    fn histogram_of_identical_surfaces() {
        let s = surface("a", 3, 3, vec![1, 0, 1, 0, 0, 1, 0, 0, 0]);
        let g = accumulate(&[s.clone(), s.clone(), s], KernelVariant::Image2).unwrap();
        assert_eq!(overlap_histogram(&g).bins, vec![6, 0, 0, 3]);
        let zero = AccumulationGrid::zeros(4, 4);
        assert_eq!(overlap_histogram(&zero).bins, vec![16]);
    }

    #[test]
    fn composite_endpoints_and_midpoint() {
        assert_eq!(overlap_colour(4, 4), [0, 0, 255, 255]);
        assert_eq!(overlap_colour(0, 4), [0, 0, 0, 0]);
        // s = 0.5 -> 127.5 rounds to 128.
        assert_eq!(overlap_colour(2, 4), [128, 128, 255, 255]);
        let a = surface("a", 2, 1, vec![1, 0]);
        let g = accumulate(&[a.clone(), a], KernelVariant::Image1).unwrap();
        let img = composite_map(&g, None).unwrap();
        assert_eq!(img.pixel(0, 0), [0, 0, 255, 255]);
        assert_eq!(img.pixel(1, 0)[3], 0);
        let base = CompositeImage { width: 2, height: 1, pixels: vec![10, 20, 30, 255, 40, 50, 60, 255] };
        let over = composite_map(&g, Some(&base)).unwrap();
        assert_eq!(over.pixel(1, 0), [40, 50, 60, 255]);
        assert_eq!(over.pixel(0, 0), [0, 0, 255, 255]);
        let wrong = CompositeImage { width: 1, height: 1, pixels: vec![0; 4] };
        assert!(composite_map(&g, Some(&wrong)).is_err());
        let decoded = image::load_from_memory(&img.to_png()).unwrap().to_rgba8();
        assert_eq!(decoded.into_raw(), img.pixels);
    }

    #[test]
    fn saturation_is_monotone_in_count() {
        for n in 1..40 {
            let blues: Vec<u8> = (1..=n).map(|c| 255 - overlap_colour(c, n)[0]).collect();
            assert!(blues.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn jaccard_examples() {
        let a = surface("a", 8, 5, (0..40).map(|i| u8::from(i < 25)).collect());
        let b = surface("b", 8, 5, (0..40).map(|i| u8::from(i >= 15)).collect());
        // |A ∩ B| = 10, |A ∪ B| = 40.
        assert_eq!(jaccard(&a, &b).unwrap(), 0.25);
        assert_eq!(jaccard(&a, &a).unwrap(), 1.0);
        let c = surface("c", 8, 5, (0..40).map(|i| u8::from(i >= 25)).collect());
        assert_eq!(jaccard(&a, &c).unwrap(), 0.0);
        let e = surface("e", 8, 5, vec![0; 40]);
        assert_eq!(jaccard(&e, &e).unwrap(), 1.0);
        let small = surface("s", 2, 2, vec![0; 4]);
        assert!(jaccard(&a, &small).is_err());
    }

    /// Surfaces over 10 pixels with chosen flood sets.
    fn sets(spec: &[(&str, &[usize])]) -> Vec<RasterSurface> {
        spec.iter()
            .map(|(id, on)| {
                let mut cells = vec![0u8; 100];
                for &i in *on {
                    cells[i] = 1;
                }
                surface(id, 10, 10, cells)
            })
            .collect()
    }

    #[test]
    fn clustering_examples() {
        let same = sets(&[("a", &[1, 2, 3]), ("b", &[1, 2, 3]), ("c", &[1, 2, 3])]);
        assert_eq!(cluster_surfaces(&same, 0.8).unwrap().len(), 1);
        let disjoint = sets(&[("a", &[1]), ("b", &[2]), ("c", &[3])]);
        assert_eq!(cluster_surfaces(&disjoint, 0.5).unwrap().len(), 3);

        // s(1,2) = 9/10, s(1,3) = s(2,3) = 3/10.
        let one: Vec<usize> = (0..10).collect();
        let two: Vec<usize> = (0..9).collect();
        let three: Vec<usize> = vec![0, 1, 2, 10, 11, 12, 13, 14, 15, 16];
        let s = sets(&[("1", &one[..]), ("2", &two[..]), ("3", &three[..])]);
        assert!((jaccard(&s[0], &s[1]).unwrap() - 0.9).abs() < 1e-12);
        assert!((jaccard(&s[0], &s[2]).unwrap() - 3.0 / 17.0).abs() < 1e-12);
        let clusters = cluster_surfaces(&s, 0.8).unwrap();
        let ids = |c: &Vec<SurfaceId>| c.iter().map(|i| i.0.clone()).collect::<Vec<_>>();
        assert_eq!(clusters.iter().map(ids).collect::<Vec<_>>(), vec![vec!["1", "2"], vec!["3"]]);
        assert!(cluster_surfaces(&s, 0.0).is_err());
        assert!(cluster_surfaces(&s, 1.5).is_err());
    }

    #[test]
    fn tie_break_prefers_smallest_ids() {
        // b-c and a-d have the same similarity; a-d wins on ids, then b and c merge too.
        let s = sets(&[("a", &[0, 1]), ("d", &[0, 1, 2]), ("b", &[10, 11]), ("c", &[10, 11, 12])]);
        let clusters = cluster_surfaces(&s, 0.6).unwrap();
        let names: Vec<Vec<&str>> = clusters.iter().map(|c| c.iter().map(|i| i.as_str()).collect()).collect();
        assert_eq!(names, vec![vec!["a", "d"], vec!["b", "c"]]);
        // Chain where merging order matters: x-y (0.75) beats y-z (0.6); complete linkage then
        // keeps z apart because x-z is too dissimilar.
        let s = sets(&[("x", &[0, 1, 2]), ("y", &[0, 1, 2, 3]), ("z", &[1, 2, 3, 4, 5])]);
        let names: Vec<usize> = cluster_surfaces(&s, 0.5).unwrap().iter().map(Vec::len).collect();
        assert_eq!(names, vec![2, 1]);
    }

    #[test]
    fn outlier_examples() {
        let same = sets(&[("a", &[1, 2]), ("b", &[1, 2]), ("c", &[1, 2])]);
        assert!(outlier_scores(&same).unwrap().values().all(|&v| v == 0.0));
        let odd = sets(&[("a", &[1, 2]), ("b", &[1, 2]), ("c", &[1, 2]), ("z", &[50])]);
        let scores = outlier_scores(&odd).unwrap();
        assert_eq!(scores[&SurfaceId::new("z")], 1.0);
        // Each of a, b, c: similarities 1, 1, 0 -> 1 - 2/3.
        assert!((scores[&SurfaceId::new("a")] - 1.0 / 3.0).abs() < 1e-15);
        let pair = sets(&[("p", &[1, 2, 3]), ("q", &[3, 4])]);
        let scores = outlier_scores(&pair).unwrap();
        assert_eq!(scores[&SurfaceId::new("p")], scores[&SurfaceId::new("q")]);
        assert_eq!(outlier_scores(&pair[..1]), Err(KernelError::TooFewSurfaces(1)));
    }

    /// Naive complete linkage: recompute every linkage from pairwise similarities each round.
    fn brute_clusters(surfaces: &[RasterSurface], tau: f64) -> Vec<Vec<String>> {
        let mut clusters: Vec<Vec<&RasterSurface>> = surfaces.iter().map(|s| vec![s]).collect();
        loop {
            clusters.sort_by(|a, b| a.iter().map(|s| s.id()).min().cmp(&b.iter().map(|s| s.id()).min()));
            let mut best: Option<(f64, SurfaceId, SurfaceId, usize, usize)> = None;
            for i in 0..clusters.len() {
                for j in 0..clusters.len() {
                    if i == j {
                        continue;
                    }
                    let link = clusters[i]
                        .iter()
                        .flat_map(|a| clusters[j].iter().map(move |b| brute_jaccard(a, b)))
                        .fold(f64::INFINITY, f64::min);
                    if link < tau {
                        continue;
                    }
                    let ka = clusters[i].iter().map(|s| s.id().clone()).min().unwrap();
                    let kb = clusters[j].iter().map(|s| s.id().clone()).min().unwrap();
                    if ka > kb {
                        continue;
                    }
                    let better = match &best {
                        None => true,
                        Some((bl, ba, bb, _, _)) => link > *bl || (link == *bl && (&ka, &kb) < (ba, bb)),
                    };
                    if better {
                        best = Some((link, ka, kb, i, j));
                    }
                }
            }
            let Some((_, _, _, i, j)) = best else { break };
            let moved = clusters[j].clone();
            clusters[i].extend(moved);
            clusters.remove(j);
        }
        let mut out: Vec<Vec<String>> = clusters
            .iter()
            .map(|c| {
                let mut ids: Vec<String> = c.iter().map(|s| s.id().0.clone()).collect();
                ids.sort();
                ids
            })
            .collect();
        out.sort();
        out
    }

    fn as_strings(clusters: Vec<Vec<SurfaceId>>) -> Vec<Vec<String>> {
        clusters.into_iter().map(|c| c.into_iter().map(|i| i.0).collect()).collect()
    }

    /// Surfaces drawn around a few prototypes so that clusters actually form.
    fn clustered_surfaces(rng: &mut ChaCha8Rng, count: usize, w: u32, h: u32) -> Vec<RasterSurface> {
        let protos = random_surfaces(rng, 3, w, h);
        (0..count)
            .map(|k| {
                let p = &protos[rng.random_range(0..protos.len())];
                let flip: f64 = rng.random_range(0.0..0.2);
                let cells = p.cells().iter().map(|&v| if rng.random_bool(flip) { u8::from(v == 0) } else { v }).collect();
                surface(&format!("c{k:03}"), w, h, cells)
            })
            .collect()
    }

    #[test]
    fn analytics_match_brute_force_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for case in 0..20 {
            let count = rng.random_range(2..=12);
            let (w, h) = (rng.random_range(1..=32), rng.random_range(1..=32));
            let surfaces = if case % 2 == 0 { clustered_surfaces(&mut rng, count, w, h) } else { random_surfaces(&mut rng, count, w, h) };
            let tau = [0.3, 0.5, 0.8][case % 3];
            assert_eq!(as_strings(cluster_surfaces(&surfaces, tau).unwrap()), brute_clusters(&surfaces, tau));
            let scores = outlier_scores(&surfaces).unwrap();
            for s in &surfaces {
                let mut others: Vec<&RasterSurface> = surfaces.iter().filter(|o| o.id() != s.id()).collect();
                others.sort_by(|a, b| a.id().cmp(b.id()));
                let sum: f64 = others.iter().map(|o| brute_jaccard(s, o)).sum();
                assert_eq!(scores[s.id()], 1.0 - sum / others.len() as f64);
            }
        }
    }

    fn shuffled<T: Clone>(items: &[T], seed: u64) -> Vec<T> {
        use rand::seq::SliceRandom;
        let mut v = items.to_vec();
        v.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        v
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn analytics_are_permutation_invariant(seed in any::<u64>(), shuffle in any::<u64>(), count in 2usize..10) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let surfaces = clustered_surfaces(&mut rng, count, 16, 12);
            let other = shuffled(&surfaces, shuffle);
            for v in KernelVariant::ALL {
                prop_assert_eq!(accumulate(&surfaces, v).unwrap(), accumulate(&other, v).unwrap());
            }
            let g1 = accumulate(&surfaces, KernelVariant::Image1).unwrap();
            let g2 = accumulate(&other, KernelVariant::Image1).unwrap();
            prop_assert_eq!(overlap_histogram(&g1), overlap_histogram(&g2));
            prop_assert_eq!(cluster_surfaces(&surfaces, 0.5).unwrap(), cluster_surfaces(&other, 0.5).unwrap());
            prop_assert_eq!(outlier_scores(&surfaces).unwrap(), outlier_scores(&other).unwrap());
        }

        #[test]
        fn bounds_hold(seed in any::<u64>(), count in 1usize..8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let surfaces = random_surfaces(&mut rng, count, 9, 7);
            let g = accumulate(&surfaces, KernelVariant::Buffer2).unwrap();
            prop_assert!(g.counts().iter().all(|&c| c <= g.n_inputs()));
            prop_assert_eq!(overlap_histogram(&g).total(), 63);
            for a in &surfaces {
                for b in &surfaces {
                    let j = jaccard(a, b).unwrap();
                    prop_assert!((0.0..=1.0).contains(&j));
                }
            }
        }

        #[test]
        fn duplicating_a_surface_adds_one_where_flooded(seed in any::<u64>(), count in 1usize..6, pick in any::<prop::sample::Index>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut surfaces = random_surfaces(&mut rng, count, 8, 8);
            let before = accumulate(&surfaces, KernelVariant::Buffer1).unwrap();
            let dup = surfaces[pick.index(count)].clone();
            surfaces.push(dup.clone());
            let after = accumulate(&surfaces, KernelVariant::Buffer1).unwrap();
            for (p, (&b, &a)) in before.counts().iter().zip(after.counts()).enumerate() {
                prop_assert_eq!(a, b + u32::from(dup.cells()[p] > 0));
            }
        }
    }
}
