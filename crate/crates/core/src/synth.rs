//! Synthetic SEM-style benchmark generation.
//!
//! Samples consist of a Voronoi-grain phase map, a noisy grayscale render of
//! per-phase intensity means, and per-pixel photon-count spectra drawn from
//! per-phase peak mixtures. Confounded phase pairs share identical grayscale
//! statistics while their spectra differ, so segmenting them requires the
//! spectral modality. Everything is a pure function of `(config, seed)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{PointSet, SPECTRUM_DIM};
use crate::parallel;
use crate::seeding::{self, tag};

/// Raw spectrum resolution (10 eV channels covering 0..30 keV).
pub const RAW_CHANNELS: usize = 3000;

/// One Gaussian emission peak of a phase's spectrum.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SpectralPeak {
    /// Channel of the peak center, within `[0, 3000)`.
    pub center: f64,
    /// Relative peak mass, positive.
    pub amplitude: f64,
    /// Gaussian width in channels, positive.
    pub width: f64,
}

/// Ground-truth description of one mineral-like phase.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PhaseSpec {
    /// Mean grayscale intensity in `[0, 1]`.
    pub bse_mean: f64,
    /// Grayscale noise sigma.
    pub bse_sigma: f64,
    /// Emission peaks; at least one.
    pub peaks: Vec<SpectralPeak>,
}

impl PhaseSpec {
    pub fn new(bse_mean: f64, bse_sigma: f64, peaks: Vec<SpectralPeak>) -> Result<Self> {
        if !(0.0..=1.0).contains(&bse_mean) {
            return Err(Error::contract(format!("bse mean {bse_mean} outside [0, 1]")));
        }
        if bse_sigma < 0.0 {
            return Err(Error::contract("negative bse sigma"));
        }
        if peaks.is_empty() {
            return Err(Error::contract("phase must have at least one spectral peak"));
        }
        for p in &peaks {
            if !(0.0..(RAW_CHANNELS as f64)).contains(&p.center) {
                return Err(Error::contract(format!("peak center {} outside channel range", p.center)));
            }
            if p.amplitude <= 0.0 || p.width <= 0.0 {
                return Err(Error::contract("peak amplitude and width must be positive"));
            }
        }
        Ok(PhaseSpec { bse_mean, bse_sigma, peaks })
    }

    /// Expected spectrum over raw channels, normalized to unit mass.
    pub fn expected_spectrum(&self) -> Vec<f64> {
        let mut out = vec![0.0; RAW_CHANNELS];
        for p in &self.peaks {
            for (c, o) in out.iter_mut().enumerate() {
                let z = (c as f64 - p.center) / p.width;
                *o += p.amplitude * (-0.5 * z * z).exp();
            }
        }
        let total: f64 = out.iter().sum();
        for o in &mut out {
            *o /= total;
        }
        out
    }
}

/// One fully rendered sample with raw per-pixel spectra. Raw spectra are
/// large; this type is meant for small images and op-level tests, while
/// dataset generation reduces spectra pixel-by-pixel without materializing
/// the whole cube.
#[derive(Clone, Debug)]
pub struct SyntheticSample {
    pub height: usize,
    pub width: usize,
    /// Grayscale image, `[0, 1]`, row-major.
    pub bse: Vec<f64>,
    /// Raw counts, `H*W*3000`, row-major by pixel.
    pub spectra: Vec<f64>,
    /// Per-pixel phase labels.
    pub labels: Vec<u16>,
    /// Per-pixel validity; invalid pixels have zeroed spectra.
    pub validity: Vec<bool>,
}

/// One stored sample: grayscale image, reduced spectra, labels, validity.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleData {
    pub bse: Vec<f64>,
    /// `H*W*64` reduced spectra, row-major by pixel.
    pub reduced: Vec<f64>,
    pub labels: Vec<u16>,
    pub validity: Vec<bool>,
}

/// An in-memory dataset of generated samples.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub height: usize,
    pub width: usize,
    pub n_classes: usize,
    pub seed: u64,
    /// Echo of the generating configuration (JSON), for reproducibility.
    pub config_echo: String,
    pub samples: Vec<SampleData>,
}

/// Benchmark generator knobs. Defaults give the desk-scale confounded
/// benchmark: 64x64 images, 6 phases of which 2 pairs are grayscale-
/// confounded, 40 Voronoi seeds, exposure 500 counts, 200 samples.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub height: usize,
    pub width: usize,
    pub phases: usize,
    pub confounded_pairs: usize,
    pub voronoi_seeds: usize,
    pub exposure: f64,
    pub samples: usize,
    pub bse_sigma: f64,
    /// Width of the invalid border strip (0 = all pixels valid).
    pub edge_strip: usize,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            height: 64,
            width: 64,
            phases: 6,
            confounded_pairs: 2,
            voronoi_seeds: 40,
            exposure: 500.0,
            samples: 200,
            bse_sigma: 0.04,
            edge_strip: 0,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::contract("empty image dimensions"));
        }
        if self.phases == 0 {
            return Err(Error::contract("at least one phase required"));
        }
        if 2 * self.confounded_pairs > self.phases {
            return Err(Error::contract(format!(
                "{} confounded pairs need {} phases, have {}",
                self.confounded_pairs,
                2 * self.confounded_pairs,
                self.phases
            )));
        }
        if self.voronoi_seeds < self.phases {
            return Err(Error::contract(format!(
                "voronoi seeds {} fewer than phases {}",
                self.voronoi_seeds, self.phases
            )));
        }
        if self.voronoi_seeds > self.height * self.width {
            return Err(Error::contract("more voronoi seeds than pixels"));
        }
        if self.exposure <= 0.0 {
            return Err(Error::contract("exposure must be positive"));
        }
        if self.samples == 0 {
            return Err(Error::contract("at least one sample required"));
        }
        if 2 * self.edge_strip >= self.height.min(self.width) {
            return Err(Error::contract("edge strip leaves no valid pixels"));
        }
        Ok(())
    }
}

/// Standard normal draw (Box-Muller).
fn gaussian(rng: &mut impl Rng) -> f64 {
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Poisson draw by inversion, chunked so the running product never
/// underflows for large means.
fn poisson(rng: &mut impl Rng, mut lambda: f64) -> u64 {
    debug_assert!(lambda >= 0.0);
    let mut total = 0u64;
    while lambda > 0.0 {
        let chunk = lambda.min(500.0);
        lambda -= chunk;
        let limit = (-chunk).exp();
        let mut p = 1.0;
        loop {
            p *= rng.random::<f64>();
            if p < limit {
                break;
            }
            total += 1;
        }
    }
    total
}

/// Seed placement for the Voronoi map: distinct random pixels, the first
/// `phases` of them covering every phase, the rest assigned at random.
fn place_voronoi_seeds(
    h: usize,
    w: usize,
    phases: usize,
    seeds: usize,
    rng: &mut impl Rng,
) -> Result<(Vec<(f64, f64)>, Vec<u16>)> {
    if phases == 0 {
        return Err(Error::contract("at least one phase required"));
    }
    if seeds < phases {
        return Err(Error::contract(format!("{seeds} seeds cannot cover {phases} phases")));
    }
    if seeds > h * w {
        return Err(Error::contract("more seeds than pixels"));
    }
    if phases > u16::MAX as usize {
        return Err(Error::contract("phase count exceeds label range"));
    }
    let mut ids: Vec<usize> = (0..h * w).collect();
    for i in 0..seeds {
        let j = i + rng.random_range(0..ids.len() - i);
        ids.swap(i, j);
    }
    let positions: Vec<(f64, f64)> = ids[..seeds]
        .iter()
        .map(|&id| ((id % w) as f64, (id / w) as f64))
        .collect();
    let phases: Vec<u16> = (0..seeds)
        .map(|i| if i < phases { i as u16 } else { rng.random_range(0..phases) as u16 })
        .collect();
    Ok((positions, phases))
}

fn nearest_seed_labels(
    h: usize,
    w: usize,
    seed_pos: &[(f64, f64)],
    seed_phase: &[u16],
) -> Vec<u16> {
    let mut labels = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            let (px, py) = (c as f64, r as f64);
            let mut best = f64::INFINITY;
            let mut best_i = 0;
            // Strict improvement only: ties resolve to the lowest seed index.
            for (i, &(sx, sy)) in seed_pos.iter().enumerate() {
                let d2 = (sx - px) * (sx - px) + (sy - py) * (sy - py);
                if d2 < best {
                    best = d2;
                    best_i = i;
                }
            }
            labels.push(seed_phase[best_i]);
        }
    }
    labels
}

/// Voronoi phase map: `seeds` random distinct pixels, each assigned a phase
/// (every phase at least once), and every pixel labeled by its nearest seed.
/// Nearest-seed ties resolve to the lowest seed index.
pub fn generate_phase_map(
    h: usize,
    w: usize,
    phases: usize,
    seeds: usize,
    rng: &mut impl Rng,
) -> Result<Vec<u16>> {
    let (seed_pos, seed_phase) = place_voronoi_seeds(h, w, phases, seeds, rng)?;
    Ok(nearest_seed_labels(h, w, &seed_pos, &seed_phase))
}

/// Grayscale render: per-pixel `clamp(mean + N(0, sigma), 0, 1)`.
pub fn render_bse(labels: &[u16], specs: &[PhaseSpec], rng: &mut impl Rng) -> Result<Vec<f64>> {
    labels
        .iter()
        .map(|&l| {
            let spec = specs
                .get(l as usize)
                .ok_or_else(|| Error::contract(format!("no phase spec for label {l}")))?;
            Ok((spec.bse_mean + spec.bse_sigma * gaussian(rng)).clamp(0.0, 1.0))
        })
        .collect()
}

/// Raw per-pixel spectra: expected peak mixture scaled to `exposure` total
/// counts, realized channel-wise as Poisson draws. Returns `len(labels) *
/// 3000` counts; intended for small images.
pub fn render_spectra(
    labels: &[u16],
    specs: &[PhaseSpec],
    exposure: f64,
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    if exposure <= 0.0 {
        return Err(Error::contract("exposure must be positive"));
    }
    let expected: Vec<Vec<f64>> = specs.iter().map(|s| s.expected_spectrum()).collect();
    let mut out = Vec::with_capacity(labels.len() * RAW_CHANNELS);
    for &l in labels {
        let e = expected
            .get(l as usize)
            .ok_or_else(|| Error::contract(format!("no phase spec for label {l}")))?;
        for &p in e {
            out.push(poisson(rng, exposure * p) as f64);
        }
    }
    Ok(out)
}

/// Reduces a 3000-channel spectrum to 64 bins (bin `b` sums channels
/// `[b*3000/64, (b+1)*3000/64)`), L1-normalized when any mass is present.
pub fn reduce_spectrum(spectrum: &[f64]) -> Result<Vec<f64>> {
    if spectrum.len() != RAW_CHANNELS {
        return Err(Error::contract(format!(
            "spectrum has {} channels, expected {RAW_CHANNELS}",
            spectrum.len()
        )));
    }
    if let Some(&bad) = spectrum.iter().find(|&&v| v < 0.0) {
        return Err(Error::contract(format!("negative channel value {bad}")));
    }
    let mut bins = vec![0.0; SPECTRUM_DIM];
    for (b, bin) in bins.iter_mut().enumerate() {
        let start = b * RAW_CHANNELS / SPECTRUM_DIM;
        let end = (b + 1) * RAW_CHANNELS / SPECTRUM_DIM;
        *bin = spectrum[start..end].iter().sum();
    }
    let total: f64 = bins.iter().sum();
    if total > 0.0 {
        for b in &mut bins {
            *b /= total;
        }
    }
    Ok(bins)
}

/// Uniform without-replacement draw of `round(fraction * valid_count)`
/// valid pixel ids. Each call consumes fresh randomness, matching the
/// per-request decimation protocol.
pub fn sample_eds_indices(
    validity: &[bool],
    fraction: f64,
    rng: &mut impl Rng,
) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::contract(format!("fraction {fraction} outside [0, 1]")));
    }
    let mut valid_ids: Vec<usize> =
        validity.iter().enumerate().filter(|(_, &v)| v).map(|(i, _)| i).collect();
    let count = (fraction * valid_ids.len() as f64).round() as usize;
    for i in 0..count {
        let j = i + rng.random_range(0..valid_ids.len() - i);
        valid_ids.swap(i, j);
    }
    let mut chosen = valid_ids[..count].to_vec();
    chosen.sort_unstable();
    Ok(chosen)
}

/// Draws a sparse spectral point set from one sample at the given fraction.
/// Points are pixel centers `(x = col, y = row)` with the pixel's reduced
/// spectrum as payload.
pub fn sample_eds_points(
    sample: &SampleData,
    width: usize,
    fraction: f64,
    rng: &mut impl Rng,
) -> Result<PointSet> {
    let ids = sample_eds_indices(&sample.validity, fraction, rng)?;
    let points: Vec<(f64, f64)> =
        ids.iter().map(|&id| ((id % width) as f64, (id / width) as f64)).collect();
    let payloads: Vec<Vec<f64>> = ids
        .iter()
        .map(|&id| sample.reduced[id * SPECTRUM_DIM..(id + 1) * SPECTRUM_DIM].to_vec())
        .collect();
    PointSet::new(points, payloads)
}

/// Deterministic phase specs for the benchmark: the first `2 * pairs`
/// phases form grayscale-confounded pairs (identical mean, distinct peaks);
/// remaining phases get distinct means. Peak positions are spread across
/// the channel range so reduced spectra separate cleanly.
pub fn default_phase_specs(
    phases: usize,
    confounded_pairs: usize,
    bse_sigma: f64,
) -> Result<Vec<PhaseSpec>> {
    if 2 * confounded_pairs > phases {
        return Err(Error::contract("too many confounded pairs for phase count"));
    }
    // One mean slot per pair plus one per remaining singleton phase.
    let slots = confounded_pairs + (phases - 2 * confounded_pairs);
    let mean_for_slot = |s: usize| {
        if slots == 1 {
            0.5
        } else {
            0.15 + 0.7 * s as f64 / (slots - 1) as f64
        }
    };
    let mut specs = Vec::with_capacity(phases);
    for phase in 0..phases {
        let slot = if phase < 2 * confounded_pairs { phase / 2 } else { phase - confounded_pairs };
        let center = 150.0 + (phase as f64 + 0.5) * (2600.0 / phases as f64);
        specs.push(PhaseSpec::new(
            mean_for_slot(slot),
            bse_sigma,
            vec![SpectralPeak { center, amplitude: 1.0, width: 20.0 }],
        )?);
    }
    Ok(specs)
}

/// L1 distance between the reduced expected spectra of two phases.
fn reduced_expectation_gap(a: &PhaseSpec, b: &PhaseSpec) -> Result<f64> {
    let ra = reduce_spectrum(&a.expected_spectrum())?;
    let rb = reduce_spectrum(&b.expected_spectrum())?;
    Ok(ra.iter().zip(&rb).map(|(x, y)| (x - y).abs()).sum())
}

fn edge_strip_validity(h: usize, w: usize, strip: usize) -> Vec<bool> {
    let mut v = vec![true; h * w];
    if strip > 0 {
        for r in 0..h {
            for c in 0..w {
                if r < strip || r >= h - strip || c < strip || c >= w - strip {
                    v[r * w + c] = false;
                }
            }
        }
    }
    v
}

/// Renders one sample and reduces its spectra pixel-by-pixel, never
/// materializing the raw `H*W*3000` cube. Per-pixel spectra use RNGs seeded
/// from `(sample seed, pixel index)`.
fn generate_sample(cfg: &GeneratorConfig, specs: &[PhaseSpec], sample_seed: u64) -> Result<SampleData> {
    let (h, w) = (cfg.height, cfg.width);
    let mut map_rng = seeding::rng_from(seeding::derive(sample_seed, tag::PHASE_MAP));
    let labels = generate_phase_map(h, w, cfg.phases, cfg.voronoi_seeds, &mut map_rng)?;
    let mut bse_rng = seeding::rng_from(seeding::derive(sample_seed, tag::BSE));
    let bse = render_bse(&labels, specs, &mut bse_rng)?;
    let validity = edge_strip_validity(h, w, cfg.edge_strip);

    let expected: Vec<Vec<f64>> = specs.iter().map(|s| s.expected_spectrum()).collect();
    let mut reduced = vec![0.0; h * w * SPECTRUM_DIM];
    let mut raw = vec![0.0; RAW_CHANNELS];
    for pixel in 0..h * w {
        if !validity[pixel] {
            continue; // invalid pixels keep zeroed spectra
        }
        let spectrum_seed = seeding::derive_chain(sample_seed, &[tag::SPECTRUM, pixel as u64]);
        let mut rng = seeding::rng_from(spectrum_seed);
        let e = &expected[labels[pixel] as usize];
        for (r, &p) in raw.iter_mut().zip(e) {
            *r = poisson(&mut rng, cfg.exposure * p) as f64;
        }
        let bins = reduce_spectrum(&raw)?;
        reduced[pixel * SPECTRUM_DIM..(pixel + 1) * SPECTRUM_DIM].copy_from_slice(&bins);
    }
    Ok(SampleData { bse, reduced, labels, validity })
}

/// Generates the full dataset. Pure function of the configuration
/// (including its seed); sample generation parallelizes when the `parallel`
/// feature is on, with per-sample seeds fixed up front.
pub fn generate_dataset(cfg: &GeneratorConfig) -> Result<Dataset> {
    cfg.validate()?;
    let specs = default_phase_specs(cfg.phases, cfg.confounded_pairs, cfg.bse_sigma)?;

    // The confounded pairs must actually be confounded: identical grayscale
    // statistics, clearly separated reduced spectra.
    for pair in 0..cfg.confounded_pairs {
        let (a, b) = (&specs[2 * pair], &specs[2 * pair + 1]);
        debug_assert_eq!(a.bse_mean, b.bse_mean);
        let gap = reduced_expectation_gap(a, b)?;
        if gap < 0.1 {
            return Err(Error::contract(format!(
                "confounded pair {pair} separates by only {gap:.4} in reduced L1"
            )));
        }
    }

    let jobs: Vec<u64> = (0..cfg.samples)
        .map(|i| seeding::derive_chain(cfg.seed, &[tag::SAMPLE, i as u64]))
        .collect();
    let samples: Vec<Result<SampleData>> =
        parallel::map_ordered(jobs, |seed| generate_sample(cfg, &specs, seed));
    let samples = samples.into_iter().collect::<Result<Vec<_>>>()?;

    Ok(Dataset {
        height: cfg.height,
        width: cfg.width,
        n_classes: cfg.phases,
        seed: cfg.seed,
        config_echo: serde_json::to_string(cfg).expect("config serializes"),
        samples,
    })
}

/// Renders one sample with raw spectra retained (op-level testing on small
/// images).
pub fn generate_sample_raw(cfg: &GeneratorConfig, sample_index: usize) -> Result<SyntheticSample> {
    cfg.validate()?;
    let specs = default_phase_specs(cfg.phases, cfg.confounded_pairs, cfg.bse_sigma)?;
    let sample_seed = seeding::derive_chain(cfg.seed, &[tag::SAMPLE, sample_index as u64]);
    let (h, w) = (cfg.height, cfg.width);
    let mut map_rng = seeding::rng_from(seeding::derive(sample_seed, tag::PHASE_MAP));
    let labels = generate_phase_map(h, w, cfg.phases, cfg.voronoi_seeds, &mut map_rng)?;
    let mut bse_rng = seeding::rng_from(seeding::derive(sample_seed, tag::BSE));
    let bse = render_bse(&labels, &specs, &mut bse_rng)?;
    let validity = edge_strip_validity(h, w, cfg.edge_strip);
    let expected: Vec<Vec<f64>> = specs.iter().map(|s| s.expected_spectrum()).collect();
    let mut spectra = vec![0.0; h * w * RAW_CHANNELS];
    for pixel in 0..h * w {
        if !validity[pixel] {
            continue;
        }
        let spectrum_seed = seeding::derive_chain(sample_seed, &[tag::SPECTRUM, pixel as u64]);
        let mut rng = seeding::rng_from(spectrum_seed);
        let e = &expected[labels[pixel] as usize];
        let row = &mut spectra[pixel * RAW_CHANNELS..(pixel + 1) * RAW_CHANNELS];
        for (r, &p) in row.iter_mut().zip(e) {
            *r = poisson(&mut rng, cfg.exposure * p) as f64;
        }
    }
    Ok(SyntheticSample { height: h, width: w, bse, spectra, labels, validity })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phase_map_matches_brute_force_nearest_seed() {
        // Replay the seed placement, then verify every pixel against an
        // independent exhaustive scan with the lowest-index tie rule.
        let (h, w) = (12, 9);
        let mut rng = seeding::rng_from(3);
        let labels = generate_phase_map(h, w, 3, 7, &mut rng).unwrap();
        let mut rng = seeding::rng_from(3);
        let (seed_pos, seed_phase) = place_voronoi_seeds(h, w, 3, 7, &mut rng).unwrap();

        assert_eq!(labels.len(), h * w);
        for r in 0..h {
            for c in 0..w {
                let mut ranked: Vec<(f64, usize)> = seed_pos
                    .iter()
                    .enumerate()
                    .map(|(i, &(sx, sy))| {
                        ((sx - c as f64).powi(2) + (sy - r as f64).powi(2), i)
                    })
                    .collect();
                ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                assert_eq!(labels[r * w + c], seed_phase[ranked[0].1], "pixel ({r}, {c})");
            }
        }
        for phase in 0..3u16 {
            assert!(labels.contains(&phase), "phase {phase} unused");
        }
    }

    #[test]
    fn phase_map_single_phase_is_constant() {
        let mut rng = seeding::rng_from(1);
        let labels = generate_phase_map(5, 5, 1, 1, &mut rng).unwrap();
        assert!(labels.iter().all(|&l| l == 0));
    }

    #[test]
    fn phase_map_is_deterministic_per_seed() {
        let a = generate_phase_map(10, 10, 4, 9, &mut seeding::rng_from(42)).unwrap();
        let b = generate_phase_map(10, 10, 4, 9, &mut seeding::rng_from(42)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn phase_map_rejects_fewer_seeds_than_phases() {
        assert!(generate_phase_map(4, 4, 5, 4, &mut seeding::rng_from(0)).is_err());
    }

    #[test]
    fn noiseless_bse_is_exactly_the_phase_means() {
        let specs = vec![
            PhaseSpec::new(0.25, 0.0, vec![SpectralPeak { center: 100.0, amplitude: 1.0, width: 10.0 }])
                .unwrap(),
            PhaseSpec::new(0.75, 0.0, vec![SpectralPeak { center: 900.0, amplitude: 1.0, width: 10.0 }])
                .unwrap(),
        ];
        let labels = vec![0u16, 1, 0, 1];
        let bse = render_bse(&labels, &specs, &mut seeding::rng_from(0)).unwrap();
        assert_eq!(bse, vec![0.25, 0.75, 0.25, 0.75]);
    }

    #[test]
    fn confounded_phases_are_indistinguishable_in_grayscale() {
        // Equal means, zero noise: identical renders by construction.
        let peak = |c| vec![SpectralPeak { center: c, amplitude: 1.0, width: 15.0 }];
        let a = PhaseSpec::new(0.4, 0.0, peak(200.0)).unwrap();
        let b = PhaseSpec::new(0.4, 0.0, peak(2200.0)).unwrap();
        let bse_a = render_bse(&[0; 16], &[a.clone(), b.clone()], &mut seeding::rng_from(1)).unwrap();
        let bse_b = render_bse(&[1; 16], &[a.clone(), b.clone()], &mut seeding::rng_from(1)).unwrap();
        assert_eq!(bse_a, bse_b);
        assert!(reduced_expectation_gap(&a, &b).unwrap() > 0.1);
    }

    #[test]
    fn bse_sample_mean_obeys_law_of_large_numbers() {
        let spec =
            PhaseSpec::new(0.5, 0.08, vec![SpectralPeak { center: 10.0, amplitude: 1.0, width: 5.0 }])
                .unwrap();
        let labels = vec![0u16; 1000];
        let bse = render_bse(&labels, &[spec], &mut seeding::rng_from(8)).unwrap();
        let mean = bse.iter().sum::<f64>() / 1000.0;
        let bound = 3.0 * 0.08 / (1000.0f64).sqrt();
        assert!((mean - 0.5).abs() < bound, "mean {mean} off by more than {bound}");
    }

    #[test]
    fn high_exposure_spectra_converge_to_the_expected_mixture() {
        let spec =
            PhaseSpec::new(0.5, 0.0, vec![SpectralPeak { center: 700.0, amplitude: 1.0, width: 12.0 }])
                .unwrap();
        let expected = spec.expected_spectrum();
        let raw = render_spectra(&[0u16], &[spec], 1e6, &mut seeding::rng_from(21)).unwrap();
        let total: f64 = raw.iter().sum();
        let l1: f64 = raw
            .iter()
            .zip(&expected)
            .map(|(&c, &e)| (c / total - e).abs())
            .sum();
        assert!(l1 < 0.01, "L1 distance {l1}");
    }

    #[test]
    fn same_phase_pixels_differ_in_draws_but_share_expectation() {
        let cfg = GeneratorConfig {
            height: 2,
            width: 2,
            phases: 1,
            confounded_pairs: 0,
            voronoi_seeds: 1,
            exposure: 200.0,
            samples: 1,
            bse_sigma: 0.0,
            edge_strip: 0,
            seed: 5,
        };
        let s = generate_sample_raw(&cfg, 0).unwrap();
        let p0 = &s.spectra[..RAW_CHANNELS];
        let p1 = &s.spectra[RAW_CHANNELS..2 * RAW_CHANNELS];
        assert_ne!(p0, p1, "independent Poisson draws should differ");
        let (t0, t1): (f64, f64) = (p0.iter().sum(), p1.iter().sum());
        assert!((t0 - 200.0).abs() < 80.0 && (t1 - 200.0).abs() < 80.0);
    }

    #[test]
    fn reduce_spectrum_examples() {
        // All-zero input stays all-zero.
        assert!(reduce_spectrum(&vec![0.0; RAW_CHANNELS]).unwrap().iter().all(|&v| v == 0.0));

        // Constant input: bin mass proportional to bin width (46 or 47
        // channels), summing to one.
        let bins = reduce_spectrum(&vec![1.0; RAW_CHANNELS]).unwrap();
        assert!((bins.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for (b, &v) in bins.iter().enumerate() {
            let width = (b + 1) * RAW_CHANNELS / SPECTRUM_DIM - b * RAW_CHANNELS / SPECTRUM_DIM;
            assert!(width == 46 || width == 47);
            assert!((v - width as f64 / RAW_CHANNELS as f64).abs() < 1e-15);
        }

        // Point mass in channel 0 maps to bin 0.
        let mut point = vec![0.0; RAW_CHANNELS];
        point[0] = 1.0;
        let bins = reduce_spectrum(&point).unwrap();
        assert_eq!(bins[0], 1.0);
        assert!(bins[1..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn reduce_spectrum_rejects_negative_and_normalizes() {
        let mut bad = vec![0.0; RAW_CHANNELS];
        bad[5] = -1.0;
        assert!(reduce_spectrum(&bad).is_err());

        let mut rng = seeding::rng_from(17);
        use rand::Rng;
        let random: Vec<f64> = (0..RAW_CHANNELS).map(|_| rng.random::<f64>() * 3.0).collect();
        let bins = reduce_spectrum(&random).unwrap();
        assert!((bins.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn eds_sampling_fraction_endpoints() {
        let validity = vec![true; 20 * 20];
        let mut rng = seeding::rng_from(4);
        assert!(sample_eds_indices(&validity, 0.0, &mut rng).unwrap().is_empty());
        let all = sample_eds_indices(&validity, 1.0, &mut rng).unwrap();
        assert_eq!(all, (0..400).collect::<Vec<_>>());
        assert!(sample_eds_indices(&validity, 1.5, &mut rng).is_err());
    }

    #[test]
    fn eds_sampling_count_is_rounded() {
        let validity = vec![true; 150 * 150];
        let mut rng = seeding::rng_from(4);
        let ids = sample_eds_indices(&validity, 0.01, &mut rng).unwrap();
        assert_eq!(ids.len(), 225);
    }

    #[test]
    fn eds_sampling_respects_validity_and_is_uniform() {
        let mut validity = vec![true; 400];
        validity[7] = false;
        let mut rng = seeding::rng_from(12);
        for _ in 0..50 {
            let ids = sample_eds_indices(&validity, 0.3, &mut rng).unwrap();
            assert!(!ids.contains(&7));
        }

        // Frequency check: 10_000 draws at fraction 0.1 on a 20x20 mask.
        let validity = vec![true; 400];
        let mut counts = vec![0u32; 400];
        for _ in 0..10_000 {
            for id in sample_eds_indices(&validity, 0.1, &mut rng).unwrap() {
                counts[id] += 1;
            }
        }
        let sigma = (0.1 * 0.9 / 10_000.0f64).sqrt();
        for &c in &counts {
            let freq = c as f64 / 10_000.0;
            assert!((freq - 0.1).abs() < 5.0 * sigma, "frequency {freq}");
        }
    }

    #[test]
    fn dataset_generation_is_bit_deterministic() {
        let cfg = GeneratorConfig {
            height: 8,
            width: 8,
            phases: 3,
            confounded_pairs: 1,
            voronoi_seeds: 5,
            exposure: 100.0,
            samples: 3,
            seed: 77,
            ..Default::default()
        };
        let a = generate_dataset(&cfg).unwrap();
        let b = generate_dataset(&cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn edge_strip_pixels_are_invalid_with_zeroed_spectra() {
        let cfg = GeneratorConfig {
            height: 8,
            width: 8,
            phases: 2,
            confounded_pairs: 0,
            voronoi_seeds: 3,
            exposure: 50.0,
            samples: 1,
            edge_strip: 2,
            seed: 9,
            ..Default::default()
        };
        let d = generate_dataset(&cfg).unwrap();
        let s = &d.samples[0];
        for r in 0..8 {
            for c in 0..8 {
                let border = r < 2 || r >= 6 || c < 2 || c >= 6;
                let pixel = r * 8 + c;
                assert_eq!(s.validity[pixel], !border);
                if border {
                    let spec = &s.reduced[pixel * SPECTRUM_DIM..(pixel + 1) * SPECTRUM_DIM];
                    assert!(spec.iter().all(|&v| v == 0.0));
                }
            }
        }
    }
}
