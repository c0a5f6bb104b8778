//! Fixtures and independent reference implementations shared by the
//! integration tests. Nothing here calls the code it is used to check.

#![allow(dead_code)]

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vhi_core::io::{self, Dtype};
use vhi_core::{BinaryMask, Geometry, Volume};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_mask<R: Rng>(rng: &mut R, dims: [usize; 3], density: f64) -> BinaryMask {
    let g = Geometry::new(dims, [1.0; 3]).unwrap();
    let bits = (0..g.voxel_count()).map(|_| rng.gen_bool(density)).collect();
    BinaryMask::new(g, bits).unwrap()
}

// ---------------------------------------------------------------------------
// Connected components: pairwise union-find over set voxels.

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Components as sorted voxel lists, ordered by smallest index. Two voxels
/// are adjacent when every coordinate differs by at most one, restricted
/// to `max_manhattan` total steps (1 = faces only, 3 = full 26), and to
/// the same plane when `in_plane` is set.
pub fn oracle_components(mask: &BinaryMask, max_manhattan: usize, in_plane: bool) -> Vec<Vec<usize>> {
    let [nx, ny, _] = mask.geometry().dims();
    let set: Vec<usize> = (0..mask.bits().len()).filter(|&i| mask.bits()[i]).collect();
    let coords: Vec<[i64; 3]> = set
        .iter()
        .map(|&i| [(i % nx) as i64, ((i / nx) % ny) as i64, (i / (nx * ny)) as i64])
        .collect();
    let mut parent: Vec<usize> = (0..set.len()).collect();
    for a in 0..set.len() {
        for b in a + 1..set.len() {
            let d: Vec<i64> = (0..3).map(|k| (coords[a][k] - coords[b][k]).abs()).collect();
            if d.iter().any(|&v| v > 1) || (in_plane && d[2] != 0) {
                continue;
            }
            if (d.iter().sum::<i64>() as usize) <= max_manhattan {
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                parent[ra] = rb;
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for k in 0..set.len() {
        let r = find(&mut parent, k);
        groups.entry(r).or_default().push(set[k]);
    }
    let mut out: Vec<Vec<usize>> = groups.into_values().collect();
    out.sort_by_key(|g| g[0]);
    out
}

// ---------------------------------------------------------------------------
// Adaptive multiplier: the rule executed one step at a time.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleThresholds {
    pub n: f64,
    pub l_lower: f64,
    pub l_upper: f64,
    pub clamped: bool,
    pub steps: u64,
    pub hit_guard: bool,
}

pub const LOOP_GUARD: u64 = 1_000_000;

/// Start at n = 1.5 and add 0.05 until `I_max - (Q_U + n·IQR) < IQR/2`.
/// The multiplier after k steps is the decimal 1.5 + 0.05k, i.e. the
/// double nearest (30 + k)/20.
pub fn oracle_thresholds(q_upper: f64, iqr: f64, i_max: f64) -> OracleThresholds {
    if !(iqr > 0.0) {
        return OracleThresholds {
            n: 1.5,
            l_lower: i_max,
            l_upper: i_max,
            clamped: true,
            steps: 0,
            hit_guard: false,
        };
    }
    let mut k = 0u64;
    let mut hit_guard = false;
    let (n, l_lower) = loop {
        let n = (30 + k) as f64 / 20.0;
        let l_lower = q_upper + n * iqr;
        if i_max - l_lower < iqr / 2.0 {
            break (n, l_lower);
        }
        if k == LOOP_GUARD {
            hit_guard = true;
            break (n, l_lower);
        }
        k += 1;
    };
    let clamped = i_max - l_lower <= 0.0;
    OracleThresholds {
        n,
        l_lower: if clamped { i_max } else { l_lower },
        l_upper: i_max,
        clamped,
        steps: k,
        hit_guard,
    }
}

// ---------------------------------------------------------------------------
// Student t by quadrature. With t = sqrt(v)·tan(θ) the density becomes
// proportional to cos^(v-1)(θ) on (-π/2, π/2), so tail areas are ratios of
// integrals of a smooth function and no gamma function is needed.

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let n = n + n % 2;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

const QUAD_STEPS: usize = 20_000;

pub fn oracle_two_sided_p(t: f64, df: f64) -> f64 {
    let half = std::f64::consts::FRAC_PI_2;
    let f = |th: f64| th.cos().powf(df - 1.0);
    let theta = (t.abs() / df.sqrt()).atan();
    simpson(f, theta, half, QUAD_STEPS) / simpson(f, 0.0, half, QUAD_STEPS)
}

pub fn oracle_cdf(t: f64, df: f64) -> f64 {
    let tail = 0.5 * oracle_two_sided_p(t, df);
    if t >= 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// Upper quantile for p > 1/2 by bisection on the quadrature CDF.
pub fn oracle_quantile(p: f64, df: f64) -> f64 {
    assert!(p > 0.5 && p < 1.0);
    let (mut lo, mut hi) = (0.0, 1.0);
    while oracle_cdf(hi, df) < p {
        hi *= 2.0;
    }
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if oracle_cdf(mid, df) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Least squares with the textbook sums, plus t-based inference through
/// the quadrature oracle.
#[derive(Debug, Clone, Copy)]
pub struct OracleFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
    pub intercept_se: f64,
    pub slope_ci: (f64, f64),
    pub intercept_ci: (f64, f64),
    pub slope_p: f64,
    pub intercept_p: f64,
}

pub fn oracle_ols(points: &[(f64, f64)]) -> OracleFit {
    let n = points.len() as f64;
    let sx: f64 = points.iter().map(|p| p.0).sum();
    let sy: f64 = points.iter().map(|p| p.1).sum();
    let sxx: f64 = points.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = points.iter().map(|p| p.0 * p.1).sum();
    // Normal equations solved by Cramer's rule.
    let det = n * sxx - sx * sx;
    let slope = (n * sxy - sx * sy) / det;
    let intercept = (sxx * sy - sx * sxy) / det;
    let rss: f64 = points.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let df = n - 2.0;
    let s2 = rss / df;
    let slope_se = (s2 * n / det).sqrt();
    let intercept_se = (s2 * sxx / det).sqrt();
    let t = oracle_quantile(0.975, df);
    OracleFit {
        slope,
        intercept,
        slope_se,
        intercept_se,
        slope_ci: (slope - t * slope_se, slope + t * slope_se),
        intercept_ci: (intercept - t * intercept_se, intercept + t * intercept_se),
        slope_p: oracle_two_sided_p(slope / slope_se, df),
        intercept_p: oracle_two_sided_p(intercept / intercept_se, df),
    }
}

// ---------------------------------------------------------------------------
// Overlap.

pub fn oracle_dice(a: &BinaryMask, b: &BinaryMask) -> f64 {
    let sa: HashSet<usize> = a.true_indices().collect();
    let sb: HashSet<usize> = b.true_indices().collect();
    if sa.is_empty() && sb.is_empty() {
        return 1.0;
    }
    2.0 * sa.intersection(&sb).count() as f64 / (sa.len() + sb.len()) as f64
}

pub fn oracle_votes(masks: &[BinaryMask], min_votes: usize) -> Vec<bool> {
    let n = masks[0].bits().len();
    (0..n)
        .map(|i| masks.iter().filter(|m| m.bits()[i]).count() >= min_votes)
        .collect()
}

/// Mean difference and sample SD computed in two passes.
pub fn oracle_bland_altman(pairs: &[(f64, f64)]) -> (f64, f64, f64, f64) {
    let d: Vec<f64> = pairs.iter().map(|(a, b)| a - b).collect();
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let sd = (d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    (mean, sd, mean - 1.96 * sd, mean + 1.96 * sd)
}

// ---------------------------------------------------------------------------
// Phantoms.

pub const SPACING: [f64; 3] = [0.59, 0.59, 3.0];
pub const BACKGROUND: f64 = 10.0;
pub const BRIGHT: f64 = 200.0;

/// 81 intensities with Q_L = 40, Q_U = 60 and I_max = 120 under type-7
/// quartiles (positions 20 and 60 of the sorted list).
pub fn normal_samples() -> Vec<f64> {
    let mut v = vec![40.0; 21];
    v.extend(std::iter::repeat(50.0).take(20));
    v.extend(std::iter::repeat(60.0).take(39));
    v.push(120.0);
    v
}

/// The end-to-end phantom: 64×64×10, a 10×10×5 bright block (500 voxels),
/// a 2-pixel bright speck, a disease region around both, and a normal-bone
/// ROI carrying [`normal_samples`].
pub struct Phantom {
    pub stir: Volume,
    pub disease: BinaryMask,
    pub normal: BinaryMask,
    pub lesion: BinaryMask,
}

pub fn phantom() -> Phantom {
    let g = Geometry::new([64, 64, 10], SPACING).unwrap();
    let mut values = vec![BACKGROUND; g.voxel_count()];
    let mut normal = BinaryMask::empty(g);
    for (k, v) in normal_samples().into_iter().enumerate() {
        let i = g.index(k % 64, k / 64, 0);
        values[i] = v;
        normal.set(i, true);
    }
    let mut disease = BinaryMask::empty(g);
    for z in 1..10 {
        for y in 10..60 {
            for x in 10..60 {
                disease.set_xyz(x, y, z, true);
            }
        }
    }
    let mut lesion = BinaryMask::empty(g);
    for z in 2..7 {
        for y in 20..30 {
            for x in 20..30 {
                values[g.index(x, y, z)] = BRIGHT;
                lesion.set_xyz(x, y, z, true);
            }
        }
    }
    for x in [45, 46] {
        values[g.index(x, 45, 3)] = BRIGHT;
    }
    Phantom {
        stir: Volume::new(g, values).unwrap(),
        disease,
        normal,
        lesion,
    }
}

/// Write the phantom inputs in mixed formats: STIR as float32 NIfTI,
/// disease region as RLE-JSON, normal ROI as uint8 NIfTI.
pub fn write_phantom(dir: &Path, p: &Phantom) -> (std::path::PathBuf, std::path::PathBuf, std::path::PathBuf) {
    let stir = dir.join("stir.nii");
    let disease = dir.join("disease.rle.json");
    let normal = dir.join("normal.nii");
    io::save_volume(&stir, &p.stir, Dtype::Float32).unwrap();
    io::save_mask(&disease, &p.disease).unwrap();
    io::save_mask(&normal, &p.normal).unwrap();
    (stir, disease, normal)
}

/// A smaller phantom with several lesions for session tests: sizes 100 and
/// 30 in separate slabs, plus `extra` random blobs; the disease region
/// covers everything. Half of each lesion is above the conservative limit.
pub fn multi_lesion_volume<R: Rng>(rng: &mut R, extra: usize) -> Volume {
    let g = Geometry::new([24, 24, 6], SPACING).unwrap();
    let mut values = vec![BACKGROUND; g.voxel_count()];
    // 100 voxels: 5×5×4, top two slices bright.
    for z in 0..4 {
        for y in 1..6 {
            for x in 1..6 {
                values[g.index(x, y, z)] = if z < 2 { BRIGHT } else { 100.0 };
            }
        }
    }
    // 30 voxels: 5×3×2.
    for z in 0..2 {
        for y in 10..13 {
            for x in 1..6 {
                values[g.index(x, y, z)] = 100.0;
            }
        }
    }
    for _ in 0..extra {
        let (x0, y0, z0) = (rng.gen_range(9..20), rng.gen_range(1..20), rng.gen_range(0..4));
        let (w, h, d) = (rng.gen_range(2..4), rng.gen_range(2..4), rng.gen_range(1..3));
        let bright = rng.gen_bool(0.5);
        for z in z0..(z0 + d).min(6) {
            for y in y0..y0 + h {
                for x in x0..x0 + w {
                    values[g.index(x, y, z)] = if bright { BRIGHT } else { 100.0 };
                }
            }
        }
    }
    Volume::new(g, values).unwrap()
}

// ---------------------------------------------------------------------------
// Session fixtures.

pub const SESSION_L_LOWER: f64 = 50.0;
pub const SESSION_L_UPPER: f64 = 150.0;

/// Write `stir` (raw float64) and a full disease mask under `dir`, and
/// return a creation request with inline thresholds.
pub fn session_request(dir: &Path, stir: &Volume) -> vhi_core::service::CreateSessionRequest {
    let stir_path = dir.join("stir.json");
    let disease_path = dir.join("disease.rle.json");
    io::save_volume(&stir_path, stir, Dtype::Float64).unwrap();
    io::save_mask(&disease_path, &BinaryMask::full(*stir.geometry())).unwrap();
    vhi_core::service::CreateSessionRequest {
        stir: stir_path,
        t1w: None,
        disease_mask: disease_path,
        normal_mask: None,
        thresholds: Some(vhi_core::service::ThresholdSource::Inline {
            l_lower: SESSION_L_LOWER,
            l_upper: SESSION_L_UPPER,
        }),
        reader_id: "reader-1".to_owned(),
        min_region_px: None,
    }
}

/// What a session's files on disk say the cleaned result is: candidate
/// masks and manifest thresholds, with the persisted log applied.
pub fn offline_result(session_dir: &Path) -> (BinaryMask, BinaryMask, vhi_core::VhiMeasurement, usize) {
    use vhi_core::service::*;
    let manifest: SessionManifest =
        serde_json::from_slice(&std::fs::read(session_dir.join(MANIFEST_FILE)).unwrap()).unwrap();
    let cand = vhi_core::CandidateSegmentation::from_masks(
        io::load_mask(&session_dir.join(CANDIDATE_SENSITIVE_FILE)).unwrap(),
        io::load_mask(&session_dir.join(CANDIDATE_CONSERVATIVE_FILE)).unwrap(),
        manifest.thresholds,
    )
    .unwrap();
    let text = std::fs::read_to_string(session_dir.join(DECISIONS_FILE)).unwrap();
    let entries: Vec<vhi_core::segment::LogEntry> =
        text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let n = entries.len();
    let log = vhi_core::CleaningDecisionLog::from_entries(entries);
    let (s, c) = vhi_core::apply_cleaning(&cand, &log).unwrap();
    let m = vhi_core::compute_vhi(&s, &c).unwrap();
    (s, c, m, n)
}
