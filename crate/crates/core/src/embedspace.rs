//! Shared unit-sphere embedding space standing in for a CLIP-style reward
//! model: a fixed synthetic encoder for both "image" (sample) and "text"
//! (prompt) roles, anchor management, safety-direction construction, text
//! safety detection, and the steering transform.
//!
//! Everything here is immutable after construction and safe to read from any
//! number of threads.

use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::diffnum::{dot, norm};
use crate::{Error, Result};

/// Norm tolerance for unit-sphere membership checks.
pub const UNIT_NORM_TOL: f64 = 1e-9;

/// A d-dimensional vector with Euclidean norm 1 (within [`UNIT_NORM_TOL`]).
#[derive(Debug, Clone, PartialEq)]
pub struct UnitEmbedding {
    values: Vec<f64>,
}

impl UnitEmbedding {
    /// Wraps a vector that is already unit-norm.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::Config("embedding dimension must be >= 2".into()));
        }
        let n = norm(&values);
        if (n - 1.0).abs() > UNIT_NORM_TOL {
            return Err(Error::Config(format!(
                "embedding norm {n} is not 1 within {UNIT_NORM_TOL:e}"
            )));
        }
        Ok(Self { values })
    }

    /// Normalizes an arbitrary nonzero vector onto the sphere.
    pub fn normalize(values: &[f64]) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::Config("embedding dimension must be >= 2".into()));
        }
        let n = norm(values);
        if n < 1e-12 || !n.is_finite() {
            return Err(Error::DegenerateEmbedding);
        }
        Ok(Self {
            values: values.iter().map(|v| v / n).collect(),
        })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    /// Cosine similarity (plain dot product on the sphere).
    pub fn dot(&self, other: &UnitEmbedding) -> f64 {
        dot(&self.values, &other.values)
    }
}

/// Fixed unit vector pointing from unsafe concepts toward safe concepts.
/// Built once, never mutated afterwards.
#[derive(Debug, Clone)]
pub struct SafetyDirection {
    direction: UnitEmbedding,
}

impl SafetyDirection {
    pub fn direction(&self) -> &UnitEmbedding {
        &self.direction
    }

    pub fn as_slice(&self) -> &[f64] {
        self.direction.as_slice()
    }

    /// Test-only escape hatch for hand-built geometry.
    pub fn from_unit(direction: UnitEmbedding) -> Self {
        Self { direction }
    }
}

/// Anchor phrases as prompt-space points, encoded lazily so a seed fully
/// determines the geometry. Both lists must be nonempty.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSet {
    safe: Vec<Vec<f64>>,
    unsafe_: Vec<Vec<f64>>,
}

impl AnchorSet {
    pub fn new(safe: Vec<Vec<f64>>, unsafe_: Vec<Vec<f64>>) -> Result<Self> {
        if safe.is_empty() || unsafe_.is_empty() {
            return Err(Error::Config(
                "anchor set needs at least one safe and one unsafe point".into(),
            ));
        }
        let m = safe[0].len();
        if safe.iter().chain(unsafe_.iter()).any(|p| p.len() != m) {
            return Err(Error::Config(
                "all anchor points must share one dimension".into(),
            ));
        }
        Ok(Self { safe, unsafe_ })
    }

    pub fn safe_points(&self) -> &[Vec<f64>] {
        &self.safe
    }

    pub fn unsafe_points(&self) -> &[Vec<f64>] {
        &self.unsafe_
    }

    /// Loads safe and unsafe anchors from two plain-text point tables.
    pub fn from_table_files(
        safe_path: &std::path::Path,
        unsafe_path: &std::path::Path,
    ) -> Result<Self> {
        let safe = parse_point_table(&std::fs::read_to_string(safe_path)?)?;
        let unsafe_ = parse_point_table(&std::fs::read_to_string(unsafe_path)?)?;
        Self::new(safe, unsafe_)
    }
}

/// Parses the plain-text point table: one point per line as comma-separated
/// floats; blank lines and lines starting with `#` are ignored.
pub fn parse_point_table(text: &str) -> Result<Vec<Vec<f64>>> {
    let mut points = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let point = line
            .split(',')
            .map(|f| {
                f.trim().parse::<f64>().map_err(|e| Error::Table {
                    line: idx + 1,
                    message: format!("bad float {f:?}: {e}"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = points.first() {
            let expected: &Vec<f64> = first;
            if point.len() != expected.len() {
                return Err(Error::Table {
                    line: idx + 1,
                    message: format!(
                        "point has {} coordinates, expected {}",
                        point.len(),
                        expected.len()
                    ),
                });
            }
        }
        points.push(point);
    }
    if points.is_empty() {
        return Err(Error::Table {
            line: 0,
            message: "table contains no points".into(),
        });
    }
    Ok(points)
}

/// Formats points in the same grammar `parse_point_table` accepts.
pub fn format_point_table(points: &[Vec<f64>]) -> String {
    let mut out = String::new();
    for p in points {
        let fields: Vec<String> = p.iter().map(|v| format!("{v}")).collect();
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

/// Fixed seeded affine map into the unit sphere: `encode(x) = normalize(Wx + b)`.
///
/// One encoder serves both the sample ("image") and prompt ("text") roles on
/// the synthetic task.
#[derive(Debug, Clone)]
pub struct SyntheticEncoder {
    /// Row-major d x m projection.
    weight: Vec<f64>,
    offset: Vec<f64>,
    embed_dim: usize,
    data_dim: usize,
}

impl SyntheticEncoder {
    /// Draws W from a seeded standard normal scaled by 1/sqrt(d), with b = 0.
    /// Regenerates (seed + attempt) until W has full rank min(d, m).
    pub fn from_seed(embed_dim: usize, data_dim: usize, seed: u64) -> Result<Self> {
        Self::from_seed_with_offset(embed_dim, data_dim, seed, 0.0)
    }

    /// Like [`SyntheticEncoder::from_seed`] but with a common offset of the
    /// given magnitude (a seeded random direction scaled to `offset_scale`).
    ///
    /// A large offset concentrates all embeddings in a narrow cone around
    /// the offset direction, the way learned joint embeddings concentrate;
    /// safety scores then stay mild instead of saturating near +/-1, which
    /// is the regime where moderate steering strengths are meaningful.
    pub fn from_seed_with_offset(
        embed_dim: usize,
        data_dim: usize,
        seed: u64,
        offset_scale: f64,
    ) -> Result<Self> {
        if embed_dim < 2 || data_dim < 1 {
            return Err(Error::Config(
                "encoder needs embed_dim >= 2 and data_dim >= 1".into(),
            ));
        }
        if !(offset_scale >= 0.0) {
            return Err(Error::Config("offset_scale must be >= 0".into()));
        }
        for attempt in 0..16 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt));
            let scale = 1.0 / (embed_dim as f64).sqrt();
            let weight: Vec<f64> = (0..embed_dim * data_dim)
                .map(|_| {
                    let g: f64 = rand_distr::StandardNormal.sample(&mut rng);
                    g * scale
                })
                .collect();
            let offset = if offset_scale > 0.0 {
                let raw: Vec<f64> = (0..embed_dim)
                    .map(|_| {
                        let g: f64 = rand_distr::StandardNormal.sample(&mut rng);
                        g
                    })
                    .collect();
                let n = norm(&raw);
                raw.iter().map(|v| offset_scale * v / n).collect()
            } else {
                vec![0.0; embed_dim]
            };
            let enc = Self {
                weight,
                offset,
                embed_dim,
                data_dim,
            };
            if enc.has_full_rank() {
                return Ok(enc);
            }
        }
        Err(Error::Config(
            "could not draw a full-rank projection in 16 attempts".into(),
        ))
    }

    /// Builds an encoder from explicit components (tests, hand geometry).
    pub fn from_parts(weight: Vec<f64>, offset: Vec<f64>, embed_dim: usize, data_dim: usize) -> Result<Self> {
        if weight.len() != embed_dim * data_dim || offset.len() != embed_dim {
            return Err(Error::DimensionMismatch {
                context: "SyntheticEncoder::from_parts",
                expected: embed_dim * data_dim,
                got: weight.len(),
            });
        }
        Ok(Self {
            weight,
            offset,
            embed_dim,
            data_dim,
        })
    }

    /// Identity-like encoder (d = m, W = I, b = 0), handy for hand geometry.
    pub fn identity(dim: usize) -> Result<Self> {
        let mut weight = vec![0.0; dim * dim];
        for i in 0..dim {
            weight[i * dim + i] = 1.0;
        }
        Self::from_parts(weight, vec![0.0; dim], dim, dim)
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    pub fn data_dim(&self) -> usize {
        self.data_dim
    }

    /// Rank check via Gram determinant of the thinner side of W.
    fn has_full_rank(&self) -> bool {
        let (d, m) = (self.embed_dim, self.data_dim);
        let k = d.min(m);
        // Gram matrix of columns (if m <= d) or rows (if d < m).
        let mut gram = vec![0.0; k * k];
        for i in 0..k {
            for j in 0..k {
                let mut s = 0.0;
                if m <= d {
                    for r in 0..d {
                        s += self.weight[r * m + i] * self.weight[r * m + j];
                    }
                } else {
                    for c in 0..m {
                        s += self.weight[i * m + c] * self.weight[j * m + c];
                    }
                }
                gram[i * k + j] = s;
            }
        }
        determinant(&mut gram, k).abs() > 1e-12
    }

    /// `normalize(W x + b)`.
    pub fn encode(&self, point: &[f64]) -> Result<UnitEmbedding> {
        if point.len() != self.data_dim {
            return Err(Error::DimensionMismatch {
                context: "SyntheticEncoder::encode",
                expected: self.data_dim,
                got: point.len(),
            });
        }
        let mut out = self.offset.clone();
        for (o, row) in out.iter_mut().zip(self.weight.chunks_exact(self.data_dim)) {
            *o += dot(row, point);
        }
        UnitEmbedding::normalize(&out)
    }
}

/// Gaussian elimination determinant (destroys its input). Small k only.
fn determinant(a: &mut [f64], k: usize) -> f64 {
    let mut det = 1.0;
    for col in 0..k {
        // Partial pivot.
        let mut pivot = col;
        for row in col + 1..k {
            if a[row * k + col].abs() > a[pivot * k + col].abs() {
                pivot = row;
            }
        }
        if a[pivot * k + col].abs() < 1e-300 {
            return 0.0;
        }
        if pivot != col {
            for c in 0..k {
                a.swap(col * k + c, pivot * k + c);
            }
            det = -det;
        }
        det *= a[col * k + col];
        for row in col + 1..k {
            let factor = a[row * k + col] / a[col * k + col];
            for c in col..k {
                a[row * k + c] -= factor * a[col * k + c];
            }
        }
    }
    det
}

/// `v_safe = normalize(mean(encode(safe)) - mean(encode(unsafe)))`.
///
/// Computed once; the result is meant to stay fixed for a whole run.
pub fn build_safety_direction(
    enc: &SyntheticEncoder,
    anchors: &AnchorSet,
) -> Result<SafetyDirection> {
    let mean_of = |points: &[Vec<f64>]| -> Result<Vec<f64>> {
        let mut acc = vec![0.0; enc.embed_dim()];
        for p in points {
            let z = enc.encode(p)?;
            for (a, v) in acc.iter_mut().zip(z.as_slice()) {
                *a += v;
            }
        }
        let n = points.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        Ok(acc)
    };
    let safe_mean = mean_of(anchors.safe_points())?;
    let unsafe_mean = mean_of(anchors.unsafe_points())?;
    let diff: Vec<f64> = safe_mean
        .iter()
        .zip(&unsafe_mean)
        .map(|(s, u)| s - u)
        .collect();
    if norm(&diff) < 1e-12 {
        return Err(Error::IndistinguishableAnchors(1e-12));
    }
    Ok(SafetyDirection {
        direction: UnitEmbedding::normalize(&diff)?,
    })
}

/// Cosine of a prompt embedding with the safety direction. Positive means
/// aligned with safe concepts; negative triggers steering.
pub fn text_safety_score(z: &UnitEmbedding, v: &SafetyDirection) -> f64 {
    z.dot(v.direction())
}

/// Steering transform: `normalize(z + alpha * v)`.
///
/// The zero vector is only reachable at alpha = 1 with z = -v.
pub fn steer(z: &UnitEmbedding, v: &SafetyDirection, alpha: f64) -> Result<UnitEmbedding> {
    if !(alpha >= 0.0) {
        return Err(Error::Config(format!(
            "steering strength must be >= 0, got {alpha}"
        )));
    }
    if alpha == 0.0 {
        return Ok(z.clone());
    }
    let shifted: Vec<f64> = z
        .as_slice()
        .iter()
        .zip(v.as_slice())
        .map(|(zi, vi)| zi + alpha * vi)
        .collect();
    if norm(&shifted) < 1e-12 {
        return Err(Error::DegenerateSteer);
    }
    UnitEmbedding::normalize(&shifted)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit(values: &[f64]) -> UnitEmbedding {
        UnitEmbedding::normalize(values).unwrap()
    }

    #[test]
    fn encode_normalizes_three_four() {
        // W = I, b = 0: encode((3, 4)) = (0.6, 0.8).
        let enc = SyntheticEncoder::identity(2).unwrap();
        let z = enc.encode(&[3.0, 4.0]).unwrap();
        assert!((z.as_slice()[0] - 0.6).abs() < 1e-15);
        assert!((z.as_slice()[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn encode_output_is_unit_norm() {
        let enc = SyntheticEncoder::from_seed(8, 2, 3).unwrap();
        for point in [[1.0, 0.0], [0.3, -0.7], [100.0, 42.0]] {
            let z = enc.encode(&point).unwrap();
            assert!((norm(z.as_slice()) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn encode_rejects_zero_image() {
        let enc = SyntheticEncoder::identity(2).unwrap();
        assert!(matches!(
            enc.encode(&[0.0, 0.0]),
            Err(Error::DegenerateEmbedding)
        ));
    }

    #[test]
    fn seeded_encode_matches_straight_line_oracle() {
        // Independent matrix-multiply-then-normalize over the raw fields.
        let enc = SyntheticEncoder::from_seed(8, 2, 7).unwrap();
        let point = [1.0, 0.0];
        let z = enc.encode(&point).unwrap();

        let mut raw = vec![0.0f64; 8];
        for r in 0..8 {
            raw[r] = enc.weight[r * 2] * point[0] + enc.weight[r * 2 + 1] * point[1]
                + enc.offset[r];
        }
        let n = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        for (got, want) in z.as_slice().iter().zip(raw.iter().map(|v| v / n)) {
            assert!((got - want).abs() < 1e-15);
        }
    }

    #[test]
    fn safety_direction_symmetric_pair() {
        // Safe anchor encoding to (1,0), unsafe to (-1,0): v = (1,0).
        let enc = SyntheticEncoder::identity(2).unwrap();
        let anchors = AnchorSet::new(vec![vec![2.0, 0.0]], vec![vec![-3.0, 0.0]]).unwrap();
        let v = build_safety_direction(&enc, &anchors).unwrap();
        assert!((v.as_slice()[0] - 1.0).abs() < 1e-15);
        assert!(v.as_slice()[1].abs() < 1e-15);
    }

    #[test]
    fn safety_direction_antisymmetric_under_swap() {
        let enc = SyntheticEncoder::from_seed(8, 2, 17).unwrap();
        let safe = vec![vec![1.0, 2.0], vec![-0.5, 1.5], vec![0.2, 0.9]];
        let unsafe_ = vec![vec![2.0, -1.0], vec![1.0, -2.0]];
        let fwd = build_safety_direction(
            &enc,
            &AnchorSet::new(safe.clone(), unsafe_.clone()).unwrap(),
        )
        .unwrap();
        let rev = build_safety_direction(&enc, &AnchorSet::new(unsafe_, safe).unwrap()).unwrap();
        for (a, b) in fwd.as_slice().iter().zip(rev.as_slice()) {
            assert!((a + b).abs() < 1e-12);
        }
    }

    #[test]
    fn safety_direction_matches_mean_difference_oracle() {
        let enc = SyntheticEncoder::from_seed(8, 2, 23).unwrap();
        let safe = vec![vec![1.0, 2.0], vec![-0.5, 1.5], vec![0.2, 0.9]];
        let unsafe_ = vec![vec![2.0, -1.0], vec![1.0, -2.0]];
        let v = build_safety_direction(
            &enc,
            &AnchorSet::new(safe.clone(), unsafe_.clone()).unwrap(),
        )
        .unwrap();

        // Straight-line recomputation.
        let embed = |p: &[f64]| enc.encode(p).unwrap().as_slice().to_vec();
        let mut mean_s = vec![0.0; 8];
        for p in &safe {
            for (a, v) in mean_s.iter_mut().zip(embed(p)) {
                *a += v / safe.len() as f64;
            }
        }
        let mut mean_u = vec![0.0; 8];
        for p in &unsafe_ {
            for (a, v) in mean_u.iter_mut().zip(embed(p)) {
                *a += v / unsafe_.len() as f64;
            }
        }
        let diff: Vec<f64> = mean_s.iter().zip(&mean_u).map(|(s, u)| s - u).collect();
        let n = norm(&diff);
        for (got, want) in v.as_slice().iter().zip(diff.iter().map(|d| d / n)) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn indistinguishable_anchors_rejected() {
        let enc = SyntheticEncoder::identity(2).unwrap();
        let anchors = AnchorSet::new(vec![vec![1.0, 1.0]], vec![vec![2.0, 2.0]]).unwrap();
        // Both encode to the same unit vector; mean difference is ~0.
        assert!(matches!(
            build_safety_direction(&enc, &anchors),
            Err(Error::IndistinguishableAnchors(_))
        ));
    }

    #[test]
    fn direction_invariant_under_anchor_duplication() {
        let enc = SyntheticEncoder::from_seed(8, 2, 31).unwrap();
        let safe = vec![vec![1.0, 2.0], vec![-0.5, 1.5]];
        let unsafe_ = vec![vec![2.0, -1.0]];
        let base = build_safety_direction(
            &enc,
            &AnchorSet::new(safe.clone(), unsafe_.clone()).unwrap(),
        )
        .unwrap();
        let mut doubled_safe = safe.clone();
        doubled_safe.extend(safe);
        let mut tripled_unsafe = unsafe_.clone();
        tripled_unsafe.extend(unsafe_.clone());
        tripled_unsafe.extend(unsafe_);
        let dup = build_safety_direction(
            &enc,
            &AnchorSet::new(doubled_safe, tripled_unsafe).unwrap(),
        )
        .unwrap();
        for (a, b) in base.as_slice().iter().zip(dup.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn text_safety_score_cases() {
        let v = SafetyDirection::from_unit(unit(&[1.0, 0.0]));
        assert_eq!(text_safety_score(&unit(&[1.0, 0.0]), &v), 1.0);
        assert_eq!(text_safety_score(&unit(&[0.0, 1.0]), &v), 0.0);
        let z = unit(&[0.6, 0.8]);
        assert!((text_safety_score(&z, &v) - 0.6).abs() < 1e-15);
    }

    #[test]
    fn steer_alpha_zero_is_identity() {
        let v = SafetyDirection::from_unit(unit(&[1.0, 0.0]));
        let z = unit(&[0.3, -0.8]);
        let steered = steer(&z, &v, 0.0).unwrap();
        assert_eq!(steered.as_slice(), z.as_slice());
    }

    #[test]
    fn steer_collinear_fixed_point() {
        let v = SafetyDirection::from_unit(unit(&[0.0, 1.0]));
        for alpha in [0.0, 0.5, 1.0, 2.0, 7.5] {
            let steered = steer(v.direction(), &v, alpha).unwrap();
            assert!((steered.dot(v.direction()) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn steer_hand_case() {
        // z = (0,1), v = (1,0), alpha = 0.5 -> normalize((0.5, 1)).
        let v = SafetyDirection::from_unit(unit(&[1.0, 0.0]));
        let z = unit(&[0.0, 1.0]);
        let steered = steer(&z, &v, 0.5).unwrap();
        assert!((steered.as_slice()[0] - 0.447_213_595_499_958).abs() < 1e-12);
        assert!((steered.as_slice()[1] - 0.894_427_190_999_916).abs() < 1e-12);
        assert!((text_safety_score(&steered, &v) - 0.447_213_595_499_958).abs() < 1e-12);
    }

    #[test]
    fn steer_degenerate_at_antipode() {
        let v = SafetyDirection::from_unit(unit(&[1.0, 0.0]));
        let z = unit(&[-1.0, 0.0]);
        assert!(matches!(steer(&z, &v, 1.0), Err(Error::DegenerateSteer)));
        // Just past the degenerate point it flips to +v.
        let past = steer(&z, &v, 2.0).unwrap();
        assert!((past.dot(v.direction()) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn steer_rejects_negative_alpha() {
        let v = SafetyDirection::from_unit(unit(&[1.0, 0.0]));
        let z = unit(&[0.0, 1.0]);
        assert!(steer(&z, &v, -0.1).is_err());
    }

    #[test]
    fn zero_safety_score_is_the_unsteered_branch_boundary() {
        // Exactly orthogonal embedding: score is 0.0, which the reward layer
        // treats as safe ("otherwise" branch).
        let v = SafetyDirection::from_unit(unit(&[1.0, 0.0, 0.0]));
        let z = unit(&[0.0, 1.0, 0.0]);
        assert_eq!(text_safety_score(&z, &v), 0.0);
    }

    #[test]
    fn parse_point_table_grammar() {
        let text = "# anchors\n 1.0, 2.5\n\n-3,4\n# trailing comment\n";
        let pts = parse_point_table(text).unwrap();
        assert_eq!(pts, vec![vec![1.0, 2.5], vec![-3.0, 4.0]]);

        assert!(parse_point_table("1.0,oops\n").is_err());
        assert!(parse_point_table("1.0,2.0\n3.0\n").is_err());
        assert!(parse_point_table("# only comments\n").is_err());
    }

    #[test]
    fn point_table_round_trip() {
        let pts = vec![vec![0.125, -7.5], vec![3.0, 0.0001]];
        let text = format_point_table(&pts);
        assert_eq!(parse_point_table(&text).unwrap(), pts);
    }

    proptest! {
        /// Unit-norm closure for encode and steer over random inputs.
        #[test]
        fn prop_unit_norm_closure(
            px in -10.0f64..10.0,
            py in -10.0f64..10.0,
            alpha in 0.0f64..2.0,
            seed in 0u64..64,
        ) {
            prop_assume!(px.abs() + py.abs() > 1e-6);
            let enc = SyntheticEncoder::from_seed(8, 2, seed).unwrap();
            let z = enc.encode(&[px, py]).unwrap();
            prop_assert!((norm(z.as_slice()) - 1.0).abs() < UNIT_NORM_TOL);

            let anchors = AnchorSet::new(
                vec![vec![1.0, 2.0], vec![0.5, 1.0]],
                vec![vec![-1.0, -2.0]],
            ).unwrap();
            let v = build_safety_direction(&enc, &anchors).unwrap();
            prop_assert!((norm(v.as_slice()) - 1.0).abs() < UNIT_NORM_TOL);

            let steered = steer(&z, &v, alpha).unwrap();
            prop_assert!((norm(steered.as_slice()) - 1.0).abs() < UNIT_NORM_TOL);
        }

        /// Steered safety score is strictly increasing in alpha while |s| < 1.
        #[test]
        fn prop_alpha_monotonicity(raw in proptest::collection::vec(-1.0f64..1.0, 8)) {
            prop_assume!(raw.iter().map(|v| v * v).sum::<f64>() > 1e-6);
            let z = UnitEmbedding::normalize(&raw).unwrap();
            let mut vdir = vec![0.0; 8];
            vdir[0] = 1.0;
            let v = SafetyDirection::from_unit(UnitEmbedding::new(vdir).unwrap());
            prop_assume!(text_safety_score(&z, &v).abs() < 1.0 - 1e-9);

            let mut prev = text_safety_score(&z, &v);
            for k in 1..=20 {
                let alpha = k as f64 * 0.1;
                let s = text_safety_score(&steer(&z, &v, alpha).unwrap(), &v);
                prop_assert!(s > prev, "alpha {alpha}: {s} <= {prev}");
                prev = s;
            }
        }

        /// For alpha in [0,1), steering preserves the order of safety scores.
        #[test]
        fn prop_order_preservation(
            raw1 in proptest::collection::vec(-1.0f64..1.0, 8),
            raw2 in proptest::collection::vec(-1.0f64..1.0, 8),
            alpha in 0.0f64..0.999,
        ) {
            prop_assume!(raw1.iter().map(|v| v * v).sum::<f64>() > 1e-6);
            prop_assume!(raw2.iter().map(|v| v * v).sum::<f64>() > 1e-6);
            let z1 = UnitEmbedding::normalize(&raw1).unwrap();
            let z2 = UnitEmbedding::normalize(&raw2).unwrap();
            let mut vdir = vec![0.0; 8];
            vdir[0] = 1.0;
            let v = SafetyDirection::from_unit(UnitEmbedding::new(vdir).unwrap());
            let (s1, s2) = (text_safety_score(&z1, &v), text_safety_score(&z2, &v));
            prop_assume!((s1 - s2).abs() > 1e-9);
            let t1 = text_safety_score(&steer(&z1, &v, alpha).unwrap(), &v);
            let t2 = text_safety_score(&steer(&z2, &v, alpha).unwrap(), &v);
            if s1 > s2 {
                prop_assert!(t1 > t2);
            } else {
                prop_assert!(t2 > t1);
            }
        }
    }
}
