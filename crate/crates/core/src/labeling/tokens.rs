use super::annotate::LabelGrid;
use crate::error::{CoreError, Result};
use crate::terrain::{Channel, FeatureMap, NUM_CHANNELS};

/// Values per cell in a token: the feature channels plus the known mask.
pub const CELL_VALUES: usize = NUM_CHANNELS + 1;

/// Patch tiling and label-space settings.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenConfig {
    /// Patch side `M` in cells (odd).
    pub patch: usize,
    /// Window side `W` in patches.
    pub window: usize,
    /// Patch stride in cells; `patch` gives non-overlapping tiles.
    pub stride: usize,
    /// Number of traversability classes `K`.
    pub classes: usize,
    /// Multiplier applied to each feature channel when building tokens.
    pub channel_scale: [f32; NUM_CHANNELS],
    /// Subtracted from each scaled cell value, known mask last.
    pub channel_center: [f32; CELL_VALUES],
    /// Centred values are clamped to `[-clip, clip]`.
    pub channel_clip: f32,
}

/// Brings every channel of a typical off-road map to roughly unit range.
pub const DEFAULT_CHANNEL_SCALE: [f32; NUM_CHANNELS] = [2.0, 50.0, 2.0, 10.0, 5.0, 2.0, 5.0];

/// Scaled cell values of flat, drivable ground at the vehicle's ground
/// plane, with the known mask mapped to +-0.5. Without centring every
/// token shares a large common component and the untrained encoder maps
/// all of them into a narrow cone; centring on the mean of the whole map
/// instead makes ground and ditches collinear, and normalised embeddings
/// then lose the magnitude that tells them apart.
pub const DEFAULT_CHANNEL_CENTER: [f32; CELL_VALUES] = [0.0, 0.03, 0.0, 0.05, 0.33, 0.23, 0.1, 0.5];

impl Default for TokenConfig {
    fn default() -> Self {
        TokenConfig {
            patch: 11,
            window: 10,
            stride: 11,
            classes: 4,
            channel_scale: DEFAULT_CHANNEL_SCALE,
            channel_center: DEFAULT_CHANNEL_CENTER,
            channel_clip: 3.0,
        }
    }
}

impl TokenConfig {
    pub fn token_len(&self) -> usize {
        self.patch * self.patch * CELL_VALUES
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch.is_multiple_of(2) || self.patch == 0 {
            return Err(CoreError::Config(format!(
                "patch size must be odd, got {}",
                self.patch
            )));
        }
        if !(self.channel_clip > 0.0)
            || self
                .channel_scale
                .iter()
                .chain(&self.channel_center)
                .any(|s| !s.is_finite())
        {
            return Err(CoreError::Config(
                "channel_clip must be positive, channel_scale and channel_center finite".into(),
            ));
        }
        if self.window == 0 || self.stride == 0 || self.classes < 2 {
            return Err(CoreError::Config(
                "window, stride must be positive and classes >= 2".into(),
            ));
        }
        Ok(())
    }

    /// Patch positions per axis for a map side of `cells`, padded up to a
    /// whole number of windows.
    pub fn patches_per_axis(&self, cells: usize) -> usize {
        if cells < self.patch {
            return 0;
        }
        let raw = (cells - self.patch).div_ceil(self.stride) + 1;
        raw.div_ceil(self.window) * self.window
    }
}

/// Persistent identity of a token.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TokenId {
    pub frame: u32,
    pub window: u32,
    pub patch: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PseudoLabel {
    /// Centre cell traversed: `y = [1, 0, ..., 0]`.
    Positive,
    /// `y = [1, 1, ..., 1]`.
    Unlabeled,
}

impl PseudoLabel {
    pub fn code(self) -> u8 {
        match self {
            PseudoLabel::Positive => 1,
            PseudoLabel::Unlabeled => 0,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(PseudoLabel::Positive),
            0 => Some(PseudoLabel::Unlabeled),
            _ => None,
        }
    }

    /// Candidate-set vector `y` of length `k`.
    pub fn vector(self, k: usize) -> Vec<f32> {
        match self {
            PseudoLabel::Positive => (0..k).map(|j| if j == 0 { 1.0 } else { 0.0 }).collect(),
            PseudoLabel::Unlabeled => vec![1.0; k],
        }
    }

    /// Initial soft label `y / sum(y)`.
    pub fn initial_soft(self, k: usize) -> Vec<f32> {
        let y = self.vector(k);
        let s: f32 = y.iter().sum();
        y.into_iter().map(|v| v / s).collect()
    }
}

/// One `M x M` patch with its labels.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchToken {
    pub id: TokenId,
    /// Centre cell `(row, col)` in the source map.
    pub center: (usize, usize),
    /// Row-major cells, each `[channels..., known]`.
    pub features: Vec<f32>,
    pub label: PseudoLabel,
    /// Refined soft label `y_n`.
    pub soft: Vec<f32>,
}

/// Grid position of a token's patch inside the map tiling.
pub fn patch_origin(cfg: &TokenConfig, map_width: usize, id: &TokenId) -> (usize, usize) {
    let per_axis = cfg.patches_per_axis(map_width);
    let windows_x = per_axis / cfg.window;
    let (wr, wc) = (
        id.window as usize / windows_x.max(1),
        id.window as usize % windows_x.max(1),
    );
    let (pr, pc) = (
        id.patch as usize / cfg.window,
        id.patch as usize % cfg.window,
    );
    let (gr, gc) = (wr * cfg.window + pr, wc * cfg.window + pc);
    (gr * cfg.stride, gc * cfg.stride)
}

/// Tiles the (padded) map into patches and labels each by its centre cell.
/// Patches whose centre cell is unknown are dropped. Output is ordered by
/// window, then patch index.
pub fn extract_tokens(
    map: &FeatureMap<f32>,
    labels: &LabelGrid,
    cfg: &TokenConfig,
    frame: u32,
) -> Result<Vec<PatchToken>> {
    cfg.validate()?;
    let g = map.geometry;
    if labels.geometry != g {
        return Err(CoreError::Shape(
            "label grid does not match the feature map".into(),
        ));
    }
    let (ny, nx) = (
        cfg.patches_per_axis(g.height),
        cfg.patches_per_axis(g.width),
    );
    if ny == 0 || nx == 0 {
        return Ok(Vec::new());
    }
    let windows_x = nx / cfg.window;
    let half = cfg.patch / 2;
    let mut tokens = Vec::new();
    for gr in 0..ny {
        for gc in 0..nx {
            let (r0, c0) = (gr * cfg.stride, gc * cfg.stride);
            let (cr, cc) = (r0 + half, c0 + half);
            if cr >= g.height || cc >= g.width || !map.is_known(cr, cc) {
                continue;
            }
            let mut features = Vec::with_capacity(cfg.token_len());
            let mut raw = [0.0f32; CELL_VALUES];
            for r in r0..r0 + cfg.patch {
                for c in c0..c0 + cfg.patch {
                    raw.fill(0.0);
                    if r < g.height && c < g.width && map.is_known(r, c) {
                        for (k, ch) in Channel::ALL.into_iter().enumerate() {
                            raw[k] = map.get(ch, r, c) * cfg.channel_scale[k];
                        }
                        raw[NUM_CHANNELS] = 1.0;
                    }
                    features.extend(
                        raw.iter()
                            .zip(&cfg.channel_center)
                            .map(|(&v, &m)| (v - m).clamp(-cfg.channel_clip, cfg.channel_clip)),
                    );
                }
            }
            let label = if labels.is_positive(cr, cc) {
                PseudoLabel::Positive
            } else {
                PseudoLabel::Unlabeled
            };
            let id = TokenId {
                frame,
                window: ((gr / cfg.window) * windows_x + gc / cfg.window) as u32,
                patch: ((gr % cfg.window) * cfg.window + gc % cfg.window) as u32,
            };
            tokens.push(PatchToken {
                id,
                center: (cr, cc),
                features,
                label,
                soft: label.initial_soft(cfg.classes),
            });
        }
    }
    tokens.sort_by_key(|t| t.id);
    Ok(tokens)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::terrain::GridGeometry;

    fn known_map(n: usize) -> FeatureMap<f32> {
        let g = GridGeometry::new(0.0, 0.0, 0.2, n, n);
        let mut fm = FeatureMap::empty(g);
        for i in 0..g.len() {
            fm.set_known(i, true);
            fm.plane_mut(Channel::PredictedMean)[i] = i as f32;
        }
        fm
    }

    #[test]
    fn positive_center_gives_one_hot() {
        assert_eq!(PseudoLabel::Positive.vector(4), vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(
            PseudoLabel::Positive.initial_soft(4),
            vec![1.0, 0.0, 0.0, 0.0]
        );
    }

    #[test]
    fn unlabeled_center_gives_uniform() {
        assert_eq!(PseudoLabel::Unlabeled.vector(4), vec![1.0; 4]);
        assert_eq!(PseudoLabel::Unlabeled.initial_soft(4), vec![0.25; 4]);
    }

    #[test]
    fn full_padded_map_yields_400_patches() {
        let fm = known_map(220);
        let labels = LabelGrid::unlabeled(fm.geometry);
        let toks = extract_tokens(&fm, &labels, &TokenConfig::default(), 0).unwrap();
        assert_eq!(toks.len(), 400);
        assert_eq!(toks[0].features.len(), 11 * 11 * 8);
        let mut ids: Vec<_> = toks.iter().map(|t| t.id).collect();
        ids.dedup();
        assert_eq!(ids.len(), 400);
        assert!(toks.iter().all(|t| t.id.window < 4 && t.id.patch < 100));
    }

    #[test]
    fn unpadded_map_drops_patches_with_unknown_centres() {
        let fm = known_map(200);
        let labels = LabelGrid::unlabeled(fm.geometry);
        let cfg = TokenConfig::default();
        assert_eq!(cfg.patches_per_axis(200), 20);
        let toks = extract_tokens(&fm, &labels, &cfg, 3).unwrap();
        assert_eq!(toks.len(), 18 * 18);
        assert!(toks.iter().all(|t| t.id.frame == 3));
    }

    #[test]
    fn map_smaller_than_a_patch_is_empty() {
        let fm = known_map(10);
        let labels = LabelGrid::unlabeled(fm.geometry);
        assert!(extract_tokens(&fm, &labels, &TokenConfig::default(), 0)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn centre_label_decides_token_label() {
        let fm = known_map(22);
        let mut labels = LabelGrid::unlabeled(fm.geometry);
        labels.positive[fm.geometry.index(5, 5)] = true;
        labels.positive[fm.geometry.index(0, 11)] = true; // not a centre
        let cfg = TokenConfig {
            window: 2,
            ..TokenConfig::default()
        };
        let toks = extract_tokens(&fm, &labels, &cfg, 0).unwrap();
        assert_eq!(toks.len(), 4);
        let pos: Vec<_> = toks
            .iter()
            .filter(|t| t.label == PseudoLabel::Positive)
            .collect();
        assert_eq!(pos.len(), 1);
        assert_eq!(pos[0].center, (5, 5));
        assert_eq!(pos[0].soft, vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn values_are_scaled_then_clamped() {
        let fm = known_map(11);
        let labels = LabelGrid::unlabeled(fm.geometry);
        let mut scale = [1.0; NUM_CHANNELS];
        scale[Channel::PredictedMean as usize] = 0.5;
        let cfg = TokenConfig {
            window: 1,
            channel_scale: scale,
            channel_center: [0.0; CELL_VALUES],
            channel_clip: 10.0,
            ..TokenConfig::default()
        };
        let t = &extract_tokens(&fm, &labels, &cfg, 0).unwrap()[0];
        let at = |cell: usize| t.features[cell * CELL_VALUES + Channel::PredictedMean as usize];
        assert_eq!(at(4), 2.0);
        assert_eq!(at(100), 10.0);
    }

    #[test]
    fn patch_layout_and_origin_agree() {
        let fm = known_map(44);
        let labels = LabelGrid::unlabeled(fm.geometry);
        let cfg = TokenConfig {
            window: 2,
            channel_scale: [1.0; NUM_CHANNELS],
            channel_center: [0.0; CELL_VALUES],
            channel_clip: f32::MAX,
            ..TokenConfig::default()
        };
        for t in extract_tokens(&fm, &labels, &cfg, 0).unwrap() {
            let (r0, c0) = patch_origin(&cfg, 44, &t.id);
            assert_eq!((r0 + 5, c0 + 5), t.center);
            // predicted mean channel of the first cell
            assert_eq!(
                t.features[Channel::PredictedMean as usize],
                fm.geometry.index(r0, c0) as f32
            );
        }
    }
}
