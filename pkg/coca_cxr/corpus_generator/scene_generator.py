"""
Synthetic Study Pair Generator
------------------------------
Samples prior/current chest scenes with Gaussian lesions, renders them,
derives progression labels and scene annotations, and writes the
controlled-grammar comparison report the sub-datasets are built from.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from tqdm import tqdm

from coca_cxr.config_io import config_from_dict, config_to_dict, load_config, save_config
from coca_cxr.corpus_generator.atlas import ATLAS, SIGMA_BOUNDS, anatomy_template
from coca_cxr.errors import ConfigurationError, LabelDerivationError
from coca_cxr.report_processor import grammar
from coca_cxr.report_processor.lexicon import CONDITIONS, PROGRESSIONS
from coca_cxr.report_processor.report_pipeline import Report, clean_report, extract_comparisons
from coca_cxr.report_processor.scene_annotation import Box, SceneAnnotation, serialize_scene_annotation

logger = logging.getLogger(__name__)

# Low-discrepancy steps for the first lesion's label and condition
_LABEL_STEP = (math.sqrt(5) - 1) / 2
_CONDITION_STEP = math.sqrt(2) - 1


@dataclass
class GenConfig:
    image_side: int = 48
    seed: int = 0
    lesion_count_probs: dict = field(default_factory=lambda: {1: 0.75, 2: 0.25})
    label_balance: dict = field(default_factory=lambda: {label: 1 / 3 for label in PROGRESSIONS})
    condition_balance: dict = field(default_factory=lambda: {c: 1 / len(CONDITIONS) for c in CONDITIONS})
    epsilon: float = 0.15               # relative severity change that counts as progression
    new_probability: float = 0.15       # share of worsened lesions absent from the prior
    resolved_probability: float = 0.15  # share of improved lesions absent from the current
    severity_ratio_range: tuple = (1.8, 3.0)
    intensity_range: tuple = (0.35, 0.70)
    center_jitter: float = 0.03
    noise_std: float = 0.02
    comparison_only_probability: float = 0.5
    holdout_fraction: float = 0.1
    preview_count: int = 8

    def __post_init__(self):
        self.lesion_count_probs = {int(k): float(v) for k, v in self.lesion_count_probs.items()}
        self.severity_ratio_range = tuple(self.severity_ratio_range)
        self.intensity_range = tuple(self.intensity_range)
        self.validate()

    def validate(self):
        if self.image_side < 16:
            raise ConfigurationError(f"image_side must be at least 16, got {self.image_side}")
        for name, probs, keys in (("lesion_count_probs", self.lesion_count_probs, None),
                                  ("label_balance", self.label_balance, PROGRESSIONS),
                                  ("condition_balance", self.condition_balance, CONDITIONS)):
            if keys is not None and set(probs) - set(keys):
                raise ConfigurationError(f"{name} has unknown keys {sorted(set(probs) - set(keys))}")
            if any(v < 0 for v in probs.values()) or not math.isclose(sum(probs.values()), 1.0, abs_tol=1e-6):
                raise ConfigurationError(f"{name} must be non-negative and sum to 1")
        max_count = max(k for k, v in self.lesion_count_probs.items() if v > 0)
        if min(self.lesion_count_probs) < 1 or max_count > len(CONDITIONS):
            raise ConfigurationError(f"lesion counts must lie in [1, {len(CONDITIONS)}]")
        lo, hi = self.severity_ratio_range
        if not 1.0 + self.epsilon < lo <= hi:
            raise ConfigurationError("severity_ratio_range must start above 1 + epsilon")
        if not 0 < self.intensity_range[0] <= self.intensity_range[1] <= 1:
            raise ConfigurationError("intensity_range must lie in (0, 1]")
        if self.epsilon <= 0:
            raise ConfigurationError("epsilon must be positive")
        if not 0 <= self.holdout_fraction < 1:
            raise ConfigurationError("holdout_fraction must lie in [0, 1)")
        return self

    @classmethod
    def from_dict(cls, data):
        return config_from_dict(cls, data)

    def to_dict(self):
        return config_to_dict(self)

    @classmethod
    def load(cls, path):
        return load_config(cls, path)

    def save(self, path):
        save_config(self, path)


@dataclass(frozen=True)
class Lesion:
    condition: str
    organ: str
    center: tuple  # (x, y) normalized
    sigma: float
    intensity: float

    @property
    def severity(self):
        return self.intensity * self.sigma ** 2

    def box(self):
        cx, cy = self.center
        r = 2.0 * self.sigma
        return Box(max(0.0, cx - r), min(1.0, cx + r), max(0.0, cy - r), min(1.0, cy + r)).rounded()

    def scaled(self, ratio):
        """Same lesion with severity multiplied by `ratio` (extent r^0.35, intensity r^0.3)."""
        return Lesion(self.condition, self.organ, self.center,
                      self.sigma * ratio ** 0.35, self.intensity * ratio ** 0.3)

    @classmethod
    def from_dict(cls, data):
        return cls(data["condition"], data["organ"], tuple(data["center"]),
                   float(data["sigma"]), float(data["intensity"]))


@dataclass
class Scene:
    lesions: list
    noise_seed: int = 0

    def find(self, condition, organ):
        for lesion in self.lesions:
            if (lesion.condition, lesion.organ) == (condition, organ):
                return lesion
        return None

    def to_dict(self):
        return {"noise_seed": self.noise_seed,
                "lesions": [dict(asdict(l), center=list(l.center)) for l in self.lesions]}

    @classmethod
    def from_dict(cls, data):
        return cls([Lesion.from_dict(l) for l in data["lesions"]], int(data["noise_seed"]))


@dataclass
class StudyPair:
    pair_id: str
    seed: int
    split: str
    prior: Scene
    current: Scene
    prior_image: np.ndarray
    current_image: np.ndarray
    annotations: list
    report: Report
    statuses: dict  # (condition, organ) -> persisting / new / resolved

    def texts(self):
        """Texts of sub-datasets 1-4; sub-dataset 4 is one string per annotation."""
        return {
            1: clean_report(self.report).text(),
            2: self.report.text(),
            3: " ".join(extract_comparisons(self.report)),
            4: [serialize_scene_annotation(a) for a in self.annotations],
        }


def render_scene(scene, side, noise_std=0.02):
    """Background template + seeded noise + additive Gaussian lesions, clipped to [0, 1]."""
    if side < 16:
        raise ConfigurationError(f"render side must be at least 16, got {side}")
    coords = (np.arange(side) + 0.5) / side
    x, y = np.meshgrid(coords, coords)
    image = np.array(anatomy_template(side), dtype=np.float64)
    if noise_std > 0:
        image += np.random.default_rng(scene.noise_seed).normal(0.0, noise_std, image.shape)
    for lesion in scene.lesions:
        cx, cy = lesion.center
        dist2 = (x - cx) ** 2 + (y - cy) ** 2
        image += lesion.intensity * np.exp(-dist2 / (2.0 * lesion.sigma ** 2))
    return np.clip(image, 0.0, 1.0).astype(np.float32)


def derive_progression_label(prior, current, epsilon=0.15):
    """
    worsened / unchanged / improved from the relative change of severity a*sigma^2.
    A lesion absent from the prior is worsened ("new"); absent from the current, improved.
    """
    if prior is None and current is None:
        raise LabelDerivationError("at least one of the prior and current lesions must exist")
    if epsilon <= 0:
        raise LabelDerivationError(f"epsilon must be positive, got {epsilon}")
    if prior is None:
        return "worsened"
    if current is None:
        return "improved"
    if (prior.condition, prior.organ) != (current.condition, current.organ):
        raise LabelDerivationError(
            f"cannot compare {prior.condition} at {prior.organ} with {current.condition} at {current.organ}")
    change = current.severity / prior.severity - 1.0
    if change > epsilon:
        return "worsened"
    if change < -epsilon:
        return "improved"
    return "unchanged"


def lesion_status(prior, current):
    if prior is None:
        return "new"
    if current is None:
        return "resolved"
    return "persisting"


def annotate(prior_scene, current_scene, epsilon=0.15):
    """SceneAnnotation per (condition, organ) found in either scene, current-scene order first."""
    keys = []
    for lesion in current_scene.lesions + prior_scene.lesions:
        if (lesion.condition, lesion.organ) not in keys:
            keys.append((lesion.condition, lesion.organ))
    annotations, statuses = [], {}
    for condition, organ in keys:
        prior = prior_scene.find(condition, organ)
        current = current_scene.find(condition, organ)
        label = derive_progression_label(prior, current, epsilon)
        box_current = (current or prior).box()
        box_prior = (prior or current).box()
        annotations.append(SceneAnnotation(condition, label, organ, box_current, box_prior))
        statuses[(condition, organ)] = lesion_status(prior, current)
    return annotations, statuses


def _weighted_choice(u, weights):
    """Inverse-CDF pick from a dict of weights for u in [0, 1)."""
    total = 0.0
    for key, weight in weights.items():
        total += weight
        if u < total:
            return key
    return next(k for k, w in reversed(list(weights.items())) if w > 0)


def _sample_lesion_pair(rng, config, condition, label):
    """Return (prior lesion or None, current lesion or None) realizing `label`."""
    organ = ATLAS.organs_for(condition)[rng.integers(len(ATLAS.organs_for(condition)))]
    cx, cy = ATLAS.center(organ)
    jitter = config.center_jitter
    center = (float(np.clip(cx + rng.uniform(-jitter, jitter), 0.05, 0.95)),
              float(np.clip(cy + rng.uniform(-jitter, jitter), 0.05, 0.95)))
    s_lo, s_hi = ATLAS.sigma_range(organ)
    a_lo, a_hi = config.intensity_range

    if label == "unchanged":
        lesion = Lesion(condition, organ, center, float(rng.uniform(s_lo, s_hi)), float(rng.uniform(a_lo, a_hi)))
        return lesion, lesion

    r_lo, r_hi = config.severity_ratio_range
    ratio = float(rng.uniform(r_lo, r_hi))
    # The smaller lesion is drawn so that its scaled-up partner stays inside the bounds
    s_top = max(s_lo, min(s_hi, SIGMA_BOUNDS[1] / ratio ** 0.35))
    a_top = max(a_lo, min(a_hi, 1.0 / ratio ** 0.3))
    small = Lesion(condition, organ, center, float(rng.uniform(s_lo, s_top)), float(rng.uniform(a_lo, a_top)))
    large = small.scaled(ratio)

    if label == "worsened":
        if rng.random() < config.new_probability:
            return None, large
        return small, large
    if rng.random() < config.resolved_probability:
        return large, None
    return large, small


def _report_for(annotations, statuses, rng, config):
    findings, impression = [], []
    for i, a in enumerate(annotations):
        status = statuses[a.key]
        findings.append(grammar.comparison_finding(a.condition, a.organ, a.progression, status))
        impression.append(grammar.comparison_impression(a.condition, a.progression, status,
                                                        variant=int(rng.integers(2))))
    order = rng.permutation(len(findings))
    findings = [findings[i] for i in order]
    impression = [impression[i] for i in order]

    if rng.random() < config.comparison_only_probability:
        findings.append(grammar.COMPARISON_ONLY_SENTENCES[rng.integers(len(grammar.COMPARISON_ONLY_SENTENCES))])
    if all(statuses[a.key] == "resolved" for a in annotations):
        findings.append(grammar.CLEAR_LUNGS)
        impression.append(grammar.NO_ACUTE_PROCESS)
    findings.append(grammar.NORMAL_SENTENCES[rng.integers(len(grammar.NORMAL_SENTENCES))])
    indication = grammar.INDICATIONS[rng.integers(len(grammar.INDICATIONS))]
    return Report(indication=indication, findings=findings, impression=impression)


def generate_study_pair(seed, config=None, index=0):
    """
    One prior/current pair. The per-pair RNG is seeded with `seed`; the first
    lesion's label and condition follow low-discrepancy sequences over `index`
    so a corpus matches the requested balances closely.
    """
    config = config or GenConfig()
    rng = np.random.default_rng(seed)

    counts = config.lesion_count_probs
    n_lesions = int(rng.choice(list(counts), p=list(counts.values())))
    first_label = _weighted_choice((0.5 + index * _LABEL_STEP) % 1.0, config.label_balance)
    first_condition = _weighted_choice((0.5 + index * _CONDITION_STEP) % 1.0, config.condition_balance)

    conditions = [first_condition]
    while len(conditions) < n_lesions:
        others = {c: w for c, w in config.condition_balance.items() if c not in conditions and w > 0}
        if not others:
            break
        weights = np.array(list(others.values()))
        conditions.append(list(others)[rng.choice(len(others), p=weights / weights.sum())])
    labels = [first_label] + [
        PROGRESSIONS[rng.choice(len(PROGRESSIONS), p=[config.label_balance.get(l, 0.0) for l in PROGRESSIONS])]
        for _ in conditions[1:]
    ]

    prior_lesions, current_lesions = [], []
    for condition, label in zip(conditions, labels):
        prior, current = _sample_lesion_pair(rng, config, condition, label)
        if prior is not None:
            prior_lesions.append(prior)
        if current is not None:
            current_lesions.append(current)

    noise_base = int(rng.integers(2 ** 31))
    prior_scene = Scene(prior_lesions, noise_seed=noise_base)
    current_scene = Scene(current_lesions, noise_seed=noise_base + 1)
    annotations, statuses = annotate(prior_scene, current_scene, config.epsilon)
    report = _report_for(annotations, statuses, rng, config)
    split = "test" if rng.random() < config.holdout_fraction else "train"

    return StudyPair(
        pair_id=f"pair{index:06d}",
        seed=seed,
        split=split,
        prior=prior_scene,
        current=current_scene,
        prior_image=render_scene(prior_scene, config.image_side, config.noise_std),
        current_image=render_scene(current_scene, config.image_side, config.noise_std),
        annotations=annotations,
        report=report,
        statuses=statuses,
    )


def pair_seed(base_seed, index):
    return int(base_seed) ^ int(index)


def generate_pairs(n, config=None, workers=1):
    """`n` pairs with seeds base ^ index; the result does not depend on `workers`."""
    config = config or GenConfig()
    indices = range(n)

    def build(index):
        return generate_study_pair(pair_seed(config.seed, index), config, index)

    if workers <= 1:
        pairs = [build(i) for i in tqdm(indices, desc="Generating pairs", leave=False)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            pairs = list(tqdm(pool.map(build, indices), total=n, desc="Generating pairs", leave=False))
    logger.info("✓ Generated %d study pairs (%d held out)", n, sum(p.split == "test" for p in pairs))
    return pairs
