"""Synthetic multi-modal datasets with controllable structure.

Actions are (verb, noun) pairs. Information is split across modalities so
that fusing them is genuinely necessary:

* flow features carry the verb prototype,
* obj features carry the noun prototype,
* rgb features carry an action-level prototype.

Actions come in confusable pairs: partners share their late-window prototypes
in every modality, and the component that tells the partners apart is emitted
only in the earliest snippets (1..early_cutoff, farthest from the action).
Watching only the recent window therefore narrows a sample to its pair but
never to the member, which creates a real long-range dependency: accuracy
must grow with the observed window.

Verbs and nouns are paired the same way (partner verbs 2j/2j+1 share a late
flow prototype, partner nouns share a late obj prototype), and partner
actions use partner verbs and partner nouns, so the late window is ambiguous
consistently across modalities.

Emission per snippet t: feature_t = prototype_t * ramp(t) + Normal(0, sigma),
with ramp increasing linearly toward the action. ``rgb_member_scale`` scales
the early distinguishing component in rgb only: at 1.0 rgb alone suffices to
learn the action; at 0.0 rgb identifies only the pair, so no single modality
determines the action while flow+obj jointly do.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .data import MODALITIES, Sample
from .tensor import Rng, Tensor, TensorError


@dataclass(frozen=True)
class SyntheticSpec:
    num_verbs: int = 6
    num_nouns: int = 8
    num_actions: int = 12
    rgb_dim: int = 32
    flow_dim: int = 32
    obj_dim: int = 32
    num_snippets: int = 21
    sigma: float = 0.5
    rgb_member_scale: float = 1.0
    early_cutoff: int = 8
    ramp_start: float = 0.5
    train_per_class: int = 200
    val_per_class: int = 50

    def __post_init__(self):
        if self.num_verbs < 2 or self.num_verbs % 2:
            raise TensorError("num_verbs must be even and >= 2")
        if self.num_nouns < 2 or self.num_nouns % 2:
            raise TensorError("num_nouns must be even and >= 2")
        if self.num_actions < 2 or self.num_actions % 2:
            raise TensorError("num_actions must be even and >= 2")
        if self.num_actions // 2 > (self.num_verbs // 2) * (self.num_nouns // 2):
            raise TensorError(
                f"{self.num_actions} actions are not coverable by a "
                f"{self.num_verbs} x {self.num_nouns} verb/noun grid of pairs")
        if self.sigma < 0:
            raise TensorError("sigma must be >= 0")
        if not 0 <= self.early_cutoff <= self.num_snippets:
            raise TensorError("early_cutoff must lie within the window")
        if not 0.0 <= self.rgb_member_scale <= 1.0:
            raise TensorError("rgb_member_scale must be in [0, 1]")

    @property
    def dims(self) -> dict[str, int]:
        return {"rgb": self.rgb_dim, "flow": self.flow_dim, "obj": self.obj_dim}


def learnable_spec(**overrides) -> SyntheticSpec:
    """Action fully decodable from rgb alone; moderate noise."""
    return replace(SyntheticSpec(), **overrides)


def complementary_spec(**overrides) -> SyntheticSpec:
    """rgb identifies only the confusable pair; fusion is required."""
    return replace(SyntheticSpec(rgb_member_scale=0.0), **overrides)


def long_range_spec(**overrides) -> SyntheticSpec:
    """High noise: pair identification needs many snippets, members the early ones."""
    return replace(SyntheticSpec(sigma=6.0, val_per_class=100), **overrides)


def action_table(spec: SyntheticSpec) -> list[tuple[int, int]]:
    """(verb, noun) per action id; actions 2i and 2i+1 are confusable partners."""
    vp, np_ = spec.num_verbs // 2, spec.num_nouns // 2
    combos: list[tuple[int, int]] = []
    seen = set()
    i = 0
    while len(combos) < spec.num_actions // 2:
        cand = (i % vp, i % np_)
        if cand not in seen:
            seen.add(cand)
            combos.append(cand)
        else:  # lcm(vp, np_) exhausted; fill row-major over unused combos
            for j in range(vp):
                for k in range(np_):
                    if (j, k) not in seen:
                        seen.add((j, k))
                        combos.append((j, k))
                        break
                else:
                    continue
                break
        i += 1
    actions = []
    for j, k in combos:
        actions.append((2 * j, 2 * k))
        actions.append((2 * j + 1, 2 * k + 1))
    return actions


def confusable_partner(action: int) -> int:
    return action + 1 if action % 2 == 0 else action - 1


def _ramp(spec: SyntheticSpec) -> np.ndarray:
    n = spec.num_snippets
    if n == 1:
        return np.ones(1)
    return spec.ramp_start + (1.0 - spec.ramp_start) * np.arange(n) / (n - 1)


class _Prototypes:
    """All prototype tables, drawn in a fixed order from one seeded stream."""

    def __init__(self, spec: SyntheticSpec, seed: int):
        rng = Rng(seed)
        self.spec = spec
        self.actions = action_table(spec)
        vp, np_, ap = spec.num_verbs // 2, spec.num_nouns // 2, spec.num_actions // 2
        self.late_verb = rng.normal(0, 1, (vp, spec.flow_dim), "f64")
        self.early_verb = rng.normal(0, 1, (spec.num_verbs, spec.flow_dim), "f64")
        self.late_noun = rng.normal(0, 1, (np_, spec.obj_dim), "f64")
        self.early_noun = rng.normal(0, 1, (spec.num_nouns, spec.obj_dim), "f64")
        self.late_action = rng.normal(0, 1, (ap, spec.rgb_dim), "f64")
        self.early_action = rng.normal(0, 1, (spec.num_actions, spec.rgb_dim), "f64")

    def sequence(self, action: int, modality: str) -> np.ndarray:
        """Noise-free (N, D) expected feature sequence for one class."""
        spec = self.spec
        verb, noun = self.actions[action]
        if modality == "flow":
            late, early = self.late_verb[verb // 2], self.early_verb[verb]
        elif modality == "obj":
            late, early = self.late_noun[noun // 2], self.early_noun[noun]
        elif modality == "rgb":
            late = self.late_action[action // 2]
            early = spec.rgb_member_scale * self.early_action[action]
        else:
            raise TensorError(f"unknown modality {modality!r}")
        ramp = _ramp(spec)
        seq = np.tile(late, (spec.num_snippets, 1))
        seq[:spec.early_cutoff] += early
        return seq * ramp[:, None]


def class_templates(spec: SyntheticSpec, seed: int, modality: str) -> np.ndarray:
    """(num_actions, N, D) noise-free expected sequences; oracle support."""
    protos = _Prototypes(spec, seed)
    return np.stack([protos.sequence(a, modality) for a in range(spec.num_actions)])


def generate_synthetic(spec: SyntheticSpec, seed: int) -> tuple[list[Sample], list[Sample]]:
    """Seeded train/val sample lists; identical seeds give identical datasets."""
    protos = _Prototypes(spec, seed)
    rng = Rng(seed + 1)  # emission noise stream, separate from prototypes
    templates = {mod: np.stack([protos.sequence(a, mod) for a in range(spec.num_actions)])
                 for mod in MODALITIES}

    def emit(split: str, per_class: int) -> list[Sample]:
        samples = []
        for action in range(spec.num_actions):
            verb, noun = protos.actions[action]
            for i in range(per_class):
                feats = {}
                for mod in MODALITIES:
                    base = templates[mod][action]
                    noise = rng.normal(0.0, spec.sigma, base.shape, "f64")
                    feats[mod] = (base + noise).astype(np.float32)
                samples.append(Sample(f"{split}-{action:03d}-{i:05d}", feats,
                                      action, verb, noun))
        return samples

    return emit("train", spec.train_per_class), emit("val", spec.val_per_class)
