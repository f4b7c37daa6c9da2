"""Reweighting functions psi(u, v) used for the v-update.

Every function acts on blocks: the last array axis is the block axis of
length b, and any leading axes index independent blocks. All kinds except
``group_aware_tanh`` act entry-wise, so their block form and their scalar
form coincide.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable, Mapping

import numpy as np

WITHIN = "within_assumption_2"
OUTSIDE = "outside_guarantee"

DEFAULT_EPS = 1e-6
DEFAULT_ALPHA = 0.5

KINDS = (
    "am",
    "irls_eps_alpha",
    "sqrt_abs",
    "tanh_abs",
    "tanh_sq",
    "abs_uv",
    "u_sq",
    "group_blind_tanh",
    "group_aware_tanh",
)


@dataclass(frozen=True)
class ReweightSpec:
    """A catalog entry selecting psi; ``eps``/``alpha`` only for ``irls_eps_alpha``."""

    kind: str
    eps: float | None = None
    alpha: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown reweighting kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == "irls_eps_alpha":
            # fill the documented defaults; frozen dataclass needs object.__setattr__
            if self.eps is None:
                object.__setattr__(self, "eps", DEFAULT_EPS)
            if self.alpha is None:
                object.__setattr__(self, "alpha", DEFAULT_ALPHA)
            if not (np.isfinite(self.eps) and self.eps > 0):
                raise ValueError(f"eps must be positive, got {self.eps}")
            if not np.isfinite(self.alpha):
                raise ValueError(f"alpha must be finite, got {self.alpha}")
        elif self.eps is not None or self.alpha is not None:
            raise ValueError(f"{self.kind} takes no eps/alpha parameters")

    @property
    def guarantee_flag(self) -> str:
        return guarantee_of(self)

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"kind": self.kind}
        if self.kind == "irls_eps_alpha":
            out["eps"] = float(self.eps)
            out["alpha"] = float(self.alpha)
        return out

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any] | str) -> "ReweightSpec":
        if isinstance(doc, str):
            return cls(doc)
        extra = set(doc) - {"kind", "eps", "alpha"}
        if extra:
            raise ValueError(f"unexpected keys {sorted(extra)}")
        if "kind" not in doc:
            raise ValueError("missing field 'kind'")
        eps = doc.get("eps")
        alpha = doc.get("alpha")
        return cls(
            doc["kind"],
            None if eps is None else float(eps),
            None if alpha is None else float(alpha),
        )


def _irls(spec: ReweightSpec) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
    return lambda u, v: (u * u * v * v + spec.eps) ** spec.alpha


_ENTRYWISE: dict[str, Callable[[np.ndarray, np.ndarray], np.ndarray]] = {
    "am": lambda u, v: u.copy(),
    "sqrt_abs": lambda u, v: np.sqrt(np.abs(u * v)),
    "tanh_abs": lambda u, v: np.tanh(np.abs(u * v)),
    "tanh_sq": lambda u, v: np.tanh(u * u),
    "abs_uv": lambda u, v: np.abs(u * v),
    "u_sq": lambda u, v: u * u,
    "group_blind_tanh": lambda u, v: np.tanh(np.abs(u * v)),
}


def _as_pair(u, v) -> tuple[np.ndarray, np.ndarray]:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValueError(f"block shape mismatch: u {u.shape} vs v {v.shape}")
    return u, v


def apply_psi_scalar(spec: ReweightSpec, u, v) -> np.ndarray:
    """Scalar (b = 1) form of psi applied entry-wise to arrays of any shape.

    ``group_aware_tanh`` averages over a block of one entry, which is
    ``tanh|uv|``.
    """
    u, v = _as_pair(u, v)
    if spec.kind == "irls_eps_alpha":
        return _irls(spec)(u, v)
    if spec.kind == "group_aware_tanh":
        return np.tanh(np.abs(u * v))
    return _ENTRYWISE[spec.kind](u, v)


def apply_psi(spec: ReweightSpec, u_block, v_block) -> np.ndarray:
    """Apply psi block-wise; the last axis of ``u_block``/``v_block`` is the block."""
    u, v = _as_pair(u_block, v_block)
    if u.ndim == 0:
        raise ValueError("blocks must have at least one axis")
    if spec.kind == "group_aware_tanh":
        level = np.mean(np.tanh(np.abs(u * v)), axis=-1, keepdims=True)
        return np.broadcast_to(level, u.shape).copy()
    return apply_psi_scalar(spec, u, v)


def guarantee_of(spec: ReweightSpec) -> str:
    """Whether psi is covered by the bounded / PL(2) condition of the theory."""
    if spec.kind in ("abs_uv", "u_sq"):
        return OUTSIDE
    if spec.kind == "irls_eps_alpha":
        return WITHIN if spec.alpha <= 0.5 else OUTSIDE
    return WITHIN
