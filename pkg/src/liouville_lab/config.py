"""JSON run configuration with validation of the model hypotheses."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields

from .errors import ConfigError

MASS_LIMIT = 16.0 * math.pi


def _section(cls, data, name):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"section {name!r} must be an object")
    known = {f.name for f in fields(cls)}
    extra = sorted(set(data) - known)
    if extra:
        raise ConfigError(f"unknown keys in {name!r}: {', '.join(extra)}")
    return cls(**data)


def _positive(name, v):
    if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
        raise ConfigError(f"{name} must be a positive number")


def _integer(name, v, lo):
    if not (isinstance(v, int) and not isinstance(v, bool) and v >= lo):
        raise ConfigError(f"{name} must be an integer >= {lo}")


@dataclass
class SingularitySection:
    x0_angle: float = 0.0
    alpha: float = 0.25

    def validate(self):
        if not (isinstance(self.alpha, (int, float)) and 0.0 < self.alpha < 0.5):
            raise ConfigError(f"alpha = {self.alpha!r} violates the constraint alpha in (0, 1/2)")
        if not math.isfinite(self.x0_angle):
            raise ConfigError("x0_angle must be finite")


@dataclass
class MeshSection:
    n_r: int = 64
    n_t: int = 128
    grade_exponent: float = 2.0
    domain: str = "disk"
    refine_centers: list = field(default_factory=list)

    def validate(self):
        _integer("mesh.n_r", self.n_r, 8)
        _integer("mesh.n_t", self.n_t, 8)
        if not (isinstance(self.grade_exponent, (int, float)) and 1.0 <= self.grade_exponent <= 4.0):
            raise ConfigError("mesh.grade_exponent must lie in [1, 4]")
        if self.domain not in ("disk", "half"):
            raise ConfigError("mesh.domain must be 'disk' or 'half'")
        for rc in self.refine_centers:
            if not (isinstance(rc, list) and 2 <= len(rc) <= 4 and isinstance(rc[0], list) and len(rc[0]) == 2):
                raise ConfigError("refine_centers entries are [[x, y], radius, h_min?, slope?]")


@dataclass
class PotentialSection:
    kind: str = "constant"
    level: float = 1.0
    bound_b: float | None = None
    hoelder_A: float = 0.0
    hoelder_s: float = 1.0
    bump_center: list = field(default_factory=lambda: [0.0, 0.0])
    bump_radius: float = 0.0

    def validate(self):
        if self.kind == "hoelder_bump" and not (
            isinstance(self.hoelder_s, (int, float)) and 0.5 < self.hoelder_s <= 1.0
        ):
            raise ConfigError(f"hoelder_s = {self.hoelder_s!r} violates the constraint s in (1/2, 1]")
        self.build()

    def build(self):
        from .solver import Potential

        s = self.hoelder_s if self.kind == "hoelder_bump" else 1.0
        return Potential(self.kind, self.level, self.bound_b, self.hoelder_A, s, tuple(self.bump_center), self.bump_radius)


@dataclass
class SolverSection:
    tol: float = 1e-10
    max_iter: int = 50
    damping_min: float = 2.0**-30
    lam: float = 1.0

    def validate(self):
        _positive("solver.tol", self.tol)
        _integer("solver.max_iter", self.max_iter, 1)
        if not (isinstance(self.damping_min, (int, float)) and 0.0 < self.damping_min <= 1.0):
            raise ConfigError("solver.damping_min must lie in (0, 1]")
        if not (isinstance(self.lam, (int, float)) and math.isfinite(self.lam) and self.lam >= 0.0):
            raise ConfigError("solver.lam must be >= 0")


@dataclass
class ContinuationSection:
    mode: str = "mass"
    targets: list = field(default_factory=lambda: [1.0, 2.0, 4.0, 6.0])
    mass_ceiling: float = MASS_LIMIT - 0.1
    max_peak: float = 60.0

    def validate(self):
        if self.mode not in ("lambda", "mass"):
            raise ConfigError("continuation.mode must be 'lambda' or 'mass'")
        if not (isinstance(self.mass_ceiling, (int, float)) and self.mass_ceiling < MASS_LIMIT):
            raise ConfigError(f"mass_ceiling = {self.mass_ceiling!r} violates the constraint mass <= 16 pi - eps")
        _positive("continuation.mass_ceiling", self.mass_ceiling)
        _positive("continuation.max_peak", self.max_peak)
        t = self.targets
        if not (isinstance(t, list) and t and all(isinstance(v, (int, float)) and v >= 0 for v in t)):
            raise ConfigError("continuation.targets must be a non-empty list of numbers >= 0")
        if any(b <= a for a, b in zip(t, t[1:])):
            raise ConfigError("continuation.targets must be strictly increasing")
        if self.mode == "mass" and t[-1] >= self.mass_ceiling:
            raise ConfigError("mass targets must stay below mass_ceiling")


@dataclass
class ExtractionSection:
    epsilon: float = 0.1
    peak_threshold_offset: float = 5.0
    max_candidates: int = 8

    def validate(self):
        if not (isinstance(self.epsilon, (int, float)) and 0.0 < self.epsilon < 0.25):
            raise ConfigError("extraction.epsilon must lie in (0, 1/4)")
        _positive("extraction.peak_threshold_offset", self.peak_threshold_offset)
        _integer("extraction.max_candidates", self.max_candidates, 1)


@dataclass
class PohozaevSection:
    q_values: list = field(default_factory=lambda: [1.5])

    def validate(self):
        for q in self.q_values:
            if not (isinstance(q, (int, float)) and 1.0 <= q < 2.0):
                raise ConfigError("pohozaev.q_values must lie in [1, 2)")


@dataclass
class OutputSection:
    dir: str = "lab_out"
    formats: list = field(default_factory=lambda: ["csv", "json"])

    def validate(self):
        if not isinstance(self.dir, str) or not self.dir:
            raise ConfigError("output.dir must be a non-empty string")
        bad = sorted(set(self.formats) - {"csv", "json"})
        if bad:
            raise ConfigError(f"unsupported output formats: {', '.join(bad)}")


_SECTIONS = {
    "singularity": SingularitySection,
    "mesh": MeshSection,
    "potential": PotentialSection,
    "solver": SolverSection,
    "continuation": ContinuationSection,
    "extraction": ExtractionSection,
    "pohozaev": PohozaevSection,
    "output": OutputSection,
}


@dataclass
class LabConfig:
    singularity: SingularitySection = field(default_factory=SingularitySection)
    mesh: MeshSection = field(default_factory=MeshSection)
    potential: PotentialSection = field(default_factory=PotentialSection)
    solver: SolverSection = field(default_factory=SolverSection)
    continuation: ContinuationSection = field(default_factory=ContinuationSection)
    extraction: ExtractionSection = field(default_factory=ExtractionSection)
    pohozaev: PohozaevSection = field(default_factory=PohozaevSection)
    output: OutputSection = field(default_factory=OutputSection)

    @classmethod
    def from_dict(cls, data) -> "LabConfig":
        if not isinstance(data, dict):
            raise ConfigError("configuration must be a JSON object")
        extra = sorted(set(data) - set(_SECTIONS))
        if extra:
            raise ConfigError(f"unknown sections: {', '.join(extra)}")
        try:
            cfg = cls(**{k: _section(c, data.get(k), k) for k, c in _SECTIONS.items()})
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "LabConfig":
        with open(path) as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"invalid JSON: {exc}") from exc
        return cls.from_dict(data)

    def validate(self):
        for k in _SECTIONS:
            getattr(self, k).validate()

    def to_dict(self) -> dict:
        return asdict(self)

    # -- builders ---------------------------------------------------------
    def singularity_config(self):
        from .mesh import SingularityConfig

        if self.mesh.domain == "half":
            return SingularityConfig.chart(self.singularity.alpha)
        return SingularityConfig.from_angle(self.singularity.x0_angle, self.singularity.alpha)

    def build_mesh(self):
        """``(geometry or None, mesh)`` for the configured domain."""
        from .mesh import build_half_disk, build_mesh

        m = self.mesh
        rc = [tuple([tuple(r[0])] + list(r[1:])) for r in m.refine_centers]
        if m.domain == "half":
            return build_half_disk(m.n_r, m.n_t, m.grade_exponent, rc)
        return None, build_mesh(m.n_r, m.n_t, m.grade_exponent, rc, cfg=self.singularity_config())
