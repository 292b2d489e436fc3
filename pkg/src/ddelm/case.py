"""A fully reproducible solve recipe.

Workers in other processes receive a ``DdmCase`` as JSON and rebuild the
problem, layout and hidden layers bit for bit from it.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

from .basis import BasisParams, InitSpec, make_basis
from .geometry import UNIT_SQUARE, Rect, SubdomainLayout, generate_points
from .problems import build_problem
from .seeding import stream


@dataclass(frozen=True)
class DdmCase:
    problem: str = "poisson"
    problem_params: dict = field(default_factory=dict)
    grid: tuple[int, int] = (2, 2)
    k: int = 7
    n: int = 4096
    init: InitSpec = InitSpec()
    seed: int = 0
    domain: Rect = UNIT_SQUARE

    def __post_init__(self):
        object.__setattr__(self, "grid", tuple(int(g) for g in self.grid))
        if isinstance(self.init, dict):
            object.__setattr__(self, "init", InitSpec(**self.init))
        if isinstance(self.domain, dict):
            object.__setattr__(self, "domain", Rect(**self.domain))

    @property
    def n_subdomains(self) -> int:
        return self.grid[0] * self.grid[1]

    def build_problem(self):
        return build_problem(self.problem, **self.problem_params)

    def build_layout(self) -> SubdomainLayout:
        return generate_points(self.domain, self.grid, self.k)

    def build_basis(self, layout: SubdomainLayout, s: int) -> BasisParams:
        return make_basis(self.init, self.n, layout.rects, s, stream(self.seed, "basis", s))

    def build_bases(self, layout: SubdomainLayout) -> list[BasisParams]:
        return [self.build_basis(layout, s) for s in range(layout.n_subdomains)]

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> DdmCase:
        d = json.loads(text)
        d["domain"] = Rect(tuple(d["domain"]["lo"]), tuple(d["domain"]["hi"]))
        d["init"] = InitSpec(**d["init"])
        return cls(**d)
