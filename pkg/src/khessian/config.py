"""JSON experiment configurations and their validation.

Every problem found is collected (with a JSON path) before a single
:class:`ConfigError` is raised, so a config can be fixed in one pass.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

from .errors import ConfigError, ExpressionError
from .expression import default_variables, parse_expression

EXPERIMENTS = ("solve", "verify-gradient", "verify-pogorelov", "verify-liouville", "selftest")
SHAPES = {"cylinder": ("radius", "t_start"), "paraboloid": ("r",)}
TAU_SCALINGS = ("linear", "quadratic")
U64_MAX = 2 ** 64 - 1
PSI0 = 1e-3  # positive lower bound on psi for Pogorelov runs

_TOP_KEYS = {"experiment", "n", "k", "domain", "grid", "psi", "g", "exact", "u0", "family",
             "m1", "m2", "A1", "A2", "B", "alpha", "R", "h_target", "C0", "samples", "seed",
             "output"}
_GRID_KEYS = {"h", "tau", "refinements", "tau_scaling"}
_OUTPUT_KEYS = {"dir", "timestamps"}

# keys each experiment needs, beyond n and k
_REQUIRED = {
    "solve": ("domain", "grid", "m1"),
    "verify-gradient": ("domain", "grid", "psi", "family", "m1"),
    "verify-pogorelov": ("domain", "grid", "psi", "u0", "m1"),
    "verify-liouville": ("domain", "grid", "m1", "m2", "A1", "A2", "B", "alpha", "R"),
    "selftest": ("m1", "m2", "C0", "samples"),
}


@dataclass
class DomainConfig:
    shape: str
    radius: float | None = None
    t_start: float | None = None
    r: float | None = None


@dataclass
class GridConfig:
    h: float
    tau: float
    refinements: int = 1
    tau_scaling: str = "linear"

    def levels(self):
        """(h, tau) for each refinement; h halves, tau halves or quarters."""
        out = []
        h, tau = self.h, self.tau
        for _ in range(self.refinements):
            out.append((h, tau))
            h /= 2
            tau /= 2 if self.tau_scaling == "linear" else 4
        return out


@dataclass
class ExperimentConfig:
    experiment: str
    n: int
    k: int
    domain: DomainConfig | None = None
    grid: GridConfig | None = None
    psi: str | None = None
    g: str | None = None
    exact: str | None = None
    u0: float | None = None
    family: list = field(default_factory=list)
    m1: float | None = None
    m2: float | None = None
    A1: float | None = None
    A2: float | None = None
    B: float | None = None
    alpha: float | None = None
    R: list = field(default_factory=list)
    h_target: float | None = None
    C0: float | None = None
    samples: int | None = None
    seed: int = 0
    output_dir: str = "khessian_out"
    timestamps: bool = False
    raw: dict = field(default_factory=dict, repr=False)

    def parameters(self) -> dict:
        """The validated document as given (for reports), with the effective seed."""
        out = dict(self.raw)
        out["seed"] = self.seed
        out.pop("output", None)
        return out


def _is_number(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def _is_int(v):
    return isinstance(v, int) and not isinstance(v, bool)


class _Checker:
    def __init__(self):
        self.errors = []

    def fail(self, path, msg):
        self.errors.append(f"{path}: {msg}")

    def unknown(self, obj, allowed, path):
        for key in sorted(set(obj) - allowed):
            self.fail(f"{path}.{key}", "unknown key")

    def number(self, obj, key, path, positive=False, required=False):
        if key not in obj:
            if required:
                self.fail(f"{path}.{key}", "missing")
            return None
        v = obj[key]
        if not _is_number(v):
            self.fail(f"{path}.{key}", "must be a finite number")
            return None
        if positive and not v > 0:
            self.fail(f"{path}.{key}", "must be positive")
            return None
        return float(v)

    def expression(self, text, path, variables):
        if not isinstance(text, str):
            self.fail(path, "must be an expression string")
            return None
        try:
            return parse_expression(text, variables)
        except ExpressionError as exc:
            self.fail(path, f"invalid expression: {exc}")
            return None


def parse_config(text: str, seed: int | None = None) -> ExperimentConfig:
    """Parse and validate a JSON experiment config; ``seed`` overrides the config seed."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"$: malformed JSON: {exc}"]) from None
    if not isinstance(doc, dict):
        raise ConfigError(["$: top level must be an object"])
    c = _Checker()
    c.unknown(doc, _TOP_KEYS, "$")

    exp = doc.get("experiment")
    if exp not in EXPERIMENTS:
        c.fail("$.experiment", f"must be one of {', '.join(EXPERIMENTS)}")
        exp = None

    n = doc.get("n", 2)
    if not _is_int(n) or n not in (2, 3):
        c.fail("$.n", "dimension must be 2 or 3")
        n = None
    k = doc.get("k", 1 if n is None else n)
    if not _is_int(k):
        c.fail("$.k", "must be an integer")
        k = None
    elif n is not None and not 1 <= k <= n:
        c.fail("$.k", f"need 1 <= k <= n = {n}")

    for key in _REQUIRED.get(exp, ()):
        if key not in doc:
            c.fail(f"$.{key}", f"required for experiment {exp!r}")

    domain = None
    if "domain" in doc:
        d = doc["domain"]
        if not isinstance(d, dict):
            c.fail("$.domain", "must be an object")
        else:
            shape = d.get("shape")
            if shape not in SHAPES:
                c.fail("$.domain.shape", "must be 'cylinder' or 'paraboloid'")
            else:
                c.unknown(d, {"shape", *SHAPES[shape]}, "$.domain")
                if shape == "cylinder":
                    radius = c.number(d, "radius", "$.domain", positive=True, required=True)
                    t0 = c.number(d, "t_start", "$.domain", required=True)
                    if t0 is not None and not t0 < 0:
                        c.fail("$.domain.t_start", "must be negative")
                    domain = DomainConfig(shape, radius=radius, t_start=t0)
                else:
                    domain = DomainConfig(shape, r=c.number(d, "r", "$.domain", positive=True,
                                                            required=True))
    if exp == "verify-gradient" and domain is not None and domain.shape != "paraboloid":
        c.fail("$.domain.shape", "the gradient check runs on a paraboloid")

    grid = None
    if "grid" in doc:
        gdoc = doc["grid"]
        if not isinstance(gdoc, dict):
            c.fail("$.grid", "must be an object")
        else:
            c.unknown(gdoc, _GRID_KEYS, "$.grid")
            h = c.number(gdoc, "h", "$.grid", positive=True, required=True)
            tau = c.number(gdoc, "tau", "$.grid", positive=True, required=True)
            ref = gdoc.get("refinements", 1)
            if not _is_int(ref) or ref < 1:
                c.fail("$.grid.refinements", "must be a positive integer")
                ref = 1
            if exp == "verify-gradient" and ref < 2:
                c.fail("$.grid.refinements", "the gradient check needs at least two grids")
            if exp == "verify-pogorelov" and ref < 2:
                c.fail("$.grid.refinements", "the Pogorelov check needs at least two grids")
            scaling = gdoc.get("tau_scaling", "linear")
            if scaling not in TAU_SCALINGS:
                c.fail("$.grid.tau_scaling", "must be 'linear' or 'quadratic'")
                scaling = "linear"
            if h is not None and tau is not None:
                grid = GridConfig(h, tau, ref, scaling)

    xvars = default_variables(n or 3)
    space_time = tuple(v for v in xvars if v != "z")
    psi = g = exact = None
    if "psi" in doc:
        psi = c.expression(doc["psi"], "$.psi", xvars)
        if psi is not None and exp == "verify-gradient" and psi.variables():
            c.fail("$.psi", "the gradient check needs a constant source term")
        if psi is not None and exp == "verify-pogorelov":
            if psi.variables():
                c.fail("$.psi", "the Pogorelov check needs a constant source term")
            elif not psi.evaluate({}) >= PSI0:
                c.fail("$.psi", f"the Pogorelov check needs psi >= psi0 = {PSI0}")
    if "g" in doc:
        g = c.expression(doc["g"], "$.g", space_time)
    if "exact" in doc:
        exact = c.expression(doc["exact"], "$.exact", space_time)
    family = []
    if "family" in doc:
        fam = doc["family"]
        if not isinstance(fam, list) or not fam:
            c.fail("$.family", "must be a non-empty list of boundary-data expressions")
        else:
            for i, item in enumerate(fam):
                c.expression(item, f"$.family[{i}]", space_time)
            family = list(fam)
    if exp in ("solve", "verify-liouville"):
        if "exact" not in doc and not ("psi" in doc and "g" in doc):
            c.fail("$", "give either 'exact' or both 'psi' and 'g'")
        if "exact" in doc and "g" in doc:
            c.fail("$.g", "boundary data comes from 'exact'; do not give both")

    m1 = c.number(doc, "m1", "$", positive=True)
    m2 = c.number(doc, "m2", "$", positive=True)
    if m1 is not None and m2 is not None and m1 > m2:
        c.fail("$.m2", "need m1 <= m2 (m1 <= -u_t <= m2)")
    A1 = c.number(doc, "A1", "$", positive=True)
    A2 = c.number(doc, "A2", "$", positive=True)
    if A1 is not None and A2 is not None and A1 > A2:
        c.fail("$.A2", "need A1 <= A2 (A1 |x|^2 <= u(x, 0) <= A2 |x|^2 + B)")
    B = c.number(doc, "B", "$")
    if B is not None and B < 0:
        c.fail("$.B", "must be nonnegative")
        B = None
    u0 = c.number(doc, "u0", "$")
    alpha = c.number(doc, "alpha", "$")
    if alpha is not None and not 0 < alpha < 1:
        c.fail("$.alpha", "must lie in (0, 1)")
    h_target = c.number(doc, "h_target", "$", positive=True)
    C0 = c.number(doc, "C0", "$", positive=True)

    samples = doc.get("samples")
    if samples is not None and (not _is_int(samples) or samples < 1):
        c.fail("$.samples", "must be a positive integer")

    R = []
    if "R" in doc:
        rl = doc["R"]
        if not isinstance(rl, list) or not rl:
            c.fail("$.R", "must be a non-empty list of radii")
        else:
            for i, v in enumerate(rl):
                if not _is_number(v) or not v > 0:
                    c.fail(f"$.R[{i}]", "must be a positive number")
                    continue
                R.append(float(v))
                if exp == "verify-liouville" and B is not None and not v > math.sqrt(2 * B):
                    c.fail(f"$.R[{i}]", f"need R > R0 = sqrt(2B) = {math.sqrt(2 * B):.6g}")

    cfg_seed = doc.get("seed", 0)
    if not _is_int(cfg_seed) or not 0 <= cfg_seed <= U64_MAX:
        c.fail("$.seed", "must be an unsigned 64-bit integer")
        cfg_seed = 0
    if seed is not None:
        if not _is_int(seed) or not 0 <= seed <= U64_MAX:
            c.fail("--seed", "must be an unsigned 64-bit integer")
        else:
            cfg_seed = seed

    out_dir, stamps = "khessian_out", False
    if "output" in doc:
        o = doc["output"]
        if not isinstance(o, dict):
            c.fail("$.output", "must be an object")
        else:
            c.unknown(o, _OUTPUT_KEYS, "$.output")
            if "dir" in o:
                if isinstance(o["dir"], str) and o["dir"]:
                    out_dir = o["dir"]
                else:
                    c.fail("$.output.dir", "must be a non-empty string")
            if "timestamps" in o:
                if isinstance(o["timestamps"], bool):
                    stamps = o["timestamps"]
                else:
                    c.fail("$.output.timestamps", "must be true or false")

    if c.errors:
        raise ConfigError(c.errors)
    return ExperimentConfig(
        experiment=exp, n=n, k=k, domain=domain, grid=grid,
        psi=doc.get("psi"), g=doc.get("g"), exact=doc.get("exact"), u0=u0, family=family,
        m1=m1, m2=m2, A1=A1, A2=A2, B=B, alpha=alpha, R=R, h_target=h_target, C0=C0,
        samples=samples, seed=cfg_seed, output_dir=out_dir, timestamps=stamps, raw=doc,
    )


def load_config(path, seed: int | None = None) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), seed)
