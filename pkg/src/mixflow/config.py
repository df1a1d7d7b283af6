"""Run-configuration parsing, validation and problem assembly.

The format is deliberately plain: one ``key = value`` pair per line,
dotted keys for grouping, ``#`` comments.  Unknown keys and duplicate
keys are hard errors (with line numbers), so a typo cannot silently turn
a study into a different run.  All physical constraints are checked up
front and reported together in a single ConfigError.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .coupled import CoupledProblem
from .errors import ConfigError
from .grid import SpeciesField, StructuredGrid
from .mixture import (
    ConstantKappa,
    LinearCombination,
    MixtureModel,
    NumberDensityForm,
    PowerLaw,
    PowerLawKappa,
    SpeciesSet,
    TabulatedKappa,
)
from .transport import InflowData, ReactionField


def _parse_float(s):
    return float(s)


def _parse_int(s):
    v = int(s)
    return v


def _parse_bool(s):
    s = s.strip().lower()
    if s in ("on", "true", "1", "yes"):
        return True
    if s in ("off", "false", "0", "no"):
        return False
    raise ValueError(f"expected on/off, got {s!r}")


def _parse_floats(s):
    return [float(x) for x in s.split(",") if x.strip() != ""]


def _parse_str(s):
    return s.strip()


def _parse_table(s):
    pairs = []
    for item in s.split(","):
        if item.strip() == "":
            continue
        a, b = item.split(":")
        pairs.append((float(a), float(b)))
    return pairs


#: key -> (parser, default); REQUIRED marks keys with no default
REQUIRED = object()
SCHEMA = {
    "grid.dim": (_parse_int, 1),
    "grid.nx": (_parse_int, REQUIRED),
    "grid.ny": (_parse_int, None),
    "grid.length_x": (_parse_float, 1.0),
    "grid.length_y": (_parse_float, None),
    "grid.origin_x": (_parse_float, 0.0),
    "grid.origin_y": (_parse_float, 0.0),
    "boundary.left": (_parse_str, "no_penetration"),
    "boundary.right": (_parse_str, "no_penetration"),
    "boundary.bottom": (_parse_str, "no_penetration"),
    "boundary.top": (_parse_str, "no_penetration"),
    "boundary.p0": (_parse_float, None),
    "boundary.inflow_u": (_parse_floats, None),
    "model.n_species": (_parse_int, 1),
    "model.masses": (_parse_floats, None),
    "model.c0": (_parse_float, 1.0),
    "model.alpha": (_parse_float, 1.0),
    "model.lambda": (_parse_str, "linear"),
    "model.coeffs": (_parse_floats, None),
    "model.h": (_parse_str, "unit"),
    "model.volumes": (_parse_floats, None),
    "model.alpha_h": (_parse_float, None),
    "model.kappa": (_parse_str, "constant"),
    "model.kappa_value": (_parse_float, 1.0),
    "model.kappa_coeff": (_parse_float, None),
    "model.kappa_exponent": (_parse_float, None),
    "model.kappa_table": (_parse_table, None),
    "model.s0": (_parse_float, 1.0),
    "model.h_const": (_parse_float, 0.0),
    "init.kind": (_parse_str, "uniform"),
    "init.rho": (_parse_floats, None),
    "init.base": (_parse_floats, None),
    "init.amp": (_parse_floats, None),
    "init.center_x": (_parse_floats, None),
    "init.center_y": (_parse_floats, None),
    "init.width": (_parse_floats, None),
    "init.interfaces": (_parse_floats, None),
    "init.block_values": (_parse_floats, None),
    "init.w_base": (_parse_float, None),
    "init.w_amp": (_parse_float, None),
    "init.w_center_x": (_parse_float, None),
    "init.w_center_y": (_parse_float, None),
    "init.w_width": (_parse_float, None),
    "init.path": (_parse_str, None),
    "time.t_end": (_parse_float, REQUIRED),
    "time.dt": (_parse_float, REQUIRED),
    "time.dt_min": (_parse_float, None),
    "time.output_every": (_parse_int, 0),
    "solver.newton_tol": (_parse_float, 1e-10),
    "solver.max_iters": (_parse_int, 50),
    "solver.n_sub": (_parse_int, 4),
    "solver.rk_order": (_parse_int, 2),
    "solver.constraint_mode": (_parse_str, "auto"),
    "solver.picard_tol": (_parse_float, 1e-10),
    "solver.max_picard": (_parse_int, 20),
    "solver.mass_fixer": (_parse_bool, True),
    "solver.stepper": (_parse_str, "decomposed"),
    "solver.direct_mode": (_parse_str, "explicit"),
    "solver.cfl_safety": (_parse_float, 0.45),
    "solver.truncation": (_parse_floats, None),
    "reaction.kind": (_parse_str, "none"),
    "reaction.rate": (_parse_float, None),
    "reaction.rates": (_parse_floats, None),
    "reaction.from": (_parse_int, None),
    "reaction.to": (_parse_int, None),
    "reaction.capacity": (_parse_float, None),
    "gravity.c0": (_parse_float, None),
    "gravity.g": (_parse_floats, None),
    "seed": (_parse_int, 0),
    "study.kind": (_parse_str, None),
    "study.t0": (_parse_float, 1.0),
    "study.duration": (_parse_float, None),
    "study.velocity": (_parse_float, 0.3),
    "study.floor": (_parse_float, 1e-8),
}


@dataclass
class SimulationConfig:
    """Validated key/value configuration plus assembled objects on demand."""

    values: dict = field(default_factory=dict)
    source_path: str | None = None

    def __getitem__(self, key):
        return self.values[key]

    def get(self, key, default=None):
        v = self.values.get(key)
        return default if v is None else v

    def with_overrides(self, overrides: dict) -> "SimulationConfig":
        vals = dict(self.values)
        vals.update(overrides)
        return SimulationConfig(values=vals, source_path=self.source_path)

    # -- assembly -----------------------------------------------------------

    def build_grid(self) -> StructuredGrid:
        v = self.values
        dim = v["grid.dim"]
        tags = {}
        sides = ("left", "right") if dim == 1 else ("left", "right", "bottom", "top")
        for s in sides:
            tags[s] = v[f"boundary.{s}"]
        if dim == 1:
            return StructuredGrid(
                (v["grid.nx"],), (v["grid.length_x"],), (v["grid.origin_x"],), tags
            )
        return StructuredGrid(
            (v["grid.nx"], v["grid.ny"]),
            (v["grid.length_x"], v["grid.length_y"]),
            (v["grid.origin_x"], v["grid.origin_y"]),
            tags,
        )

    def build_model(self) -> MixtureModel:
        v = self.values
        n = v["model.n_species"]
        masses = v["model.masses"] or [1.0] * n
        species = SpeciesSet(tuple(masses), tuple(v["model.volumes"]) if v["model.volumes"] else None)
        law = PowerLaw(v["model.c0"], v["model.alpha"])
        if v["model.lambda"] == "linear":
            coeffs = v["model.coeffs"] or [1.0] * n
            ext = LinearCombination(coeffs)
        else:
            h_kind = {"unit": "unit", "linear_volumes": "linear", "power_mean": "power_mean"}[v["model.h"]]
            ext = NumberDensityForm(
                masses, h_kind, volumes=v["model.volumes"], alpha_h=v["model.alpha_h"]
            )
        kind = v["model.kappa"]
        if kind == "constant":
            kap = ConstantKappa(v["model.kappa_value"])
        elif kind == "power_law":
            kap = PowerLawKappa(v["model.kappa_coeff"], v["model.kappa_exponent"])
        else:
            tab = v["model.kappa_table"]
            kap = TabulatedKappa([p[0] for p in tab], [p[1] for p in tab])
        return MixtureModel(species, law, ext, kap, s0=v["model.s0"], h_const=v["model.h_const"])

    def build_initial(self, grid: StructuredGrid, model: MixtureModel) -> SpeciesField:
        v = self.values
        n = model.n_species
        kind = v["init.kind"]
        centers = grid.cell_centers()
        x = centers[:, 0]
        if kind == "uniform":
            rho = np.repeat(np.asarray(v["init.rho"], dtype=float)[:, None], grid.n_cells, axis=1)
        elif kind == "gaussians":
            base = np.asarray(v["init.base"], dtype=float)
            amp = np.asarray(v["init.amp"] or [0.0] * n, dtype=float)
            cx = np.asarray(v["init.center_x"] or [0.5 * grid.lengths[0]] * n, dtype=float)
            width = np.asarray(v["init.width"] or [0.1] * n, dtype=float)
            r2 = (x[None, :] - cx[:, None]) ** 2
            if grid.dim == 2:
                cy = np.asarray(v["init.center_y"] or [0.5 * grid.lengths[1]] * n, dtype=float)
                r2 = r2 + (centers[:, 1][None, :] - cy[:, None]) ** 2
            rho = base[:, None] + amp[:, None] * np.exp(-r2 / (2.0 * width[:, None] ** 2))
        elif kind == "blocks":
            cuts = list(v["init.interfaces"] or [])
            vals = np.asarray(v["init.block_values"], dtype=float)
            edges = [grid.origin[0] - 1.0] + cuts + [grid.origin[0] + grid.lengths[0] + 1.0]
            rho = np.zeros((n, grid.n_cells))
            for i in range(n):
                mask = (x >= edges[i]) & (x < edges[i + 1])
                rho[i, mask] = vals[i]
        else:  # file
            rho = _load_tabulated(v["init.path"], n, grid)
        # optional magnitude profile: rescale densities so L(rho) follows it
        wprof = self._w_profile(centers)
        if wprof is not None:
            lam = model.eval_lambda(rho)
            rho = rho / lam * wprof
        return SpeciesField(grid, rho.reshape((n,) + grid.shape))

    def _w_profile(self, centers):
        v = self.values
        if v["init.w_base"] is None:
            return None
        base = v["init.w_base"]
        amp = v["init.w_amp"] or 0.0
        width = v["init.w_width"] or 0.1
        cx = v["init.w_center_x"]
        if cx is None:
            cx = 0.5
        r2 = (centers[:, 0] - cx) ** 2
        if centers.shape[1] == 2:
            cy = v["init.w_center_y"]
            if cy is None:
                cy = 0.5
            r2 = r2 + (centers[:, 1] - cy) ** 2
        return base + amp * np.exp(-r2 / (2.0 * width**2))

    def build_reaction(self, model: MixtureModel):
        v = self.values
        kind = v["reaction.kind"]
        if kind == "none":
            return None
        n = model.n_species
        if kind == "zero":
            def rate(rho):
                return np.zeros_like(rho)
        elif kind == "convert":
            i = (v["reaction.from"] or 1) - 1
            j = (v["reaction.to"] or 2) - 1
            k = v["reaction.rate"]
            comp = 1.0
            if isinstance(model.extension, LinearCombination):
                c = model.extension.coeffs
                comp = c[i] / c[j]

            def rate(rho, i=i, j=j, k=k, comp=comp):
                out = np.zeros_like(rho)
                out[i] = -k * rho[i]
                out[j] = k * comp * rho[i]
                return out
        elif kind == "logistic":
            rates = v["reaction.rates"] or [v["reaction.rate"] or 1.0] * n
            rates = np.asarray(rates, dtype=float)
            cap = v["reaction.capacity"] or 2.0

            def rate(rho, rates=rates, cap=cap, model=model):
                lam = model.eval_lambda(np.maximum(rho, 0.0))
                shape = (-1,) + (1,) * (rho.ndim - 1)
                return rates.reshape(shape) * rho * (1.0 - lam / cap)
        else:
            raise ConfigError([f"unknown reaction kind {kind!r}"])
        rf = ReactionField(rate, model)
        try:
            rf.validate(seed=v["seed"])
        except ValueError as e:
            raise ConfigError([f"reaction.kind: {e}"]) from e
        return rf

    def build_problem(self):
        """Assemble (CoupledProblem, initial SpeciesField)."""
        grid = self.build_grid()
        model = self.build_model()
        v = self.values
        dirichlet = {}
        for s in grid.sides():
            if v[f"boundary.{s}"] == "dirichlet_pressure":
                dirichlet[s] = v["boundary.p0"]
        inflow = None
        if v["boundary.inflow_u"] is not None:
            vec = np.asarray(v["boundary.inflow_u"], dtype=float)
            inflow = InflowData({s: vec for s in dirichlet})
        gravity = None
        if v["gravity.c0"] is not None:
            gravity = (v["gravity.c0"], tuple(v["gravity.g"] or [0.0] * grid.dim))
        problem = CoupledProblem(
            grid=grid,
            model=model,
            dirichlet_pressure=dirichlet,
            gravity=gravity,
            reaction=self.build_reaction(model),
            inflow=inflow,
            n_sub=v["solver.n_sub"],
            rk_order=v["solver.rk_order"],
            constraint_mode=v["solver.constraint_mode"],
            newton_tol=v["solver.newton_tol"],
            max_iters=v["solver.max_iters"],
            picard_tol=v["solver.picard_tol"],
            max_picard=v["solver.max_picard"],
            mass_fixer=v["solver.mass_fixer"],
            truncation=tuple(v["solver.truncation"]) if v["solver.truncation"] else None,
            cfl_safety=v["solver.cfl_safety"],
            direct_mode=v["solver.direct_mode"],
        )
        rho0 = self.build_initial(grid, model)
        if gravity is not None:
            lam = model.eval_lambda(rho0.values)
            usum = np.sum(rho0.values / lam, axis=0)
            dev = float(np.max(np.abs(usum - gravity[0])))
            if dev > 1e-10:
                raise ConfigError(
                    [
                        "gravity.c0: gravity mode needs the initial fraction sum to be "
                        f"constant and equal to c0; measured deviation {dev:.3e}"
                    ]
                )
        return problem, rho0

    def time_spec(self):
        v = self.values
        dt = v["time.dt"]
        return {
            "t_end": v["time.t_end"],
            "dt": dt,
            "dt_min": v["time.dt_min"] if v["time.dt_min"] is not None else dt / 1024.0,
            "output_every": v["time.output_every"],
        }


def _load_tabulated(path, n_species, grid):
    try:
        raw = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except OSError as err:
        raise ConfigError([f"init.path: cannot read {path!r}: {err}"]) from err
    ncoord = grid.dim
    expected = ncoord + n_species
    if raw.shape[1] != expected:
        raise ConfigError(
            [
                f"init.path: expected {expected} columns "
                f"({ncoord} coordinates + {n_species} densities), got {raw.shape[1]}"
            ]
        )
    if raw.shape[0] != grid.n_cells:
        raise ConfigError(
            [f"init.path: expected {grid.n_cells} rows (one per cell), got {raw.shape[0]}"]
        )
    return raw[:, ncoord:].T.copy()


def parse_config(text: str, source_path: str | None = None) -> SimulationConfig:
    """Parse and validate configuration text; raises ConfigError with all
    collected problems (each message carries the offending key and line)."""
    errors: list[str] = []
    seen: dict[str, int] = {}
    values: dict = {}
    for lineno, rawline in enumerate(text.splitlines(), start=1):
        line = rawline.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            errors.append(f"line {lineno}: expected 'key = value', got {rawline.strip()!r}")
            continue
        key, _, val = line.partition("=")
        key = key.strip()
        val = val.strip()
        if key not in SCHEMA:
            errors.append(f"line {lineno}: unknown key {key!r}")
            continue
        if key in seen:
            errors.append(
                f"line {lineno}: duplicate key {key!r} (first set on line {seen[key]})"
            )
            continue
        seen[key] = lineno
        parser, _ = SCHEMA[key]
        try:
            values[key] = parser(val)
        except (ValueError, IndexError) as err:
            errors.append(f"line {lineno}: key {key!r}: cannot parse {val!r} ({err})")
    if errors:
        raise ConfigError(errors)

    for key, (_, default) in SCHEMA.items():
        if key not in values:
            if default is REQUIRED:
                errors.append(f"missing required key {key!r}")
            else:
                values[key] = default
    if errors:
        raise ConfigError(errors)

    _validate(values, seen, errors)
    if errors:
        raise ConfigError(errors)
    return SimulationConfig(values=values, source_path=source_path)


def _lineof(seen, key):
    return f" (line {seen[key]})" if key in seen else ""


def _validate(v, seen, errors):
    def err(key, msg):
        errors.append(f"key {key!r}{_lineof(seen, key)}: {msg}")

    dim = v["grid.dim"]
    if dim not in (1, 2):
        err("grid.dim", f"must be 1 or 2, got {dim}")
        return
    if v["grid.nx"] < 2:
        err("grid.nx", "need at least 2 cells per axis")
    if v["grid.length_x"] <= 0:
        err("grid.length_x", "must be positive")
    if dim == 2:
        if v["grid.ny"] is None:
            err("grid.ny", "required for a 2D grid")
        elif v["grid.ny"] < 2:
            err("grid.ny", "need at least 2 cells per axis")
        if v["grid.length_y"] is None:
            err("grid.length_y", "required for a 2D grid")
        elif v["grid.length_y"] <= 0:
            err("grid.length_y", "must be positive")
    else:
        for key in ("grid.ny", "grid.length_y", "boundary.bottom", "boundary.top"):
            if key in seen:
                err(key, "only meaningful for a 2D grid")

    sides = ("left", "right") if dim == 1 else ("left", "right", "bottom", "top")
    any_open = False
    for s in sides:
        tag = v[f"boundary.{s}"]
        if tag not in ("no_penetration", "dirichlet_pressure"):
            err(f"boundary.{s}", f"unknown boundary kind {tag!r}")
        any_open = any_open or tag == "dirichlet_pressure"
    if any_open and v["boundary.p0"] is None:
        err("boundary.p0", "required when a side is dirichlet_pressure")
    if v["boundary.p0"] is not None and v["boundary.p0"] <= 0:
        err("boundary.p0", "boundary pressure must be positive")

    n = v["model.n_species"]
    if n < 1:
        err("model.n_species", "need at least one species")
    if v["model.c0"] <= 0:
        err("model.c0", "pressure coefficient must be positive")
    if v["model.alpha"] < 1.0:
        err(
            "model.alpha",
            f"pressure exponent must be >= 1 so that s*G'(s) stays smooth and "
            f"increasing down to s=0; got {v['model.alpha']}",
        )
    if v["model.masses"] is not None:
        if len(v["model.masses"]) != n:
            err("model.masses", f"expected {n} values")
        elif any(m <= 0 for m in v["model.masses"]):
            err("model.masses", "masses must be positive")
    if v["model.lambda"] not in ("linear", "number_density"):
        err("model.lambda", f"unknown extension kind {v['model.lambda']!r}")
    if v["model.lambda"] == "linear":
        if v["model.coeffs"] is not None:
            if len(v["model.coeffs"]) != n:
                err("model.coeffs", f"expected {n} values")
            elif any(c <= 0 for c in v["model.coeffs"]):
                err("model.coeffs", "coefficients must be positive")
    else:
        if v["model.h"] not in ("unit", "linear_volumes", "power_mean"):
            err("model.h", f"unknown H kind {v['model.h']!r}")
        if v["model.h"] == "linear_volumes" and v["model.volumes"] is None:
            err("model.volumes", "required for linear_volumes H")
        if v["model.h"] == "power_mean":
            if v["model.alpha_h"] is None:
                err("model.alpha_h", "required for power_mean H")
            elif v["model.alpha_h"] < 1.0:
                err("model.alpha_h", "power-mean exponent must be >= 1 (convexity)")
    if v["model.kappa"] not in ("constant", "power_law", "table"):
        err("model.kappa", f"unknown porosity kind {v['model.kappa']!r}")
    if v["model.kappa"] == "constant" and v["model.kappa_value"] <= 0:
        err("model.kappa_value", "porosity must be positive")
    if v["model.kappa"] == "power_law" and v["model.kappa_coeff"] is None:
        err("model.kappa_coeff", "required for power_law porosity")
    if v["model.kappa"] == "table" and not v["model.kappa_table"]:
        err("model.kappa_table", "required for tabulated porosity")
    if v["model.s0"] <= 0:
        err("model.s0", "free-energy reference must be positive")

    kind = v["init.kind"]
    if kind not in ("uniform", "gaussians", "blocks", "file"):
        err("init.kind", f"unknown initial-data kind {kind!r}")
    # barenblatt/translation studies synthesize their own initial data
    init_given = any(k.startswith("init.") for k in seen)
    if v["study.kind"] in ("barenblatt", "translation") and not init_given:
        kind = None
    if kind == "uniform":
        if v["init.rho"] is None:
            err("init.rho", "required for uniform initial data")
        elif len(v["init.rho"]) != n:
            err("init.rho", f"expected {n} values")
        elif any(r < 0 for r in v["init.rho"]):
            err("init.rho", "densities must be nonnegative")
        elif sum(v["init.rho"]) <= 0:
            err("init.rho", "total density must be positive (no vacuum)")
    if kind == "gaussians" and v["init.base"] is None:
        err("init.base", "required for gaussian initial data")
    if kind == "blocks":
        if v["init.block_values"] is None:
            err("init.block_values", "required for block initial data")
        elif len(v["init.block_values"]) != n:
            err("init.block_values", f"expected {n} values")
        cuts = v["init.interfaces"] or []
        if len(cuts) != n - 1:
            err("init.interfaces", f"expected {n - 1} thresholds for {n} species")
    if kind == "file" and v["init.path"] is None:
        err("init.path", "required for tabulated initial data")

    if v["time.t_end"] < 0:
        err("time.t_end", "final time must be nonnegative")
    if v["time.dt"] <= 0:
        err("time.dt", "time step must be positive")
    if v["time.output_every"] < 0:
        err("time.output_every", "must be nonnegative")

    if v["solver.newton_tol"] <= 0:
        err("solver.newton_tol", "must be positive")
    if v["solver.n_sub"] < 1:
        err("solver.n_sub", "need at least one substep")
    if v["solver.rk_order"] not in (2, 4):
        err("solver.rk_order", "supported trace integrators: 2 (midpoint) or 4")
    if v["solver.constraint_mode"] not in ("auto", "exact_linear", "renormalize", "off"):
        err("solver.constraint_mode", f"unknown mode {v['solver.constraint_mode']!r}")
    if v["solver.stepper"] not in ("decomposed", "direct"):
        err("solver.stepper", f"unknown stepper {v['solver.stepper']!r}")
    if v["solver.direct_mode"] not in ("explicit", "picard"):
        err("solver.direct_mode", f"unknown mode {v['solver.direct_mode']!r}")
    if not 0 < v["solver.cfl_safety"] < 1:
        err("solver.cfl_safety", "safety factor must be in (0, 1)")
    if v["solver.truncation"] is not None:
        tr = v["solver.truncation"]
        if len(tr) != 2 or not (0 < tr[0] < tr[1]):
            err("solver.truncation", "expected 'lo, hi' with 0 < lo < hi")

    if v["reaction.kind"] not in ("none", "zero", "convert", "logistic"):
        err("reaction.kind", f"unknown reaction kind {v['reaction.kind']!r}")
    if v["reaction.kind"] == "convert":
        if v["reaction.rate"] is None:
            err("reaction.rate", "required for convert reactions")
        for key in ("reaction.from", "reaction.to"):
            sp = v[key]
            if sp is not None and not (1 <= sp <= n):
                err(key, f"species index must be in 1..{n}")
    if v["gravity.c0"] is not None:
        if v["gravity.c0"] <= 0:
            err("gravity.c0", "fraction-sum constant must be positive")
        g = v["gravity.g"]
        if g is not None and len(g) != dim:
            err("gravity.g", f"expected {dim} components")
    if v["study.kind"] is not None and v["study.kind"] not in (
        "barenblatt",
        "oracle_compare",
        "translation",
    ):
        err("study.kind", f"unknown study {v['study.kind']!r}")


def load_config(path: str) -> SimulationConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as e:
        raise ConfigError([f"cannot read config {path!r}: {e}"]) from e
    return parse_config(text, source_path=path)
