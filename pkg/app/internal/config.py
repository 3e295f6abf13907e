from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any, Callable, TypeVar

import pyjson5

from app.internal.constants import ENERGY_ALPHA_THRESHOLD
from app.internal.exceptions import ConfigError, DomainError
from app.services.fields import Annulus, Ball, Grid2D, Rectangle, Region
from app.services.problems import get_oned_spec, get_problem
from app.services.viscous import STEPPINGS, ViscousRunConfig

COMMANDS = (
    "solve1d",
    "solve2d",
    "verify-identities",
    "regularity-scan",
    "convergence-study",
    "gehring-probe",
)
ONED_COMMANDS = ("solve1d",)
MIN_EXACT_LEVEL = 6
MIN_GRID_NODES = 5
MIN_SCAN_LEVELS = 4

T = TypeVar("T")


def _check_keys(data: Any, allowed: set[str], path: str) -> dict:
    if not isinstance(data, dict):
        raise ConfigError(f"Section '{path or '<root>'}' must be an object")
    unknown = sorted(set(data) - allowed)
    if unknown:
        prefix = f"{path}." if path else ""
        names = ", ".join(prefix + key for key in unknown)
        raise ConfigError(f"Unknown configuration key(s): {names}")
    return data


def _allowed(cls) -> set[str]:
    return {f.name for f in fields(cls)}


def _value(
    data: dict, key: str, cast: Callable[[Any], T], default: T, path: str
) -> T:
    if key not in data or data[key] is None:
        return default
    try:
        return cast(data[key])
    except (TypeError, ValueError) as e:
        raise ConfigError(
            f"Invalid value for '{path}.{key}': {data[key]!r} ({e})"
        ) from None


def _require(condition: bool, path: str, message: str) -> None:
    if not condition:
        raise ConfigError(f"'{path}' {message}")


def _floats(value: Any) -> list[float]:
    if not isinstance(value, (list, tuple)):
        raise ValueError("expected a list of numbers")
    return [float(v) for v in value]


def _ints(value: Any) -> list[int]:
    return [int(v) for v in _floats(value)]


def _strings(value: Any) -> list[str]:
    if not isinstance(value, (list, tuple)):
        raise ValueError("expected a list of names")
    return [str(v) for v in value]


def _bool(value: Any) -> bool:
    if not isinstance(value, bool):
        raise ValueError("expected true or false")
    return value


def _problems(names: list[str], path: str) -> None:
    for name in names:
        try:
            get_problem(name)
        except ConfigError as e:
            raise ConfigError(f"'{path}': {e}") from None


def _sizes(sizes: list[int], path: str) -> None:
    _require(
        all(n >= MIN_GRID_NODES for n in sizes),
        path,
        f"needs at least {MIN_GRID_NODES} nodes per side, got {sizes}",
    )
    _require(
        all(b > a for a, b in zip(sizes, sizes[1:])),
        path,
        f"must be strictly increasing, got {sizes}",
    )
    _require(
        len(sizes) != 1,
        path,
        "needs at least two meshes to judge refinement",
    )


@dataclass
class RegionSpec:
    shape: str = "rectangle"
    center: list[float] = field(default_factory=lambda: [0.0, 0.0])
    radius: float = 0.5
    r_in: float = 0.25
    r_out: float = 0.5
    bounds: list[float] = field(
        default_factory=lambda: [-0.5, 0.5, -0.5, 0.5]
    )

    @classmethod
    def parse(cls, config: dict, path: str = "region") -> "RegionSpec":
        _check_keys(config, _allowed(cls), path)
        default = cls()
        spec = cls(
            shape=_value(config, "shape", str, default.shape, path),
            center=_value(config, "center", _floats, default.center, path),
            radius=_value(config, "radius", float, default.radius, path),
            r_in=_value(config, "r_in", float, default.r_in, path),
            r_out=_value(config, "r_out", float, default.r_out, path),
            bounds=_value(config, "bounds", _floats, default.bounds, path),
        )
        if spec.shape not in ("ball", "rectangle", "annulus"):
            raise ConfigError(f"Unknown region shape '{spec.shape}'")
        if len(spec.center) != 2 or len(spec.bounds) != 4:
            raise ConfigError(
                f"'{path}' needs a 2-element center and 4-element bounds"
            )
        try:
            spec.build()
        except DomainError as e:
            raise ConfigError(f"'{path}': {e}") from None
        return spec

    def build(self) -> Region:
        cx, cy = self.center
        if self.shape == "ball":
            return Ball((cx, cy), self.radius)
        if self.shape == "annulus":
            return Annulus((cx, cy), self.r_in, self.r_out)
        return Rectangle(*self.bounds)


@dataclass
class OneDSettings:
    n: int = 2049
    tol: float = 1e-12
    quadrature: str = "trapezoid"
    alphas: list[float] = field(default_factory=lambda: [1.0, 3.0, 4.0])
    p: float = 1.5
    inverse_p: list[float] = field(default_factory=lambda: [2.0, 3.0])

    @classmethod
    def parse(cls, config: dict) -> "OneDSettings":
        path = "oned"
        _check_keys(config, _allowed(cls), path)
        d = cls()
        settings = cls(
            n=_value(config, "n", int, d.n, path),
            tol=_value(config, "tol", float, d.tol, path),
            quadrature=_value(config, "quadrature", str, d.quadrature, path),
            alphas=_value(config, "alphas", _floats, d.alphas, path),
            p=_value(config, "p", float, d.p, path),
            inverse_p=_value(config, "inverse_p", _floats, d.inverse_p, path),
        )
        settings.validate()
        return settings

    def validate(self) -> None:
        path = "oned"
        if self.quadrature not in ("trapezoid", "exact"):
            raise ConfigError(
                f"Unknown quadrature '{self.quadrature}' in 'oned'"
            )
        _require(self.n >= 3, f"{path}.n", f"must be at least 3, got {self.n}")
        _require(self.tol > 0, f"{path}.tol", "must be positive")
        _require(
            all(a > 0 for a in self.alphas),
            f"{path}.alphas",
            f"must be positive, got {self.alphas}",
        )
        _require(self.p >= 1, f"{path}.p", f"must be >= 1, got {self.p}")
        _require(
            all(0 < p < float("inf") for p in self.inverse_p),
            f"{path}.inverse_p",
            f"must be positive and finite, got {self.inverse_p}",
        )


@dataclass
class ViscousSettings:
    n: int = 65
    eps_start: float = 0.5
    eps_stop: float = 1e-3
    eps_ratio: float = 0.5
    eps_schedule: list[float] | None = None
    mollify_eps: float = 0.0
    dt_safety: float = 0.8
    residual_tol: float = 1e-6
    max_iters: int = 200_000
    init: str = "bilinear"
    stepping: str = "explicit"

    @classmethod
    def parse(cls, config: dict) -> "ViscousSettings":
        path = "viscous"
        _check_keys(config, _allowed(cls), path)
        d = cls()
        settings = cls(
            n=_value(config, "n", int, d.n, path),
            eps_start=_value(config, "eps_start", float, d.eps_start, path),
            eps_stop=_value(config, "eps_stop", float, d.eps_stop, path),
            eps_ratio=_value(config, "eps_ratio", float, d.eps_ratio, path),
            eps_schedule=_value(
                config, "eps_schedule", _floats, d.eps_schedule, path
            ),
            mollify_eps=_value(
                config, "mollify_eps", float, d.mollify_eps, path
            ),
            dt_safety=_value(config, "dt_safety", float, d.dt_safety, path),
            residual_tol=_value(
                config, "residual_tol", float, d.residual_tol, path
            ),
            max_iters=_value(config, "max_iters", int, d.max_iters, path),
            init=_value(config, "init", str, d.init, path),
            stepping=_value(config, "stepping", str, d.stepping, path),
        )
        settings.validate()
        return settings

    def validate(self) -> None:
        if self.init not in ("bilinear", "zero"):
            raise ConfigError(f"Unknown init '{self.init}' in 'viscous'")
        if self.stepping not in STEPPINGS:
            raise ConfigError(
                f"Unknown stepping '{self.stepping}' in 'viscous', expected"
                f" one of {STEPPINGS}"
            )
        _require(
            self.n >= MIN_GRID_NODES,
            "viscous.n",
            f"must be at least {MIN_GRID_NODES}, got {self.n}",
        )
        try:
            self.run_config()
        except DomainError as e:
            raise ConfigError(f"'viscous': {e}") from None

    def schedule(self) -> list[float]:
        if self.eps_schedule:
            return list(self.eps_schedule)
        return ViscousRunConfig.geometric_schedule(
            self.eps_start, self.eps_stop, self.eps_ratio
        )

    def run_config(
        self, grid: Grid2D | None = None, keep_snapshots: bool = False
    ) -> ViscousRunConfig:
        return ViscousRunConfig(
            eps_schedule=self.schedule(),
            mollify_eps=self.mollify_eps,
            dt_safety=self.dt_safety,
            residual_tol=self.residual_tol,
            max_iters=self.max_iters,
            keep_snapshots=keep_snapshots,
            grid=grid,
            stepping=self.stepping,
        )


@dataclass
class ScanSettings:
    alpha: float = 1.5
    p: float = 2.0
    kappa: float = 0.0
    s: float | None = None
    levels: list[int] = field(default_factory=lambda: [4, 5, 6, 7, 8, 9])
    region: RegionSpec = field(default_factory=RegionSpec)
    table: bool = False
    alphas: list[float] = field(
        default_factory=lambda: [0.5, 1.0, 1.5, 2.0, 2.25, 2.9]
    )
    ps: list[float] = field(default_factory=lambda: [1.0, 1.5, 2.0, 2.5])

    @classmethod
    def parse(cls, config: dict) -> "ScanSettings":
        path = "scan"
        _check_keys(config, _allowed(cls), path)
        d = cls()
        settings = cls(
            alpha=_value(config, "alpha", float, d.alpha, path),
            p=_value(config, "p", float, d.p, path),
            kappa=_value(config, "kappa", float, d.kappa, path),
            s=_value(config, "s", float, d.s, path),
            levels=_value(config, "levels", _ints, d.levels, path),
            region=RegionSpec.parse(
                config.get("region", {}), f"{path}.region"
            ),
            table=_value(config, "table", _bool, d.table, path),
            alphas=_value(config, "alphas", _floats, d.alphas, path),
            ps=_value(config, "ps", _floats, d.ps, path),
        )
        settings.validate()
        return settings

    def validate(self) -> None:
        path = "scan"
        _require(
            self.alpha > 0,
            f"{path}.alpha",
            f"must be positive, got {self.alpha}",
        )
        _require(self.p >= 1, f"{path}.p", f"must be >= 1, got {self.p}")
        _require(
            self.kappa >= 0,
            f"{path}.kappa",
            f"must be nonnegative, got {self.kappa}",
        )
        _require(
            len(set(self.levels)) >= MIN_SCAN_LEVELS
            and all(k >= 1 for k in self.levels),
            f"{path}.levels",
            f"needs {MIN_SCAN_LEVELS} distinct positive levels, got"
            f" {self.levels}",
        )
        _require(
            all(a > 0 for a in self.alphas),
            f"{path}.alphas",
            f"must be positive, got {self.alphas}",
        )
        _require(
            all(p >= 1 for p in self.ps),
            f"{path}.ps",
            f"must be >= 1, got {self.ps}",
        )


@dataclass
class IdentitySettings:
    polynomials: int = 100
    n: int = 65
    tolerance: float = 1e-10
    exact_level: int = 9
    alphas: list[float] = field(default_factory=lambda: [0.5, 2.0, 3.0])
    chain_pairs: list[list[float]] = field(
        default_factory=lambda: [[1.0, 1.0], [2.0, 1.0], [2.0, 2.0]]
    )
    mask_threshold: float = 0.5
    pw_tolerance: float = 0.05
    # viscous solutions checked under refinement; no sizes skips them
    solver_problems: list[str] = field(
        default_factory=lambda: ["sharp-w", "const-f-zero-g"]
    )
    solver_sizes: list[int] = field(default_factory=lambda: [33, 65])

    @classmethod
    def parse(cls, config: dict) -> "IdentitySettings":
        path = "identities"
        _check_keys(config, _allowed(cls), path)
        d = cls()

        def pairs(value: Any) -> list[list[float]]:
            result = [_floats(pair) for pair in value]
            if any(len(pair) != 2 for pair in result):
                raise ValueError("expected [alpha, tau] pairs")
            return result

        settings = cls(
            polynomials=_value(
                config, "polynomials", int, d.polynomials, path
            ),
            n=_value(config, "n", int, d.n, path),
            tolerance=_value(config, "tolerance", float, d.tolerance, path),
            exact_level=_value(
                config, "exact_level", int, d.exact_level, path
            ),
            alphas=_value(config, "alphas", _floats, d.alphas, path),
            chain_pairs=_value(
                config, "chain_pairs", pairs, d.chain_pairs, path
            ),
            mask_threshold=_value(
                config, "mask_threshold", float, d.mask_threshold, path
            ),
            pw_tolerance=_value(
                config, "pw_tolerance", float, d.pw_tolerance, path
            ),
            solver_problems=_value(
                config, "solver_problems", _strings, d.solver_problems, path
            ),
            solver_sizes=_value(
                config, "solver_sizes", _ints, d.solver_sizes, path
            ),
        )
        settings.validate()
        return settings

    def validate(self) -> None:
        path = "identities"
        if self.exact_level < MIN_EXACT_LEVEL:
            raise ConfigError(
                f"'identities.exact_level' must be at least"
                f" {MIN_EXACT_LEVEL}, got {self.exact_level}"
            )
        _require(
            self.polynomials >= 1, f"{path}.polynomials", "must be positive"
        )
        _require(
            self.n >= MIN_GRID_NODES,
            f"{path}.n",
            f"must be at least {MIN_GRID_NODES}, got {self.n}",
        )
        _require(self.tolerance > 0, f"{path}.tolerance", "must be positive")
        _require(
            all(a > 0 for a in self.alphas),
            f"{path}.alphas",
            f"must be positive, got {self.alphas}",
        )
        _require(
            all(a > 0 and t > 0 for a, t in self.chain_pairs),
            f"{path}.chain_pairs",
            f"must hold positive pairs, got {self.chain_pairs}",
        )
        _require(
            self.mask_threshold >= 0,
            f"{path}.mask_threshold",
            "must be nonnegative",
        )
        _require(
            self.pw_tolerance > 0, f"{path}.pw_tolerance", "must be positive"
        )
        _problems(self.solver_problems, f"{path}.solver_problems")
        _sizes(self.solver_sizes, f"{path}.solver_sizes")


@dataclass
class GehringSettings:
    alpha: float = 2.0
    q: list[float] = field(
        default_factory=lambda: [2.0, 2.25, 2.5, 2.75, 3.0]
    )
    energy_alphas: list[float] = field(
        default_factory=lambda: [1.75, 2.0, 2.5]
    )
    # exact w at spacings 2^-k
    energy_levels: list[int] = field(default_factory=lambda: [6, 7, 8, 9])
    energy_problems: list[str] = field(
        default_factory=lambda: ["const-f-zero-g", "tilted-f"]
    )
    energy_sizes: list[int] = field(default_factory=lambda: [33, 65])

    @classmethod
    def parse(cls, config: dict) -> "GehringSettings":
        path = "gehring"
        _check_keys(config, _allowed(cls), path)
        d = cls()
        settings = cls(
            alpha=_value(config, "alpha", float, d.alpha, path),
            q=_value(config, "q", _floats, d.q, path),
            energy_alphas=_value(
                config, "energy_alphas", _floats, d.energy_alphas, path
            ),
            energy_levels=_value(
                config, "energy_levels", _ints, d.energy_levels, path
            ),
            energy_problems=_value(
                config, "energy_problems", _strings, d.energy_problems, path
            ),
            energy_sizes=_value(
                config, "energy_sizes", _ints, d.energy_sizes, path
            ),
        )
        settings.validate()
        return settings

    def validate(self) -> None:
        path = "gehring"
        _require(
            self.alpha > ENERGY_ALPHA_THRESHOLD
            and all(a > ENERGY_ALPHA_THRESHOLD for a in self.energy_alphas),
            f"{path}.alpha",
            f"and energy_alphas must exceed {ENERGY_ALPHA_THRESHOLD}",
        )
        _require(
            all(2.0 <= q <= 3.0 for q in self.q),
            f"{path}.q",
            f"must lie in [2, 3], got {self.q}",
        )
        _require(
            len(self.energy_levels) >= 2
            and all(k >= 1 for k in self.energy_levels)
            and all(
                b > a
                for a, b in zip(self.energy_levels, self.energy_levels[1:])
            ),
            f"{path}.energy_levels",
            f"needs two or more increasing levels, got {self.energy_levels}",
        )
        _problems(self.energy_problems, f"{path}.energy_problems")
        _sizes(self.energy_sizes, f"{path}.energy_sizes")


@dataclass
class PostprocessingConfig:
    plots: bool = False

    @classmethod
    def parse(cls, config: dict) -> "PostprocessingConfig":
        path = "postprocessing"
        _check_keys(config, _allowed(cls), path)
        return cls(plots=_value(config, "plots", _bool, False, path))


@dataclass
class ExperimentConfig:
    command: str
    problem: str | None = None
    f_file: str | None = None
    g_file: str | None = None
    out_dir: str = "results"
    seed: int = 0
    oned: OneDSettings = field(default_factory=OneDSettings)
    viscous: ViscousSettings = field(default_factory=ViscousSettings)
    scan: ScanSettings = field(default_factory=ScanSettings)
    identities: IdentitySettings = field(default_factory=IdentitySettings)
    gehring: GehringSettings = field(default_factory=GehringSettings)
    postprocessing: PostprocessingConfig = field(
        default_factory=PostprocessingConfig
    )

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ConfigError(
                f"Unknown command '{self.command}', expected one of"
                f" {', '.join(COMMANDS)}"
            )
        if (self.f_file is None) != (self.g_file is None):
            raise ConfigError("f_file and g_file must be given together")
        if self.command in ONED_COMMANDS:
            get_oned_spec(self.problem_name)
        elif self.f_file is None:
            get_problem(self.problem_name)
        _require(
            self.seed >= 0, "seed", f"must be nonnegative, got {self.seed}"
        )
        # sections are validated again after command-line overrides
        self.oned.validate()
        self.viscous.validate()
        self.scan.validate()

    @property
    def problem_name(self) -> str:
        if self.problem is not None:
            return self.problem
        return "sharp-1d" if self.command in ONED_COMMANDS else "sharp-w"

    @classmethod
    def parse(
        cls, config: Any, command: str | None = None
    ) -> "ExperimentConfig":
        config = _check_keys(config, _allowed(cls), "")
        resolved = command or config.get("command")
        if resolved is None:
            raise ConfigError("No command given")
        path = "<root>"
        return cls(
            command=str(resolved),
            problem=_value(config, "problem", str, None, path),
            f_file=_value(config, "f_file", str, None, path),
            g_file=_value(config, "g_file", str, None, path),
            out_dir=_value(config, "out_dir", str, "results", path),
            seed=_value(config, "seed", int, 0, path),
            oned=OneDSettings.parse(config.get("oned", {})),
            viscous=ViscousSettings.parse(config.get("viscous", {})),
            scan=ScanSettings.parse(config.get("scan", {})),
            identities=IdentitySettings.parse(config.get("identities", {})),
            gehring=GehringSettings.parse(config.get("gehring", {})),
            postprocessing=PostprocessingConfig.parse(
                config.get("postprocessing", {})
            ),
        )

    @classmethod
    def from_json(
        cls, json_path: str, command: str | None = None
    ) -> "ExperimentConfig":
        try:
            with open(json_path, "r") as f:
                text = f.read()
        except OSError as e:
            raise ConfigError(f"Cannot read configuration: {e}") from None
        try:
            config = pyjson5.decode(text)
        except Exception as e:
            raise ConfigError(f"{json_path}: {e}") from None
        return cls.parse(config, command)

    def with_overrides(self, **overrides: Any) -> "ExperimentConfig":
        """
        Applies command-line overrides; ``None`` values are ignored. ``n``
        goes to the 1-D or the 2-D section depending on the command.
        """
        top = {
            k: v
            for k, v in overrides.items()
            if v is not None and k in ("problem", "out_dir", "seed")
        }
        scan = {
            k: v
            for k, v in overrides.items()
            if v is not None and k in ("alpha", "p", "kappa")
        }
        result = replace(self, **top)
        if scan:
            result = replace(result, scan=replace(result.scan, **scan))
        n = overrides.get("n")
        if n is not None:
            if self.command in ONED_COMMANDS:
                result = replace(result, oned=replace(result.oned, n=n))
            else:
                result = replace(
                    result, viscous=replace(result.viscous, n=n)
                )
        return result

    def to_record(self) -> dict[str, Any]:
        return asdict(self)
