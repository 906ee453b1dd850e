"""Batch experiment driver.

Every subcommand reads one JSON config, applies command-line overrides and
writes its artifacts plus the fully materialised config into ``--out``.

Exit codes: 0 success, 2 validation error, 3 numeric failure, 4 check failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ._validation import RNG_DESCRIPTION, InvalidArgumentError, NumericFailureError, make_rng
from .basis import EnvLabel, make_fourier_sine_basis, read_curve_csv, write_curve_csv
from .moments import population_grammians
from .risk import check_decomposition, risk_closed_form, risk_mc
from .shiftset import ShiftKernelGrid, mercer_membership_grid, psd_membership_scores
from .sim import SemSpec, load_sem_spec, paper_example_spec, simulate_env, synthesize_curves
from .solver import (
    FitConfig,
    beta_l2_distance,
    beta_l2_norm,
    fit_empirical,
    read_beta_json,
    solve_grammian,
    write_beta_json,
    write_surface_csv,
)

log = logging.getLogger("fworst")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERIC, EXIT_CHECK = 0, 2, 3, 4


class CheckFailed(Exception):
    pass


@dataclass
class ExperimentConfig:
    sem: object = "example"
    gammas: list = field(default_factory=lambda: [0.5, 1.0, 2.0, 10.0])
    n_samples: int = 1000
    n_mc: int = 20000
    grid_size: int = 100
    n_basis: int = 10
    interval: list = field(default_factory=lambda: [0.0, 1.0])
    path: str = "grammian"
    d_n: float | None = None
    e_n: int | None = None
    M: float = 5.0
    split_fractions: list = field(default_factory=lambda: [0.5, 0.25, 0.25])
    seed: int = 0
    out: str = "out"
    center_observational: bool = False
    surface_grid: int = 50
    curves: dict | None = None
    jobs: int = 1

    def validate(self) -> "ExperimentConfig":
        if not self.gammas or any(not float(g) > 0 for g in self.gammas):
            raise InvalidArgumentError("gammas must be a nonempty list of positive numbers")
        if int(self.n_samples) < 1:
            raise InvalidArgumentError("n_samples must be >= 1")
        if self.path not in ("grammian", "eigen"):
            raise InvalidArgumentError(f"path must be grammian or eigen, got {self.path!r}")
        if isinstance(self.sem, str) and self.sem != "example" and not Path(self.sem).exists():
            raise InvalidArgumentError(f"SEM file {self.sem} does not exist")
        for env, p in (self.curves or {}).items():
            if not Path(p).exists():
                raise InvalidArgumentError(f"curve file for env {env} does not exist: {p}")
        return self

    def spec(self) -> SemSpec:
        if isinstance(self.sem, dict):
            return SemSpec.from_dict(self.sem)
        if self.sem == "example":
            return paper_example_spec(n_basis=self.n_basis)
        return load_sem_spec(self.sem)

    def basis(self):
        return make_fourier_sine_basis(self.n_basis, tuple(self.interval))

    def fit_config(self, gamma: float) -> FitConfig:
        return FitConfig(
            gamma=float(gamma),
            basis=self.basis(),
            path=self.path,
            e_of_n=self.e_n,
            d_n=self.d_n,
            M=self.M,
            split_fractions=tuple(self.split_fractions),
            center_observational=self.center_observational,
        )

    @classmethod
    def load(cls, path: str | None) -> "ExperimentConfig":
        if path is None:
            return cls()
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise InvalidArgumentError(f"cannot read config {path}: {exc}") from exc
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidArgumentError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")


def _metadata(cfg: ExperimentConfig, **extra) -> dict:
    spec = cfg.spec()
    return {"config": asdict(cfg), "seed": cfg.seed, "rng": RNG_DESCRIPTION, "spec_sha256": spec.digest(), **extra}


def _map_gammas(cfg: ExperimentConfig, fn):
    if cfg.jobs > 1:
        with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
            return list(pool.map(fn, cfg.gammas))
    return [fn(g) for g in cfg.gammas]


def _gamma_tag(g: float) -> str:
    return f"{float(g):g}"


def cmd_simulate(cfg: ExperimentConfig, out: Path) -> int:
    spec = cfg.spec()
    basis = cfg.basis()
    grid = np.linspace(*cfg.interval, cfg.grid_size)
    seeds = np.random.SeedSequence(cfg.seed).spawn(2)
    files = {}
    for env, ss in zip((EnvLabel.O, EnvLabel.A), seeds):
        sample = simulate_env(spec, env, int(cfg.n_samples), 1.0, make_rng(ss))
        panel = synthesize_curves(sample, basis, grid)
        path = out / f"curves_{env.value}.csv"
        write_curve_csv(panel, path)
        files[env.value] = str(path)
    _write_json(out / "metadata.json", _metadata(cfg, files=files))
    log.info("wrote %s", ", ".join(files.values()))
    return EXIT_OK


def _load_panels(cfg: ExperimentConfig, out: Path):
    curves = cfg.curves or {"O": str(out / "curves_O.csv"), "A": str(out / "curves_A.csv")}
    try:
        p = cfg.spec().p
    except (InvalidArgumentError, OSError):
        p = None
    panels = {}
    for env, path in curves.items():
        if not Path(path).exists():
            raise InvalidArgumentError(f"curve file {path} not found (run `simulate` first or set `curves`)")
        found = read_curve_csv(path, p=p)
        if EnvLabel(env) not in found:
            raise InvalidArgumentError(f"{path}: no rows for environment {env}")
        panels[EnvLabel(env)] = found[EnvLabel(env)]
    return panels[EnvLabel.O], panels[EnvLabel.A]


def cmd_fit(cfg: ExperimentConfig, out: Path) -> int:
    panel_O, panel_A = _load_panels(cfg, out)
    spec = None
    try:
        spec = cfg.spec()
    except InvalidArgumentError:
        pass

    def work(gamma):
        beta, report = fit_empirical(panel_O, panel_A, cfg.fit_config(gamma), cfg.seed)
        tag = _gamma_tag(gamma)
        write_beta_json(beta, out / f"beta_gamma{tag}.json")
        write_surface_csv(beta, out / f"surface_gamma{tag}.csv", cfg.surface_grid)
        entry = {"gamma": gamma, "report": report.to_dict(), "l2_norm": beta_l2_norm(beta)}
        if spec is not None and spec.p == beta.p and spec.n_basis == beta.basis.n_basis:
            pop, _ = solve_grammian(population_grammians(spec), gamma, basis=beta.basis)
            entry["population_l2_error"] = beta_l2_distance(beta, pop)
            entry["population_l2_norm"] = beta_l2_norm(pop)
        return entry

    results = _map_gammas(cfg, work)
    _write_json(out / "fit_report.json", _metadata(cfg, fits=results))
    return EXIT_OK


def _beta_for(cfg, spec, gamma, beta_path):
    if beta_path:
        return read_beta_json(beta_path)
    beta, _ = solve_grammian(population_grammians(spec), gamma, basis=cfg.basis())
    return beta


def cmd_risk(cfg: ExperimentConfig, out: Path, beta_path: str | None = None) -> int:
    spec = cfg.spec()

    def work(gamma):
        beta = _beta_for(cfg, spec, gamma, beta_path)
        r_O = risk_closed_form(spec, "O", 1.0, beta)
        r_A = risk_closed_form(spec, "A", 1.0, beta)
        ss = np.random.SeedSequence([cfg.seed, int(round(gamma * 1e6))]).spawn(2)
        mc_O = risk_mc(spec, "O", 1.0, beta, cfg.n_mc, make_rng(ss[0]))
        mc_A = risk_mc(spec, "A", 1.0, beta, cfg.n_mc, make_rng(ss[1]))
        return {
            "gamma": gamma,
            "R_O": r_O.value,
            "R_A": r_A.value,
            "worst_risk": 0.5 * (r_A.value + r_O.value) + (gamma - 0.5) * (r_A.value - r_O.value),
            "mc": {"R_O": asdict(mc_O), "R_A": asdict(mc_A)},
        }

    _write_json(out / "risk.json", _metadata(cfg, risks=_map_gammas(cfg, work)))
    return EXIT_OK


def cmd_check(cfg: ExperimentConfig, out: Path, beta_path: str | None = None, rhs_offset: float = 0.0) -> int:
    spec = cfg.spec()
    shift_M = spec.shift_second_moment()

    def work(gamma):
        beta = _beta_for(cfg, spec, gamma, beta_path)
        exact = check_decomposition(spec, beta, gamma, rhs_offset=rhs_offset)
        seed = [cfg.seed, int(round(gamma * 1e6))]
        mc = check_decomposition(spec, beta, gamma, n_mc=cfg.n_mc, rng_seed=seed, rhs_offset=rhs_offset)
        member = psd_membership_scores(gamma * shift_M, shift_M, gamma)
        return {
            "gamma": gamma,
            "decomposition_closed_form": exact.to_dict(),
            "decomposition_monte_carlo": mc.to_dict(),
            "scaled_shift_membership": member.to_dict(),
            "pass": bool(exact.passed and mc.passed and member.member),
        }

    results = _map_gammas(cfg, work)
    ok = all(r["pass"] for r in results)
    _write_json(out / "check.json", _metadata(cfg, checks=results, all_pass=ok))
    if not ok:
        raise CheckFailed("decomposition or membership check failed; see check.json")
    return EXIT_OK


def cmd_shift_check(cfg: ExperimentConfig, out: Path, kernel_prime=None, kernel=None, scale=None) -> int:
    results = []
    if kernel_prime or kernel:
        if not (kernel_prime and kernel):
            raise InvalidArgumentError("--kernel-prime and --kernel must be given together")
        Kp, K = ShiftKernelGrid.from_csv(kernel_prime), ShiftKernelGrid.from_csv(kernel)
        for gamma in cfg.gammas:
            results.append({"gamma": gamma, **mercer_membership_grid(Kp, K, gamma).to_dict()})
    else:
        spec = cfg.spec()
        M = spec.shift_second_moment()
        c = math.sqrt(max(cfg.gammas)) if scale is None else float(scale)
        for gamma in cfg.gammas:
            results.append({"gamma": gamma, "scale": c, **psd_membership_scores(c**2 * M, M, gamma).to_dict()})
    _write_json(out / "shift_check.json", _metadata(cfg, verdicts=results))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fworst", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="experiment JSON file")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory")
        p.add_argument("--gamma", type=float, action="append", help="robustness level (repeatable, replaces config gammas)")
        p.add_argument("--path", choices=["grammian", "eigen"])
        p.add_argument("--center-observational", action="store_true", default=None)
        p.add_argument("--jobs", type=int)
        return p

    common(sub.add_parser("simulate", help="simulate both environments and write curve CSVs"))
    common(sub.add_parser("fit", help="estimate the worst-risk minimizer from curve CSVs"))
    for name, help_ in (("risk", "risks of a kernel in both environments"), ("check", "verify the worst-risk decomposition")):
        p = common(sub.add_parser(name, help=help_))
        p.add_argument("--beta", help="kernel JSON (default: population minimizer per gamma)")
    sub.choices["check"].add_argument("--corrupt-rhs", type=float, default=0.0, help=argparse.SUPPRESS)
    p = common(sub.add_parser("shift-check", help="shift-set membership verdicts"))
    p.add_argument("--kernel-prime", help="candidate shift kernel CSV (i,j,s,t,value)")
    p.add_argument("--kernel", help="observed shift kernel CSV")
    p.add_argument("--scale", type=float, help="test scale * A against the config SEM's shift")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = ExperimentConfig.load(args.config)
        for key in ("seed", "out", "path", "center_observational", "jobs"):
            val = getattr(args, key)
            if val is not None:
                setattr(cfg, key, val)
        if args.gamma:
            cfg.gammas = list(args.gamma)
        cfg.validate()
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "simulate":
            return cmd_simulate(cfg, out)
        if args.command == "fit":
            return cmd_fit(cfg, out)
        if args.command == "risk":
            return cmd_risk(cfg, out, args.beta)
        if args.command == "check":
            return cmd_check(cfg, out, args.beta, args.corrupt_rhs)
        return cmd_shift_check(cfg, out, args.kernel_prime, args.kernel, args.scale)
    except CheckFailed as exc:
        print(f"check failed: {exc}", file=sys.stderr)
        return EXIT_CHECK
    except NumericFailureError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (InvalidArgumentError, OSError, TypeError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
