"""Configuration-driven entry points: single runs, studies, the cross test.

Configs are flat key-value YAML files (or dicts); every resolved physical
parameter is echoed into a JSON run manifest next to the outputs.  The
``"paper"`` presets resolve to ``eps = 10/N``, ``tau = 10/N^2`` for the
Barenblatt case and ``eps = 2/3e-2``, ``tau = 1/3e-2`` for the cross case.

Subcommands::

    laguerre-flow simulate --config run.yaml [--output-dir DIR] [-v]
    laguerre-flow study    --config study.yaml [--workers K]
    laguerre-flow cross    --config cross.yaml

Outputs are comma-separated tables (energy trace, snapshots, rate table);
plotting is left to external tools.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import sys as _sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import yaml

from . import __version__, analysis, dynamics
from .analysis import (
    BarenblattSpec,
    InitialData,
    barenblatt_density,
    barenblatt_flow,
    build_initial_data,
    convergence_study,
    flow_error,
    initial_weight_guess,
    paper_epsilon,
    paper_tau,
    study_table_csv,
)
from .dual_solver import ParticleSystem
from .energy import Potential, from_config_key, no_potential, quadratic_potential
from .geometry import Domain, load_domain

logger = logging.getLogger(__name__)

__all__ = ["ExperimentConfig", "RunSetup", "resolve_case", "cross_initializer", "run", "main"]


@dataclass
class ExperimentConfig:
    """Flat experiment description; unknown keys are rejected on load."""

    test_case: str = "barenblatt"  # barenblatt | cross_potential | custom
    mode: str = "clipped"
    energy_family: str = "power"
    gamma: float = 2.0
    epsilon: object = "paper"  # float or "paper"
    tau: object = "paper"  # float or "paper"
    t0: float = 1.0 / 16.0
    t_end: float = 1.0
    n_particles: int = 100
    barenblatt_c: float = 1.0 / 3.0
    lloyd_iters: int = 20
    total_mass: float = 0.12
    cross_center: Tuple[float, float] = (0.0, 0.0)
    cross_thickness: float = 0.25
    domain_box: Optional[Tuple[float, float, float, float]] = None
    domain_file: Optional[str] = None
    particle_file: Optional[str] = None
    snapshot_times: Tuple[float, ...] = ()
    study_gammas: Tuple[float, ...] = (1.5, 2.0, 4.0)
    study_ns: Tuple[int, ...] = (100, 400, 1600)
    solver_tol: float = 1e-10
    output_dir: Optional[str] = None
    seed: int = 0
    workers: int = 1
    verbose: bool = False

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            raw = yaml.safe_load(fh) or {}
        return cls.from_dict(raw)

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**raw)
        cfg.validate()
        return cfg

    def validate(self):
        if self.test_case not in ("barenblatt", "cross_potential", "custom"):
            raise ValueError(f"unknown test case {self.test_case!r}")
        if self.mode not in ("full", "clipped"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.t_end <= self.t0:
            raise ValueError("t_end must exceed t0")
        eps = self.resolved_epsilon()
        tau = self.resolved_tau()
        if eps <= 0.0:
            raise ValueError("epsilon must be positive")
        if tau <= 0.0:
            raise ValueError("tau must be positive")
        if self.n_particles < 1:
            raise ValueError("n_particles must be at least 1")
        for name in ("domain_file", "particle_file"):
            path = getattr(self, name)
            if path is not None and not Path(path).exists():
                raise ValueError(f"{name} does not exist: {path}")
        if self.test_case == "custom" and (self.domain_file is None or self.particle_file is None):
            raise ValueError("custom case needs domain_file and particle_file")

    def resolved_epsilon(self) -> float:
        if self.epsilon == "paper":
            if self.test_case == "cross_potential":
                return 2.0 / 3.0 * 1e-2
            return paper_epsilon(self.n_particles)
        return float(self.epsilon)

    def resolved_tau(self) -> float:
        if self.tau == "paper":
            if self.test_case == "cross_potential":
                return 1.0 / 3.0 * 1e-2
            return paper_tau(self.n_particles)
        return float(self.tau)

    def manifest_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["resolved_epsilon"] = self.resolved_epsilon()
        out["resolved_tau"] = self.resolved_tau()
        out["package_version"] = __version__
        return out


@dataclass
class RunSetup:
    """Everything `dynamics.run_flow` needs, resolved from a config."""

    system: ParticleSystem
    potential: Optional[Potential]
    tau: float
    n_steps: int
    t_start: float
    snapshot_steps: List[int]
    warm_start: Optional[np.ndarray]
    solver_tol: float
    extras: dict = field(default_factory=dict)


def cross_initializer(n: int, total_mass: float, center=(0.0, 0.0), thickness: float = 0.25) -> InitialData:
    """Equal-mass particles on a uniform lattice inside a unit-size cross.

    The cross is two axis-aligned rectangles of unit length and the given
    thickness crossing at ``center``; the lattice is symmetric under
    quarter-turn rotations about the center, and each particle carries mass
    ``total_mass / N`` for the actual particle count N.
    """
    if n < 1:
        raise ValueError("need at least one particle")
    center = np.asarray(center, dtype=float)
    area = 2.0 * thickness - thickness * thickness
    spacing = math.sqrt(area / n)
    half = 0.5

    m = max(1, int(math.ceil(half / spacing - 0.5)))
    coords = (np.arange(-m, m + 1)) * spacing
    xx, yy = np.meshgrid(coords, coords, indexing="ij")
    pts = np.stack([xx.ravel(), yy.ravel()], axis=1)
    in_cross = (
        (np.abs(pts[:, 0]) <= half) & (np.abs(pts[:, 1]) <= 0.5 * thickness)
    ) | ((np.abs(pts[:, 1]) <= half) & (np.abs(pts[:, 0]) <= 0.5 * thickness))
    pts = pts[in_cross] + center
    count = len(pts)
    masses = np.full(count, total_mass / count)
    return InitialData(
        positions=pts,
        masses=masses,
        delta_n=0.0,
        descriptor={"seed_count": count, "lloyd_iters": 0, "ball_radius": 0.0, "spacing": spacing},
    )


def _snapshot_steps(cfg: ExperimentConfig, t0: float, tau: float, n_steps: int) -> List[int]:
    steps = {0, n_steps}
    for s in cfg.snapshot_times:
        k = round((float(s) - t0) / tau)
        if 0 <= k <= n_steps:
            steps.add(int(k))
    return sorted(steps)


def resolve_case(cfg: ExperimentConfig) -> RunSetup:
    """Build the particle system, potential, and scheme numbers for a config."""
    cfg.validate()
    eps = cfg.resolved_epsilon()
    tau_req = cfg.resolved_tau()
    n_steps = max(1, round((cfg.t_end - cfg.t0) / tau_req))
    tau_eff = (cfg.t_end - cfg.t0) / n_steps
    model = from_config_key(cfg.energy_family, cfg.gamma)

    if cfg.test_case == "barenblatt":
        spec = BarenblattSpec(gamma=cfg.gamma, C=cfg.barenblatt_c, t0=cfg.t0)
        data = build_initial_data(spec, cfg.n_particles, cfg.lloyd_iters)
        box = cfg.domain_box or (-1.5, -1.5, 1.5, 1.5)
        domain = Domain.box(*box)
        system = ParticleSystem(domain, data.positions, data.masses, eps, model, cfg.mode)
        warm = initial_weight_guess(system, barenblatt_density(spec, cfg.t0, data.positions))
        potential = None
        extras = {"spec": spec, "initial_data": data}
    elif cfg.test_case == "cross_potential":
        data = cross_initializer(cfg.n_particles, cfg.total_mass, cfg.cross_center, cfg.cross_thickness)
        box = cfg.domain_box or (
            cfg.cross_center[0] - 1.0,
            cfg.cross_center[1] - 1.0,
            cfg.cross_center[0] + 1.0,
            cfg.cross_center[1] + 1.0,
        )
        domain = Domain.box(*box)
        system = ParticleSystem(domain, data.positions, data.masses, eps, model, cfg.mode)
        potential = quadratic_potential(cfg.cross_center)
        warm = None
        extras = {"initial_data": data}
    else:  # custom
        domain = load_domain(cfg.domain_file)
        table = np.loadtxt(cfg.particle_file, dtype=float, ndmin=2)
        if table.shape[1] < 3:
            raise ValueError("particle file needs columns: x y mass")
        system = ParticleSystem(domain, table[:, 0:2], table[:, 2], eps, model, cfg.mode)
        potential = None
        warm = None
        extras = {}

    return RunSetup(
        system=system,
        potential=potential,
        tau=tau_eff,
        n_steps=n_steps,
        t_start=cfg.t0,
        snapshot_steps=_snapshot_steps(cfg, cfg.t0, tau_eff, n_steps),
        warm_start=warm,
        solver_tol=cfg.solver_tol,
        extras=extras,
    )


def _write_energy_trace(path: Path, record: dynamics.TrajectoryRecord, tau: float):
    with open(path, "w") as fh:
        fh.write("step,time,cell_energy,internal_energy,potential_energy,total_energy\n")
        for k, (t, f, u, v) in enumerate(
            zip(record.times, record.energies, record.internal_energies, record.potential_energies)
        ):
            fh.write(f"{k},{t:.12g},{f:.16e},{u:.16e},{v:.16e},{f + v:.16e}\n")


def _write_snapshots(path: Path, record: dynamics.TrajectoryRecord):
    with open(path, "w") as fh:
        fh.write("step,time,particle,x,y,mass,cell_area,density\n")
        for snap in record.snapshots:
            dens = snap.densities
            for i in range(len(snap.masses)):
                fh.write(
                    f"{snap.step},{snap.time:.12g},{i},{snap.positions[i,0]:.16e},"
                    f"{snap.positions[i,1]:.16e},{snap.masses[i]:.16e},"
                    f"{snap.areas[i]:.16e},{dens[i]:.16e}\n"
                )


def run(cfg: ExperimentConfig, output_dir=None) -> dict:
    """Execute a config and write trace/snapshot/manifest files.

    Returns the manifest dictionary.  Partial failures still produce a
    manifest with ``status`` and the error message.
    """
    out = Path(output_dir or cfg.output_dir or ".")
    out.mkdir(parents=True, exist_ok=True)
    manifest = cfg.manifest_dict()
    manifest["status"] = "running"
    manifest["outputs"] = []
    started = time.perf_counter()
    try:
        if cfg.test_case in ("barenblatt", "cross_potential", "custom"):
            setup = resolve_case(cfg)
            manifest["n_particles_actual"] = setup.system.n
            manifest["n_steps"] = setup.n_steps
            manifest["tau_effective"] = setup.tau
            record = dynamics.run_flow(
                setup.system,
                tau=setup.tau,
                n_steps=setup.n_steps,
                potential=setup.potential,
                snapshot_steps=setup.snapshot_steps,
                t_start=setup.t_start,
                warm_start=setup.warm_start,
                solver_tol=setup.solver_tol,
            )
            _write_energy_trace(out / "energy_trace.csv", record, setup.tau)
            manifest["outputs"].append("energy_trace.csv")
            _write_snapshots(out / "snapshots.csv", record)
            manifest["outputs"].append("snapshots.csv")
            if cfg.test_case == "barenblatt":
                spec = setup.extras["spec"]
                data = setup.extras["initial_data"]
                exact = barenblatt_flow(spec, cfg.t_end, data.positions)
                dphi = flow_error(record.final_positions, exact, data.masses)
                manifest["delta_phi"] = dphi
                manifest["delta_n"] = data.delta_n
                row = analysis.StudyRow(
                    gamma=cfg.gamma,
                    n_particles=cfg.n_particles,
                    epsilon=cfg.resolved_epsilon(),
                    tau=cfg.resolved_tau(),
                    n_steps=setup.n_steps,
                    delta_phi=dphi,
                    delta_n=data.delta_n,
                )
                (out / "rate_table.csv").write_text(study_table_csv([row]))
                manifest["outputs"].append("rate_table.csv")
            manifest["final_energy"] = float(record.energies[-1])
            manifest["final_total_energy"] = float(record.total_energies[-1])
        manifest["status"] = "complete"
    except Exception as exc:  # noqa: BLE001 - manifest must record the failure
        manifest["status"] = "failed"
        manifest["error"] = f"{type(exc).__name__}: {exc}"
        raise
    finally:
        manifest["wall_time"] = time.perf_counter() - started
        with open(out / "manifest.json", "w") as fh:
            json.dump(manifest, fh, indent=2, default=str)
    return manifest


def run_study(cfg: ExperimentConfig, output_dir=None) -> dict:
    """Run the convergence study described by a config; write the rate table."""
    out = Path(output_dir or cfg.output_dir or ".")
    out.mkdir(parents=True, exist_ok=True)
    manifest = cfg.manifest_dict()
    manifest["status"] = "running"
    manifest["outputs"] = []
    started = time.perf_counter()
    try:
        kwargs = {}
        if cfg.epsilon != "paper":
            kwargs["epsilon"] = float(cfg.epsilon)
        if cfg.tau != "paper":
            kwargs["tau"] = float(cfg.tau)
        rows = convergence_study(
            cfg.study_gammas,
            cfg.study_ns,
            workers=cfg.workers,
            t0=cfg.t0,
            t_end=cfg.t_end,
            C=cfg.barenblatt_c,
            lloyd_iters=cfg.lloyd_iters,
            mode=cfg.mode,
            solver_tol=cfg.solver_tol,
            **kwargs,
        )
        (out / "rate_table.csv").write_text(study_table_csv(rows))
        manifest["outputs"].append("rate_table.csv")
        manifest["rows"] = [dataclasses.asdict(r) for r in rows]
        manifest["status"] = "complete"
    except Exception as exc:  # noqa: BLE001
        manifest["status"] = "failed"
        manifest["error"] = f"{type(exc).__name__}: {exc}"
        raise
    finally:
        manifest["wall_time"] = time.perf_counter() - started
        with open(out / "manifest.json", "w") as fh:
            json.dump(manifest, fh, indent=2, default=str)
    return manifest


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="laguerre-flow", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in (
        ("simulate", "run a single configured simulation"),
        ("study", "run a Barenblatt convergence study"),
        ("cross", "run the quadratic-potential cross test"),
    ):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", type=str, default=None, help="YAML config path")
        p.add_argument("--output-dir", type=str, default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--workers", type=int, default=None)
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    try:
        if args.config:
            cfg = ExperimentConfig.from_file(args.config)
        elif args.command == "cross":
            cfg = ExperimentConfig(test_case="cross_potential", t0=0.0, t_end=8.0, n_particles=2000)
        else:
            cfg = ExperimentConfig()
        if args.seed is not None:
            cfg.seed = args.seed
        if args.workers is not None:
            cfg.workers = args.workers
        if args.verbose:
            cfg.verbose = True
        if args.command == "cross":
            cfg.test_case = "cross_potential"
        if args.command == "study":
            run_study(cfg, args.output_dir)
        else:
            run(cfg, args.output_dir)
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        logger.error("run failed: %s", exc)
        return 1
    return 0


if __name__ == "__main__":
    _sys.exit(main())
