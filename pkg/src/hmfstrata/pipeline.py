"""Stage orchestration: simulate -> densities -> strata -> gmt -> cover -> report.

Artifacts land in ``<output.dir>/<config hash>/``.  Analytic fields
(hedgehog, line-singular with ``grid.analytic = true``) are built in memory,
so no simulate stage is needed for them.
"""
from __future__ import annotations

import json
import logging
import os
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .covering import (CoverResult, CoveringParams, GridOracle, HedgehogOracle, LineOracle, cover_audit,
                       main_covering)
from .densities import (CutoffProfile, density_csv_header, density_suite, extrapolated_density_suite,
                        monotonicity_audit)
from .errors import ConfigError, DependencyError
from .fieldio import read_csv, read_trajectory, write_csv, write_trajectory
from .flow import FlowConfig, make_initial_data, run_flow
from .geometry import Grid, SpaceTimeField, SpaceTimePoint
from .gmt import WeightedPointCloud, displacement, jones_functional, moment_spectrum, write_cloud
from .strata import DetectionParams, extract_singular_slice, minkowski_content, stratum_masks

log = logging.getLogger(__name__)

STAGES = cfgmod.STAGES
ANALYTIC = ("hedgehog", "line-singular")


def stage_rng(seed: int, stage: str) -> np.random.Generator:
    """Independent stream per stage, split from the single run seed."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(STAGES.index(stage),))
    return np.random.default_rng(ss)


def _dump_json(path: Path, obj) -> Path:
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)
    return path


def _load_json(path: Path):
    with open(path) as fh:
        return json.load(fh)


class Pipeline:
    def __init__(self, cfg: dict, out_dir=None):
        self.cfg = cfg
        self.hash = cfgmod.config_hash(cfg)
        base = Path(out_dir if out_dir is not None else cfg["output"]["dir"])
        self.root = base / self.hash
        g = cfg["grid"]
        self.analytic = bool(g["analytic"])
        if self.analytic and g["field"] not in ANALYTIC:
            raise ConfigError(f"grid.analytic needs field in {ANALYTIC}, got {g['field']!r}")
        self._field = None

    # -- helpers -----------------------------------------------------------

    @property
    def grid(self) -> Grid:
        g = self.cfg["grid"]
        return Grid.cube(g["n"], g["nodes"], g["lo"], g["hi"])

    @property
    def center(self) -> np.ndarray:
        c = self.cfg["grid"]["center"]
        return np.array(c, float) if c else np.zeros(self.cfg["grid"]["n"])

    def path(self, name: str) -> Path:
        return self.root / name

    def need(self, name: str, producer: str) -> Path:
        p = self.path(name)
        if not p.exists():
            raise DependencyError(f"missing {p}; run the {producer!r} stage first", producer=producer)
        return p

    def _initial(self, grid: Grid):
        g = self.cfg["grid"]
        kind = g["field"]
        if kind in ANALYTIC:
            return make_initial_data(kind, grid, center=self.center)
        if kind == "equivariant-disk":
            return make_initial_data(kind, grid, angle=g["angle"], radius=g["radius"])
        seed = int(stage_rng(self.cfg["seed"], "simulate").integers(2 ** 63))
        return make_initial_data(kind, grid, seed=seed, d=g["d"], modes=g["modes"], amplitude=g["amplitude"],
                                 periodic=self.cfg["flow"]["boundary"] == "periodic")

    def _static_span(self) -> float:
        radii = list(self.cfg["densities"]["radii"]) + [self.cfg["cover"]["r"]] + list(self.cfg["gmt"]["scales"])
        return 4.0 * max(radii) ** 2 + 1.0

    def analytic_field(self, grid: Grid = None) -> SpaceTimeField:
        snap = self._initial(grid or self.grid)
        span = self._static_span()
        return SpaceTimeField.static(snap, -span, span)

    def field(self) -> SpaceTimeField:
        if self._field is None:
            if self.analytic:
                self._field = self.analytic_field()
            else:
                self.need("trajectory/index.json", "simulate")
                self._field = read_trajectory(self.path("trajectory"))
        return self._field

    @property
    def t0(self) -> float:
        return 0.0 if self.analytic else float(self.field().t_end)

    # -- stages ------------------------------------------------------------

    def run(self, stages) -> dict:
        unknown = [s for s in stages if s not in STAGES]
        if unknown:
            raise ConfigError(f"unknown stages {unknown}; choose from {STAGES}")
        ordered = [s for s in STAGES if s in stages]
        self.root.mkdir(parents=True, exist_ok=True)
        (self.root / "config.toml").write_text(cfgmod.dumps(self.cfg))
        out = {}
        for s in ordered:
            log.info("stage %s -> %s", s, self.root)
            out[s] = getattr(self, f"stage_{s}")()
        return out

    def stage_simulate(self) -> dict:
        f = self.cfg["flow"]
        grid = self.grid
        if self.analytic:
            field = self.analytic_field(grid)
        else:
            dt = f["dt"] if f["dt"] > 0 else grid.spacing ** 2 / (8 * grid.n)
            fc = FlowConfig(scheme=f["scheme"], dt=dt, end_time=f["end_time"], gl_epsilon=f["gl_epsilon"],
                            boundary=f["boundary"], record_every=f["record_every"],
                            stop_at_unwinding=f["stop_at_unwinding"])
            field = run_flow(self._initial(grid), fc)
        write_trajectory(self.path("trajectory"), field)
        mon = field.monitor
        rows = []
        if "time" in mon and len(mon["time"]):
            keys = [k for k in ("time", "max_dtu", "max_grad", "unit_defect") if k in mon]
            rows = [[mon[k][i] for k in keys] for i in range(len(mon["time"]))]
            write_csv(self.path("monitor.csv"), keys, rows)
        # later stages see exactly what a separate invocation would read back
        self._field = None if self.analytic else read_trajectory(self.path("trajectory"))
        return {"snapshots": len(field), "t_end": float(field.t_end), "steps": len(rows)}

    def stage_densities(self) -> dict:
        d = self.cfg["densities"]
        field = self.field()
        n = field.grid.n
        pts = [np.array(p, float) for p in d["points"]] or [self.center]
        radii = sorted(float(r) for r in d["radii"])
        quad = d["quadrature"]
        if quad == "auto":
            quad = "richardson" if self.analytic else "grid"
        if quad == "richardson" and not self.analytic:
            raise ConfigError("densities.quadrature = 'richardson' needs an analytic field")
        rows, audits = [], []
        for x0 in pts:
            X0 = SpaceTimePoint(x0, self.t0)
            cutoff = None if d["cutoff"] == "none" else CutoffProfile(x0, 1.0)
            reps = []
            for rho in radii:
                if quad == "richardson":
                    rep = extrapolated_density_suite(self.analytic_field, X0, rho, d["richardson_nodes"],
                                                     cutoff, d["time_nodes"])
                else:
                    # the two-sided E needs times after t0, which a finished run does not have
                    which = ("E", "E_minus", "Psi", "Phi")
                    if X0.t + rho * rho > field.t_end + 1e-12:
                        which = which[1:]
                    rep = density_suite(field, X0, rho, cutoff, d["time_nodes"], which=which)
                reps.append(rep)
                rows.append(rep.row())
            if len(radii) > 1:
                vals = {"Phi": [r.Phi for r in reps], "Psi": [r.Psi for r in reps]}
                try:
                    m = monotonicity_audit(field, X0, radii, values=vals, rel_tol=d["rel_tol"], pairs=d["pairs"])
                except ValueError as exc:
                    raise ConfigError(f"monotonicity audit: {exc}") from exc
                audits.append({"point": x0.tolist(), "radii": m.radii, "pairs": m.pairs, "c1_phi": m.c1_phi,
                               "c1_psi": m.c1_psi, "critical_phi": m.critical_phi, "psi_flags": m.psi_flags})
        write_csv(self.path("densities.csv"), density_csv_header(n), rows)
        _dump_json(self.path("monotonicity.json"), audits)
        return {"rows": len(rows), "audits": len(audits)}

    def _detection(self) -> DetectionParams:
        s = self.cfg["strata"]
        return DetectionParams(epsilon=s["epsilon"], ratio=s["ratio"], default_threshold=s["threshold"],
                               time_nodes=s["time_nodes"])

    def stage_strata(self) -> dict:
        s = self.cfg["strata"]
        field = self.field()
        g = field.grid
        p = self._detection()
        t = self.t0
        sing = extract_singular_slice(field, t, p)
        write_csv(self.path("singular.csv"), [f"x{i}" for i in range(g.n)], sing.tolist())
        ks = list(s["ks"]) or list(range(g.n))
        masks, ladder = stratum_masks(field, t, ks, p)
        counts = {str(k): int(np.count_nonzero(m)) for k, m in masks.items()}
        content_rows = []
        for r in s["content_radii"]:
            val = minkowski_content(sing, s["alpha"], r).content if len(sing) else 0.0
            content_rows.append([r, s["alpha"], val])
        write_csv(self.path("content.csv"), ["r", "alpha", "content"], content_rows)
        summary = {"t": t, "singular_nodes": int(len(sing)), "stratum_counts": counts,
                   "ladder": [float(x) for x in ladder], "epsilon": p.epsilon}
        _dump_json(self.path("strata.json"), summary)
        return summary

    def _singular_points(self) -> np.ndarray:
        header, rows = read_csv(self.need("singular.csv", "strata"))
        return np.array(rows, dtype=float).reshape(-1, len(header))

    def stage_gmt(self) -> dict:
        c = self.cfg["gmt"]
        pts = self._singular_points()
        g = self.grid
        k = c["k"]
        rows = []
        summary = {"k": k, "atoms": int(len(pts))}
        if len(pts):
            cloud = WeightedPointCloud.uniform(pts, g.spacing ** k)
            write_cloud(self.path("cloud.csv"), cloud)
            x = self.center
            for s in sorted(c["scales"]):
                mass = cloud.mass_in(x, s)
                D = displacement(cloud, x, s, k) if k <= g.n else 0.0
                rows.append([s, mass, D])
            nonempty = [s for s in c["scales"] if cloud.mass_in(x, s) > 0]
            if nonempty:
                sp = moment_spectrum(cloud, x, max(nonempty))
                summary["eigenvalues"] = sp.eigenvalues.tolist()
                summary["identity_residual"] = sp.identity_residual()
                summary["jones"] = jones_functional(cloud, x, k, nonempty)
        write_csv(self.path("gmt.csv"), ["scale", "mass", "displacement"], rows)
        _dump_json(self.path("gmt.json"), summary)
        return summary

    def _cover_sample(self) -> np.ndarray:
        c = self.cfg["cover"]
        mode = c["sample"]
        if mode == "auto":
            mode = "exact" if self.analytic else "singular"
        if mode == "singular":
            return self._singular_points()
        kind = self.cfg["grid"]["field"]
        if kind == "line-singular":
            m = int(c["sample_points"])
            xs = np.linspace(-c["r"], c["r"], m + 2)[1:-1]
            pts = np.zeros((m, 3))
            pts[:, 0] = xs
            return pts + self.center
        if kind == "hedgehog":
            return self.center[None, :].copy()
        raise ConfigError("cover.sample = 'exact' needs an analytic field")

    def _oracle(self):
        c = self.cfg["cover"]
        kind = c["oracle"]
        if kind == "auto":
            kind = {"line-singular": "line", "hedgehog": "hedgehog"}.get(self.cfg["grid"]["field"], "grid")
            if not self.analytic:
                kind = "grid"
        if kind == "line":
            return LineOracle(self.center)
        if kind == "hedgehog":
            return HedgehogOracle(self.center)
        return GridOracle(self.field(), self.t0)

    def stage_cover(self) -> dict:
        c = self.cfg["cover"]
        S = self._cover_sample()
        p = CoveringParams(k=c["k"], R=c["R"], rho=c["rho"], gamma=c["gamma"], eta_prime=c["eta_prime"],
                           eta=c["eta"] if c["eta"] > 0 else None)
        if len(S):
            res = main_covering(self._oracle(), S, self.center, c["r"], p)
        else:
            log.info("cover: empty sample, nothing to cover")
            res = CoverResult(self.center, c["r"], p, 0.0)
        res.write_json(self.path("cover.json"))
        res.write_csv(self.path("cover.csv"))
        audit = cover_audit(res, S)
        d = audit.as_dict()
        d["uncovered"] = len(d["uncovered"])
        d["content_over_r"] = audit.content / c["r"] ** c["k"]
        _dump_json(self.path("cover_audit.json"), d)
        return d

    def stage_report(self) -> dict:
        have = {name: self.path(name).exists() for name in
                ("monitor.csv", "densities.csv", "monotonicity.json", "strata.json", "singular.csv",
                 "content.csv", "gmt.csv", "gmt.json", "cover.json", "cover_audit.json")}
        if not any(have.values()):
            raise DependencyError(f"nothing to report in {self.root}; run the 'densities' stage first",
                                  producer="densities")
        summary = {"config_hash": self.hash, "artifacts": sorted(k for k, v in have.items() if v)}
        for name in ("monotonicity.json", "strata.json", "gmt.json", "cover_audit.json"):
            if have[name]:
                summary[name.split(".")[0]] = _load_json(self.path(name))
        if have["densities.csv"]:
            header, rows = read_csv(self.path("densities.csv"))
            summary["densities"] = {"header": header, "rows": [[float(v) for v in r] for r in rows]}
        _dump_json(self.path("summary.json"), summary)
        figs = []
        if self.cfg["output"]["figures"]:
            figs = self._figures(have)
        summary["figures"] = figs
        return summary

    def _figures(self, have) -> list:
        from . import plotting

        fig_dir = self.root / "figures"
        fig_dir.mkdir(exist_ok=True)
        made = []
        if have["densities.csv"]:
            header, rows = read_csv(self.path("densities.csv"))
            a = np.array(rows, float).reshape(-1, len(header))
            if len(a):
                first = np.all(a[:, : self.grid.n] == a[0, : self.grid.n], axis=1)
                sel = a[first]
                series = {name: sel[:, header.index(name)] for name in ("E", "E_minus", "Psi", "Phi")}
                made.append(plotting.plot_density_curves(sel[:, header.index("rho")], series,
                                                         fig_dir / "densities.png"))
        if have["singular.csv"]:
            pts = self._singular_points()
            if pts.shape[1] >= 2:
                made.append(plotting.plot_points(pts, fig_dir / "singular.png"))
        if have["gmt.csv"]:
            header, rows = read_csv(self.path("gmt.csv"))
            a = np.array(rows, float).reshape(-1, 3)
            if len(a):
                made.append(plotting.plot_loglog(a[:, 0], a[:, 2], fig_dir / "displacement.png",
                                                 xlabel="scale", ylabel="displacement"))
        if have["cover.json"]:
            cj = _load_json(self.path("cover.json"))
            balls = cj["balls"]
            if balls and len(balls[0]["center"]) >= 2:
                made.append(plotting.plot_cover([b["center"] for b in balls], [b["radius"] for b in balls],
                                                [b["label"] for b in balls], fig_dir / "cover.png"))
        if have["monitor.csv"]:
            header, rows = read_csv(self.path("monitor.csv"))
            a = np.array(rows, float).reshape(-1, len(header))
            if len(a):
                made.append(plotting.plot_series(a[:, 0], a[:, header.index("max_grad")], fig_dir / "max_grad.png",
                                                 ylabel=r"max $|\nabla u|$", logy=True))
        return [str(p.relative_to(self.root)) for p in made]


def run_pipeline(config_path, stages, out_dir=None, seed=None) -> Pipeline:
    cfg = cfgmod.load(config_path)
    if seed is not None:
        cfg["seed"] = int(seed)
        cfgmod.validate(cfg)
    pipe = Pipeline(cfg, out_dir)
    pipe.run(stages)
    return pipe

