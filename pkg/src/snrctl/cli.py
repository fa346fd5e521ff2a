"""Command-line front end: ``snrctl stabilizability|synthesize|sweep|simulate``.

Exit codes: 0 success, 2 usage or config error, 3 infeasible, 4 degraded
result (spectral fit above 5 % or solver iteration limit), 5 instability.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import os
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .convex_solver import SolverStatus
from .errors import ConfigError, Infeasible, InternalStabilityFailed, SnrCtlError, UnstableLoop
from .factorization import coprime_factorize
from .lti_core import (
    FrequencyGrid,
    GeneralizedPlant,
    RationalTransfer,
    StateSpaceModel,
    blocks_from_state_space,
    normalize_channel_factor,
)
from .synthesis import (
    ChannelSpec,
    SynthesisResult,
    min_snr_for_stabilization,
    synthesize,
    unstable_pole_product_bound,
)
from .validation import analytic_cost, check_internal_stability, closed_loop, simulate

EXIT_OK, EXIT_USAGE, EXIT_INFEASIBLE, EXIT_DEGRADED, EXIT_UNSTABLE = 0, 2, 3, 4, 5

DEFAULTS = {
    "channel": {"H": {"num": [1.0], "den": [1.0]}},
    "solver": {"n_grid": 629, "fir_order": 20, "tol": 1e-8, "max_iter": 500, "snr_offset": 0},
    "spectral": {"Nc": 32},
    "output": {"dir": ".", "emit_csv": True},
}

CSV_FREQ_HEADER = ["omega", "abs_K", "abs_C", "abs_D", "phase_K"]
CSV_SWEEP_HEADER = ["sigma2", "J", "gamma", "channel_power", "status"]


# ---------------------------------------------------------------------------
# Config
# ---------------------------------------------------------------------------


def _merge(defaults: dict, given: dict) -> dict:
    out = copy.deepcopy(defaults)
    for key, value in given.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _float_list(x, name) -> list:
    try:
        vals = [float(v) for v in (x if isinstance(x, list) else [x])]
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name} must be a list of numbers") from exc
    if not vals or not all(np.isfinite(vals)):
        raise ConfigError(f"{name} must be a nonempty list of finite numbers")
    return vals


def _matrix(x, name) -> list:
    arr = np.asarray(x, dtype=float) if x is not None else None
    if arr is None or arr.ndim != 2:
        raise ConfigError(f"{name} must be a 2-D array")
    return arr.tolist()


@dataclass
class Config:
    """Validated configuration with defaults filled in.

    Polynomial coefficients (``num``, ``den``) are given in *descending*
    powers of ``z``, as in ``scipy.signal``.
    """

    raw: dict

    @classmethod
    def from_dict(cls, d: dict) -> "Config":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(d) - {"plant", "channel", "solver", "spectral", "output"}
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        cfg = _merge(DEFAULTS, d)
        plant = cfg.get("plant")
        if not isinstance(plant, dict) or len(plant) != 1 or not set(plant) <= {"siso", "state_space"}:
            raise ConfigError("plant must contain exactly one of 'siso' or 'state_space'")
        if "siso" in plant:
            p = plant["siso"]
            plant["siso"] = {"num": _float_list(p.get("num"), "plant.siso.num"),
                             "den": _float_list(p.get("den"), "plant.siso.den")}
        else:
            p = plant["state_space"]
            try:
                plant["state_space"] = {
                    "A": _matrix(p.get("A"), "A") if np.size(p.get("A")) else [],
                    "B": _matrix(p.get("B"), "B"),
                    "C": _matrix(p.get("C"), "C"),
                    "D": _matrix(p.get("D"), "D"),
                    "n_v": int(p.get("n_v", 1)),
                    "n_z": int(p.get("n_z", 1)),
                }
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad state_space block: {exc}") from exc
        ch = cfg["channel"]
        if "snr" not in ch:
            raise ConfigError("channel.snr is required")
        try:
            ch["snr"] = float(ch["snr"])
        except (TypeError, ValueError) as exc:
            raise ConfigError("channel.snr must be a number") from exc
        if not ch["snr"] > 0:
            raise ConfigError("channel.snr must be positive")
        ch["H"] = {"num": _float_list(ch["H"].get("num"), "channel.H.num"),
                   "den": _float_list(ch["H"].get("den"), "channel.H.den")}
        s = cfg["solver"]
        try:
            s["n_grid"], s["fir_order"], s["max_iter"] = int(s["n_grid"]), int(s["fir_order"]), int(s["max_iter"])
            s["tol"] = float(s["tol"])
            s["snr_offset"] = int(s["snr_offset"])
            cfg["spectral"]["Nc"] = int(cfg["spectral"]["Nc"])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad solver/spectral settings: {exc}") from exc
        if s["snr_offset"] not in (0, 1):
            raise ConfigError("solver.snr_offset must be 0 or 1")
        if s["fir_order"] < 1 or s["n_grid"] < 2 * s["fir_order"]:
            raise ConfigError("need fir_order >= 1 and n_grid >= 2 * fir_order")
        if not s["tol"] > 0 or s["max_iter"] < 1 or cfg["spectral"]["Nc"] < 0:
            raise ConfigError("tol, max_iter and Nc must be positive")
        out = cfg["output"]
        out["dir"] = str(out.get("dir", "."))
        out["emit_csv"] = bool(out.get("emit_csv", True))
        return cls(cfg)

    @classmethod
    def load(cls, path) -> "Config":
        try:
            with open(path, encoding="utf-8") as fh:
                d = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(d)

    def canonical(self) -> str:
        return canonical_json(self.raw)

    @property
    def snr(self) -> float:
        return self.raw["channel"]["snr"]

    def with_snr(self, snr: float) -> "Config":
        d = copy.deepcopy(self.raw)
        d["channel"]["snr"] = float(snr)
        return Config.from_dict(d)

    def plant(self) -> GeneralizedPlant:
        p = self.raw["plant"]
        if "siso" in p:
            return GeneralizedPlant.from_siso(RationalTransfer.from_desc(p["siso"]["num"], p["siso"]["den"]))
        ss = p["state_space"]
        model = StateSpaceModel(np.asarray(ss["A"], float), np.asarray(ss["B"], float),
                                np.asarray(ss["C"], float), np.asarray(ss["D"], float))
        return blocks_from_state_space(model, ss["n_v"], ss["n_z"])

    def channel_factor(self) -> RationalTransfer:
        H = self.raw["channel"]["H"]
        return normalize_channel_factor(RationalTransfer.from_desc(H["num"], H["den"]))

    def channel(self) -> ChannelSpec:
        return ChannelSpec(self.channel_factor(), self.snr)


def canonical_json(d) -> str:
    return json.dumps(d, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


# ---------------------------------------------------------------------------
# Result document
# ---------------------------------------------------------------------------


def _tf_dict(tf: RationalTransfer) -> dict:
    return {"num": tf.num_desc.tolist(), "den": tf.den_desc.tolist()}


@dataclass
class ResultDocument:
    """Serializable synthesis result; transfer functions use descending powers of ``z``."""

    status: str
    sigma2: float
    gamma: float
    J_analytic: float
    channel_power: float
    spectral_fit_residual: float
    q: list
    q_hat: list
    K: dict
    C: dict
    D: dict
    solver_report: dict
    stabilizability: dict
    validation: dict
    config: dict
    tool: str = "snrctl"
    version: str = __version__

    @classmethod
    def from_result(cls, res: SynthesisResult, config: Config, status: str) -> "ResultDocument":
        rep = asdict(res.solver_report)
        rep["status"] = res.solver_report.status.value
        return cls(
            status=status,
            sigma2=config.snr,
            gamma=float(res.gamma),
            J_analytic=float(res.J_analytic),
            channel_power=float(res.channel_power),
            spectral_fit_residual=float(res.spectral_fit_residual),
            q=res.q.coeffs.tolist(),
            q_hat=res.q_hat.coeffs.tolist(),
            K=_tf_dict(res.K),
            C=_tf_dict(res.C),
            D=_tf_dict(res.D),
            solver_report={k: (float(v) if isinstance(v, (float, np.floating)) else v) for k, v in rep.items()},
            stabilizability={k: float(v) for k, v in res.stabilizability.items()},
            validation={
                "phi_q_hat": float(res.phi_q_hat),
                "noise_bound": float(res.noise_bound),
                "noise_achieved": float(res.noise_achieved),
                "alpha": float(res.alpha),
                "fit_shift": float(res.fit_shift),
            },
            config=copy.deepcopy(config.raw),
        )

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ResultDocument":
        return cls(**json.loads(text))

    def transfer(self, name: str) -> RationalTransfer:
        d = getattr(self, name)
        return RationalTransfer.from_desc(d["num"], d["den"])


def write_frequency_csv(path: Path, res: SynthesisResult, n: int) -> None:
    w = FrequencyGrid(n).omegas
    K, C, D = res.K.freq(w), res.C.freq(w), res.D.freq(w)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh)
        wr.writerow(CSV_FREQ_HEADER)
        for row in zip(w, np.abs(K), np.abs(C), np.abs(D), np.angle(K)):
            wr.writerow([f"{float(v):.17g}" for v in row])


def _num(x: float) -> str:
    return f"{float(x):.17g}"


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def _run_synthesis(config: Config):
    """Return ``(status, result_or_exception)`` for one configuration."""
    s = config.raw["solver"]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        try:
            res = synthesize(config.plant(), config.channel(), n=s["n_grid"], m=s["fir_order"],
                             Nc=config.raw["spectral"]["Nc"], tol=s["tol"], max_iter=s["max_iter"],
                             snr_offset=s["snr_offset"])
        except Infeasible as exc:
            return "Infeasible", exc
        except (InternalStabilityFailed, UnstableLoop) as exc:
            return "Unstable", exc
    if res.solver_report.status is not SolverStatus.OPTIMAL:
        return "MaxIter", res
    if res.degraded:
        return "Degraded", res
    return "Optimal", res


_STATUS_EXIT = {"Optimal": EXIT_OK, "Infeasible": EXIT_INFEASIBLE, "Degraded": EXIT_DEGRADED,
                "MaxIter": EXIT_DEGRADED, "Unstable": EXIT_UNSTABLE}


def cmd_stabilizability(config: Config, out) -> int:
    plant = config.plant()
    s = config.raw["solver"]
    threshold = min_snr_for_stabilization(plant, config.channel_factor(), s["fir_order"], s["n_grid"])
    bound = unstable_pole_product_bound(plant.G_yu)
    ok = config.snr > threshold
    report = {"sigma2": config.snr, "threshold_estimate": threshold,
              "pole_product_lower_bound": bound, "stabilizable": ok}
    print(json.dumps(report, sort_keys=True), file=out)
    return EXIT_OK if ok else EXIT_INFEASIBLE


def _out_dir(config: Config, override) -> Path:
    d = Path(override if override is not None else config.raw["output"]["dir"])
    d.mkdir(parents=True, exist_ok=True)
    return d


def cmd_synthesize(config: Config, out_dir: Path, out) -> int:
    status, res = _run_synthesis(config)
    if status in ("Infeasible", "Unstable"):
        report = {"status": status, "sigma2": config.snr, "message": str(res)}
        if isinstance(res, Infeasible):
            report["threshold_estimate"] = float(res.threshold_estimate)
        print(json.dumps(report, sort_keys=True), file=out)
        return _STATUS_EXIT[status]
    doc = ResultDocument.from_result(res, config, status)
    (out_dir / "result.json").write_text(doc.to_json(), encoding="utf-8")
    if config.raw["output"]["emit_csv"]:
        write_frequency_csv(out_dir / "frequency_response.csv", res, config.raw["solver"]["n_grid"])
    print(json.dumps({"status": status, "sigma2": config.snr, "gamma": res.gamma,
                      "J_analytic": res.J_analytic, "channel_power": res.channel_power},
                     sort_keys=True), file=out)
    return _STATUS_EXIT[status]


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("SNRCTL_THREADS", "1")))
    except ValueError:
        return 1


def cmd_sweep(config: Config, snr_list: list, out_dir: Path, out) -> int:
    configs = [config.with_snr(s) for s in snr_list]
    with ThreadPoolExecutor(max_workers=min(_threads(), len(configs))) as pool:
        results = list(pool.map(_run_synthesis, configs))
    with open(out_dir / "cost_by_sigma2.csv", "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh)
        wr.writerow(CSV_SWEEP_HEADER)
        for s, (status, res) in zip(snr_list, results):
            if isinstance(res, SynthesisResult):
                wr.writerow([_num(s), _num(res.J_analytic), _num(res.gamma), _num(res.channel_power), status])
            else:
                wr.writerow([_num(s), "nan", "nan", "nan", status])
            print(f"sigma2={s:g} status={status}", file=out)
    return EXIT_OK if any(st == "Optimal" for st, _ in results) else EXIT_INFEASIBLE


def cmd_simulate(config: Config, doc: ResultDocument, steps: int, seed: int, out) -> int:
    plant = config.plant()
    H = config.channel_factor()
    C, D = doc.transfer("C"), doc.transfer("D")
    if not (C.is_proper and D.is_proper):
        raise _UsageError("result document holds an improper C or D")
    factors = coprime_factorize(plant)
    loop = closed_loop(plant, C, D, H, youla=(factors, np.asarray(doc.q_hat)))
    rep = check_internal_stability(loop)
    if not (rep.stable and rep.realization_stable):
        print(json.dumps({"status": "Unstable"}), file=out)
        return EXIT_UNSTABLE
    J, power = analytic_cost(loop)
    est = simulate(loop, steps, seed)
    print(json.dumps({
        "steps": est.samples, "seed": est.seed,
        "z_variance": est.z_variance, "z_analytic": J, "z_halfwidth": est.z_halfwidth,
        "t_power": est.t_power, "t_analytic": power, "t_halfwidth": est.t_halfwidth,
    }, sort_keys=True), file=out)
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(message)


class _UsageError(Exception):
    pass


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="snrctl", description="Encoder/decoder synthesis over SNR-constrained channels.")
    p.add_argument("command", choices=["stabilizability", "synthesize", "sweep", "simulate"])
    p.add_argument("--config", required=True, help="JSON configuration file")
    p.add_argument("--snr-list", help="comma-separated sigma^2 values for sweep")
    p.add_argument("--steps", type=int, default=10**6, help="simulation length")
    p.add_argument("--seed", type=int, default=0, help="simulation seed")
    p.add_argument("--out", help="output directory (overrides output.dir)")
    p.add_argument("--result", help="result document for simulate (default <out>/result.json)")
    p.add_argument("--version", action="version", version=f"snrctl {__version__}")
    return p


def main(argv=None, out=None) -> int:
    out = out if out is not None else sys.stdout
    try:
        args = build_parser().parse_args(argv)
        config = Config.load(args.config)
        if args.command == "stabilizability":
            return cmd_stabilizability(config, out)
        out_dir = _out_dir(config, args.out)
        if args.command == "synthesize":
            return cmd_synthesize(config, out_dir, out)
        if args.command == "sweep":
            if not args.snr_list:
                raise _UsageError("sweep needs --snr-list")
            try:
                snrs = [float(v) for v in args.snr_list.split(",") if v.strip()]
            except ValueError as exc:
                raise _UsageError(f"bad --snr-list: {exc}") from exc
            if not snrs or not all(s > 0 for s in snrs):
                raise _UsageError("--snr-list values must be positive")
            return cmd_sweep(config, snrs, out_dir, out)
        if args.steps < 10**4:
            raise _UsageError("--steps must be at least 10000")
        path = Path(args.result) if args.result else out_dir / "result.json"
        try:
            doc = ResultDocument.from_json(path.read_text(encoding="utf-8"))
        except (OSError, ValueError, TypeError) as exc:
            raise _UsageError(f"cannot read result document {path}: {exc}") from exc
        return cmd_simulate(config, doc, args.steps, args.seed, out)
    except SystemExit as exc:
        return int(exc.code or 0)
    except (_UsageError, ConfigError) as exc:
        print(f"snrctl: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SnrCtlError as exc:
        print(f"snrctl: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
