"""Command-line front end.

Each subcommand resolves its parameters (built-in defaults, then an optional
JSON ``--config`` file, then explicit flags), calls the library, and writes
CSV/JSON outputs plus the resolved config into ``--out``.
"""

from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

import numpy as np

from . import io, rdp
from .errors import HybridDPError, UnsupportedError, ValidationError
from .noise import NoiseProfile, optimize_noise_twice_hybrid
from .rdp import MechanismSpec, SamplingPlan
from .sampler import hybrid_pipeline
from .sensitivity import Hybrid, Hypercube, L2Ball, LpLinfMix, SubspaceClip, spec_from_dict
from .subspace import OrthoBasis, generate_basis, subspace_stats

# ------------------------------------------------------------- resolution

_NOT_CONFIG = {"command", "handler", "config"}


def _csv_list(kind):
    def parse(text: str):
        text = text.strip()
        return [kind(t) for t in text.split(",") if t.strip()] if text else []

    return parse


def resolve(args: argparse.Namespace, defaults: dict) -> dict:
    """defaults < config file < explicit flags."""
    cfg = dict(defaults)
    if getattr(args, "config", None):
        loaded = io.read_json(args.config)
        if not isinstance(loaded, dict):
            raise ValidationError(f"{args.config}: config must be a JSON object")
        cfg.update(loaded)
    for key, value in vars(args).items():
        if key not in _NOT_CONFIG and value is not None:
            cfg[key] = value
    return cfg


def _out_dir(cfg: dict) -> Path:
    out = Path(cfg.get("out") or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _alphas(cfg: dict) -> list[int]:
    if cfg.get("alphas"):
        return [int(a) for a in cfg["alphas"]]
    if cfg.get("alpha_max"):
        return list(range(2, int(cfg["alpha_max"]) + 1))
    return rdp.default_alphas()


def _sensitivity(cfg: dict):
    if cfg.get("c2") is not None and cfg.get("cp") is None:
        return L2Ball(float(cfg["c2"]), cfg.get("d"))
    if cfg.get("cp") is not None:
        p = float(cfg.get("p") or 2.0)
        cinf = float(cfg["cinf"]) if cfg.get("cinf") is not None else float(cfg["cp"])
        return LpLinfMix(p, float(cfg["cp"]), cinf, cfg.get("d"))
    if cfg.get("sensitivity") is not None:
        return spec_from_dict(cfg["sensitivity"])
    raise ValidationError("no sensitivity given: use --c2, --cp/--cinf, or a 'sensitivity' object")


def mechanism_from_config(cfg: dict) -> MechanismSpec:
    """Build a mechanism from a nested 'mechanism' object overlaid with flat keys."""
    base = dict(cfg.get("mechanism") or {})
    flat = {k: cfg[k] for k in ("mode", "sigma", "c2", "p", "cp", "cinf", "d", "sensitivity") if cfg.get(k) is not None}
    if any(k in flat for k in ("c2", "cp", "sensitivity")) or "sensitivity" not in base:
        sens = _sensitivity({**({"sensitivity": base.get("sensitivity")}), **flat})
    else:
        sens = spec_from_dict(base["sensitivity"])
    plan = dict(base.get("plan") or {})
    if cfg.get("q") is not None:
        plan = {"q1": float(cfg["q"]), "q2": 1.0}
    for k in ("q1", "q2"):
        if cfg.get(k) is not None:
            plan[k] = float(cfg[k])
    mode = flat.get("mode", base.get("mode", "pure"))
    sigma = flat.get("sigma", base.get("sigma", 1.0))
    return MechanismSpec(mode, sens, tuple(sigma) if isinstance(sigma, list) else sigma, SamplingPlan(**plan))


# ---------------------------------------------------------------- epsilon


def cmd_epsilon(cfg: dict) -> dict:
    mech = mechanism_from_config(cfg)
    T, delta = int(cfg["T"]), float(cfg["delta"])
    curve = mech.rdp_curve(_alphas(cfg))
    eps, alpha_star = rdp.compose_and_convert(curve, T, delta)
    out = _out_dir(cfg)
    curve.to_csv(out / "rdp_curve.csv")
    report = {"eps": eps, "alpha_star": alpha_star, "T": T, "delta": delta, "mechanism": mech.to_dict()}
    io.write_json(out / "epsilon.json", report)
    print(f"eps={eps!r} alpha*={alpha_star}")
    return report


# ---------------------------------------------------------- amplify-curve


def amplify_rows(sigmas, q: float, q2: float, c2: float, d0s, alphas) -> list[tuple]:
    """(sigma, mechanism, d0, alpha, log_eps) rows for input-wise, coordinate-wise and twice sampling."""
    if not sigmas:
        raise ValidationError("sigma grid is empty")
    if not 0 < q2 <= 1 or q / q2 > 1:
        raise ValidationError(f"need 0 < q2 <= 1 and q/q2 <= 1, got q={q}, q2={q2}")
    rows = []
    for d0 in d0s:
        sens = LpLinfMix(2.0, c2, c2 / math.sqrt(d0))
        for s in sigmas:
            mechs = {
                "input": MechanismSpec("input", L2Ball(c2), s, SamplingPlan(q, 1.0)),
                "coordinate": MechanismSpec("coordinate", sens, s, SamplingPlan(1.0, q)),
                "twice": MechanismSpec("twice", sens, s, SamplingPlan(q / q2, q2)),
            }
            for name, mech in mechs.items():
                for a, e in zip(alphas, rdp.mechanism_curve(mech, alphas)):
                    rows.append((float(s), name, int(d0), int(a), math.log(e) if e > 0 else -math.inf))
    return rows


def cmd_amplify_curve(cfg: dict) -> list[tuple]:
    if cfg.get("sigmas"):
        sigmas = [float(s) for s in cfg["sigmas"]]
    else:
        sigmas = np.geomspace(float(cfg["sigma_min"]), float(cfg["sigma_max"]), int(cfg["sigma_num"])).tolist()
    alphas = sorted(int(a) for a in cfg["alphas"])
    rows = amplify_rows(sigmas, float(cfg["q"]), float(cfg["q2"]), float(cfg["c2"]), cfg["d0s"], alphas)
    path = io.write_rows_csv(_out_dir(cfg) / "amplify_curve.csv", ["sigma", "mechanism", "d0", "alpha", "log_eps"], rows)
    print(f"wrote {len(rows)} rows to {path}")
    return rows


# -------------------------------------------------------- compare-variance

PRESETS = {
    "twice-vs-input": [
        {"mode": "twice", "sensitivity": {"variant": "lp_linf", "p": 2, "cp": 1.0, "cinf": 0.1}, "sigma": 1.0, "plan": {"q1": 0.02, "q2": 0.5}},
        {"mode": "input", "sensitivity": {"variant": "l2_ball", "c2": 1.0}, "sigma": 1.0, "plan": {"q1": 0.01, "q2": 1.0}},
    ],
    "hybrid": [
        {"mode": "pure", "sensitivity": {"variant": "l2_ball", "c2": math.sqrt(7.25), "d": 291898}, "sigma": 1.0},
        {
            "mode": "pure",
            "sensitivity": {"variant": "hybrid", "blocks": [{"rank": 1000, "c2": 2.5}, {"rank": 290898, "c2": 1.0}]},
            "sigma": "optimal",
        },
    ],
}


def total_variance(mech: MechanismSpec) -> tuple[float, int | None]:
    """Sum of per-coordinate noise variances and the dimension used (None: per coordinate)."""
    spec, sig = mech.sensitivity, mech.sigma
    if isinstance(spec, Hybrid):
        sig = sig if isinstance(sig, tuple) else (sig,) * len(spec.blocks)
        return float(sum(r * s * s for r, s in zip(spec.ranks, sig))), spec.d
    if isinstance(spec, Hypercube):
        sig = sig if isinstance(sig, tuple) else (sig,) * spec.d
        return float(sum(s * s for s in sig)), spec.d
    d = getattr(spec, "d", None)
    return float((d or 1) * sig * sig), d


def _twice_blocks(spec: Hybrid) -> list[tuple[int, float, int]]:
    out = []
    for b in spec.blocks:
        d0, c_rem, _ = b.dominating()
        if c_rem > 0:
            raise UnsupportedError("noise optimization needs blocks with c2 = cinf * sqrt(d0)")
        out.append((b.rank, b.c2, d0))
    return out


def calibrate_entry(entry: dict, T: int, delta: float, eps: float, alphas) -> dict:
    """Calibrate one mechanism entry; sigma 'optimal' selects the variance-optimal shape."""
    entry = dict(entry)
    optimal = entry.get("sigma") == "optimal"
    if optimal:
        entry["sigma"] = 1.0
    mech = MechanismSpec.from_dict(entry)
    spec = mech.sensitivity
    extra = {}
    if optimal and isinstance(spec, Hybrid) and mech.mode == "twice":
        res = optimize_noise_twice_hybrid(mech.plan.q1, mech.plan.q2, _twice_blocks(spec), T, delta, eps, alphas)
        mech = MechanismSpec("twice", spec, tuple(res.sigmas), mech.plan)
        extra["optimizer"] = res.to_dict()
    else:
        if optimal and isinstance(spec, Hybrid):
            r = np.array(spec.ranks, dtype=float)
            c = np.array([b.c2 for b in spec.blocks])
            S = float(np.sum(c * np.sqrt(r)))
            mech = MechanismSpec(mech.mode, spec, tuple(np.sqrt(c * S / np.sqrt(r))), mech.plan)
        elif optimal and isinstance(spec, Hypercube):
            V = np.asarray(spec.V)
            mech = MechanismSpec(mech.mode, spec, tuple(np.sqrt(V * V.sum())), mech.plan)
        mech = mech.scaled(rdp.calibrate_scale(mech, T, delta, eps, alphas))
    achieved, alpha_star = rdp.converted_epsilon(mech, T, delta, alphas)
    var, d = total_variance(mech)
    return {
        "mechanism": mech.to_dict(),
        "total_variance": var,
        "d": d,
        "achieved_eps": achieved,
        "alpha_star": alpha_star,
        **extra,
    }


def cmd_compare_variance(cfg: dict) -> dict:
    entries = cfg.get("mechanisms") or PRESETS.get(cfg.get("preset") or "", None)
    if not entries or len(entries) != 2:
        raise ValidationError("compare-variance needs exactly two 'mechanisms' or a --preset")
    T, delta, eps = int(cfg["T"]), float(cfg["delta"]), float(cfg["eps"])
    alphas = _alphas(cfg)
    results = [calibrate_entry(e, T, delta, eps, alphas) for e in entries]
    ratio = results[0]["total_variance"] / results[1]["total_variance"]
    report = {"eps": eps, "delta": delta, "T": T, "ratio": ratio, "mechanisms": results}
    io.write_json(_out_dir(cfg) / "compare_variance.json", report)
    print(f"variance ratio (first / second) = {ratio!r}")
    return report


# ------------------------------------------------------------------ basis


def cmd_basis(cfg: dict) -> OrthoBasis:
    if not cfg.get("input"):
        raise ValidationError("basis needs an input CSV")
    samples = io.read_matrix_csv(cfg["input"])
    seed = int(cfg["seed"]) if cfg.get("seed") is not None else 0
    basis = generate_basis(samples, cfg.get("ranks") or [], int(cfg["t"]), np.random.default_rng(seed))
    out = _out_dir(cfg)
    basis.save(out / "basis.csv")
    io.write_json(out / "basis_stats.json", subspace_stats(samples, basis))
    print(f"basis d={basis.d} blocks={list(basis.block_ranks)} written to {out}")
    return basis


# --------------------------------------------------------------- simulate


def _blocks(cfg: dict) -> list[SubspaceClip]:
    raw = cfg.get("blocks")
    if not raw:
        raise ValidationError("simulate needs 'blocks': a list of {rank, c2[, cinf | d0]}")
    return [SubspaceClip(**b) for b in raw]


def cmd_simulate(cfg: dict):
    if not cfg.get("input"):
        raise ValidationError("simulate needs an input CSV")
    raw = io.read_matrix_csv(cfg["input"])
    blocks = _blocks(cfg)
    ranks = tuple(b.rank for b in blocks)
    basis = OrthoBasis.load(cfg["basis"]) if cfg.get("basis") else OrthoBasis.identity(raw.shape[1], ranks)
    q1, q2 = float(cfg["q1"]), float(cfg["q2"])
    T, delta = int(cfg["T"]), float(cfg["delta"])
    alphas = _alphas(cfg)
    spec = Hybrid(tuple(blocks))
    sigma = cfg.get("sigma")
    if sigma is None or sigma == "optimal":
        if cfg.get("eps") is None:
            raise ValidationError("simulate needs either sigma or a target eps to calibrate to")
        entry = {"mode": "twice", "sensitivity": {"variant": "hybrid", "blocks": cfg["blocks"]}, "sigma": sigma or 1.0, "plan": {"q1": q1, "q2": q2}}
        sigma = calibrate_entry(entry, T, delta, float(cfg["eps"]), alphas)["mechanism"]["sigma"]
    sig = np.broadcast_to(np.asarray(sigma, dtype=float), (len(blocks),))
    profile = NoiseProfile(sig.copy(), ranks)
    seed = int(cfg["seed"]) if cfg.get("seed") is not None else None
    release = hybrid_pipeline(raw, basis, blocks, q1, q2, profile, seed)
    eps, alpha_star = release.epsilon(T, delta, alphas)
    release.extra.update({"T": T, "delta": delta, "eps": eps, "alpha_star": alpha_star})
    out = _out_dir(cfg)
    release.save(out / "release.csv")
    cfg["seed"] = release.seed
    cfg["sigma"] = sig.tolist()
    print(f"release written to {out / 'release.csv'}; eps={eps!r} alpha*={alpha_star}")
    return release


# ----------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hybriddp", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with parameters; flags override it")
    common.add_argument("--out", help="output directory (default: current)")
    common.add_argument("--seed", type=int, help="RNG seed")
    common.add_argument("--alphas", type=_csv_list(int), help="comma-separated Renyi orders")
    common.add_argument("--alpha-max", type=int, help="use orders 2..N (default from HYBRIDDP_ALPHA_MAX or 256)")
    sub = parser.add_subparsers(dest="command", required=True)

    def mech_flags(p):
        p.add_argument("--mode", choices=rdp.MODES)
        p.add_argument("--sigma", type=float)
        p.add_argument("--q", type=float, help="single sampling rate (sets q1=q, q2=1)")
        p.add_argument("--q1", type=float)
        p.add_argument("--q2", type=float)
        p.add_argument("--c2", type=float, help="l2 clipping bound")
        p.add_argument("--p", type=float)
        p.add_argument("--cp", type=float, help="l_p clipping bound")
        p.add_argument("--cinf", type=float, help="l_inf clipping bound")
        p.add_argument("--d", type=int, help="dimension")

    def accounting_flags(p):
        p.add_argument("--T", type=int, help="number of compositions")
        p.add_argument("--delta", type=float)

    p = sub.add_parser("epsilon", parents=[common], help="(eps, delta) of a mechanism after T compositions")
    mech_flags(p)
    accounting_flags(p)
    p.set_defaults(handler=cmd_epsilon, defaults={"T": 1, "delta": 1e-5})

    p = sub.add_parser("amplify-curve", parents=[common], help="log eps(alpha) vs sigma for three sampling schemes")
    p.add_argument("--sigmas", type=_csv_list(float))
    p.add_argument("--sigma-min", type=float)
    p.add_argument("--sigma-max", type=float)
    p.add_argument("--sigma-num", type=int)
    p.add_argument("--q", type=float, help="marginal rate q = q1 q2")
    p.add_argument("--q2", type=float, help="coordinate rate inside twice sampling")
    p.add_argument("--c2", type=float)
    p.add_argument("--d0s", type=_csv_list(int))
    p.set_defaults(
        handler=cmd_amplify_curve,
        defaults={"q": 0.005, "q2": 0.5, "c2": 1.0, "d0s": [16, 64, 256], "alphas": [4, 8],
                  "sigma_min": 0.3, "sigma_max": 10.0, "sigma_num": 60},
    )

    p = sub.add_parser("compare-variance", parents=[common], help="calibrate two mechanisms and compare total noise variance")
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--eps", type=float)
    accounting_flags(p)
    p.set_defaults(handler=cmd_compare_variance, defaults={"eps": 8.0, "T": 5000, "delta": 1e-5})

    p = sub.add_parser("basis", parents=[common], help="principal-subspace basis from public samples")
    p.add_argument("input", nargs="?", help="CSV of samples, one per row")
    p.add_argument("--ranks", type=_csv_list(int), help="comma-separated block ranks")
    p.add_argument("--t", type=int, help="power iterations")
    p.set_defaults(handler=cmd_basis, defaults={"ranks": [], "t": 50})

    p = sub.add_parser("simulate", parents=[common], help="run the hybrid clipping + twice sampling pipeline once")
    p.add_argument("input", nargs="?", help="CSV of raw rows")
    p.add_argument("--basis", help="basis CSV written by the basis command")
    p.add_argument("--q1", type=float)
    p.add_argument("--q2", type=float)
    p.add_argument("--sigma", type=_csv_list(float), help="per-block sigmas (omit to calibrate to --eps)")
    p.add_argument("--eps", type=float)
    accounting_flags(p)
    p.set_defaults(handler=cmd_simulate, defaults={"q1": 1.0, "q2": 1.0, "T": 1, "delta": 1e-5})
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handler, defaults = args.handler, args.defaults
    del args.handler, args.defaults
    try:
        cfg = resolve(args, defaults)
        cfg["command"] = args.command
        handler(cfg)
        io.write_json(_out_dir(cfg) / f"{args.command}_config.json", cfg)
    except HybridDPError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (ValueError, KeyError, TypeError) as exc:
        print(f"error: invalid parameters: {exc}", file=sys.stderr)
        return ValidationError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
