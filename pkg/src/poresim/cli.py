"""Command line entry point: ``poresim <subcommand>``.

Exit codes: 0 success, 2 configuration or input error, 3 numerical failure.
``PORESIM_LOG_LEVEL`` sets the log level, ``PORESIM_THREADS`` the number of
worker threads used by calibration.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import calibration as cal
from .biology import DIFFUSION_PRESETS, HOURS_PER_DAY, SECONDS_PER_DAY, SPECIES
from .drainage import drain_to_saturation
from .errors import ConfigError, NumericalError, PoresimError
from .network import DEFAULT_CONTACT_FACTOR, load_network, save_network
from .placement import place_dom_slab
from .scenario import PRESETS, Scenario, load_scenario, read_state_csv, run_scenario
from .synthetic import KINDS, generate_synthetic_network
from .validation import check_network

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _dc(value: str) -> float:
    return DIFFUSION_PRESETS[value] if value in DIFFUSION_PRESETS else float(value)


def _add_network(p, required=True):
    p.add_argument("--network", required=required, help="ball network text file")
    p.add_argument("--alpha", type=float, default=DEFAULT_CONTACT_FACTOR,
                   help="contact-area factor for arcs without an explicit area")


def cmd_simulate(args) -> int:
    if args.config:
        scn = load_scenario(args.config)
        doc = {}
    else:
        if not args.network:
            raise ConfigError("simulate needs --config or --network")
        doc = {"preset": args.preset}
        scn = None
    over = {
        "network": args.network, "scheme": args.scheme, "coupling": args.coupling,
        "dt_diffusion_s": args.dt_diff, "dt_transform_s": args.dt_bio, "p_neg": args.p_neg,
        "cg_tol": args.cg_tol, "cg_max_iter": args.cg_max_iter, "saturation": args.saturation,
        "seed": args.seed, "sample_every_hours": args.sample_hours, "contact_factor": args.alpha,
        "t_end_hours": args.hours,
    }
    over = {k: v for k, v in over.items() if v is not None}
    if args.dc is not None:
        over["bio"] = {"d_c": _dc(args.dc)}
    if args.spots is not None:
        base = (scn.mb if scn is not None else PRESETS[args.preset].get("mb")) or {}
        if base.get("kind") != "spots":
            raise ConfigError("--spots needs a scenario whose biomass placement is 'spots'")
        over["mb"] = {**base, "count": args.spots}
    if scn is None:
        doc.update(over)
        doc["output"] = {"trajectory_csv": args.out, "final_state_csv": args.state_out}
        scn = Scenario.from_dict(doc, base_dir=Path.cwd())
    else:
        for k, v in over.items():
            if k == "t_end_hours":
                scn.t_end_days = v / HOURS_PER_DAY
            elif k == "bio":
                scn.bio = scn.bio.replace(**v)
            elif k == "network":
                scn.network = str(Path(v).resolve())
            else:
                setattr(scn, k, v)
        if args.out:
            scn.output["trajectory_csv"] = str(Path(args.out).resolve())
        if args.state_out:
            scn.output["final_state_csv"] = str(Path(args.state_out).resolve())
        scn.validate()
    res = run_scenario(scn)
    if not scn.output.get("trajectory_csv"):
        res.write_csv(sys.stdout)
    last = res.records[-1]
    print(f"# t={last.time_h:.6g} h steps={res.steps} backtracks={res.backtracks} "
          f"max_drift={res.max_drift:.2e}", file=sys.stderr)
    print("# final % of initial carbon: " + " ".join(
        f"{s}={p:.4f}" for s, p in zip(SPECIES, last.percent)), file=sys.stderr)
    return EXIT_OK


def cmd_drain(args) -> int:
    net = load_network(args.network, contact_factor=args.alpha)
    res = drain_to_saturation(net, args.saturation)
    ids = net.external_ids[res.water_mask]
    text = "\n".join(str(int(i)) for i in ids) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    print(f"threshold={res.threshold!r} achieved_saturation={res.achieved_saturation:.6f} "
          f"water_balls={res.n_water}/{net.n_nodes}", file=sys.stderr)
    return EXIT_OK


def cmd_calibrate(args) -> int:
    net = load_network(args.network)
    ref = cal.read_profile(args.reference)
    water = drain_to_saturation(net, args.saturation).water_mask
    dom0 = place_dom_slab(net, water, args.mass, 0.0, args.z_max)
    grid = cal.alpha_grid(args.alpha_min, args.alpha_max, args.alpha_step)
    fit = cal.fit_alpha(net, dom0, ref, _dc(args.dc), args.hours / HOURS_PER_DAY, grid, water,
                        dt=args.dt_diff / SECONDS_PER_DAY, binning=args.binning,
                        workers=int(os.environ.get("PORESIM_THREADS", "1")))
    for a, c in fit.table:
        print(f"alpha={a:.4f} cosine={c:.8f}")
    print(f"best alpha={fit.alpha:.4f} cosine={fit.cosine:.8f}")
    return EXIT_OK


def cmd_profile(args) -> int:
    net = load_network(args.network, contact_factor=args.alpha)
    state = read_state_csv(net, args.state)
    prof = cal.plane_profile(net, state[:, SPECIES.index(args.species)], args.planes,
                             args.thickness, args.binning)
    if args.out:
        cal.write_profile(prof, args.out)
    else:
        for v in prof.values:
            print(f"{v:.17e}")
    print(f"dropped={prof.dropped:.6e}", file=sys.stderr)
    return EXIT_OK


def cmd_gen_net(args) -> int:
    kw = {}
    if args.kind == "random_tangent":
        kw = {"r_min": args.r_min, "r_max": args.r_max}
    elif args.radius is not None:
        kw = {"radius": args.radius}
    size = args.size
    if args.kind == "grid3d":
        size = tuple(int(s) for s in size.lower().split("x")) if "x" in size.lower() else int(size)
    net = generate_synthetic_network(args.kind, size, seed=args.seed,
                                     contact_factor=args.alpha, **kw)
    save_network(net, args.out)
    print(f"wrote {args.out}: {net.n_nodes} balls, {net.n_arcs} arcs", file=sys.stderr)
    return EXIT_OK


def cmd_validate(args) -> int:
    net = load_network(args.network, contact_factor=args.alpha)
    checks = check_network(net, _dc(args.dc), args.dt_diff)
    for c in checks:
        print(c.line())
    return EXIT_OK if all(c.ok for c in checks) else EXIT_NUMERIC


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="poresim", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run a transformation-diffusion scenario")
    p.add_argument("--config", help="scenario JSON file")
    p.add_argument("--preset", default="paper-2021", choices=sorted(PRESETS))
    _add_network(p, required=False)
    p.set_defaults(alpha=None)
    p.add_argument("--scheme", choices=("explicit", "implicit"))
    p.add_argument("--coupling", choices=("sync", "async"))
    p.add_argument("--dt-diff", type=float, help="diffusion time step (s)")
    p.add_argument("--dt-bio", type=float, help="transformation time step (s)")
    p.add_argument("--p-neg", type=float)
    p.add_argument("--cg-tol", type=float)
    p.add_argument("--cg-max-iter", type=int)
    p.add_argument("--dc", help="diffusion coefficient (voxel^2/day) or preset name")
    p.add_argument("--saturation", type=float)
    p.add_argument("--hours", type=float, help="simulated duration")
    p.add_argument("--sample-hours", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--spots", type=int, help="number of biomass spots")
    p.add_argument("--out", help="trajectory CSV (default: stdout)")
    p.add_argument("--state-out", help="final per-ball state CSV")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("drain", help="water-fill balls by radius threshold")
    _add_network(p)
    p.add_argument("--saturation", type=float, required=True)
    p.add_argument("--out", help="file for the water-filled ball ids")
    p.set_defaults(func=cmd_drain)

    p = sub.add_parser("calibrate", help="fit the contact-area factor to a reference profile")
    p.add_argument("--network", required=True)
    p.add_argument("--reference", required=True, help="one mass per line, line = plane")
    p.add_argument("--alpha-min", type=float, default=0.55)
    p.add_argument("--alpha-max", type=float, default=1.0)
    p.add_argument("--alpha-step", type=float, default=0.05)
    p.add_argument("--dc", default="calibrated")
    p.add_argument("--hours", type=float, default=1.783)
    p.add_argument("--mass", type=float, default=592.7593, help="mass placed on the first planes")
    p.add_argument("--z-max", type=float, default=2.0, help="mass goes to balls crossing [0, z_max)")
    p.add_argument("--saturation", type=float, default=1.0)
    p.add_argument("--dt-diff", type=float, default=10.0)
    p.add_argument("--binning", choices=("center", "overlap"), default="center")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("profile", help="plane-wise mass profile of a state file")
    _add_network(p)
    p.add_argument("--state", required=True, help="per-ball state CSV from simulate")
    p.add_argument("--species", choices=SPECIES, default="dom")
    p.add_argument("--planes", type=int, default=cal.DEFAULT_PLANES)
    p.add_argument("--thickness", type=float, default=1.0)
    p.add_argument("--binning", choices=("center", "overlap"), default="center")
    p.add_argument("--out")
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("gen-net", help="write a synthetic tangent-ball network")
    p.add_argument("--kind", choices=KINDS, required=True)
    p.add_argument("--size", required=True, help="ball count, or NxMxK for grid3d")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--radius", type=float)
    p.add_argument("--r-min", type=float, default=1.0)
    p.add_argument("--r-max", type=float, default=3.0)
    p.add_argument("--alpha", type=float, default=DEFAULT_CONTACT_FACTOR)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_net)

    p = sub.add_parser("validate", help="run invariant checks on a network file")
    _add_network(p)
    p.add_argument("--dc", default="calibrated")
    p.add_argument("--dt-diff", type=float, default=10.0)
    p.set_defaults(func=cmd_validate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = "DEBUG" if args.verbose else os.environ.get("PORESIM_LOG_LEVEL", "WARNING")
    logging.basicConfig(level=level.upper(), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (PoresimError, OSError, json.JSONDecodeError, KeyError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
