"""Command-line interface: ``semimix {simulate,test,scan,adjust}``.

Failures print a single line ``error: <kind>: <message>`` on stderr and
exit with status 1.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__, simgen
from .distributions import Family, FamilySpec, ParamSet
from .em import Dataset, EmConfig
from .errors import InputError, SemimixError
from .io import (
    adjust_covariates,
    config_digest,
    read_genotypes,
    read_table,
    read_traits,
    write_table,
    write_traits,
)
from .mixtest import Method, TestConfig, mixture_test
from .scan import Adjustment, Binarization, CapMode, ScanConfig, scan

ALPHA_GRID = tuple(round(0.01 * k, 2) for k in range(1, 11))


def _meta(args, config: dict) -> dict:
    meta = {"tool": f"semimix {__version__}", "command": args.command}
    if hasattr(args, "seed"):
        meta["seed"] = args.seed
    meta["config"] = config_digest(config)
    return meta


def _family(args) -> FamilySpec:
    kind = Family(args.family)
    if kind is Family.GAUSSIAN:
        if args.phi is not None or args.pi is not None:
            raise InputError("--phi and --pi apply to count families only")
        return FamilySpec.gaussian()
    if kind is Family.NEGBIN:
        if args.pi is not None:
            raise InputError("--pi applies to the zinb family only")
        return FamilySpec.negbin(args.phi)
    return FamilySpec.zinb(args.phi, args.pi)


def _test_config(args) -> TestConfig:
    return TestConfig(
        b_max=args.b_max, batch=min(args.batch, args.b_max), exceedance_cap=args.cap,
        method=Method(args.method), seed=args.seed, em=EmConfig(restarts=args.restarts),
    )


def _add_test_flags(p, b_max, batch):
    p.add_argument("--family", choices=[f.value for f in Family], default="gaussian")
    p.add_argument("--method", choices=[m.value for m in Method], default="perm")
    p.add_argument("--b-max", type=int, default=b_max)
    p.add_argument("--batch", type=int, default=batch)
    p.add_argument("--cap", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--restarts", type=int, default=4)
    p.add_argument("--phi", type=float, default=None)
    p.add_argument("--pi", type=float, default=None)


def _theta_columns(res) -> dict:
    fit = res.fit
    return {
        "tau_hat": fit.tau, "mu_a": fit.theta_a.mean, "var_a": fit.theta_a.variance,
        "mu_b": fit.theta_b.mean, "var_b": fit.theta_b.variance,
        "dispersion": res.family.dispersion, "zero_inflation": res.family.zero_inflation,
    }


def cmd_test(args) -> None:
    df = read_table(args.data)
    for col in ("y", "x"):
        if col not in df:
            raise InputError(f"{args.data}: missing column {col!r}")
    x = df["x"].to_numpy()
    if not np.all(np.isin(x, (0, 1))):
        raise InputError("x must be 0 (labelled) or 1 (unlabelled)")
    offsets = df["offset"].to_numpy(float) if "offset" in df else None
    data = Dataset(df["y"].to_numpy(float), x.astype(bool), offsets)
    cfg = _test_config(args)
    res = mixture_test(data, _family(args), cfg)
    config = {"cfg": asdict(cfg), "family": args.family, "phi": args.phi, "pi": args.pi}
    meta = _meta(args, config)
    row = {"stat": res.stat, "exceedances": res.exceedances, "b_done": res.b_done, "pvalue": res.pvalue,
           "status": res.status.value, **_theta_columns(res), "loglik": res.fit.loglik, "loglik0": res.loglik0}
    out = Path(args.out)
    write_table(out / "results.tsv", pd.DataFrame([row]), meta)
    members = df[["y", "x"]].copy()
    members["membership_b"] = res.fit.memberships_b
    write_table(out / "memberships.tsv", members, meta)
    print(f"stat={res.stat:.6g} pvalue={res.pvalue:.6g} status={res.status.value}")


def _scan_config(args) -> ScanConfig:
    return ScanConfig(
        binarization=Binarization(args.binarize), min_group=args.min_group, maf_min=args.maf_min,
        drop_missing=not args.keep_missing, alpha=args.alpha, adjustment=Adjustment(args.adjust),
        test=_test_config(args), workers=args.workers, seed_base=args.seed,
        cap_mode=CapMode(args.cap_mode), auto_b_max=args.auto_b_max,
    )


def _violin(res, traits, gm, top: int) -> pd.DataFrame:
    table = res.table.dropna(subset=["pvalue"]).sort_values("pvalue", kind="stable").head(top)
    frames = []
    for locus_id in table["id"]:
        b = res.memberships.loc[locus_id].to_numpy()
        row = gm.loci.index[gm.loci["id"] == locus_id][0]
        x = pd.array(gm.calls[row], dtype="Float64").astype("Int64")
        frames.append(pd.DataFrame({
            "locus": locus_id, "individual": gm.individuals, "genotype": x, "trait": traits, "membership_b": b,
        }))
    cols = ["locus", "individual", "genotype", "trait", "membership_b"]
    return pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=cols)


def cmd_scan(args) -> None:
    gm = read_genotypes(args.genotypes)
    covs = [c for c in (args.covariates or "").split(",") if c]
    traits, _ = read_traits(args.traits, args.trait_column, covs)
    shared = [i for i in gm.individuals if i in set(traits.ids)]
    if len(shared) < 4:
        raise InputError("fewer than 4 individuals shared by the trait and genotype files")
    traits = traits.subset(shared)
    cols = [gm.individuals.index(i) for i in shared]
    gm = type(gm)(gm.loci, gm.calls[:, cols], shared)
    y = adjust_covariates(traits, covs, args.log) if (covs or args.log) else traits.trait
    cfg = _scan_config(args)
    family = _family(args)
    res = scan(y, gm, family, cfg, traits.offset)
    config = {"cfg": asdict(replace(cfg, workers=1)), "family": args.family, "phi": args.phi, "pi": args.pi,
              "covariates": covs, "log": args.log}
    meta = _meta(args, config)
    out = Path(args.out)
    write_table(out / "results.tsv", res.table, meta)
    write_table(out / "memberships.tsv", res.memberships.rename_axis("id").reset_index(), meta)
    write_table(out / "excluded.tsv", res.excluded, meta)
    manhattan = res.table[["id", "chrom", "pos"]].copy()
    manhattan["neg_log10_p"] = -np.log10(res.table["pvalue"].astype(float))
    write_table(out / "manhattan.tsv", manhattan, meta)
    write_table(out / "violin.tsv", _violin(res, y, gm, args.violin_top), meta)
    n_stop = int((res.table["status"] == "early_stopped").sum())
    print(f"tested={len(res.table)} excluded={len(res.excluded)} early_stopped={n_stop}")


def cmd_adjust(args) -> None:
    covs = [c for c in (args.covariates or "").split(",") if c]
    traits, dropped = read_traits(args.traits, args.trait_column, covs)
    resid = adjust_covariates(traits, covs, args.log)
    adjusted = replace(traits, trait=resid)
    meta = _meta(args, {"covariates": covs, "log": args.log, "trait": args.trait_column})
    meta["dropped_missing"] = len(dropped)
    write_traits(args.out, adjusted, args.trait_column, meta)


def _spec_from_json(d: dict) -> simgen.DgpSpec:
    kind = Family(d.get("family", "gaussian"))
    if kind is Family.GAUSSIAN:
        fam = FamilySpec.gaussian()
    elif kind is Family.NEGBIN:
        fam = FamilySpec.negbin(d["dispersion"])
    else:
        fam = FamilySpec.zinb(d["dispersion"], d["zero_inflation"])
    return simgen.DgpSpec(
        n=d["n"], d=d["d"], u=d["u"], theta_a=ParamSet(*d.get("theta_a", (0.0, 1.0))),
        theta_b=ParamSet(*d.get("theta_b", (0.0, 1.0))), family=fam, t_df=d.get("t_df"),
    )


def cmd_simulate(args) -> None:
    if (args.preset is None) == (args.spec is None):
        raise InputError("give exactly one of --preset and --spec")
    if args.preset is not None:
        if args.preset not in simgen.PRESETS:
            raise InputError(f"unknown preset {args.preset!r}; choose from {', '.join(simgen.PRESETS)}")
        design, opts = simgen.PRESETS[args.preset]
        opts = dict(opts)
    else:
        with open(args.spec, encoding="utf-8") as fh:
            try:
                raw = json.load(fh)
            except json.JSONDecodeError as exc:
                raise InputError(f"{args.spec}: {exc}") from None
        design = raw.get("design", args.design)
        opts = {k: v for k, v in raw.items() if k != "design"}
        for key in ("spec", "base"):
            if key in opts:
                opts[key] = _spec_from_json(opts[key])
    if args.design is not None and args.design != design:
        raise InputError(f"--design {args.design} does not match the {design!r} design of the input")
    test_cfg = simgen.sim_test_config(args.permutations, EmConfig(restarts=args.restarts))
    if design == "curve":
        rows, _ = simgen.power_curve(opts["spec"], opts["tests"], args.reps, ALPHA_GRID, args.seed,
                                     test_cfg=test_cfg, workers=args.workers)
    elif design == "grid":
        cells = opts.get("cells") or simgen.default_grid_cells()
        rows = simgen.power_grid(opts["base"], cells, opts["comparator"], args.reps, 0.05, args.seed,
                                 test_cfg=test_cfg, workers=args.workers)
    elif design == "fpr":
        rows = simgen.fpr_study(opts["study"], opts.get("params"), args.reps, 0.05, args.seed,
                                test_cfg=test_cfg, workers=args.workers)
    else:
        raise InputError(f"unknown design {design!r}")
    config = {"design": design, "preset": args.preset, "spec": args.spec, "reps": args.reps,
              "permutations": args.permutations, "restarts": args.restarts}
    table = pd.DataFrame(rows)
    if args.out:
        write_table(args.out, table, _meta(args, config))
    else:
        sys.stdout.write(table.to_csv(sep="\t", index=False, lineterminator="\n"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="semimix", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"semimix {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("test", help="mixture test on one dataset (columns y, x[, offset])")
    p.add_argument("data")
    p.add_argument("--out", default=".")
    _add_test_flags(p, b_max=10_000, batch=1000)
    p.set_defaults(func=cmd_test)

    p = sub.add_parser("scan", help="mixture test of every locus in a genotype file")
    p.add_argument("--traits", required=True)
    p.add_argument("--genotypes", required=True)
    p.add_argument("--out", default=".")
    p.add_argument("--trait-column", default="trait")
    p.add_argument("--covariates", default="")
    p.add_argument("--log", action="store_true", help="log-transform the trait before adjustment")
    _add_test_flags(p, b_max=1_000_000, batch=1000)
    p.add_argument("--binarize", choices=[b.value for b in Binarization], default="zero-vs-rest")
    p.add_argument("--min-group", type=int, default=50)
    p.add_argument("--maf-min", type=float, default=0.0)
    p.add_argument("--keep-missing", action="store_true", help="report loci with missing calls as failed")
    p.add_argument("--adjust", choices=[a.value for a in Adjustment], default="bonferroni")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--cap-mode", choices=[c.value for c in CapMode], default="fixed")
    p.add_argument("--auto-b-max", action="store_true", help="raise b_max to the adjusted-threshold minimum")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--violin-top", type=int, default=3)
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("adjust", help="residualise a trait on covariates")
    p.add_argument("--traits", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--trait-column", default="trait")
    p.add_argument("--covariates", default="")
    p.add_argument("--log", action="store_true")
    p.set_defaults(func=cmd_adjust)

    p = sub.add_parser("simulate", help="power and false-positive-rate studies")
    p.add_argument("--design", choices=["grid", "curve", "fpr"], default=None)
    p.add_argument("--preset", default=None)
    p.add_argument("--spec", default=None, help="JSON design file")
    p.add_argument("--reps", type=int, default=1000)
    p.add_argument("--permutations", type=int, default=simgen.DEFAULT_PERMUTATIONS)
    p.add_argument("--restarts", type=int, default=simgen.SIM_RESTARTS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except SemimixError as exc:
        print(f"error: {exc.kind}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: io: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
