"""Single command-line entry point: ctx / auth / scan / bench subcommands.

Exit codes: 0 success, 1 domain error (validation, denial, cycle, failed
step), 2 usage error.  Machine-readable output goes to stdout as JSON,
diagnostics to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time

from phenocloud import bench as bench_mod
from phenocloud import identity as identity_mod
from phenocloud import scan as scan_mod
from phenocloud.catalog import parse_catalog
from phenocloud.contextualize import (
    Contextualizer,
    ImageRecord,
    MetadataSource,
    fetch_metadata,
    filter_ready_images,
)
from phenocloud.errors import PhenocloudError
from phenocloud.resolver import resolve

log = logging.getLogger("phenocloud")

CONFIG_ENV = "PHENO_CONFIG"
CONFIG_KEYS = (
    "catalog",
    "scripts_dir",
    "root",
    "identity_config",
    "principal_store",
    "signing_key",
    "verbosity",
)


def load_global_config() -> dict:
    path = os.environ.get(CONFIG_ENV)
    if not path:
        return {}
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    return {k: raw[k] for k in CONFIG_KEYS if k in raw}


def _setting(args, config, flag, key=None):
    value = getattr(args, flag, None)
    if value is not None:
        return value
    return config.get(key or flag)


def _read(path):
    with open(path, encoding="utf-8") as fh:
        return fh.read()


def _load_catalog(args, config):
    path = _setting(args, config, "catalog")
    if not path:
        raise PhenocloudError("no catalog given (flag --catalog or PHENO_CONFIG)")
    return parse_catalog(_read(path))


# --- ctx ---------------------------------------------------------------------


def cmd_ctx_plan(args, config):
    catalog = _load_catalog(args, config)
    request = fetch_metadata(MetadataSource("local-file", args.metadata))
    plan = resolve(catalog, request)
    print(json.dumps(
        {
            "steps": [
                {
                    "app": s.name,
                    "version": s.version_key,
                    "download_url": s.download_url,
                    "installer": s.effective["installer"],
                }
                for s in plan.steps
            ]
        },
        indent=2,
    ))
    return 0


def cmd_ctx_run(args, config):
    catalog = _load_catalog(args, config)
    request = fetch_metadata(MetadataSource("local-file", args.metadata))
    root = _setting(args, config, "root")
    scripts = _setting(args, config, "scripts", "scripts_dir") or "."
    if not root:
        raise PhenocloudError("no sandbox root given (flag --root or PHENO_CONFIG)")
    ctx = Contextualizer(catalog, scripts_dir=scripts, root=root)
    report = ctx.run(request, dry_run=args.dry_run)
    if args.pretty:
        for step in report.steps:
            status = "ok" if step.exit_status == 0 else (
                "planned" if report.dry_run else "FAILED")
            print(f"{step.app:<20} {step.version:<10} {step.download:<12} {status}")
        print("overall:", "success" if report.ok else f"failed-at({report.failed_at})")
    else:
        print(report.to_json())
    return 0 if report.ok else 1


def cmd_ctx_images(args, config):
    raw = json.loads(_read(args.registry))
    images = [
        ImageRecord(image_id=r["id"], properties=r.get("properties", {})) for r in raw
    ]
    ready = filter_ready_images(images)
    print(json.dumps([img.image_id for img in ready], indent=2))
    return 0


# --- auth --------------------------------------------------------------------


def _identity_parts(args, config):
    config_path = _setting(args, config, "config", "identity_config")
    store_path = _setting(args, config, "store", "principal_store")
    if not config_path:
        raise PhenocloudError("no mapping config given (--config or PHENO_CONFIG)")
    mapping = identity_mod.MappingConfig.from_json(_read(config_path))
    if store_path:
        store = identity_mod.JsonPrincipalStore(store_path)
    else:
        store = identity_mod.PrincipalStore()
    return mapping, store


def _emit_decision(outcome):
    if isinstance(outcome, identity_mod.Denial):
        print(f"denied ({outcome.reason}): {outcome.detail}", file=sys.stderr)
        return 1
    print(json.dumps(
        {"tenant": outcome.tenant, "username": outcome.username, "created": outcome.created}
    ))
    return 0


def cmd_auth_map_vo(args, config):
    mapping, store = _identity_parts(args, config)
    now = time.time() if args.now is None else args.now
    assertion = identity_mod.Assertion(
        subject_dn=args.dn,
        vo=args.vo,
        not_before=args.not_before if args.not_before is not None else 0.0,
        not_after=args.not_after if args.not_after is not None else float("inf"),
    )
    return _emit_decision(identity_mod.map_assertion(mapping, store, assertion, now))


def cmd_auth_map_user(args, config):
    mapping, store = _identity_parts(args, config)
    return _emit_decision(identity_mod.map_username(mapping, store, args.user))


def _signing_key(args, config) -> bytes:
    key = _setting(args, config, "key", "signing_key")
    if not key:
        raise PhenocloudError("no signing key given (--key or PHENO_CONFIG)")
    return key.encode("utf-8")


def cmd_auth_token_issue(args, config):
    key = _signing_key(args, config)
    now = time.time() if args.now is None else args.now
    token = identity_mod.issue_token(key, args.subject, args.tenant, args.lifetime, now)
    print(token.encode())
    return 0


def cmd_auth_token_verify(args, config):
    key = _signing_key(args, config)
    now = time.time() if args.now is None else args.now
    token, reason = identity_mod.verify_token(key, args.token, now)
    if token is None:
        print(f"invalid ({reason})", file=sys.stderr)
        return 1
    print(json.dumps(
        {
            "subject": token.subject,
            "tenant": token.tenant,
            "issued_at": token.issued_at,
            "expires_at": token.expires_at,
        }
    ))
    return 0


# --- scan --------------------------------------------------------------------


def _parse_range(text):
    lo, _, hi = text.partition(":")
    return float(lo), float(hi)


def cmd_scan_run(args, config):
    ma_min, ma_max = _parse_range(args.ma)
    tb_min, tb_max = _parse_range(args.tb)
    grid = scan_mod.ScanGrid(
        ma_min=ma_min, ma_max=ma_max, tb_min=tb_min, tb_max=tb_max,
        steps_per_axis=args.steps,
    )
    if args.kernel == "builtin":
        kernel, command = "builtin", None
    elif args.kernel.startswith("cmd:"):
        kernel, command = "command", args.kernel[4:]
    else:
        raise PhenocloudError(f"unknown kernel {args.kernel!r}")
    started = time.perf_counter()
    scan_mod.run_scan(
        grid,
        workers=args.workers,
        out=args.out,
        kernel=kernel,
        work_units=args.work_units,
        command=command,
        timeout_per_point=args.timeout_per_point,
    )
    print(json.dumps(
        {
            "out": args.out,
            "points": grid.n_points,
            "workers": args.workers,
            "wall_s": round(time.perf_counter() - started, 3),
        }
    ))
    return 0


# --- bench -------------------------------------------------------------------


def cmd_bench_run(args, config):
    workload = bench_mod.Workload.from_spec(args.workload)
    if args.work_units is not None and workload.command is None:
        workload = bench_mod.Workload(work_units=args.work_units)
    run = bench_mod.run_concurrent(workload, args.processes)
    text = run.to_json()
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    print(text)
    return 0 if not run.failed else 1


def cmd_bench_analyze(args, config):
    baseline = None
    if args.baseline:
        baseline = bench_mod.BenchRun.from_dict(json.loads(_read(args.baseline)))
    reports = []
    for path in args.runs:
        run = bench_mod.BenchRun.from_dict(json.loads(_read(path)))
        reports.append(bench_mod.analyze(run, baseline=baseline))
    if args.report == "table":
        for r in reports:
            line = (
                f"{r.run_label:<14} {r.phase:<8} "
                f"max={r.max_record.real_s:<10g} min={r.min_record.real_s:<10g} "
                f"sys%={r.sys_pct_max:.2f}"
            )
            if r.degradation_pct_vs_baseline is not None:
                line += f" vs {r.baseline_label}: {r.degradation_pct_vs_baseline:+.2f}%"
            print(line)
    else:
        print(json.dumps([r.to_dict() for r in reports], indent=2))
    return 0


# --- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="phenocloud",
        description="Catalog contextualization, identity mapping, parameter scans and benchmarking",
    )
    parser.add_argument("-v", "--verbose", action="count", default=0)
    top = parser.add_subparsers(dest="group", required=True)

    ctx = top.add_parser("ctx", help="catalog-driven contextualization")
    ctx_sub = ctx.add_subparsers(dest="command", required=True)
    p = ctx_sub.add_parser("plan", help="show the resolved install plan")
    p.add_argument("--catalog")
    p.add_argument("--metadata", required=True)
    p.set_defaults(func=cmd_ctx_plan)
    p = ctx_sub.add_parser("run", help="download and install the requested apps")
    p.add_argument("--catalog")
    p.add_argument("--metadata", required=True)
    p.add_argument("--root")
    p.add_argument("--scripts")
    p.add_argument("--dry-run", action="store_true")
    p.add_argument("--pretty", action="store_true")
    p.set_defaults(func=cmd_ctx_run)
    p = ctx_sub.add_parser("images", help="list contextualization-ready images")
    p.add_argument("--registry", required=True)
    p.set_defaults(func=cmd_ctx_images)

    auth = top.add_parser("auth", help="tenant mapping and tokens")
    auth_sub = auth.add_subparsers(dest="command", required=True)
    p = auth_sub.add_parser("map-vo", help="map a VO assertion to a tenant")
    p.add_argument("--config")
    p.add_argument("--store")
    p.add_argument("--dn", required=True)
    p.add_argument("--vo", required=True)
    p.add_argument("--not-before", type=float, default=None)
    p.add_argument("--not-after", type=float, default=None)
    p.add_argument("--now", type=float, default=None)
    p.set_defaults(func=cmd_auth_map_vo)
    p = auth_sub.add_parser("map-user", help="map an authenticated username")
    p.add_argument("--config")
    p.add_argument("--store")
    p.add_argument("--user", required=True)
    p.set_defaults(func=cmd_auth_map_user)
    token = auth_sub.add_parser("token", help="issue or verify scoped tokens")
    token_sub = token.add_subparsers(dest="token_command", required=True)
    p = token_sub.add_parser("issue")
    p.add_argument("--key")
    p.add_argument("--subject", required=True)
    p.add_argument("--tenant", required=True)
    p.add_argument("--lifetime", type=float, default=3600.0)
    p.add_argument("--now", type=float, default=None)
    p.set_defaults(func=cmd_auth_token_issue)
    p = token_sub.add_parser("verify")
    p.add_argument("--key")
    p.add_argument("--token", required=True)
    p.add_argument("--now", type=float, default=None)
    p.set_defaults(func=cmd_auth_token_verify)

    scan = top.add_parser("scan", help="parallel 2D parameter scan")
    scan_sub = scan.add_subparsers(dest="command", required=True)
    p = scan_sub.add_parser("run")
    p.add_argument("--steps", type=int, default=120)
    p.add_argument("--ma", default="90:500")
    p.add_argument("--tb", default="1.1:60")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--kernel", default="builtin", help="builtin or cmd:<command>")
    p.add_argument("--work-units", type=int, default=0)
    p.add_argument("--timeout-per-point", type=float, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_scan_run)

    bench = top.add_parser("bench", help="concurrent process benchmarking")
    bench_sub = bench.add_subparsers(dest="command", required=True)
    p = bench_sub.add_parser("run")
    p.add_argument("--processes", type=int, required=True)
    p.add_argument("--workload", default="builtin", help="builtin or cmd:<command>")
    p.add_argument("--work-units", type=int, default=None)
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench_run)
    p = bench_sub.add_parser("analyze")
    p.add_argument("runs", nargs="+", metavar="RUN_FILE")
    p.add_argument("--baseline")
    p.add_argument("--report", choices=("table", "json"), default="json")
    p.set_defaults(func=cmd_bench_analyze)

    return parser


def dispatch(argv) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        config = load_global_config()
        return args.func(args, config)
    except PhenocloudError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> int:
    return dispatch(sys.argv[1:])


if __name__ == "__main__":
    sys.exit(main())
