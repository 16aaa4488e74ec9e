"""Command line entry point: ``markovlens run | analyze | serve``.

``run`` and ``analyze`` execute in-process by default; with ``--server URL``
they become thin clients of a running ``markovlens serve``.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time

from markovlens.errors import MarkovLensError

logger = logging.getLogger("markovlens")

EXIT_OK = 0
EXIT_RUN_FAILED = 1
EXIT_BAD_INPUT = 2


def _default_parallelism() -> int:
    return max(1, min(10, os.cpu_count() or 1))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="markovlens", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a config-driven sweep and write the report")
    run.add_argument("--config-path", "--config_path", dest="config_path", required=True)
    run.add_argument("--env", default=None, help="only this environment")
    run.add_argument("--out", default="results", help="output directory (default: results)")
    run.add_argument("--parallelism", type=int, default=_default_parallelism())
    run.add_argument("--seed-count", type=int, default=None, help="override the config's seed count")
    run.add_argument("--ci", choices=["normal", "t"], default="normal",
                     help="CI95 multiplier: 1.96 (normal) or 2.776 (t, 4 df)")
    run.add_argument("--server", default=None, help="submit to a running service instead")

    an = sub.add_parser("analyze", help="PCMCI + MVS on a panel CSV")
    an.add_argument("--panel", required=True, help="CSV with a header of variable names")
    an.add_argument("--tau-max", type=int, default=5)
    an.add_argument("--alpha", type=float, default=0.05)
    an.add_argument("--links-out", default=None, help="write the link table here instead of stdout")
    an.add_argument("--server", default=None, help="analyze on a running service instead")

    serve = sub.add_parser("serve", help="start the HTTP service")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8000)
    return parser


def _print_links(links: list[dict], path: str | None) -> None:
    fields = ["child", "parent", "lag", "p_value", "partial_corr"]
    fh = open(path, "w", newline="") if path else sys.stdout
    try:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n", extrasaction="ignore")
        w.writeheader()
        w.writerows(links)
    finally:
        if path:
            fh.close()


def cmd_analyze(args) -> int:
    from markovlens.analysis import read_panel_csv

    panel = read_panel_csv(args.panel)
    if args.server:
        import httpx

        resp = httpx.post(args.server.rstrip("/") + "/analyze", timeout=600, json={
            "data": panel.data.tolist(), "var_names": panel.var_names, "tau_max": args.tau_max, "alpha": args.alpha,
        })
        if resp.status_code != 200:
            print(f"error: {resp.json().get('detail', resp.text)}", file=sys.stderr)
            return EXIT_BAD_INPUT
        body = resp.json()
        links, score, n_links = body["links"], body["mvs"], body["n_contributing_links"]
    else:
        from markovlens.analysis import analyze_panel, link_table

        result, report = analyze_panel(panel, args.tau_max, args.alpha)
        links, score, n_links = link_table(result), report.score, report.n_contributing_links
    _print_links(links, args.links_out)
    print(f"MVS {score!r} ({n_links} contributing links, T={panel.T}, N={panel.N})", file=sys.stderr)
    return EXIT_OK


def cmd_run(args) -> int:
    from markovlens.pipeline import emit_report, load_config, run_experiment
    from markovlens.pipeline.report import T95_4DF, Z95

    config = load_config(args.config_path)
    if args.server:
        return _run_remote(args, config.model_dump(mode="json"))
    result = run_experiment(config, args.out, args.parallelism, args.env, args.seed_count)
    paths = emit_report(result.records, args.out, T95_4DF if args.ci == "t" else Z95)
    for rec in result.records:
        print(f"{rec.env_name}/{rec.condition_id}: mean return {rec.mean_return:.1f}, MVS {rec.mvs:.4f}, "
              f"{len(rec.runs)} seeds" + (f", {len(rec.failures)} failed" if rec.failures else ""))
    print(f"wrote {len(paths)} report files under {args.out}")
    if not result.ok:
        for f in result.failures:
            print(f"failed: {f.env_name}/{f.condition_id}/{f.seed}: {f.error}", file=sys.stderr)
        return EXIT_RUN_FAILED
    return EXIT_OK


def _run_remote(args, doc: dict) -> int:
    import httpx

    base = args.server.rstrip("/")
    resp = httpx.post(base + "/experiments", timeout=60, json={
        "config": doc, "out_dir": os.path.abspath(args.out), "parallelism": args.parallelism,
        "env": args.env, "seed_count": args.seed_count, "ci": args.ci,
    })
    if resp.status_code != 202:
        print(f"error: {resp.json().get('detail', resp.text)}", file=sys.stderr)
        return EXIT_BAD_INPUT
    job = resp.json()["job_id"]
    while True:
        status = httpx.get(f"{base}/experiments/{job}", timeout=60).json()
        if status["state"] in ("finished", "failed"):
            break
        time.sleep(2.0)
    for row in status["summary"]:
        print(json.dumps(row))
    if status["state"] == "failed":
        print(f"error: {status['error']}", file=sys.stderr)
        return EXIT_RUN_FAILED
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    uvicorn.run("markovlens.service.app:app", host=args.host, port=args.port)
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    logging.getLogger("httpx").setLevel(logging.WARNING)
    handlers = {"run": cmd_run, "analyze": cmd_analyze, "serve": cmd_serve}
    try:
        return handlers[args.command](args)
    except MarkovLensError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT


if __name__ == "__main__":
    sys.exit(main())
