"""Command-line front end.

    triarm meta-train   --config configs/meta_train.yaml
    triarm adapt-eval   --checkpoint artifacts/meta_run/meta.tacp
    triarm long-horizon --checkpoint artifacts/meta_run/meta.tacp
    triarm mm-bench     --encoder artifacts/encoder.tacp
    triarm serve        --checkpoint artifacts/meta_run/meta.tacp

Every command takes --config / --set section.key=value overrides; flags
beat config values. On success the summary prints as one JSON line; on
failure a JSON error line goes to stderr and the exit code is nonzero.
"""

from __future__ import annotations

import argparse
import json
import sys
import threading

from .config import apply_overrides, build_adapt, build_env, build_hyper, \
    load_yaml
from .instruction import Difficulty


def _cfg(args) -> dict:
    cfg = load_yaml(args.config) if args.config else {}
    return apply_overrides(cfg, args.set or [])


def _pick(flag, section: dict, key: str, default):
    return flag if flag is not None else section.get(key, default)


def cmd_meta_train(args) -> dict:
    from .harness import run_meta_train
    cfg = _cfg(args)
    sect = cfg.get("train", {})
    difficulties = tuple(Difficulty(d) for d in
                         sect.get("difficulties", ["easy", "medium"]))
    return run_meta_train(
        build_adapt(cfg),
        seed=_pick(args.seed, sect, "seed", 0),
        out_dir=_pick(args.out, sect, "out", "artifacts/meta_run"),
        hyper=build_hyper(cfg), env_cfg=build_env(cfg),
        difficulties=difficulties,
        checkpoint_every=_pick(None, sect, "checkpoint_every", 100),
        snapshot_every=_pick(None, sect, "snapshot_every", 0),
        resume_from=args.resume, echo=not args.quiet)


def cmd_adapt_eval(args) -> dict:
    from .harness import run_adapt_eval
    cfg = _cfg(args)
    sect = cfg.get("eval", {})
    seeds = args.seeds if args.seeds is not None \
        else sect.get("seeds", [0, 1, 2, 3, 4])
    return run_adapt_eval(
        checkpoint=_pick(args.checkpoint, sect, "checkpoint", None),
        out_dir=_pick(args.out, sect, "out", "artifacts/adapt_eval"),
        n_tasks=_pick(args.tasks, sect, "n_tasks", 10),
        epochs=_pick(args.epochs, sect, "epochs", 50),
        seeds=tuple(int(s) for s in seeds),
        task_seed=_pick(args.task_seed, sect, "task_seed", 777),
        env_cfg=build_env(cfg))


def cmd_long_horizon(args) -> dict:
    from .harness import run_long_horizon
    cfg = _cfg(args)
    sect = cfg.get("long", {})
    return run_long_horizon(
        checkpoint=_pick(args.checkpoint, sect, "checkpoint", None),
        out_dir=_pick(args.out, sect, "out", "artifacts/long_horizon"),
        ticks=_pick(args.ticks, sect, "ticks", 2000),
        seed=_pick(args.seed, sect, "seed", 0),
        env_cfg=build_env(cfg),
        timeout_factor=_pick(None, sect, "timeout_factor", 5))


def cmd_mm_bench(args) -> dict:
    from .harness import run_mm_bench
    cfg = _cfg(args)
    sect = cfg.get("bench", {})
    return run_mm_bench(
        encoder_path=_pick(args.encoder, sect, "encoder",
                           "artifacts/encoder.tacp"),
        out_dir=_pick(args.out, sect, "out", "artifacts/mm_bench"),
        n=_pick(args.n, sect, "n", 100),
        seeds=_pick(args.bench_seeds, sect, "seeds", 5),
        seed0=_pick(args.seed, sect, "seed0", 0))


def cmd_serve(args) -> dict:
    from .meta import load_meta
    from .params import load_paramset
    from .service import ServiceCore, serve
    cfg = _cfg(args)
    sect = cfg.get("serve", {})
    checkpoint = _pick(args.checkpoint, sect, "checkpoint", None)
    if checkpoint is None:
        raise ValueError("serve needs --checkpoint")
    encoder_path = _pick(args.encoder, sect, "encoder", None)
    core = ServiceCore(
        load_meta(checkpoint), env_cfg=build_env(cfg),
        encoder=load_paramset(encoder_path) if encoder_path else None,
        seed=_pick(args.seed, sect, "seed", 0),
        tick_hz=_pick(args.tick_hz, sect, "tick_hz", 20.0),
        timeout_factor=_pick(None, sect, "timeout_factor", 5))
    server = serve(core, host=_pick(args.host, sect, "host", "127.0.0.1"),
                   port=_pick(args.port, sect, "port", 0))
    print(json.dumps({"serving": {"host": server.host, "port": server.port,
                                  "tick_hz": core.tick_hz}}), flush=True)
    try:
        threading.Event().wait()
    except KeyboardInterrupt:
        server.stop()
    return {"stopped": True}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="triarm")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="YAML config file")
        sp.add_argument("--set", action="append", metavar="SECTION.KEY=VAL",
                        help="override a config value")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help="output directory")

    sp = sub.add_parser("meta-train", help="train the initialization")
    common(sp)
    sp.add_argument("--resume", help="checkpoint to continue from")
    sp.add_argument("--quiet", action="store_true")
    sp.set_defaults(fn=cmd_meta_train)

    sp = sub.add_parser("adapt-eval",
                        help="meta vs scratch curves on held-out tasks")
    common(sp)
    sp.add_argument("--checkpoint")
    sp.add_argument("--tasks", type=int)
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--seeds", nargs="+", type=int)
    sp.add_argument("--task-seed", type=int, dest="task_seed")
    sp.set_defaults(fn=cmd_adapt_eval)

    sp = sub.add_parser("long-horizon",
                        help="queued multi-phase run with trajectory CSV")
    common(sp)
    sp.add_argument("--checkpoint")
    sp.add_argument("--ticks", type=int)
    sp.set_defaults(fn=cmd_long_horizon)

    sp = sub.add_parser("mm-bench", help="encoder accuracy/latency grid")
    common(sp)
    sp.add_argument("--encoder")
    sp.add_argument("--n", type=int)
    sp.add_argument("--bench-seeds", type=int, dest="bench_seeds",
                    help="number of benchmark repetitions")
    sp.set_defaults(fn=cmd_mm_bench)

    sp = sub.add_parser("serve", help="run the live tick service")
    common(sp)
    sp.add_argument("--checkpoint")
    sp.add_argument("--encoder")
    sp.add_argument("--host")
    sp.add_argument("--port", type=int)
    sp.add_argument("--tick-hz", type=float, dest="tick_hz")
    sp.set_defaults(fn=cmd_serve)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        result = args.fn(args)
    except Exception as e:              # noqa: BLE001 - single exit funnel
        print(json.dumps({"error": type(e).__name__, "reason": str(e)}),
              file=sys.stderr, flush=True)
        return 1
    print(json.dumps(result, default=str), flush=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())
