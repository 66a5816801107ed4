"""Command line entry point: ``meshfield {datagen,train,reconstruct,eval}``.

Every subcommand takes a JSON run configuration (``--config``); missing keys
fall back to the defaults printed by ``--dump-config``.  Results go to stdout
as JSON; on failure an error object is written to stderr and the exit code
is nonzero.  ``MESHFIELD_LOG`` sets the log level (default WARNING).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from . import __version__
from .config import ConfigError, RunConfig, load_config

EXIT_CONFIG = 2
EXIT_FAILURE = 1


def _apply_override(d: dict, item: str) -> None:
    key, sep, raw = item.partition("=")
    if not sep:
        raise ConfigError(f"override {item!r} is not of the form key=value")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw  # bare strings need no quotes
    parts = key.split(".")
    node = d
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override {key!r} descends into a non-section", key)
    node[parts[-1]] = value


def build_config(args) -> RunConfig:
    base = load_config(args.config).to_dict() if args.config else RunConfig().to_dict()
    for item in args.set or []:
        _apply_override(base, item)
    if args.seed is not None:
        base["seed"] = args.seed
    if args.workers is not None:
        base["workers"] = args.workers
    return RunConfig.from_dict(base)


def _cmd_datagen(cfg: RunConfig) -> dict:
    from .trainer import datagen
    return datagen(cfg)


def _cmd_train(cfg: RunConfig) -> dict:
    from .trainer import train
    rep = train(cfg)
    rep.pop("losses", None)
    return rep


def _cmd_reconstruct(cfg: RunConfig) -> dict:
    from .recon.pipeline import run_reconstruct
    return run_reconstruct(cfg)


def _cmd_eval(cfg: RunConfig) -> dict:
    from .metrics import run_eval
    return run_eval(cfg)


COMMANDS = {
    "datagen": (_cmd_datagen, "render view pairs and sample ground truth from scans"),
    "train": (_cmd_train, "train the normal, geometry and color networks"),
    "reconstruct": (_cmd_reconstruct, "reconstruct a colored mesh from a front image"),
    "eval": (_cmd_eval, "compare a reconstruction with a ground-truth mesh"),
}


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="meshfield", description="Textured human reconstruction from a single image.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", metavar="{" + ",".join(COMMANDS) + "}")
    sub.required = True
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config key, e.g. recon.resolution=128 (repeatable)")
        p.add_argument("--seed", type=int, help="random seed (overrides the config)")
        p.add_argument("--workers", type=int, help="worker threads; 0 means all logical cores")
        p.add_argument("--dump-config", action="store_true",
                       help="print the effective configuration with all defaults and exit")
    return parser


def _error(kind: str, message: str, key=None) -> None:
    err = {"error": kind, "message": message}
    if key is not None:
        err["key"] = key
    print(json.dumps(err), file=sys.stderr)


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("MESHFIELD_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = make_parser().parse_args(argv)
    try:
        cfg = build_config(args)
    except ConfigError as e:
        _error("ConfigError", str(e), e.key)
        return EXIT_CONFIG
    except OSError as e:
        _error("ConfigError", str(e))
        return EXIT_CONFIG
    if args.dump_config:
        print(cfg.to_json())
        return 0
    try:
        result = COMMANDS[args.command][0](cfg)
    except (OSError, ValueError, FloatingPointError) as e:
        logging.getLogger("meshfield").debug("failure", exc_info=True)
        _error(type(e).__name__, str(e))
        return EXIT_FAILURE
    print(json.dumps(result, indent=1, sort_keys=True, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
