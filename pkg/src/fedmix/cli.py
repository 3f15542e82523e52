"""Command-line front end: ``fedmix generate | train | personalize --config FILE``.

Config files hold one ``key = value`` per line; ``#`` starts a comment.
Unknown keys are rejected.  Every output is a deterministic function of the
config, so reruns produce byte-identical files.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .em import ComponentBank, SolverConfig
from .errors import ConfigError, FedMixError
from .metrics import cluster_assignment_accuracy, joint_recovery, mixture_accuracy
from .rng import stream
from .synth import FLOAT_FMT, SyntheticConfig, generate, load_federation, read_matrix, save_federation
from .topology import make_schedule
from .training import personalize_unseen, train_dfedem, train_fedavg, train_fedem, train_local, write_round_logs

ALGORITHMS = ("fedem", "dfedem", "fedavg", "local")
TOPOLOGIES = ("complete", "erdos_renyi", "ring", "identity")
FRACTIONS = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)


def _bool(text):
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _fractions(text):
    vals = tuple(float(v) for v in text.replace(",", " ").split())
    if not vals or any(not 0.0 <= v <= 1.0 for v in vals):
        raise ValueError("fractions must lie in [0, 1]")
    return vals


SYNTH_KEYS = {
    "T": int,
    "M": int,
    "d": int,
    "alpha": float,
    "seed": int,
    "label_mode": str,
    "noise": _bool,
    "test_fraction": float,
    "min_size": int,
    "max_size": int,
    "theta_scale": float,
}

GENERATE_KEYS = {**SYNTH_KEYS, "output_dir": str}

TRAIN_KEYS = {
    "algorithm": str,
    "M": int,
    "K": int,
    "J": int,
    "batch_size": int,
    "learning_rate": float,
    "a0": float,
    "sample_rate": float,
    "topology": str,
    "p_edge": float,
    "resample": _bool,
    "seed": int,
    "data": str,
    "output_dir": str,
    **{f"synthetic.{k}": v for k, v in SYNTH_KEYS.items()},
}

PERSONALIZE_KEYS = {"theta": str, "clients": str, "output_dir": str, "seed": int, "fractions": _fractions}


def read_config(path, schema):
    """Parse a flat ``key = value`` file against ``schema`` (key -> converter)."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        if key not in schema:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        if key in out:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        try:
            out[key] = schema[key](value)
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for {key!r}: {exc}") from None
    return out


def _require(cfg, key, path):
    if key not in cfg:
        raise ConfigError(f"{path}: missing required key {key!r}")
    return cfg[key]


def _write_matrix(path, A):
    A = np.atleast_2d(A)
    path.write_text("".join(",".join(FLOAT_FMT % v for v in r) + "\n" for r in A), encoding="utf-8")


# generate ---------------------------------------------------------------------

def cmd_generate(config_path):
    cfg = read_config(config_path, GENERATE_KEYS)
    out = _require(cfg, "output_dir", config_path)
    synth = SyntheticConfig(**{k: v for k, v in cfg.items() if k in SYNTH_KEYS})
    fed, truth = generate(synth)
    save_federation(fed, truth, out)
    print(f"wrote {len(fed)} clients ({int(fed.sizes('train').sum() + fed.sizes('test').sum())} samples) to {out}")
    return 0


# train ------------------------------------------------------------------------

def _solver(cfg):
    kwargs = dict(
        local_steps=cfg.get("J", 1),
        batch_size=cfg.get("batch_size", 32),
        rng_seed=cfg.get("seed", 0),
    )
    if "a0" in cfg:
        if "learning_rate" in cfg:
            raise ConfigError("give either learning_rate or a0, not both")
        return SolverConfig(learning_rate=cfg["a0"], decay=True, **kwargs)
    return SolverConfig(learning_rate=cfg.get("learning_rate", 0.1), **kwargs)


def _training_data(cfg, path):
    synth = {k.split(".", 1)[1]: v for k, v in cfg.items() if k.startswith("synthetic.")}
    if "data" in cfg:
        if synth:
            raise ConfigError(f"{path}: 'data' and inline synthetic.* keys are exclusive")
        return load_federation(cfg["data"])
    if not synth:
        raise ConfigError(f"{path}: give 'data' or inline synthetic.* keys")
    return generate(SyntheticConfig(**synth))


def _check_consistency(cfg, algo, path):
    if algo not in ALGORITHMS:
        raise ConfigError(f"{path}: algorithm must be one of {', '.join(ALGORITHMS)}")
    topo_keys = {"topology", "p_edge", "resample"} & cfg.keys()
    if algo != "dfedem" and topo_keys:
        raise ConfigError(f"{path}: {sorted(topo_keys)[0]!r} only applies to dfedem")
    if algo in ("dfedem", "local") and "sample_rate" in cfg:
        raise ConfigError(f"{path}: 'sample_rate' only applies to fedem and fedavg")
    if algo in ("fedavg", "local") and cfg.get("M", 1) != 1:
        raise ConfigError(f"{path}: {algo} trains a single model; M must be 1")
    if cfg.get("topology", "complete") not in TOPOLOGIES:
        raise ConfigError(f"{path}: topology must be one of {', '.join(TOPOLOGIES)}")


def cmd_train(config_path):
    cfg = read_config(config_path, TRAIN_KEYS)
    algo = _require(cfg, "algorithm", config_path)
    _check_consistency(cfg, algo, config_path)
    out = Path(_require(cfg, "output_dir", config_path))
    K = _require(cfg, "K", config_path)
    M = cfg.get("M", 1)
    solver = _solver(cfg)
    fed, truth = _training_data(cfg, config_path)
    T = len(fed)
    rate = cfg.get("sample_rate", 1.0)

    per_client = None
    if algo == "fedem":
        bank, pis, logs = train_fedem(fed, M, K, solver, rate)
        theta = bank.thetas
    elif algo == "fedavg":
        h, logs = train_fedavg(fed, K, solver, rate)
        theta, pis = h.theta[None, :], np.ones((T, 1))
    elif algo == "local":
        hs, logs = train_local(fed, K, solver)
        theta, pis = np.array([h.theta for h in hs]), np.ones((T, 1))
    else:
        sched = make_schedule(
            cfg.get("topology", "complete"), T, seed=solver.rng_seed, p_edge=cfg.get("p_edge", 0.5), resample=cfg.get("resample", False)
        )
        banks, pis, logs = train_dfedem(fed, M, K, solver, sched)
        per_client = np.array([b.thetas for b in banks])
        theta = per_client.mean(axis=0)

    out.mkdir(parents=True, exist_ok=True)
    write_round_logs(logs, out / "rounds.csv")
    _write_matrix(out / "theta_final.csv", theta)
    _write_matrix(out / "pi_final.csv", pis)
    if per_client is not None:
        rows = [[t, m, *per_client[t, m]] for t in range(T) for m in range(M)]
        (out / "theta_per_client.csv").write_text(
            "client,component," + ",".join(f"w_{i + 1}" for i in range(per_client.shape[2])) + "\n"
            + "".join(f"{r[0]},{r[1]}," + ",".join(FLOAT_FMT % v for v in r[2:]) + "\n" for r in rows),
            encoding="utf-8",
        )
    if truth is not None and algo in ("fedem", "dfedem") and truth.theta_star.shape == theta.shape and M <= 5:
        dt, dp, _ = joint_recovery(theta, pis, truth.theta_star, truth.pi_star)
        acc = cluster_assignment_accuracy(pis, truth.clusters)
        (out / "recovery.csv").write_text(
            "theta_distance,pi_distance,cluster_accuracy\n" + ",".join(FLOAT_FMT % v for v in (dt, dp, acc)) + "\n",
            encoding="utf-8",
        )
    if logs:
        print(f"{algo}: {K} rounds, test accuracy {logs[-1].test_acc:.4f}, train objective {logs[-1].train_loss:.6f}")
    return 0


# personalize ------------------------------------------------------------------

def cmd_personalize(config_path, theta_path=None, clients_dir=None):
    cfg = read_config(config_path, PERSONALIZE_KEYS)
    theta_path = Path(theta_path or _require(cfg, "theta", config_path))
    clients_dir = clients_dir or _require(cfg, "clients", config_path)
    out = Path(_require(cfg, "output_dir", config_path))
    seed = cfg.get("seed", 0)
    fractions = cfg.get("fractions", FRACTIONS)

    if not theta_path.is_file():
        raise ConfigError(f"{theta_path}: component file not found")
    fed, _ = load_federation(clients_dir)
    bank = ComponentBank(read_matrix(theta_path), fed.loss, fed.dim)
    M, T = bank.m_components, len(fed)

    pis = np.array([personalize_unseen(bank, c) for c in fed])
    report = mixture_accuracy(bank, pis, fed, "test")
    out.mkdir(parents=True, exist_ok=True)
    header = "client," + ",".join(f"pi_{m + 1}" for m in range(M)) + ",accuracy\n"
    (out / "personalized.csv").write_text(
        header
        + "".join(
            f"{t}," + ",".join(FLOAT_FMT % v for v in pis[t]) + "," + FLOAT_FMT % report.per_client_accuracy[t] + "\n"
            for t in range(T)
        ),
        encoding="utf-8",
    )

    # nested prefixes of one seeded ordering per client
    orders = [stream(seed, "personalize", t).permutation(c.n_train) for t, c in enumerate(fed)]
    lines = ["fraction,accuracy\n"]
    for f in fractions:
        pis_f = np.array(
            [personalize_unseen(bank, c.with_train_subset(np.sort(o[: int(round(f * c.n_train))]))) for c, o in zip(fed, orders)]
        )
        acc = mixture_accuracy(bank, pis_f, fed, "test").weighted_accuracy
        lines.append(f"{FLOAT_FMT % f},{FLOAT_FMT % acc}\n")
    (out / "sweep.csv").write_text("".join(lines), encoding="utf-8")
    print(f"personalized {T} clients, test accuracy {report.weighted_accuracy:.4f}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="fedmix", description="Federated mixture-of-experts simulator.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in (
        ("generate", "write a synthetic federation"),
        ("train", "run a training algorithm"),
        ("personalize", "fit mixture weights for unseen clients"),
    ):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True, help="key = value config file")
        if name == "personalize":
            p.add_argument("--theta", help="component file (overrides the config)")
            p.add_argument("--clients", help="federation directory of unseen clients (overrides the config)")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "generate":
            return cmd_generate(args.config)
        if args.command == "train":
            return cmd_train(args.config)
        return cmd_personalize(args.config, args.theta, args.clients)
    except FedMixError as exc:
        print(f"fedmix: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
