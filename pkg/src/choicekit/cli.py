"""Command-line front door chaining design > simulate > fit > wtp > potential.

One JSON config file describes a whole run; each subcommand reads its own
section plus the shared keys (population, schema, seed, model), and
command-line flags override file values. Relative paths in the config are
resolved against the config file's directory, so a run directory is fully
self-contained and diffable.

Contracts kept here: every stochastic command requires an explicit seed
(no wall-clock fallback); outputs are written atomically (temp file plus
rename); every output carries a manifest with the tool version, seed and
input digests (embedded in JSON outputs, sidecar file for CSV outputs);
exit codes are 0 success, 2 validation error, 3 non-convergence, 4 I/O
error, with a machine-readable JSON error line on stderr.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from .data import (
    consumer_schema,
    farmer_schema,
    filter_subgroup,
    load_dataset,
    save_dataset,
    schema_from_json,
    summarize,
)
from .design import (
    DEFAULT_GRIDS,
    DEFAULT_STRUCTURAL,
    DesignConfig,
    generate_design,
    load_design,
    save_design,
)
from .errors import (
    ChoicekitError,
    EstimationError,
    InvalidConfigError,
    ValidationError,
)
from .mixl import MixlSpec, fit_mixl
from .mnl import fit_mnl
from .modelspec import ModelSpec, consumer_spec, farmer_spec
from .potential import (
    AttributeMeans,
    capg_line,
    cavg_line,
    curve_samples,
    curves_envelope,
    save_curves_csv,
)
from .results import load_fit
from .simulate import TrueParams, simulate_choices
from .welfare import save_welfare_csv, welfare_table

EXIT_OK = 0
EXIT_FAILED_CHECK = 1
EXIT_VALIDATION = 2
EXIT_NO_CONVERGENCE = 3
EXIT_IO = 4


# ---------------------------------------------------------------------------
# small infrastructure
# ---------------------------------------------------------------------------

def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with path.open("rb") as handle:
        for block in iter(lambda: handle.read(1 << 16), b""):
            digest.update(block)
    return digest.hexdigest()


def _atomic_write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _atomic_writer(path: Path, write_fn) -> None:
    """Run write_fn against a temp path, then rename into place."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    os.close(fd)
    try:
        write_fn(Path(tmp))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class RunContext:
    """Merged configuration plus manifest bookkeeping for one command."""

    def __init__(self, command: str, config: dict, base_dir: Path, args: argparse.Namespace):
        self.command = command
        self.config = config
        self.base_dir = base_dir
        self.args = args
        self.inputs: dict[str, str] = {}
        if getattr(args, "config", None):
            self.inputs["config"] = _sha256(Path(args.config))

    def path(self, value: str) -> Path:
        p = Path(value)
        return p if p.is_absolute() else self.base_dir / p

    def input_path(self, value: str) -> Path:
        p = self.path(value)
        if not p.exists():
            raise FileNotFoundError(f"input file not found: {p}")
        self.inputs[str(value)] = _sha256(p)
        return p

    def section(self, name: str) -> dict:
        out = self.config.get(name, {})
        if not isinstance(out, dict):
            raise InvalidConfigError(f"config section {name!r} must be an object")
        return out

    def seed(self, required: bool = True) -> int | None:
        if getattr(self.args, "seed", None) is not None:
            return int(self.args.seed)
        if "seed" in self.config:
            return int(self.config["seed"])
        if required:
            raise InvalidConfigError(
                f"command {self.command!r} is stochastic and needs an explicit seed "
                f"(config key 'seed' or --seed); wall-clock defaults are not allowed"
            )
        return None

    def out_path(self, section: dict, key: str = "out") -> Path:
        if getattr(self.args, "out", None):
            return self.path(self.args.out)
        if key in section:
            return self.path(section[key])
        raise InvalidConfigError(f"no output path: set {self.command}.{key} or --out")

    def manifest(self, seed=None, options: dict | None = None) -> dict:
        return {
            "tool": "choicekit",
            "version": __version__,
            "command": self.command,
            "seed": seed,
            "inputs": dict(sorted(self.inputs.items())),
            "options": options or {},
        }

    # -- shared config pieces ------------------------------------------------

    @property
    def population(self) -> str:
        pop = self.config.get("population", "consumer")
        if pop not in ("consumer", "farmer"):
            raise InvalidConfigError(f"unknown population {pop!r}")
        return pop

    def schema(self):
        declared = self.config.get("schema", self.population)
        if declared == "consumer":
            return consumer_schema()
        if declared == "farmer":
            return farmer_schema()
        if isinstance(declared, list):
            return schema_from_json(declared)
        raise InvalidConfigError("config 'schema' must be 'consumer', 'farmer' or a list")

    def model_spec(self) -> ModelSpec:
        model = self.section("model")
        if "spec" in model:
            return ModelSpec.from_json_dict(model["spec"])
        mode = model.get("travel_time_mode", "per_outlet")
        if self.population == "consumer":
            return consumer_spec(self.schema(), travel_time_mode=mode)
        return farmer_spec(self.schema(), travel_time_mode=mode)

    def mixl_spec(self, seed: int) -> MixlSpec:
        model = self.section("model")
        base = self.model_spec()
        random_set = model.get("random_set", "all_but_price")
        if random_set == "all_but_price":
            random_set = tuple(n for n in base.coef_names() if n != base.price_attr)
        n_draws = int(self.args.draws) if getattr(self.args, "draws", None) else int(model.get("n_draws", 500))
        return MixlSpec(
            base=base,
            random_set=tuple(random_set),
            n_draws=n_draws,
            draw_scheme=model.get("scheme", "sobol"),
            seed=seed,
        )

    def truth(self) -> TrueParams:
        section = self.config.get("truth")
        if not section:
            raise InvalidConfigError("config needs a 'truth' section with fixed/random coefficients")
        random = {k: (float(v[0]), float(v[1])) for k, v in section.get("random", {}).items()}
        return TrueParams(fixed=section.get("fixed", {}), random=random)

    def design_config(self, seed: int) -> DesignConfig:
        section = self.section("design")
        grids = section.get("grids")
        if grids is not None:
            grids = {k: tuple(v) for k, v in grids.items()}
        else:
            grids = DEFAULT_GRIDS[self.population]
        structural = section.get("structural")
        if structural is None:
            structural = DEFAULT_STRUCTURAL[self.population]
        return DesignConfig(
            schema=self.schema(),
            population=self.population,
            n_tasks=int(section.get("n_tasks", 6)),
            n_alts=int(section.get("n_alts", 6)),
            seed=seed,
            grids=grids,
            structural_values=structural,
        )


def _write_json_output(ctx: RunContext, path: Path, payload: dict, seed=None, options=None) -> None:
    payload = dict(payload)
    payload["manifest"] = ctx.manifest(seed=seed, options=options)
    _atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True))


def _write_csv_output(ctx: RunContext, path: Path, write_fn, seed=None, options=None) -> None:
    _atomic_writer(path, write_fn)
    sidecar = path.with_name(path.name + ".manifest.json")
    _atomic_write_text(
        sidecar, json.dumps(ctx.manifest(seed=seed, options=options), indent=2, sort_keys=True)
    )


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_design(ctx: RunContext) -> int:
    seed = ctx.seed()
    section = ctx.section("design")
    n_respondents = int(section.get("n_respondents", 1))
    config = ctx.design_config(seed)
    design = generate_design(config, n_respondents)
    out = ctx.out_path(section)
    options = {
        "n_respondents": n_respondents,
        "n_tasks": config.n_tasks,
        "n_alts": config.n_alts,
        "population": config.population,
    }
    _write_csv_output(ctx, out, lambda p: save_design(design, p), seed=seed, options=options)
    return EXIT_OK


def _derive_seeds(seed: int, n: int) -> list[int]:
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(n, dtype=np.uint64)]


def cmd_simulate(ctx: RunContext) -> int:
    seed = ctx.seed()
    section = ctx.section("simulate")
    spec = ctx.model_spec()
    truth = ctx.truth()
    if "design" in section:
        design = load_design(ctx.input_path(section["design"]), ctx.schema(), ctx.population)
        sim_seed = seed
    else:
        design_seed, sim_seed = _derive_seeds(seed, 2)
        n_respondents = int(ctx.section("design").get("n_respondents", 1))
        design = generate_design(ctx.design_config(design_seed), n_respondents)
    dataset = simulate_choices(design, truth, spec, seed=sim_seed)
    out = ctx.out_path(section)
    _write_csv_output(
        ctx, out, lambda p: save_dataset(dataset, p), seed=seed,
        options={"population": ctx.population, "n_respondents": dataset.n_respondents},
    )
    return EXIT_OK


def _load_filtered_dataset(ctx: RunContext, section: dict):
    data_key = section.get("data")
    if getattr(ctx.args, "data", None):
        data_key = ctx.args.data
    if not data_key:
        raise InvalidConfigError("no input dataset: set <command>.data or --data")
    dataset = load_dataset(ctx.input_path(data_key), ctx.schema())
    subgroup = getattr(ctx.args, "subgroup", None) or section.get("subgroup")
    if subgroup:
        dataset = filter_subgroup(dataset, subgroup)
    return dataset, subgroup


def cmd_fit(ctx: RunContext) -> int:
    section = ctx.section("fit")
    model = ctx.section("model")
    model_type = getattr(ctx.args, "model", None) or model.get("type", "mnl")
    dataset, subgroup = _load_filtered_dataset(ctx, section)
    tol = section.get("tol")
    seed = None
    if model_type == "mnl":
        fit = fit_mnl(dataset, ctx.model_spec(), tol=float(tol) if tol else 1e-8,
                      cluster_se=bool(section.get("cluster_se", False)))
    elif model_type == "mixl":
        seed = ctx.seed()
        fit = fit_mixl(dataset, ctx.mixl_spec(seed), tol=float(tol) if tol else 1e-5)
    else:
        raise InvalidConfigError(f"unknown model type {model_type!r}")
    out = ctx.out_path(section)
    _write_json_output(
        ctx, out, fit.to_json_dict(), seed=seed,
        options={"model": model_type, "subgroup": subgroup},
    )
    return EXIT_OK


def cmd_wtp(ctx: RunContext) -> int:
    section = ctx.section("wtp")
    fit_key = getattr(ctx.args, "fit", None) or section.get("fit") or ctx.section("fit").get("out")
    if not fit_key:
        raise InvalidConfigError("no fit input: set wtp.fit or --fit")
    fit = load_fit(ctx.input_path(fit_key))
    direction = section.get("direction") or ("cav" if fit.spec.population == "farmer" else "cap")
    method = section.get("method", "delta")
    seed = ctx.seed(required=False) if method == "bootstrap" else None
    if method == "bootstrap" and seed is None:
        raise InvalidConfigError("bootstrap welfare errors need an explicit seed")
    table = welfare_table(
        fit, direction, method=method,
        n_rep=int(section.get("n_rep", 10000)), seed=seed if seed is not None else 0,
    )
    out = ctx.out_path(section)
    options = {"direction": direction, "method": method}
    if out.suffix == ".json":
        _write_json_output(ctx, out, table.to_json_dict(), seed=seed, options=options)
    else:
        _write_csv_output(ctx, out, lambda p: save_welfare_csv(table, p), seed=seed, options=options)
    return EXIT_OK


def _load_means(ctx: RunContext, value) -> AttributeMeans:
    if isinstance(value, str):
        payload = json.loads(ctx.input_path(value).read_text(encoding="utf-8"))
        if "attribute_means" in payload:
            payload = payload["attribute_means"]
        return AttributeMeans.from_json_dict(payload)
    if isinstance(value, dict):
        return AttributeMeans.from_json_dict(value)
    raise InvalidConfigError("means must be a file path or an inline object")


def cmd_potential(ctx: RunContext) -> int:
    section = ctx.section("potential")
    for key in ("consumer_fit", "farmer_fit", "means_consumer", "means_farmer", "outlet"):
        if key not in section:
            raise InvalidConfigError(f"potential section needs {key!r}")
    fit_c = load_fit(ctx.input_path(section["consumer_fit"]))
    fit_f = load_fit(ctx.input_path(section["farmer_fit"]))
    means_c = _load_means(ctx, section["means_consumer"])
    means_f = _load_means(ctx, section["means_farmer"])
    outlet = section["outlet"]
    t_max = float(section.get("t_max", 60.0))
    step = float(section.get("step", 1.0))
    subgroup = section.get("subgroup")
    cons = capg_line(fit_c, outlet, means_c)
    farm = cavg_line(fit_f, outlet, means_f)
    table = curve_samples(cons, farm, t_max=t_max, step=step)
    envelope = curves_envelope(cons, farm, table, t_max=t_max, step=step, subgroup=subgroup)
    options = {"outlet": outlet, "t_max": t_max, "step": step, "subgroup": subgroup}
    wrote = False
    if "out_csv" in section or (getattr(ctx.args, "out", None) and ctx.args.out.endswith(".csv")):
        out_csv = ctx.path(ctx.args.out) if getattr(ctx.args, "out", None) and ctx.args.out.endswith(".csv") else ctx.path(section["out_csv"])
        _write_csv_output(ctx, out_csv, lambda p: save_curves_csv(table, p), options=options)
        wrote = True
    if "out_json" in section or (getattr(ctx.args, "out", None) and ctx.args.out.endswith(".json")):
        out_json = ctx.path(ctx.args.out) if getattr(ctx.args, "out", None) and ctx.args.out.endswith(".json") else ctx.path(section["out_json"])
        _write_json_output(ctx, out_json, envelope, options=options)
        wrote = True
    if not wrote:
        raise InvalidConfigError("potential needs out_csv and/or out_json (or --out)")
    return EXIT_OK


def cmd_summarize(ctx: RunContext) -> int:
    section = ctx.section("summarize")
    dataset, subgroup = _load_filtered_dataset(ctx, section)
    summary = summarize(dataset)
    payload = summary.to_json_dict()
    payload["attribute_means"] = AttributeMeans.from_summary(summary).to_json_dict()
    out = ctx.out_path(section)
    _write_json_output(ctx, out, payload, options={"subgroup": subgroup})
    return EXIT_OK


def cmd_recover(ctx: RunContext) -> int:
    """Simulate from declared truth, re-estimate, and report the recovery.

    Exit code 0 means every coefficient sits within 3 standard errors of
    its truth; 1 flags a failed recovery.
    """
    seed = ctx.seed()
    section = ctx.section("recover")
    model = ctx.section("model")
    model_type = model.get("type", "mnl")
    truth = ctx.truth()
    design_seed, sim_seed, mixl_seed = _derive_seeds(seed, 3)
    n_respondents = int(ctx.section("design").get("n_respondents", 100))
    design = generate_design(ctx.design_config(design_seed), n_respondents)
    spec = ctx.model_spec()
    dataset = simulate_choices(design, truth, spec, seed=sim_seed)
    if model_type == "mnl":
        fit = fit_mnl(dataset, spec)
        truth_by_param = {n: 0.0 for n in fit.coef_names}
        for name, value in truth.fixed.items():
            truth_by_param[name] = value
        for name, (mean, _) in truth.random.items():
            truth_by_param[name] = mean
    elif model_type == "mixl":
        mspec = ctx.mixl_spec(mixl_seed)
        fit = fit_mixl(dataset, mspec)
        truth_by_param = {}
        for pname in fit.coef_names:
            if pname.startswith("mean:"):
                base = pname.split(":", 1)[1]
                truth_by_param[pname] = truth.random.get(base, (truth.fixed.get(base, 0.0), 0.0))[0]
            elif pname.startswith("sd:"):
                base = pname.split(":", 1)[1]
                truth_by_param[pname] = truth.random.get(base, (0.0, 0.0))[1]
            else:
                truth_by_param[pname] = truth.fixed.get(pname, 0.0)
    else:
        raise InvalidConfigError(f"unknown model type {model_type!r}")

    rows = []
    worst = 0.0
    for name in fit.coef_names:
        estimate = fit.coefficients[name]
        se = fit.se(name)
        true_value = truth_by_param[name]
        z = (estimate - true_value) / se if se > 0 else float("inf")
        worst = max(worst, abs(z))
        rows.append(
            {"name": name, "truth": true_value, "estimate": estimate, "se": se, "z": z}
        )
    passed = bool(worst <= 3.0)
    payload = {
        "model": model_type,
        "n_respondents": n_respondents,
        "coefficients": rows,
        "max_abs_z": worst,
        "pass": passed,
    }
    out = ctx.out_path(section)
    _write_json_output(ctx, out, payload, seed=seed, options={"model": model_type})
    return EXIT_OK if passed else EXIT_FAILED_CHECK


COMMANDS = {
    "design": cmd_design,
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "wtp": cmd_wtp,
    "potential": cmd_potential,
    "summarize": cmd_summarize,
    "recover": cmd_recover,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="choicekit",
        description="Choice-experiment toolkit: design, simulate, estimate, "
                    "welfare ratios and market-potential curves.",
    )
    parser.add_argument("--version", action="version", version=f"choicekit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("design", "generate a randomized design and export it as CSV"),
        ("simulate", "simulate panel choices from declared true coefficients"),
        ("fit", "estimate a utility model from a choice CSV"),
        ("wtp", "money-metric attribute values from a fit JSON"),
        ("potential", "generalized value lines and break-even travel times"),
        ("summarize", "descriptive statistics and per-outlet attribute means"),
        ("recover", "end-to-end simulate + fit + truth comparison"),
    ]:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--seed", type=int, help="seed override (stochastic commands require one)")
        p.add_argument("--out", help="output path override")
        p.add_argument("--threads", type=int, default=1,
                       help="worker hint; results never depend on it")
        if name in ("fit", "summarize"):
            p.add_argument("--data", help="input choice CSV")
            p.add_argument("--subgroup", help="trait predicate, e.g. \"share_cc==1\"")
        if name == "fit":
            p.add_argument("--model", choices=["mnl", "mixl"], help="estimator")
            p.add_argument("--draws", type=int, help="quasi-random draw count (mixl)")
        if name == "wtp":
            p.add_argument("--fit", help="fit JSON input")
    return parser


def _load_config(args: argparse.Namespace) -> tuple[dict, Path]:
    if getattr(args, "config", None):
        config_path = Path(args.config)
        if not config_path.exists():
            raise FileNotFoundError(f"config file not found: {config_path}")
        config = json.loads(config_path.read_text(encoding="utf-8"))
        if not isinstance(config, dict):
            raise InvalidConfigError("config root must be a JSON object")
        return config, config_path.resolve().parent
    return {}, Path.cwd()


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "threads", 1) is not None and args.threads < 1:
        print(json.dumps({"error": "InvalidConfigError", "message": "--threads must be >= 1"}),
              file=sys.stderr)
        return EXIT_VALIDATION
    try:
        config, base_dir = _load_config(args)
        ctx = RunContext(args.command, config, base_dir, args)
        return COMMANDS[args.command](ctx)
    except EstimationError as err:
        print(json.dumps({"error": type(err).__name__, "message": str(err)}), file=sys.stderr)
        return EXIT_NO_CONVERGENCE
    except (ValidationError, ChoicekitError, json.JSONDecodeError) as err:
        print(json.dumps({"error": type(err).__name__, "message": str(err)}), file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as err:
        print(json.dumps({"error": type(err).__name__, "message": str(err)}), file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
