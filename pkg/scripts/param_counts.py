"""Print parameter counts of the transformer configs with a per-group breakdown.

    python3 scripts/param_counts.py
"""
from pathlib import Path

from qforecast.config import load_config
from qforecast.models import build_model, count_parameters

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
# published totals for the same settings, used as the comparison column
REFERENCE = {
    "lorenz_st_itransformer": 1877, "lorenz_st_iqtransformer": 719,
    "lorenz_lt_itransformer": 1929, "lorenz_lt_iqtransformer": 771,
    "surrogate_st_itransformer": 4441, "surrogate_st_iqtransformer": 1357,
    "surrogate_lt_itransformer": 11445, "surrogate_lt_iqtransformer": 5295,
}


def grouped(model) -> dict[str, int]:
    out: dict[str, int] = {}
    for name, size in model.breakdown().items():
        parts = name.split(".")
        key = parts[1] if parts[0].startswith("block") else parts[0]
        out[key] = out.get(key, 0) + size
    return out


def main():
    print(f"{'config':28s} {'ours':>6s} {'ref':>6s} {'diff':>7s}  breakdown")
    for name, ref in REFERENCE.items():
        model = build_model(load_config(CONFIGS / f"{name}.yaml").spec.model)
        n = count_parameters(model)
        print(f"{name:28s} {n:6d} {ref:6d} {n / ref - 1:+7.1%}  {grouped(model)}")


if __name__ == "__main__":
    main()
