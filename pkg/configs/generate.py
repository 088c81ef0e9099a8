"""Regenerate the example configs and the prototype-classifier model in this directory."""
import json
from pathlib import Path

import numpy as np

from dynorm.model import GlobalAvgPool, ModelSpec, NormSlot, PrototypeHead, save_model
from dynorm.presets import crossmix_benchmark, prototype_classifier, wild_benchmark
from dynorm.stats import SbnStore
from dynorm.stream import Scenario
from dynorm.tensor import ChannelStats

HERE = Path(__file__).parent


def write(name, scenario, mode="DYN", modes=("SBN", "TBN", "IN", "ALPHA_BN", "DYN")):
    cfg = {
        "model": "models/prototype_c8.json",
        "scenario": scenario.to_dict(),
        "normalizer": {"mode": mode, "alpha": 0.8, "epsilon": 1e-05},
        "compare": {"modes": list(modes)},
        "output": {"format": "json", "include_timing": True},
    }
    (HERE / name).write_text(json.dumps(cfg, indent=2) + "\n")


def main():
    cm = crossmix_benchmark()
    model, store = prototype_classifier(cm.class_means, cm.sample_noise)
    save_model(model, store, HERE / "models" / "prototype_c8.json")
    write("crossmix.json", cm)
    write("random.json", cm.replace(scenario=Scenario.RANDOM))
    write("shuffle.json", cm.replace(scenario=Scenario.SHUFFLE))
    wild = cm.replace(scenario=Scenario.WILD, label_delta=0.1)
    write("wild.json", wild)

    # minimal fixture used by the test suite
    fixtures = HERE.parent / "tests" / "fixtures"
    sbn = ChannelStats(np.array([0.5, -0.25]), np.array([1.0, 2.0]))
    minimal = ModelSpec(
        (2, 2, 2),
        (NormSlot("bn0", 2, np.ones(2, np.float32), np.zeros(2, np.float32)), GlobalAvgPool(),
         PrototypeHead(np.array([[1.0, 0.0], [0.0, 1.0]], np.float32))),
        2,
    )
    save_model(minimal, SbnStore({"bn0": sbn}), fixtures / "minimal.json")


if __name__ == "__main__":
    main()
