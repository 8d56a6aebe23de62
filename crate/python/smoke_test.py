"""Smoke test for the attnguard extension module.

Build and install first (from the workspace root):  pip install --no-build-isolation -e crates/py
"""

import json
import math
from pathlib import Path

import attnguard

DEMO = Path(__file__).resolve().parents[1] / "demo"


def main():
    assert set(attnguard.STATES) == {"Focused", "Drifting", "Hyperfocused", "Fatigued"}, attnguard.STATES

    sessions = [attnguard.generate_trace(900, seed) for seed in range(3)]
    again = attnguard.generate_trace(900, 0)
    assert again == sessions[0], "simulator is not deterministic"

    rows = attnguard.session_features(sessions[0][0])
    assert rows and len([k for k in rows[0] if k.endswith("_dev")]) == 10, rows[:1]

    model = attnguard.Model.train(sessions, n_trees=10, seed=1)
    assert model.n_trees == 10
    imp = model.feature_importances()
    assert len(imp) == 10 and math.isclose(sum(imp), 1.0, abs_tol=1e-9), imp
    clone = attnguard.Model.from_json(model.to_json())
    assert clone.to_json() == model.to_json()
    est = model.predict([0.0] * 10)
    assert len(est["probs"]) == 4 and math.isclose(sum(est["probs"]), 1.0, abs_tol=1e-9), est

    session = attnguard.Session(model, mode="auto", session_id="smoke", engine_seed=3)
    report = session.ingest(sessions[1][0])
    assert report["accepted"] > 0 and not report["rejected"], report
    session.end()
    assert session.status == "ended"
    assert session.estimates(), "no estimates"

    wizard = attnguard.Session(model, mode="wizard", session_id="wiz")
    wizard.ingest(sessions[2][0])
    ack = wizard.override("set_state", "Drifting")
    assert ack["cmd"] == "set_state", ack
    wizard.end()
    log = wizard.export_log()
    assert all(json.loads(line) for line in log.splitlines())

    demo = attnguard.concord(
        (DEMO / "wizard_session.jsonl").read_text(),
        compat_toml=(DEMO / "compat.toml").read_text(),
    )
    assert demo["n"] == 25 and math.isclose(demo["exact"], 0.84), demo

    assert math.isclose(attnguard.cohen_kappa([[10, 0], [0, 10]]), 1.0)
    w = attnguard.wilcoxon_signed_rank([1.0, 2.0, 3.0, 4.0, 5.0], "greater")
    assert math.isclose(w["p_value"], 1 / 32), w
    assert math.isclose(attnguard.roc_auc([0.9, 0.8], [0.1, 0.2]), 1.0)
    assert math.isclose(attnguard.pearson_r([1.0, 2.0, 3.0], [2.0, 4.0, 6.0]), 1.0)

    print("python smoke test: ok")


if __name__ == "__main__":
    main()
