"""Record live service responses as JSON fixtures for the UI contract tests.

Run from the repository root after installing the Python package:

    python3 frontend/scripts/record_fixtures.py

Writes frontend/tests/fixtures/*.json.  The UI test suite replays these
verbatim, so the frontend never needs a running backend.
"""

import json
import pathlib
import tempfile

from fastapi.testclient import TestClient

from s2e import agent, connect4, service, shaping
from s2e.core import DomainId, RunSeed

OUT = pathlib.Path(__file__).resolve().parent.parent / "tests" / "fixtures"

CONDITIONS = [
    ("none", "connect4"),
    ("action", "connect4"),
    ("value", "connect4"),
    ("concept_raw", "connect4"),
    ("concept_inf", "lunar_lander"),
    ("concept_teg", "lunar_lander"),
    ("concept_inf_teg", "lunar_lander"),
]


def _client(tmp: str) -> TestClient:
    cfg_agent = agent.AgentConfig(
        replay_capacity=300, batch_size=16, eps_decay_steps=100, warmup=32,
        hidden=16, eval_interval=100, eval_episodes=2, seed=RunSeed(0),
    )
    policy, _ = agent.train_agent(
        DomainId.CONNECT4, shaping.ShapingSource("none"), cfg_agent, budget=150)
    pol_path = f"{tmp}/c4_policy.npz"
    agent.save_policy(policy, pol_path)
    cfg = service.ServiceConfig(data_dir=tmp, seed=7, c4_policy_path=pol_path)
    return TestClient(service.create_app(cfg))


class Recorder:
    def __init__(self, client: TestClient):
        self.client = client
        self.entries = []

    def call(self, method: str, path: str, body=None):
        fn = getattr(self.client, method.lower())
        res = fn(path, json=body) if body is not None else fn(path)
        self.entries.append({
            "method": method,
            "path": path,
            "body": body,
            "status": res.status_code,
            "response": res.json(),
        })
        return res


def record_conditions(client: TestClient) -> None:
    for condition, domain in CONDITIONS:
        rec = Recorder(client)
        res = rec.call("POST", "/session",
                       {"domain": domain, "condition": condition,
                        "study_mode": False})
        sid = res.json()["session_id"]
        rec.call("GET", f"/session/{sid}/state")
        steps = 60 if domain == "lunar_lander" else 12
        for _ in range(steps):
            res = rec.call("POST", f"/session/{sid}/agent-step")
            if res.json().get("rollout_done"):
                break
        rec.call("GET", f"/session/{sid}/score")
        path = OUT / f"condition_{condition}.json"
        path.write_text(json.dumps(rec.entries, indent=2))
        print(f"wrote {path.name} ({len(rec.entries)} exchanges)")


def _play_game(rec: Recorder, sid: str) -> None:
    while True:
        state = rec.call("GET", f"/session/{sid}/state").json()
        board = connect4.Connect4Board.from_json(state["board"])
        col = sorted(connect4.legal_actions(board))[0]
        body = rec.call("POST", f"/session/{sid}/move", {"action": col}).json()
        if body["outcome"] is not None:
            return


def record_study_flow(client: TestClient) -> None:
    rec = Recorder(client)
    res = rec.call("POST", "/session",
                   {"domain": "connect4", "condition": "concept_raw",
                    "study_mode": True})
    sid = res.json()["session_id"]
    # practice (2 games) and pretest (3 games)
    for _ in range(2 + 3):
        _play_game(rec, sid)
    # explanation stage: human play is rejected, expert rollouts run to quota
    rec.call("POST", f"/session/{sid}/move", {"action": 4})  # expect 409
    for _ in range(3):
        done = False
        while not done:
            done = rec.call("POST", f"/session/{sid}/agent-step").json().get(
                "rollout_done", False)
    # posttest (3 games), then free play
    for _ in range(3):
        _play_game(rec, sid)
    rec.call("GET", f"/session/{sid}/state")
    rec.call("GET", f"/session/{sid}/score")
    path = OUT / "study_flow.json"
    path.write_text(json.dumps(rec.entries, indent=2))
    print(f"wrote {path.name} ({len(rec.entries)} exchanges)")


def record_errors(client: TestClient) -> None:
    rec = Recorder(client)
    rec.call("POST", "/session", {"domain": "chess"})
    rec.call("POST", "/session", {"domain": "connect4", "condition": "concept_inf"})
    rec.call("GET", "/session/nope/state")
    sid = rec.call("POST", "/session",
                   {"domain": "connect4", "condition": "none",
                    "study_mode": False}).json()["session_id"]
    rec.call("POST", f"/session/{sid}/move", {"action": 9})
    path = OUT / "errors.json"
    path.write_text(json.dumps(rec.entries, indent=2))
    print(f"wrote {path.name} ({len(rec.entries)} exchanges)")


def main() -> None:
    OUT.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory() as tmp:
        client = _client(tmp)
        record_conditions(client)
        record_study_flow(client)
        record_errors(client)


if __name__ == "__main__":
    main()
