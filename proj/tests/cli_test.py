#!/usr/bin/env python3
"""End-to-end checks of the lexroute CLI: outputs, --json shapes and exit codes.

usage: cli_test.py <lexroute executable> <fixtures dir>
"""

import json
import random
import signal
import subprocess
import sys
import tempfile
import time
import unittest
import urllib.request
from pathlib import Path

EXE = None
FIX = None

PRECEDENT_QUERY = "What precedent cases support the application of statute X in contract disputes?"


def run(*args, cwd, check=None):
    p = subprocess.run([str(EXE), *args], cwd=cwd, capture_output=True, text=True, timeout=120)
    if check is not None and p.returncode != check:
        raise AssertionError(f"{args} exited {p.returncode}\nstdout:\n{p.stdout}\nstderr:\n{p.stderr}")
    return p


class CliTest(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)
        self.base = ["-c", str(FIX / "config.json"), "--state", str(self.dir / "state.snap")]

    def tearDown(self):
        self.tmp.cleanup()

    def cli(self, *args, check=0):
        return run(*self.base, *args, cwd=self.dir, check=check)

    def cli_json(self, *args, check=0):
        p = self.cli("--json", *args, check=check)
        return json.loads(p.stdout)

    def test_ingest_docs_prints_count(self):
        p = self.cli("ingest-docs", str(FIX / "docs.jsonl"))
        self.assertEqual(p.stdout.strip(), "ingested 12 documents")
        self.assertTrue((self.dir / "state.snap").exists())

    def test_precedent_query(self):
        p = self.cli("query", PRECEDENT_QUERY)
        out = p.stdout
        self.assertIn("answer", out)
        self.assertIn("citations:", out)
        self.assertIn("gate:", out)
        self.assertIn("active=", out)

        j = self.cli_json("query", PRECEDENT_QUERY)
        self.assertFalse(j["abstained"])
        self.assertTrue(j["answer"])
        self.assertTrue(j["citations"])
        g = j["gate"]["g"]
        self.assertEqual(len(g), 4)
        self.assertAlmostEqual(sum(g), 1.0, places=9)
        self.assertEqual(len(j["gate"]["active"]), 2)
        # each cited document is one of the retrieved ones
        retrieved = {d["id"] for q in j["questions"] for d in q["documents"]}
        self.assertTrue(set(j["citations"]) <= retrieved)
        # every sentence of the answer comes from a cited document's text
        docs = {}
        for line in (FIX / "docs.jsonl").read_text().splitlines():
            if line.strip():
                d = json.loads(line)
                docs[d["id"]] = d["text"]
        cited_text = " ".join(docs[c] for c in j["citations"])
        for para in j["answer"].split("\n\n"):
            for sentence in para.replace(". ", ".\n").splitlines():
                self.assertIn(sentence.strip(), cited_text)

    def test_query_abstains_below_threshold(self):
        j = self.cli_json("query", "statute", "--theta", "0.99")
        self.assertTrue(j["abstained"])
        self.assertEqual(j["answer"], "")
        self.assertEqual(j["citations"], [])

    def test_eval_writes_report(self):
        p = self.cli("eval", "--task", "rouge-fixture")
        report = self.dir / "rouge-fixture.report.json"
        self.assertTrue(report.exists(), p.stdout)
        body = json.loads(report.read_text())
        self.assertEqual(body["metric"], "RougeL")
        self.assertEqual(body["n"], 5)
        self.assertGreaterEqual(body["score"], 0.0)
        self.assertLessEqual(body["score"], 1.0)

    def test_json_for_every_subcommand(self):
        j = self.cli_json("ingest-docs", str(FIX / "docs.jsonl"))
        self.assertEqual(j["ingested"], 12)
        j = self.cli_json("ingest-triples", str(FIX / "triples.tsv"))
        self.assertEqual(set(j), {"lines_read", "new_triples", "triples_seen"})
        j = self.cli_json("train-kg", "--epochs", "3")
        self.assertEqual(j["epochs"], 3)
        self.assertEqual(len(j["loss_history"]), 3)
        j = self.cli_json("query", PRECEDENT_QUERY)
        self.assertLessEqual({"case_id", "answer", "citations", "abstained", "gate", "questions"}, set(j))
        j = self.cli_json("eval", "--task", "bleu-fixture", "--out", "b.json")
        self.assertEqual(j["report"], "b.json")
        self.assertTrue((self.dir / "b.json").exists())

        rng = random.Random(3)
        with open(self.dir / "traj.jsonl", "w") as f:
            for _ in range(8):
                q = [rng.uniform(-1, 1) for _ in range(256)]
                f.write(json.dumps({"query": q, "old_probs": [0.25] * 4, "action": rng.randint(1, 4),
                                    "reward": rng.uniform(0, 1)}) + "\n")
        j = self.cli_json("train-gate", "--trajectories", "traj.jsonl")
        self.assertEqual(j["loaded"], 8)
        self.assertIn("applied", j)
        self.assertIn("policy_version", j)

        j = self.cli_json("snapshot", "save", "copy.snap")
        self.assertEqual(j["saved"], "copy.snap")
        j = self.cli_json("snapshot", "load", "copy.snap")
        self.assertEqual(j["loaded"], "copy.snap")
        self.assertEqual(j["documents"], 12)

    def test_state_persists_between_runs(self):
        self.cli("ingest-docs", str(FIX / "docs.jsonl"))
        a = self.cli_json("query", PRECEDENT_QUERY)
        b = self.cli_json("query", PRECEDENT_QUERY)
        self.assertNotEqual(a["case_id"], b["case_id"])
        self.assertEqual(a["citations"], b["citations"])
        self.assertEqual(a["gate"], b["gate"])

    def test_help_and_usage_errors(self):
        self.assertEqual(run("--help", cwd=self.dir).returncode, 0)
        self.assertEqual(run("query", "--help", cwd=self.dir).returncode, 0)
        self.assertEqual(run(cwd=self.dir).returncode, 1)
        self.assertEqual(run("--bogus", cwd=self.dir).returncode, 1)
        self.assertEqual(run(*self.base, "query", cwd=self.dir).returncode, 1)
        self.assertEqual(run(*self.base, "ingest-docs", "missing.jsonl", cwd=self.dir).returncode, 1)
        self.assertEqual(run(*self.base, "snapshot", "rename", "x", cwd=self.dir).returncode, 1)

    def test_errors_are_machine_readable(self):
        cases = [
            (["eval", "--task", "nope"], "validation_error"),
            (["query", "x", "--fusion-mode", "multiplicative"], "configuration_error"),
            (["query", "x", "--theta", "1.5"], "configuration_error"),
        ]
        for args, code in cases:
            p = self.cli("--json", *args, check=1)
            self.assertEqual(json.loads(p.stdout)["error"], code, args)

        (self.dir / "bad.snap").write_text("garbage")
        p = self.cli("--json", "snapshot", "load", "bad.snap", check=1)
        self.assertEqual(json.loads(p.stdout)["error"], "checksum_error")

        self.cli("snapshot", "save", "good.snap")
        data = (self.dir / "good.snap").read_bytes()
        (self.dir / "cut.snap").write_bytes(data[: len(data) // 2])
        p = self.cli("--json", "snapshot", "load", "cut.snap", check=1)
        self.assertEqual(json.loads(p.stdout)["error"], "checksum_error")

        header, body = data.split(b"\n", 1)
        newer = header.replace(b"v1 ", b"v2 ", 1) + b"\n" + body
        (self.dir / "new.snap").write_bytes(newer)
        p = self.cli("--json", "snapshot", "load", "new.snap", check=1)
        self.assertEqual(json.loads(p.stdout)["error"], "version_error")

        (self.dir / "traj.jsonl").write_text("{not json\n")
        p = self.cli("--json", "train-gate", "--trajectories", "traj.jsonl", check=1)
        self.assertEqual(json.loads(p.stdout)["error"], "parse_error")

    def test_serve_answers_health_and_stops_on_signal(self):
        cfg = json.loads((FIX / "config.json").read_text())
        cfg["port"] = 0
        cfg["experts"] = str(FIX / cfg["experts"])
        for k, v in cfg["data"].items():
            cfg["data"][k] = str(FIX / v)
        for t in cfg["eval_tasks"]:
            t["dataset"] = str(FIX / t["dataset"])
        (self.dir / "cfg.json").write_text(json.dumps(cfg))
        proc = subprocess.Popen([str(EXE), "-c", str(self.dir / "cfg.json"), "--state", str(self.dir / "s.snap"),
                                 "--json", "serve"], cwd=self.dir, stdout=subprocess.PIPE, text=True)
        try:
            banner = ""
            for line in proc.stdout:
                banner += line
                if line.rstrip() == "}":
                    break
            port = json.loads(banner)["port"]
            deadline = time.time() + 10
            while True:
                try:
                    with urllib.request.urlopen(f"http://127.0.0.1:{port}/v1/healthz", timeout=2) as r:
                        self.assertEqual(r.status, 200)
                        break
                except OSError:
                    if time.time() > deadline:
                        raise
                    time.sleep(0.1)
        finally:
            proc.send_signal(signal.SIGTERM)
            rc = proc.wait(timeout=20)
            proc.stdout.close()
        self.assertEqual(rc, 0)


if __name__ == "__main__":
    if len(sys.argv) < 3:
        sys.exit(__doc__)
    EXE = Path(sys.argv[1]).resolve()
    FIX = Path(sys.argv[2]).resolve()
    unittest.main(argv=sys.argv[:1], verbosity=2)
