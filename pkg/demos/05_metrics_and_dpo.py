"""
Scoring answers and building DPO pairs
======================================

Accuracy asks whether a gold answer appears inside the prediction; EM and F1
are the usual SQuAD-style metrics. The DPO part samples six KA candidates per
input, asks a judge for the best and worst, and keeps unambiguous pairs.
"""

import json
import math

from kginfused.dpo import DEFAULT_GRID, KAInput, build_dataset, dpo_loss
from kginfused.evaluation import QAExample, accuracy, evaluate, exact_match, f1
from kginfused.gateway import mock_gateway

pred, gold = "Martin Marietta Corporation.", ["Martin Marietta"]
print(f"Acc={accuracy(pred, gold)} EM={exact_match(pred, gold)} F1={f1(pred, gold):.3f}")

batch = [
    ("Martin Marietta Corporation.", QAExample("a", "q", ["Martin Marietta"])),
    ("CBS", QAExample("b", "q", ["Martin Marietta"])),
    ("yes, it was", QAExample("c", "q", ["yes"])),
]
report = evaluate(batch)
print("Acc & F1 & EM & Avg")
print(report.row())

# DPO loss: ln 2 at zero margin, falling as the policy prefers the chosen answer
for margin in (0, 1, 10, 100):
    print(f"margin {margin:>3}: loss {dpo_loss(margin, 0.0, 0.0, 0.0, beta=0.1):.6f}")
print("ln 2 =", round(math.log(2), 6))


def llm(req):
    # candidates differ by sampling temperature; the judge prefers the coolest one
    if req.template == "ka":
        return f"Fact-enhanced note written at temperature {req.params.temperature}"
    ids = [json.loads(line)["_id"] for line in req.prompt.split("\n") if line.startswith('{"_id"')]
    if "tie" in req.prompt:
        return json.dumps({"best_id": ids[0], "worst_id": ids[0]})
    return "json " + json.dumps({"best_id": ids[0], "worst_id": ids[-1]})


inputs = [KAInput(f"x{i}", f"question {i}" + (" tie" if i == 2 else ""), "a note", "some facts", 1 + i % 2)
          for i in range(5)]
result = build_dataset(inputs, DEFAULT_GRID, mock_gateway(responder=llm), target_count=10)
print(f"{len(result.examples)} pairs, {result.ambiguous} ambiguous dropped")
print(json.dumps(json.loads(result.examples[0].to_json()) | {"prompt": "..."}, indent=1))
