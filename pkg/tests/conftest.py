"""Terminal summary: one verdict line per acceptance criterion."""

import re

_CRITERIA = {
    1: "gradient suite (finite differences, double precision)",
    2: "oracle equivalence (conv, norm, surfaces, ssim)",
    3: "closed-form values (kl, gradient penalty)",
    4: "training descent (both stages, 3 seeds)",
    5: "quality ordering (real mask > syn mask > plain vae)",
    6: "mask guidance (contrast inside, swap sensitivity)",
    7: "downstream segmentation (raw vs augmented)",
    8: "i/o round trip and manifest reproducibility",
}

_PATTERN = re.compile(r"test_acceptance\.py::test_criterion_(\d+)")


def pytest_terminal_summary(terminalreporter):
    seen = {}
    for outcome in ("passed", "failed", "error", "skipped"):
        for report in terminalreporter.stats.get(outcome, []):
            m = _PATTERN.search(getattr(report, "nodeid", ""))
            if not m:
                continue
            num = int(m.group(1))
            worst = seen.get(num, "passed")
            rank = {"passed": 0, "skipped": 1, "failed": 2, "error": 2}
            if rank[outcome] >= rank.get(worst, 0):
                seen[num] = outcome
    if not seen:
        return
    tr = terminalreporter
    tr.write_sep("-", "acceptance criteria")
    for num in sorted(_CRITERIA):
        if num not in seen:
            continue
        verdict = {"passed": "PASS", "skipped": "SKIP"}.get(seen[num], "FAIL")
        tr.write_line(f"criterion {num}: {verdict} - {_CRITERIA[num]}")
