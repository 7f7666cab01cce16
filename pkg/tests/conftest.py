import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

_outcomes: dict[int, dict] = {}


def pytest_runtest_makereport(item, call):
    mark = item.get_closest_marker("criterion")
    if mark is None or call.when != "call" and not (call.when == "setup" and call.excinfo):
        return
    num, title = mark.args
    rec = _outcomes.setdefault(num, {"title": title, "failed": [], "ran": 0})
    rec["ran"] += 1
    if call.excinfo is not None:
        msg = str(call.excinfo.value).strip().splitlines()
        rec["failed"].append(f"{item.name}: {msg[0] if msg else call.excinfo.typename}")


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for num in sorted(_outcomes):
        rec = _outcomes[num]
        status = "FAIL" if rec["failed"] else "PASS"
        tr.write_line(f"criterion {num:>2}: {status}  {rec['title']}")
        for f in rec["failed"]:
            tr.write_line(f"              {f[:160]}")
