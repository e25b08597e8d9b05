def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    verdicts = getattr(mod, "VERDICTS", None)
    if not verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(verdicts):
        terminalreporter.write_line(verdicts[n])
    missing = [n for n in range(1, 15) if n not in verdicts]
    if missing:
        terminalreporter.write_line(f"criteria not run: {missing}")
