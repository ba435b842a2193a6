"""Shared test plumbing: a reporter that survives pytest's output capture."""

_config = None


def pytest_configure(config):
    global _config
    _config = config


def terminal_line(text: str) -> None:
    """Write one line to the live terminal, bypassing capture when possible."""
    reporter = (
        _config.pluginmanager.get_plugin("terminalreporter") if _config is not None else None
    )
    if reporter is not None:
        reporter.write_line(text)
    else:
        print(text)
